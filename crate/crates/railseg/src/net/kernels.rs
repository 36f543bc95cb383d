//! Geometric kernels of the hierarchical network: farthest-point sampling,
//! fixed-radius ball grouping, and inverse-distance-weighted interpolation.
//!
//! All kernels are exact, deterministic, and break ties by the lowest index,
//! so their outputs can be compared index-for-index against brute-force
//! oracles.

use nalgebra::Vector3;

use crate::error::{Error, Result};

/// Index of the lexicographically smallest (x, y, z) triple; ties keep the
/// lowest index. Used as the deterministic start point for sampling.
pub fn lexicographic_min_index(positions: &[Vector3<f64>]) -> usize {
    let mut best = 0;
    for (i, p) in positions.iter().enumerate().skip(1) {
        let b = &positions[best];
        if (p.x, p.y, p.z) < (b.x, b.y, b.z) {
            best = i;
        }
    }
    best
}

/// Greedy farthest-point sampling: the first index is `start_index`, each
/// subsequent index maximizes the minimum distance to the chosen set, ties
/// broken by the lowest index.
pub fn fps(positions: &[Vector3<f64>], k: usize, start_index: usize) -> Result<Vec<usize>> {
    let n = positions.len();
    if k == 0 || k > n {
        return Err(Error::ShapeMismatch(format!(
            "fps: k must be in [1, {n}], got {k}"
        )));
    }
    if start_index >= n {
        return Err(Error::ShapeMismatch(format!(
            "fps: start_index {start_index} out of range for {n} points"
        )));
    }
    let mut chosen = Vec::with_capacity(k);
    let mut selected = vec![false; n];
    let mut min_d2: Vec<f64> = positions
        .iter()
        .map(|p| (p - positions[start_index]).norm_squared())
        .collect();
    chosen.push(start_index);
    selected[start_index] = true;

    for _ in 1..k {
        let mut best: Option<usize> = None;
        for i in 0..n {
            if selected[i] {
                continue;
            }
            // Strictly-greater scan keeps the lowest index on ties.
            if best.map_or(true, |b| min_d2[i] > min_d2[b]) {
                best = Some(i);
            }
        }
        let next = best.expect("k <= n guarantees an unselected point");
        chosen.push(next);
        selected[next] = true;
        let np = positions[next];
        for i in 0..n {
            let d2 = (positions[i] - np).norm_squared();
            if d2 < min_d2[i] {
                min_d2[i] = d2;
            }
        }
    }
    Ok(chosen)
}

/// Fixed-radius neighborhood query. Per center, the indices of points within
/// `radius` in ascending index order, truncated at `nsample`; a short list is
/// padded by repeating its first entry; an empty list falls back to `nsample`
/// copies of the nearest point's index. Returns a flat `centers × nsample`
/// matrix.
pub fn ball_query(
    centers: &[Vector3<f64>],
    positions: &[Vector3<f64>],
    radius: f64,
    nsample: usize,
) -> Result<Vec<usize>> {
    if positions.is_empty() {
        return Err(Error::EmptyCloud);
    }
    if !(radius > 0.0) {
        return Err(Error::ShapeMismatch(format!(
            "ball_query: radius must be positive, got {radius}"
        )));
    }
    if nsample == 0 {
        return Err(Error::ShapeMismatch("ball_query: nsample must be >= 1".into()));
    }
    let r2 = radius * radius;
    let mut out = Vec::with_capacity(centers.len() * nsample);
    for c in centers {
        let row_start = out.len();
        let mut count = 0;
        let mut nearest = 0usize;
        let mut nearest_d2 = f64::MAX;
        for (i, p) in positions.iter().enumerate() {
            let d2 = (p - c).norm_squared();
            if d2 < nearest_d2 {
                nearest_d2 = d2;
                nearest = i;
            }
            if d2 <= r2 && count < nsample {
                out.push(i);
                count += 1;
            }
        }
        let pad = if count == 0 { nearest } else { out[row_start] };
        for _ in count..nsample {
            out.push(pad);
        }
    }
    Ok(out)
}

/// For each query, its `k` nearest sources as `(index, weight)` pairs with
/// inverse-square-distance weights normalized to sum to one. Ties on
/// distance prefer the lower index; pairs are emitted nearest-first.
pub fn idw_weights(
    query: &[Vector3<f64>],
    source: &[Vector3<f64>],
    k: usize,
) -> Result<Vec<(usize, f64)>> {
    let s = source.len();
    if s == 0 {
        return Err(Error::EmptyCloud);
    }
    if k == 0 || k > s {
        return Err(Error::ShapeMismatch(format!(
            "idw: k must be in [1, {s}], got {k}"
        )));
    }
    let mut out = Vec::with_capacity(query.len() * k);
    let mut scratch: Vec<(f64, usize)> = Vec::with_capacity(s);
    for q in query {
        scratch.clear();
        scratch.extend(
            source
                .iter()
                .enumerate()
                .map(|(i, p)| ((p - q).norm_squared(), i)),
        );
        if k < s {
            scratch.select_nth_unstable_by(k - 1, |a, b| a.partial_cmp(b).expect("finite"));
        }
        let top = &mut scratch[..k];
        top.sort_unstable_by(|a, b| a.partial_cmp(b).expect("finite"));

        let mut weights = [0.0f64; 8];
        let small = &mut weights[..k.min(8)];
        let mut heap;
        let w: &mut [f64] = if k <= 8 {
            small
        } else {
            heap = vec![0.0; k];
            &mut heap
        };
        let mut total = 0.0;
        for (slot, &(d2, _)) in top.iter().enumerate() {
            let d = d2.sqrt().max(1e-10);
            let wi = 1.0 / (d * d);
            w[slot] = wi;
            total += wi;
        }
        for (slot, &(_, idx)) in top.iter().enumerate() {
            out.push((idx, w[slot] / total));
        }
    }
    Ok(out)
}

/// Inverse-distance-weighted interpolation of per-source features onto the
/// query points: each output row is a convex combination of its `k` nearest
/// source rows.
pub fn interpolate_idw(
    query: &[Vector3<f64>],
    source: &[Vector3<f64>],
    source_feats: &[f64],
    feat_dim: usize,
    k: usize,
) -> Result<Vec<f64>> {
    if source_feats.len() != source.len() * feat_dim {
        return Err(Error::ShapeMismatch(format!(
            "idw features: expected {} x {feat_dim}, got {}",
            source.len(),
            source_feats.len()
        )));
    }
    let weights = idw_weights(query, source, k)?;
    Ok(apply_idw(&weights, k, source_feats, feat_dim, query.len()))
}

/// Apply precomputed interpolation weights to a feature matrix.
pub(crate) fn apply_idw(
    weights: &[(usize, f64)],
    k: usize,
    source_feats: &[f64],
    feat_dim: usize,
    num_query: usize,
) -> Vec<f64> {
    let mut out = vec![0.0; num_query * feat_dim];
    for q in 0..num_query {
        let row = &mut out[q * feat_dim..(q + 1) * feat_dim];
        for &(idx, w) in &weights[q * k..(q + 1) * k] {
            let src = &source_feats[idx * feat_dim..(idx + 1) * feat_dim];
            for (o, s) in row.iter_mut().zip(src) {
                *o += w * s;
            }
        }
    }
    out
}

/// Indices of the `k` nearest neighbors of `positions[center]` (inclusive),
/// ties broken by lower index, in ascending index order.
pub fn knn_around(positions: &[Vector3<f64>], center: usize, k: usize) -> Vec<usize> {
    let c = positions[center];
    let mut by_dist: Vec<(f64, usize)> = positions
        .iter()
        .enumerate()
        .map(|(i, p)| ((p - c).norm_squared(), i))
        .collect();
    if k < by_dist.len() {
        by_dist.select_nth_unstable_by(k - 1, |a, b| a.partial_cmp(b).expect("finite"));
    }
    let mut chosen: Vec<usize> = by_dist[..k].iter().map(|&(_, i)| i).collect();
    chosen.sort_unstable();
    chosen
}
