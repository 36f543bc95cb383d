//! The hierarchical segmentation network.
//!
//! Encoder: two set-abstraction levels, each sampling centers by
//! farthest-point sampling, grouping neighbors with a fixed-radius ball
//! query, running a shared MLP over center-relative coordinates (plus the
//! previous level's features), and max-pooling per group. Decoder: two
//! feature-propagation levels interpolating coarse features back with
//! inverse-square-distance weights, concatenating skip features, and
//! applying another shared MLP. A per-point head produces class logits.
//!
//! Only relative coordinates ever reach the MLPs, so logits are invariant
//! under rigid translation of a patch. All index-producing steps (sampling,
//! grouping, nearest-neighbor selection, max-pool winners) are treated as
//! constants of the forward pass by the hand-written backward.

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::net::kernels::{apply_idw, ball_query, fps, idw_weights, lexicographic_min_index};
use crate::net::tensor::Tensor;
use crate::rng::{self, RngSeed};

/// One set-abstraction level.
#[derive(Debug, Clone, PartialEq)]
pub struct SaConfig {
    /// Number of centers kept by farthest-point sampling.
    pub npoint: usize,
    /// Ball-query radius in meters.
    pub radius: f64,
    /// Neighbors gathered per ball.
    pub nsample: usize,
    /// Shared-MLP output widths.
    pub mlp: Vec<usize>,
}

/// Complete network architecture description.
#[derive(Debug, Clone, PartialEq)]
pub struct NetConfig {
    /// Patch size the network is sized for (`npoint` defaults derive from it).
    pub patch_size: usize,
    pub num_classes: usize,
    pub sa: Vec<SaConfig>,
    /// Feature-propagation MLP widths, coarse-to-fine.
    pub fp: Vec<Vec<usize>>,
    /// Per-point classifier widths; the last width must equal `num_classes`.
    pub head: Vec<usize>,
}

pub const DEFAULT_RADII: [f64; 2] = [0.1, 0.4];
pub const DEFAULT_NSAMPLE: usize = 32;

impl NetConfig {
    /// The default two-level architecture for a given patch size: centers at
    /// n/4 and n/16, radii scaled for track-component geometry, MLPs
    /// [32,32,64] and [64,64,128], FP MLPs [128,64] and [64,32], head [32, C].
    pub fn default_for(patch_size: usize, num_classes: usize) -> NetConfig {
        NetConfig {
            patch_size,
            num_classes,
            sa: vec![
                SaConfig {
                    npoint: (patch_size / 4).max(1),
                    radius: DEFAULT_RADII[0],
                    nsample: DEFAULT_NSAMPLE,
                    mlp: vec![32, 32, 64],
                },
                SaConfig {
                    npoint: (patch_size / 16).max(1),
                    radius: DEFAULT_RADII[1],
                    nsample: DEFAULT_NSAMPLE,
                    mlp: vec![64, 64, 128],
                },
            ],
            fp: vec![vec![128, 64], vec![64, 32]],
            head: vec![32, num_classes],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::InvalidNetConfig("need at least 2 classes".into()));
        }
        if self.sa.is_empty() || self.sa.len() != self.fp.len() {
            return Err(Error::InvalidNetConfig(format!(
                "need matching SA/FP level counts, got {} and {}",
                self.sa.len(),
                self.fp.len()
            )));
        }
        let mut prev = self.patch_size;
        for (l, sa) in self.sa.iter().enumerate() {
            if sa.npoint == 0 || sa.npoint > prev {
                return Err(Error::InvalidNetConfig(format!(
                    "level {l}: npoint {} must be in [1, {prev}]",
                    sa.npoint
                )));
            }
            if !(sa.radius > 0.0) || sa.nsample == 0 || sa.mlp.is_empty() {
                return Err(Error::InvalidNetConfig(format!("level {l}: bad parameters")));
            }
            prev = sa.npoint;
        }
        if self.fp.iter().any(|w| w.is_empty()) || self.head.is_empty() {
            return Err(Error::InvalidNetConfig("empty MLP width list".into()));
        }
        if *self.head.last().unwrap() != self.num_classes {
            return Err(Error::InvalidNetConfig(format!(
                "head must end in num_classes ({}), got {:?}",
                self.num_classes, self.head
            )));
        }
        Ok(())
    }

    /// Feature width at a pyramid level (0 = raw points, with no features).
    pub(crate) fn feat_dim(&self, level: usize) -> usize {
        if level == 0 {
            0
        } else {
            *self.sa[level - 1].mlp.last().unwrap()
        }
    }

    pub(crate) fn sa_in_dim(&self, level: usize) -> usize {
        3 + self.feat_dim(level)
    }

    /// Width of the features interpolated by FP step `fp_i`.
    pub(crate) fn fp_source_dim(&self, fp_i: usize) -> usize {
        if fp_i == 0 {
            self.feat_dim(self.sa.len())
        } else {
            *self.fp[fp_i - 1].last().unwrap()
        }
    }

    /// Pyramid level an FP step writes onto.
    pub(crate) fn fp_target_level(&self, fp_i: usize) -> usize {
        self.sa.len() - 1 - fp_i
    }

    pub(crate) fn fp_in_dim(&self, fp_i: usize) -> usize {
        self.fp_source_dim(fp_i) + self.feat_dim(self.fp_target_level(fp_i))
    }

    pub(crate) fn head_in_dim(&self) -> usize {
        *self.fp.last().unwrap().last().unwrap()
    }
}

/// A shared (pointwise) linear layer: `y = x W + b` with `W: in × out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub w: Tensor,
    pub b: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

impl Mlp {
    fn zeros(widths: &[usize], in_dim: usize) -> Mlp {
        let mut layers = Vec::with_capacity(widths.len());
        let mut prev = in_dim;
        for &w in widths {
            layers.push(Linear {
                w: Tensor::zeros(&[prev, w]),
                b: Tensor::zeros(&[w]),
            });
            prev = w;
        }
        Mlp { layers }
    }

    fn init(widths: &[usize], in_dim: usize, rng: &mut rand_chacha::ChaCha8Rng) -> Mlp {
        let mut mlp = Mlp::zeros(widths, in_dim);
        for layer in &mut mlp.layers {
            let (fan_in, fan_out) = (layer.w.shape()[0], layer.w.shape()[1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for v in layer.w.data_mut() {
                *v = rng::uniform_f64(rng, -limit, limit);
            }
        }
        mlp
    }
}

/// The segmentation network: architecture plus all parameter tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct SegNetwork {
    pub config: NetConfig,
    pub sa_mlps: Vec<Mlp>,
    pub fp_mlps: Vec<Mlp>,
    pub head: Mlp,
}

impl SegNetwork {
    /// Glorot-uniform initialization (`±sqrt(6/(fan_in+fan_out))`, zero
    /// biases), drawn in parameter order from the seed's stream.
    pub fn new(config: NetConfig, seed: RngSeed) -> Result<SegNetwork> {
        config.validate()?;
        let mut rng = seed.rng();
        let sa_mlps = (0..config.sa.len())
            .map(|l| Mlp::init(&config.sa[l].mlp, config.sa_in_dim(l), &mut rng))
            .collect();
        let fp_mlps = (0..config.fp.len())
            .map(|i| Mlp::init(&config.fp[i], config.fp_in_dim(i), &mut rng))
            .collect();
        let head = Mlp::init(&config.head, config.head_in_dim(), &mut rng);
        Ok(SegNetwork {
            config,
            sa_mlps,
            fp_mlps,
            head,
        })
    }

    /// A structurally identical network with all parameters zero; the
    /// gradient container.
    pub fn zeros_like(&self) -> SegNetwork {
        let config = self.config.clone();
        SegNetwork {
            sa_mlps: (0..config.sa.len())
                .map(|l| Mlp::zeros(&config.sa[l].mlp, config.sa_in_dim(l)))
                .collect(),
            fp_mlps: (0..config.fp.len())
                .map(|i| Mlp::zeros(&config.fp[i], config.fp_in_dim(i)))
                .collect(),
            head: Mlp::zeros(&config.head, config.head_in_dim()),
            config,
        }
    }

    /// All parameter tensors in the canonical (checkpoint) order:
    /// SA levels, FP levels, head; per layer weight then bias.
    pub fn param_tensors(&self) -> Vec<&Tensor> {
        let mut v = Vec::new();
        for mlp in self.sa_mlps.iter().chain(self.fp_mlps.iter()).chain([&self.head]) {
            for layer in &mlp.layers {
                v.push(&layer.w);
                v.push(&layer.b);
            }
        }
        v
    }

    pub fn param_tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = Vec::new();
        for mlp in self
            .sa_mlps
            .iter_mut()
            .chain(self.fp_mlps.iter_mut())
            .chain([&mut self.head])
        {
            for layer in &mut mlp.layers {
                v.push(&mut layer.w);
                v.push(&mut layer.b);
            }
        }
        v
    }

    pub fn num_parameters(&self) -> usize {
        self.param_tensors().iter().map(|t| t.len()).sum()
    }

    /// `self += factor * other`, tensor by tensor.
    pub fn add_scaled(&mut self, other: &SegNetwork, factor: f64) {
        let mut mine = self.param_tensors_mut();
        let theirs = other.param_tensors();
        for (a, b) in mine.iter_mut().zip(theirs) {
            for (x, y) in a.data_mut().iter_mut().zip(b.data()) {
                *x += factor * y;
            }
        }
    }

    /// Per-point class logits for a patch; shape `n × num_classes`.
    pub fn forward(&self, positions: &[Vector3<f64>]) -> Result<Vec<f64>> {
        Ok(self.forward_trace(positions)?.0)
    }

    /// Forward pass retaining every intermediate needed by [`SegNetwork::backward`].
    pub fn forward_trace(&self, positions: &[Vector3<f64>]) -> Result<(Vec<f64>, Trace)> {
        let n = positions.len();
        if n == 0 {
            return Err(Error::EmptyCloud);
        }
        if n < self.config.sa[0].npoint {
            return Err(Error::ShapeMismatch(format!(
                "patch has {n} points but the first level keeps {}",
                self.config.sa[0].npoint
            )));
        }

        let levels = self.config.sa.len();
        let mut level_positions: Vec<Vec<Vector3<f64>>> = vec![positions.to_vec()];
        let mut level_feats: Vec<Vec<f64>> = vec![Vec::new()];
        let mut sa_traces = Vec::with_capacity(levels);

        for (l, sa) in self.config.sa.iter().enumerate() {
            let prev_pos = &level_positions[l];
            let prev_feats = &level_feats[l];
            let prev_dim = self.config.feat_dim(l);
            let start = lexicographic_min_index(prev_pos);
            let centers = fps(prev_pos, sa.npoint, start)?;
            let center_positions: Vec<Vector3<f64>> =
                centers.iter().map(|&i| prev_pos[i]).collect();
            let groups = ball_query(&center_positions, prev_pos, sa.radius, sa.nsample)?;

            let in_dim = 3 + prev_dim;
            let rows = sa.npoint * sa.nsample;
            let mut grouped = vec![0.0; rows * in_dim];
            for i in 0..sa.npoint {
                let c = center_positions[i];
                for j in 0..sa.nsample {
                    let idx = groups[i * sa.nsample + j];
                    let rel = prev_pos[idx] - c;
                    let row = &mut grouped[(i * sa.nsample + j) * in_dim..][..in_dim];
                    row[0] = rel.x;
                    row[1] = rel.y;
                    row[2] = rel.z;
                    if prev_dim > 0 {
                        row[3..].copy_from_slice(&prev_feats[idx * prev_dim..][..prev_dim]);
                    }
                }
            }

            let acts = mlp_forward(&self.sa_mlps[l], grouped, rows, true, "set abstraction")?;
            let out_dim = *sa.mlp.last().unwrap();
            let (pooled, argmax) = max_pool(acts.last().unwrap(), sa.npoint, sa.nsample, out_dim);

            sa_traces.push(SaTrace {
                groups,
                acts,
                argmax,
            });
            level_positions.push(center_positions);
            level_feats.push(pooled);
        }

        let mut fp_traces = Vec::with_capacity(levels);
        let mut current = level_feats[levels].clone();
        for fp_i in 0..self.config.fp.len() {
            let target = self.config.fp_target_level(fp_i);
            let query = &level_positions[target];
            let source = &level_positions[target + 1];
            let k = 3.min(source.len());
            let weights = idw_weights(query, source, k)?;
            let src_dim = self.config.fp_source_dim(fp_i);
            let interp = apply_idw(&weights, k, &current, src_dim, query.len());

            let skip_dim = self.config.feat_dim(target);
            let in_dim = src_dim + skip_dim;
            let mut concat = vec![0.0; query.len() * in_dim];
            for q in 0..query.len() {
                let row = &mut concat[q * in_dim..(q + 1) * in_dim];
                row[..src_dim].copy_from_slice(&interp[q * src_dim..(q + 1) * src_dim]);
                if skip_dim > 0 {
                    row[src_dim..]
                        .copy_from_slice(&level_feats[target][q * skip_dim..(q + 1) * skip_dim]);
                }
            }
            let acts = mlp_forward(
                &self.fp_mlps[fp_i],
                concat,
                query.len(),
                true,
                "feature propagation",
            )?;
            current = acts.last().unwrap().clone();
            fp_traces.push(FpTrace { weights, k, acts });
        }

        let head_acts = mlp_forward(&self.head, current, n, false, "head")?;
        let logits = head_acts.last().unwrap().clone();

        Ok((
            logits,
            Trace {
                level_counts: level_positions.iter().map(Vec::len).collect(),
                sa: sa_traces,
                fp: fp_traces,
                head_acts,
            },
        ))
    }

    /// Exact analytic parameter gradients for `d(loss)/d(logits)`, with all
    /// index selections frozen from the forward trace.
    pub fn backward(&self, trace: &Trace, d_logits: &[f64]) -> SegNetwork {
        let mut grads = self.zeros_like();
        let levels = self.config.sa.len();
        let n = trace.level_counts[0];

        // Head.
        let mut d_current = mlp_backward(
            &self.head,
            &trace.head_acts,
            d_logits.to_vec(),
            n,
            false,
            &mut grads.head,
        );

        // Feature propagation, reversed. `d_feats[l]` accumulates gradient
        // flowing into the encoder features of pyramid level l.
        let mut d_feats: Vec<Vec<f64>> = (0..=levels)
            .map(|l| vec![0.0; trace.level_counts[l] * self.config.feat_dim(l)])
            .collect();

        for fp_i in (0..self.config.fp.len()).rev() {
            let target = self.config.fp_target_level(fp_i);
            let q_count = trace.level_counts[target];
            let src_count = trace.level_counts[target + 1];
            let src_dim = self.config.fp_source_dim(fp_i);
            let skip_dim = self.config.feat_dim(target);
            let ft = &trace.fp[fp_i];

            let d_concat = mlp_backward(
                &self.fp_mlps[fp_i],
                &ft.acts,
                std::mem::take(&mut d_current),
                q_count,
                true,
                &mut grads.fp_mlps[fp_i],
            );

            let mut d_source = vec![0.0; src_count * src_dim];
            for q in 0..q_count {
                let row = &d_concat[q * (src_dim + skip_dim)..];
                for &(idx, w) in &ft.weights[q * ft.k..(q + 1) * ft.k] {
                    let dst = &mut d_source[idx * src_dim..(idx + 1) * src_dim];
                    for (d, &v) in dst.iter_mut().zip(&row[..src_dim]) {
                        *d += w * v;
                    }
                }
                if skip_dim > 0 {
                    let dst = &mut d_feats[target][q * skip_dim..(q + 1) * skip_dim];
                    for (d, &v) in dst.iter_mut().zip(&row[src_dim..src_dim + skip_dim]) {
                        *d += v;
                    }
                }
            }

            if fp_i == 0 {
                for (a, b) in d_feats[levels].iter_mut().zip(&d_source) {
                    *a += b;
                }
            } else {
                d_current = d_source;
            }
        }

        // Set abstraction, reversed.
        for l in (0..levels).rev() {
            let sa = &self.config.sa[l];
            let st = &trace.sa[l];
            let out_dim = *sa.mlp.last().unwrap();
            let rows = sa.npoint * sa.nsample;

            let mut d_rows = vec![0.0; rows * out_dim];
            let d_pooled = &d_feats[l + 1];
            for i in 0..sa.npoint {
                for ch in 0..out_dim {
                    let j = st.argmax[i * out_dim + ch] as usize;
                    d_rows[(i * sa.nsample + j) * out_dim + ch] += d_pooled[i * out_dim + ch];
                }
            }

            let d_grouped = mlp_backward(
                &self.sa_mlps[l],
                &st.acts,
                d_rows,
                rows,
                true,
                &mut grads.sa_mlps[l],
            );

            if l > 0 {
                let prev_dim = self.config.feat_dim(l);
                let in_dim = 3 + prev_dim;
                for (row, &idx) in st.groups.iter().enumerate() {
                    let src = &d_grouped[row * in_dim + 3..row * in_dim + in_dim];
                    let dst = &mut d_feats[l][idx * prev_dim..(idx + 1) * prev_dim];
                    for (d, &v) in dst.iter_mut().zip(src) {
                        *d += v;
                    }
                }
            }
        }

        grads
    }
}

/// Intermediates of one forward pass, consumed by [`SegNetwork::backward`].
pub struct Trace {
    level_counts: Vec<usize>,
    sa: Vec<SaTrace>,
    fp: Vec<FpTrace>,
    head_acts: Vec<Vec<f64>>,
}

impl Trace {
    /// Stage inputs for finite-difference verification (see `gradcheck`).
    pub(crate) fn stage_inputs(&self) -> Vec<&Vec<f64>> {
        let mut v: Vec<&Vec<f64>> = self.sa.iter().map(|s| &s.acts[0]).collect();
        v.extend(self.fp.iter().map(|f| &f.acts[0]));
        v.push(&self.head_acts[0]);
        v
    }

    pub(crate) fn sa_groups(&self, level: usize) -> &[usize] {
        &self.sa[level].groups
    }

    pub(crate) fn fp_weights(&self, fp_i: usize) -> (&[(usize, f64)], usize) {
        (&self.fp[fp_i].weights, self.fp[fp_i].k)
    }
}

struct SaTrace {
    groups: Vec<usize>,
    /// MLP activations; `acts[0]` is the grouped input matrix.
    acts: Vec<Vec<f64>>,
    argmax: Vec<u32>,
}

struct FpTrace {
    weights: Vec<(usize, f64)>,
    k: usize,
    acts: Vec<Vec<f64>>,
}

/// Run a shared MLP over `rows` feature rows. ReLU follows every layer, and
/// the final layer too unless `relu_last` is false. Returns all activations
/// (`acts[0]` = input, `acts[last]` = output); errors on non-finite values.
pub(crate) fn mlp_forward(
    mlp: &Mlp,
    input: Vec<f64>,
    rows: usize,
    relu_last: bool,
    context: &'static str,
) -> Result<Vec<Vec<f64>>> {
    let mut acts = Vec::with_capacity(mlp.layers.len() + 1);
    acts.push(input);
    for (li, layer) in mlp.layers.iter().enumerate() {
        let in_dim = layer.w.shape()[0];
        let out_dim = layer.w.shape()[1];
        let x = acts.last().unwrap();
        debug_assert_eq!(x.len(), rows * in_dim);
        let w = layer.w.data();
        let b = layer.b.data();
        let mut y = vec![0.0; rows * out_dim];
        for r in 0..rows {
            let xrow = &x[r * in_dim..(r + 1) * in_dim];
            let yrow = &mut y[r * out_dim..(r + 1) * out_dim];
            yrow.copy_from_slice(b);
            for (i, &xi) in xrow.iter().enumerate() {
                if xi == 0.0 {
                    continue; // ReLU sparsity: skip dead inputs
                }
                let wrow = &w[i * out_dim..(i + 1) * out_dim];
                for (yo, &wo) in yrow.iter_mut().zip(wrow) {
                    *yo += xi * wo;
                }
            }
        }
        if !y.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite(context));
        }
        if relu_last || li + 1 < mlp.layers.len() {
            for v in &mut y {
                if *v < 0.0 {
                    *v = 0.0;
                }
            }
        }
        acts.push(y);
    }
    Ok(acts)
}

/// Backward through a shared MLP; accumulates parameter gradients into
/// `grads` and returns the gradient with respect to the input rows.
pub(crate) fn mlp_backward(
    mlp: &Mlp,
    acts: &[Vec<f64>],
    d_out: Vec<f64>,
    rows: usize,
    relu_last: bool,
    grads: &mut Mlp,
) -> Vec<f64> {
    let mut d = d_out;
    for li in (0..mlp.layers.len()).rev() {
        let layer = &mlp.layers[li];
        let in_dim = layer.w.shape()[0];
        let out_dim = layer.w.shape()[1];
        if relu_last || li + 1 < mlp.layers.len() {
            // Post-activation values double as the ReLU mask.
            for (dv, &av) in d.iter_mut().zip(&acts[li + 1]) {
                if av <= 0.0 {
                    *dv = 0.0;
                }
            }
        }
        let x = &acts[li];
        let w = layer.w.data();
        let layer_grads = &mut grads.layers[li];
        let gw = layer_grads.w.data_mut();
        let gb = layer_grads.b.data_mut();
        let mut d_prev = vec![0.0; rows * in_dim];
        for r in 0..rows {
            let drow = &d[r * out_dim..(r + 1) * out_dim];
            let xrow = &x[r * in_dim..(r + 1) * in_dim];
            for (g, &dv) in gb.iter_mut().zip(drow) {
                *g += dv;
            }
            let dprev_row = &mut d_prev[r * in_dim..(r + 1) * in_dim];
            for i in 0..in_dim {
                let wrow = &w[i * out_dim..(i + 1) * out_dim];
                let xi = xrow[i];
                if xi != 0.0 {
                    let gwrow = &mut gw[i * out_dim..(i + 1) * out_dim];
                    for (g, &dv) in gwrow.iter_mut().zip(drow) {
                        *g += xi * dv;
                    }
                }
                let mut acc = 0.0;
                for (&dv, &wv) in drow.iter().zip(wrow) {
                    acc += dv * wv;
                }
                dprev_row[i] = acc;
            }
        }
        d = d_prev;
    }
    d
}

/// Channel-wise max over each group's samples; the first maximum wins so
/// padded duplicate rows never change the result.
pub(crate) fn max_pool(
    rows: &[f64],
    npoint: usize,
    nsample: usize,
    dim: usize,
) -> (Vec<f64>, Vec<u32>) {
    let mut pooled = vec![f64::NEG_INFINITY; npoint * dim];
    let mut argmax = vec![0u32; npoint * dim];
    for i in 0..npoint {
        for j in 0..nsample {
            let row = &rows[(i * nsample + j) * dim..][..dim];
            for (ch, &v) in row.iter().enumerate() {
                if v > pooled[i * dim + ch] {
                    pooled[i * dim + ch] = v;
                    argmax[i * dim + ch] = j as u32;
                }
            }
        }
    }
    (pooled, argmax)
}

/// Mean softmax cross-entropy over `n` points plus its gradient with
/// respect to the logits.
pub fn loss_ce(logits: &[f64], labels: &[u8], num_classes: usize) -> Result<(f64, Vec<f64>)> {
    let c = num_classes;
    if logits.len() != labels.len() * c {
        return Err(Error::ShapeMismatch(format!(
            "logits {} vs {} labels x {c} classes",
            logits.len(),
            labels.len()
        )));
    }
    if labels.is_empty() {
        return Err(Error::EmptyCloud);
    }
    if let Some(&bad) = labels.iter().find(|&&l| (l as usize) >= c) {
        return Err(Error::LabelOutOfRange {
            value: bad as u32,
            num_classes: c,
        });
    }
    let n = labels.len();
    let inv_n = 1.0 / n as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0; logits.len()];
    for (r, &label) in labels.iter().enumerate() {
        let row = &logits[r * c..(r + 1) * c];
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut denom = 0.0;
        for &z in row {
            denom += (z - max).exp();
        }
        let log_denom = denom.ln();
        loss -= (row[label as usize] - max) - log_denom;
        let grow = &mut grad[r * c..(r + 1) * c];
        for (k, &z) in row.iter().enumerate() {
            grow[k] = ((z - max).exp() / denom) * inv_n;
        }
        grow[label as usize] -= inv_n;
    }
    loss *= inv_n;
    if !loss.is_finite() {
        return Err(Error::NonFinite("cross-entropy loss"));
    }
    Ok((loss, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_positions(n: usize, seed: u64, extent: f64) -> Vec<Vector3<f64>> {
        let mut rng = RngSeed(seed).rng();
        (0..n)
            .map(|_| {
                Vector3::new(
                    rng::uniform_f64(&mut rng, 0.0, extent),
                    rng::uniform_f64(&mut rng, 0.0, extent),
                    rng::uniform_f64(&mut rng, 0.0, extent),
                )
            })
            .collect()
    }

    fn random_labels(n: usize, c: usize, seed: u64) -> Vec<u8> {
        let mut rng = RngSeed(seed).rng();
        (0..n).map(|_| rng::uniform_usize(&mut rng, c) as u8).collect()
    }

    #[test]
    fn forward_shape_and_softmax_rows() {
        let net = SegNetwork::new(NetConfig::default_for(512, 3), RngSeed(1)).unwrap();
        let positions = random_positions(512, 2, 0.8);
        let logits = net.forward(&positions).unwrap();
        assert_eq!(logits.len(), 512 * 3);
        for r in 0..512 {
            let row = &logits[r * 3..(r + 1) * 3];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let denom: f64 = row.iter().map(|z| (z - max).exp()).sum();
            let total: f64 = row.iter().map(|z| (z - max).exp() / denom).sum();
            assert!((total - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn forward_rejects_undersized_patches() {
        let net = SegNetwork::new(NetConfig::default_for(64, 3), RngSeed(1)).unwrap();
        assert!(net.forward(&random_positions(8, 3, 1.0)).is_err());
        assert!(net.forward(&[]).is_err());
    }

    #[test]
    fn forward_is_translation_invariant() {
        let net = SegNetwork::new(NetConfig::default_for(128, 3), RngSeed(4)).unwrap();
        let positions = random_positions(128, 5, 0.5);
        let logits = net.forward(&positions).unwrap();
        let offset = Vector3::new(12.5, -3.25, 100.0);
        let shifted: Vec<Vector3<f64>> = positions.iter().map(|p| p + offset).collect();
        let logits2 = net.forward(&shifted).unwrap();
        for (a, b) in logits.iter().zip(&logits2) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn forward_is_permutation_equivariant() {
        // nsample spans the whole patch so ball truncation (which is
        // index-order dependent by contract) cannot engage.
        let n = 64;
        let config = NetConfig {
            patch_size: n,
            num_classes: 3,
            sa: vec![
                SaConfig {
                    npoint: 16,
                    radius: 10.0,
                    nsample: n,
                    mlp: vec![16, 32],
                },
                SaConfig {
                    npoint: 4,
                    radius: 10.0,
                    nsample: 16,
                    mlp: vec![32, 64],
                },
            ],
            fp: vec![vec![64, 32], vec![32, 16]],
            head: vec![16, 3],
        };
        let net = SegNetwork::new(config, RngSeed(6)).unwrap();
        let positions = random_positions(n, 7, 1.0);
        let logits = net.forward(&positions).unwrap();

        let mut rng = RngSeed(8).rng();
        let mut perm: Vec<usize> = (0..n).collect();
        rng::shuffle(&mut rng, &mut perm);
        let permuted: Vec<Vector3<f64>> = perm.iter().map(|&i| positions[i]).collect();
        let logits_p = net.forward(&permuted).unwrap();
        for (new_row, &old_row) in perm.iter().enumerate() {
            for c in 0..3 {
                let a = logits[old_row * 3 + c];
                let b = logits_p[new_row * 3 + c];
                assert!((a - b).abs() < 1e-9, "row {old_row}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn loss_uniform_logits_is_ln_c() {
        let logits = vec![0.7; 5 * 3];
        let labels = vec![0u8, 1, 2, 1, 0];
        let (loss, _) = loss_ce(&logits, &labels, 3).unwrap();
        assert!((loss - 3.0f64.ln()).abs() < 1e-9, "{loss}");
    }

    #[test]
    fn loss_vanishes_with_confident_margin() {
        let mut logits = vec![0.0; 4 * 3];
        let labels = vec![0u8, 1, 2, 0];
        for (r, &l) in labels.iter().enumerate() {
            logits[r * 3 + l as usize] = 20.0;
        }
        let (loss, _) = loss_ce(&logits, &labels, 3).unwrap();
        assert!(loss < 1e-3, "{loss}");
    }

    #[test]
    fn loss_gradient_matches_finite_differences() {
        let mut rng = RngSeed(9).rng();
        let mut logits: Vec<f64> = (0..8 * 3)
            .map(|_| rng::uniform_f64(&mut rng, -2.0, 2.0))
            .collect();
        let labels = random_labels(8, 3, 10);
        let (_, grad) = loss_ce(&logits, &labels, 3).unwrap();
        let h = 1e-6;
        for i in 0..logits.len() {
            let orig = logits[i];
            logits[i] = orig + h;
            let (lp, _) = loss_ce(&logits, &labels, 3).unwrap();
            logits[i] = orig - h;
            let (lm, _) = loss_ce(&logits, &labels, 3).unwrap();
            logits[i] = orig;
            let numeric = (lp - lm) / (2.0 * h);
            let denom = grad[i].abs().max(numeric.abs()).max(1e-8);
            assert!(
                ((grad[i] - numeric) / denom).abs() < 1e-4,
                "element {i}: {} vs {numeric}",
                grad[i]
            );
        }
    }

    #[test]
    fn loss_rejects_bad_labels() {
        assert!(matches!(
            loss_ce(&[0.0; 6], &[0, 3], 3),
            Err(Error::LabelOutOfRange { .. })
        ));
    }

    #[test]
    fn backward_is_linear_in_upstream_gradient() {
        let net = SegNetwork::new(NetConfig::default_for(64, 3), RngSeed(11)).unwrap();
        let positions = random_positions(64, 12, 0.5);
        let labels = random_labels(64, 3, 13);
        let (logits, trace) = net.forward_trace(&positions).unwrap();
        let (_, d_logits) = loss_ce(&logits, &labels, 3).unwrap();
        let g1 = net.backward(&trace, &d_logits);
        let scaled: Vec<f64> = d_logits.iter().map(|v| 2.5 * v).collect();
        let g2 = net.backward(&trace, &scaled);
        for (a, b) in g1.param_tensors().iter().zip(g2.param_tensors()) {
            for (x, y) in a.data().iter().zip(b.data()) {
                let err = (2.5 * x - y).abs();
                assert!(err <= 1e-12 * x.abs().max(1.0), "{x} vs {y}");
            }
        }
    }

    #[test]
    fn averaging_identical_gradients_is_identity() {
        let net = SegNetwork::new(NetConfig::default_for(64, 3), RngSeed(14)).unwrap();
        let positions = random_positions(64, 15, 0.5);
        let labels = random_labels(64, 3, 16);
        let (logits, trace) = net.forward_trace(&positions).unwrap();
        let (_, d_logits) = loss_ce(&logits, &labels, 3).unwrap();
        let single = net.backward(&trace, &d_logits);
        // Mean of the duplicated patch: g/2 + g/2.
        let mut mean = net.zeros_like();
        mean.add_scaled(&single, 0.5);
        mean.add_scaled(&single, 0.5);
        for (a, b) in mean.param_tensors().iter().zip(single.param_tensors()) {
            assert_eq!(a.data(), b.data());
        }
    }

    #[test]
    fn gradients_match_finite_differences_on_tiny_net() {
        // A small all-stages net; the full default-architecture check runs
        // in the gradcheck module and acceptance suite.
        let config = NetConfig {
            patch_size: 24,
            num_classes: 3,
            sa: vec![
                SaConfig {
                    npoint: 8,
                    radius: 0.4,
                    nsample: 6,
                    mlp: vec![6, 8],
                },
                SaConfig {
                    npoint: 3,
                    radius: 0.9,
                    nsample: 5,
                    mlp: vec![8, 10],
                },
            ],
            fp: vec![vec![8], vec![6]],
            head: vec![5, 3],
        };
        let mut net = SegNetwork::new(config, RngSeed(17)).unwrap();
        // Move every parameter to a generic point: with zero biases each
        // center's own (all-zero) grouped row sits exactly on the ReLU kink,
        // where central differences measure a half-slope by construction.
        let mut rng = RngSeed(99).rng();
        for t in net.param_tensors_mut() {
            for v in t.data_mut() {
                *v += rng::uniform_f64(&mut rng, -0.05, 0.05);
            }
        }
        let positions = random_positions(24, 18, 0.7);
        let labels = random_labels(24, 3, 19);
        let (logits, trace) = net.forward_trace(&positions).unwrap();
        let (_, d_logits) = loss_ce(&logits, &labels, 3).unwrap();
        let grads = net.backward(&trace, &d_logits);

        let h = 1e-5;
        let mut probe = net.clone();
        let n_tensors = probe.param_tensors().len();
        for ti in 0..n_tensors {
            for ei in 0..probe.param_tensors()[ti].len() {
                let orig = probe.param_tensors()[ti].data()[ei];
                probe.param_tensors_mut()[ti].data_mut()[ei] = orig + h;
                let (lp, _) =
                    loss_ce(&probe.forward(&positions).unwrap(), &labels, 3).unwrap();
                probe.param_tensors_mut()[ti].data_mut()[ei] = orig - h;
                let (lm, _) =
                    loss_ce(&probe.forward(&positions).unwrap(), &labels, 3).unwrap();
                probe.param_tensors_mut()[ti].data_mut()[ei] = orig;
                let numeric = (lp - lm) / (2.0 * h);
                let analytic = grads.param_tensors()[ti].data()[ei];
                let scale = analytic.abs().max(numeric.abs());
                let err = (analytic - numeric).abs();
                assert!(
                    err <= 1e-3 * scale || err <= 1e-8,
                    "tensor {ti} elem {ei}: analytic {analytic} vs numeric {numeric}"
                );
            }
        }
    }

    #[test]
    fn non_finite_parameters_are_caught() {
        let mut net = SegNetwork::new(NetConfig::default_for(64, 3), RngSeed(20)).unwrap();
        net.param_tensors_mut()[0].data_mut()[0] = f64::NAN;
        let positions = random_positions(64, 21, 0.5);
        assert!(matches!(
            net.forward(&positions),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn config_validation_catches_mismatches() {
        let mut config = NetConfig::default_for(64, 3);
        config.head = vec![32, 4];
        assert!(config.validate().is_err());
        let mut config = NetConfig::default_for(64, 3);
        config.sa[1].npoint = 999;
        assert!(config.validate().is_err());
    }
}
