//! Surface sampling and the pseudo-real noise pipeline.

use nalgebra::Vector3;

use crate::cloud::{LabelSchema, PointCloud};
use crate::error::{Error, Result};
use crate::rng::{self, RngSeed};
use crate::synth::{
    build_track_mesh, ComponentMesh, NoiseSpec, TrackSpec, STREAM_CLUTTER, STREAM_DROPOUT,
    STREAM_JITTER,
};

fn round_half_up(x: f64) -> usize {
    (x + 0.5).floor() as usize
}

/// Sample every mesh at `density` points per square meter.
///
/// Each mesh contributes `round(area × density)` points (half-up). Points
/// are drawn on a triangle chosen with probability proportional to its area
/// and placed with uniform barycentric coordinates; each point inherits its
/// mesh's label. Mesh `i` draws from the sub-stream `seed.derive(i)`, so the
/// result is independent of evaluation order.
pub fn sample_surface(
    meshes: &[ComponentMesh],
    density_pts_per_m2: f64,
    seed: RngSeed,
    schema: &LabelSchema,
) -> Result<PointCloud> {
    if meshes.is_empty() {
        return Err(Error::EmptyMeshList);
    }
    if !(density_pts_per_m2 > 0.0) {
        return Err(Error::Config(format!(
            "sampling density must be positive, got {density_pts_per_m2}"
        )));
    }
    let total_area: f64 = meshes.iter().map(|m| m.area()).sum();
    if total_area <= 0.0 {
        return Err(Error::ZeroAreaSurface);
    }

    let mut positions = Vec::new();
    let mut labels = Vec::new();
    for (i, mesh) in meshes.iter().enumerate() {
        mesh.validate()?;
        if mesh.label as usize >= schema.num_classes() {
            return Err(Error::LabelOutOfRange {
                value: mesh.label as u32,
                num_classes: schema.num_classes(),
            });
        }
        let area = mesh.area();
        let count = round_half_up(area * density_pts_per_m2);
        if count == 0 {
            continue;
        }
        // Cumulative triangle areas for proportional selection.
        let mut cumulative = Vec::with_capacity(mesh.triangles.len());
        let mut acc = 0.0;
        for t in 0..mesh.triangles.len() {
            acc += mesh.triangle_area(t);
            cumulative.push(acc);
        }
        let mesh_area = acc;

        let mut rng = seed.derive(i as u64).rng();
        for _ in 0..count {
            let target = rng::unit_f64(&mut rng) * mesh_area;
            let t = cumulative.partition_point(|&c| c <= target).min(mesh.triangles.len() - 1);
            let (mut r1, mut r2) = (rng::unit_f64(&mut rng), rng::unit_f64(&mut rng));
            if r1 + r2 > 1.0 {
                r1 = 1.0 - r1;
                r2 = 1.0 - r2;
            }
            let [ia, ib, ic] = mesh.triangles[t];
            let (a, b, c) = (
                mesh.vertices[ia as usize],
                mesh.vertices[ib as usize],
                mesh.vertices[ic as usize],
            );
            positions.push(a + r1 * (b - a) + r2 * (c - a));
            labels.push(mesh.label);
        }
    }
    PointCloud::new(positions, labels, schema.clone())
}

/// Build the track meshes and sample them: a perfectly labeled clean cloud.
pub fn generate_clean(spec: &TrackSpec, density: f64, seed: RngSeed) -> Result<PointCloud> {
    let meshes = build_track_mesh(spec)?;
    sample_surface(&meshes, density, seed, &LabelSchema::railroad())
}

/// Clean generation followed by the noise model: per-point Gaussian jitter,
/// then dropout, then clutter points labeled "other". Labels of surviving
/// surface points are unchanged. With `NoiseSpec::none()` the output equals
/// `generate_clean(spec, density, seed)` exactly.
pub fn generate_pseudo_real(
    spec: &TrackSpec,
    density: f64,
    noise: &NoiseSpec,
    seed: RngSeed,
) -> Result<PointCloud> {
    noise.validate()?;
    let clean = generate_clean(spec, density, seed)?;
    let clean_count = clean.len();
    let schema = clean.schema().clone();

    let mut positions: Vec<Vector3<f64>> = clean.positions().to_vec();
    let mut labels: Vec<u8> = clean.labels().to_vec();

    if noise.gaussian_sigma_m > 0.0 {
        let mut rng = seed.derive(STREAM_JITTER).rng();
        let sigma = noise.gaussian_sigma_m;
        for p in positions.iter_mut() {
            *p += sigma
                * Vector3::new(
                    rng::gaussian(&mut rng),
                    rng::gaussian(&mut rng),
                    rng::gaussian(&mut rng),
                );
        }
    }

    if noise.dropout_rate > 0.0 {
        let mut rng = seed.derive(STREAM_DROPOUT).rng();
        let mut keep = Vec::with_capacity(positions.len());
        for i in 0..positions.len() {
            if rng::unit_f64(&mut rng) >= noise.dropout_rate {
                keep.push(i);
            }
        }
        positions = keep.iter().map(|&i| positions[i]).collect();
        labels = keep.iter().map(|&i| labels[i]).collect();
    }

    let clutter_count = round_half_up(noise.clutter_rate * clean_count as f64);
    if clutter_count > 0 {
        // Clutter fills the structural bounding box (rails + ties, ignoring
        // any ballast plane) extended by the ballast margin, within the
        // vertical clutter band above the ballast plane.
        let meshes = build_track_mesh(spec)?;
        let mut lo = Vector3::repeat(f64::MAX);
        let mut hi = Vector3::repeat(f64::MIN);
        for m in meshes.iter().filter(|m| m.label != 2) {
            for v in &m.vertices {
                lo = lo.inf(v);
                hi = hi.sup(v);
            }
        }
        let margin = spec.ballast_margin_m;
        let other = schema.index_of("other").expect("railroad schema");
        let mut rng = seed.derive(STREAM_CLUTTER).rng();
        for _ in 0..clutter_count {
            positions.push(Vector3::new(
                rng::uniform_f64(&mut rng, lo.x - margin, hi.x + margin),
                rng::uniform_f64(&mut rng, 0.0, noise.clutter_band_m.max(0.0)),
                rng::uniform_f64(&mut rng, lo.z - margin, hi.z + margin),
            ));
            labels.push(other);
        }
    }

    PointCloud::new(positions, labels, schema)
}

/// Generate `count` clean clouds from independently perturbed variants of
/// `base`: tie dimensions and spacing jittered within ±`jitter_pct`, rails
/// and gauge held fixed. Cloud `i` uses sub-seeds `seed.derive(2i)` for the
/// spec perturbation and `seed.derive(2i + 1)` for sampling.
pub fn batch_generate(
    base: &TrackSpec,
    count: usize,
    jitter_pct: f64,
    density: f64,
    seed: RngSeed,
) -> Result<Vec<PointCloud>> {
    if count == 0 {
        return Err(Error::Config("batch count must be at least 1".into()));
    }
    if !(0.0..0.5).contains(&jitter_pct) {
        return Err(Error::Config(format!(
            "jitter_pct must be in [0, 0.5), got {jitter_pct}"
        )));
    }
    base.validate()?;
    let mut clouds = Vec::with_capacity(count);
    for i in 0..count {
        let mut spec_rng = seed.derive(2 * i as u64).rng();
        let spec = base.perturb_ties(jitter_pct, &mut spec_rng);
        spec.validate().map_err(|e| Error::BatchItem {
            index: i,
            source: Box::new(e),
        })?;
        let cloud = generate_clean(&spec, density, seed.derive(2 * i as u64 + 1))
            .map_err(|e| Error::BatchItem {
                index: i,
                source: Box::new(e),
            })?;
        clouds.push(cloud);
    }
    Ok(clouds)
}
