//! Central-finite-difference verification of the hand-written gradients.
//!
//! The numeric side perturbs one parameter at a time and re-evaluates the
//! loss through the forward pipeline only. Because the geometric structure
//! (sampling, grouping, interpolation weights) depends solely on positions,
//! and activations upstream of a perturbed layer cannot change, each probe
//! re-runs the pipeline from the perturbed layer's stage onward against
//! cached stage inputs. That memoization is exact, keeps the oracle
//! independent of the analytic backward pass, and makes checking every
//! parameter of the default architecture affordable on a laptop-class CPU.

use nalgebra::Vector3;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::net::kernels::apply_idw;
use crate::net::model::{loss_ce, max_pool, mlp_forward, SegNetwork};

/// Outcome of a full-network gradient check.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub parameters_checked: usize,
    pub failures: usize,
    pub max_relative_error: f64,
    /// `(tensor index, element index, analytic, numeric)` of the worst case.
    pub worst: Option<(usize, usize, f64, f64)>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

/// Stages of the two-level pipeline; a parameter in stage `s` requires
/// recomputation of stages `s..` only.
const STAGE_SA0: usize = 0;
const STAGE_SA1: usize = 1;
const STAGE_FP0: usize = 2;
const STAGE_FP1: usize = 3;
const STAGE_HEAD: usize = 4;

struct StageCache {
    /// Grouped inputs of both SA levels and the FP/head inputs, cloned from
    /// the unperturbed trace.
    x1: Vec<f64>,
    x2: Vec<f64>,
    concat0: Vec<f64>,
    concat1: Vec<f64>,
    g0: Vec<f64>,
    /// Unperturbed pooled features of SA level 0 (skip input of FP0).
    f1: Vec<f64>,
    /// Ball-group membership of SA level 1 (indices into level-1 centers).
    groups1: Vec<usize>,
    /// Interpolation weights of both FP levels.
    idw0: Vec<(usize, f64)>,
    k0: usize,
    idw1: Vec<(usize, f64)>,
    k1: usize,
    n: usize,
    np1: usize,
}

/// Nudge every parameter by a small uniform offset.
///
/// Finite differences are only meaningful at a generic point: with freshly
/// initialized (zero) biases, each sampling center's own grouped row has
/// all-zero input, so its pre-activations sit exactly on the ReLU kink where
/// a central difference measures a half-slope no matter how small the step.
pub fn perturb_off_relu_kinks(net: &mut SegNetwork, seed: crate::rng::RngSeed) {
    let mut rng = seed.rng();
    for t in net.param_tensors_mut() {
        for v in t.data_mut() {
            *v += crate::rng::uniform_f64(&mut rng, -0.05, 0.05);
        }
    }
}

/// Verify every parameter gradient of a two-level network against central
/// finite differences with step `h`. A parameter passes when
/// `|analytic - numeric| <= rel_tol * max(|analytic|, |numeric|)` or the
/// absolute difference is below 1e-8.
pub fn check_gradients(
    net: &SegNetwork,
    positions: &[Vector3<f64>],
    labels: &[u8],
    h: f64,
    rel_tol: f64,
) -> Result<GradCheckReport> {
    if net.config.sa.len() != 2 {
        return Err(Error::InvalidNetConfig(
            "gradient check supports the two-level architecture".into(),
        ));
    }
    let c = net.config.num_classes;
    let (logits, trace) = net.forward_trace(positions)?;
    let (_, d_logits) = loss_ce(&logits, labels, c)?;
    let analytic = net.backward(&trace, &d_logits);

    let stage_inputs = trace.stage_inputs();
    let cache = StageCache {
        x1: stage_inputs[0].clone(),
        x2: stage_inputs[1].clone(),
        concat0: stage_inputs[2].clone(),
        concat1: stage_inputs[3].clone(),
        g0: stage_inputs[4].clone(),
        f1: {
            // Recompute pooled level-1 features from the cached stage input.
            let acts = mlp_forward(
                &net.sa_mlps[0],
                stage_inputs[0].clone(),
                net.config.sa[0].npoint * net.config.sa[0].nsample,
                true,
                "gradcheck",
            )?;
            max_pool(
                acts.last().unwrap(),
                net.config.sa[0].npoint,
                net.config.sa[0].nsample,
                net.config.feat_dim(1),
            )
            .0
        },
        groups1: trace.sa_groups(1).to_vec(),
        idw0: trace.fp_weights(0).0.to_vec(),
        k0: trace.fp_weights(0).1,
        idw1: trace.fp_weights(1).0.to_vec(),
        k1: trace.fp_weights(1).1,
        n: positions.len(),
        np1: net.config.sa[0].npoint,
    };

    // Map every tensor to its pipeline stage (canonical parameter order).
    let mut stages = Vec::new();
    for (mlp, stage) in [
        (&net.sa_mlps[0], STAGE_SA0),
        (&net.sa_mlps[1], STAGE_SA1),
        (&net.fp_mlps[0], STAGE_FP0),
        (&net.fp_mlps[1], STAGE_FP1),
        (&net.head, STAGE_HEAD),
    ] {
        for _ in 0..mlp.layers.len() * 2 {
            stages.push(stage);
        }
    }

    let tensors = net.param_tensors();
    let mut jobs = Vec::new();
    for (ti, t) in tensors.iter().enumerate() {
        for ei in 0..t.len() {
            jobs.push((ti, ei));
        }
    }

    let results: Vec<(usize, usize, f64, f64)> = crate::thread_pool().install(|| {
        jobs.par_chunks(512)
            .map_init(
                || net.clone(),
                |probe, chunk| {
                    let mut out = Vec::with_capacity(chunk.len());
                    for &(ti, ei) in chunk {
                        let stage = stages[ti];
                        let orig = probe.param_tensors()[ti].data()[ei];
                        probe.param_tensors_mut()[ti].data_mut()[ei] = orig + h;
                        let lp = loss_from_stage(stage, probe, &cache, labels, c)?;
                        probe.param_tensors_mut()[ti].data_mut()[ei] = orig - h;
                        let lm = loss_from_stage(stage, probe, &cache, labels, c)?;
                        probe.param_tensors_mut()[ti].data_mut()[ei] = orig;
                        let numeric = (lp - lm) / (2.0 * h);
                        let a = analytic.param_tensors()[ti].data()[ei];
                        out.push((ti, ei, a, numeric));
                    }
                    Ok(out)
                },
            )
            .collect::<Result<Vec<_>>>()
            .map(|chunks| chunks.into_iter().flatten().collect())
    })?;

    let mut failures = 0;
    let mut max_rel = 0.0f64;
    let mut worst = None;
    for (ti, ei, a, numeric) in results {
        let abs = (a - numeric).abs();
        let scale = a.abs().max(numeric.abs());
        let rel = if scale > 0.0 { abs / scale } else { 0.0 };
        if rel > max_rel && abs > 1e-8 {
            max_rel = rel;
            worst = Some((ti, ei, a, numeric));
        }
        if rel > rel_tol && abs > 1e-8 {
            failures += 1;
        }
    }

    Ok(GradCheckReport {
        parameters_checked: jobs.len(),
        failures,
        max_relative_error: max_rel,
        worst,
    })
}

/// Loss of the perturbed network, recomputing only stages `stage..`.
fn loss_from_stage(
    stage: usize,
    net: &SegNetwork,
    cache: &StageCache,
    labels: &[u8],
    num_classes: usize,
) -> Result<f64> {
    let cfg = &net.config;
    let f1_dim = cfg.feat_dim(1);
    let f2_dim = cfg.feat_dim(2);

    let f1: Vec<f64>;
    let f2: Vec<f64>;
    let g1: Vec<f64>;
    let g0: Vec<f64>;

    if stage <= STAGE_SA0 {
        let rows = cfg.sa[0].npoint * cfg.sa[0].nsample;
        let acts = mlp_forward(&net.sa_mlps[0], cache.x1.clone(), rows, true, "gradcheck")?;
        f1 = max_pool(acts.last().unwrap(), cfg.sa[0].npoint, cfg.sa[0].nsample, f1_dim).0;
    } else {
        f1 = cache.f1.clone();
    }

    if stage <= STAGE_SA1 {
        let rows = cfg.sa[1].npoint * cfg.sa[1].nsample;
        let in_dim = cfg.sa_in_dim(1);
        let mut x2 = cache.x2.clone();
        if stage == STAGE_SA0 {
            // Refresh the gathered feature columns with the recomputed F1.
            for (row, &idx) in cache.groups1.iter().enumerate() {
                x2[row * in_dim + 3..(row + 1) * in_dim]
                    .copy_from_slice(&f1[idx * f1_dim..(idx + 1) * f1_dim]);
            }
        }
        let acts = mlp_forward(&net.sa_mlps[1], x2, rows, true, "gradcheck")?;
        f2 = max_pool(acts.last().unwrap(), cfg.sa[1].npoint, cfg.sa[1].nsample, f2_dim).0;
    } else {
        f2 = Vec::new(); // consumed only through concat0 below
    }

    if stage <= STAGE_FP0 {
        let concat0 = if stage < STAGE_FP0 {
            let interp = apply_idw(&cache.idw0, cache.k0, &f2, f2_dim, cache.np1);
            let in_dim = cfg.fp_in_dim(0);
            let mut c0 = vec![0.0; cache.np1 * in_dim];
            for q in 0..cache.np1 {
                let row = &mut c0[q * in_dim..(q + 1) * in_dim];
                row[..f2_dim].copy_from_slice(&interp[q * f2_dim..(q + 1) * f2_dim]);
                row[f2_dim..].copy_from_slice(&f1[q * f1_dim..(q + 1) * f1_dim]);
            }
            c0
        } else {
            cache.concat0.clone()
        };
        let acts = mlp_forward(&net.fp_mlps[0], concat0, cache.np1, true, "gradcheck")?;
        g1 = acts.last().unwrap().clone();
    } else {
        g1 = Vec::new();
    }

    if stage <= STAGE_FP1 {
        let g1_dim = cfg.fp_source_dim(1);
        let concat1 = if stage < STAGE_FP1 {
            apply_idw(&cache.idw1, cache.k1, &g1, g1_dim, cache.n)
        } else {
            cache.concat1.clone()
        };
        let acts = mlp_forward(&net.fp_mlps[1], concat1, cache.n, true, "gradcheck")?;
        g0 = acts.last().unwrap().clone();
    } else {
        g0 = cache.g0.clone();
    }

    let acts = mlp_forward(&net.head, g0, cache.n, false, "gradcheck")?;
    Ok(loss_ce(acts.last().unwrap(), labels, num_classes)?.0)
}
