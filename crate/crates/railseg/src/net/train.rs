//! Mini-batch training and whole-cloud prediction.

use std::time::Instant;

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::net::checkpoint::Checkpoint;
use crate::net::kernels::knn_around;
use crate::net::model::{loss_ce, SegNetwork};
use crate::net::optim::Adam;
use crate::pipeline::DatasetManifest;
use crate::rng::{self, RngSeed};

#[derive(Debug, Clone, Copy)]
pub struct TrainOptions {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: RngSeed,
}

/// Wall time and loss trajectory of one training run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainReport {
    pub wall_time_s: f64,
    pub epoch_mean_loss: Vec<f64>,
    pub epochs: usize,
}

/// Train with mini-batch Adam (β1 = 0.9, β2 = 0.999, ε = 1e-8) over the
/// manifest's patches. Patches are shuffled each epoch from the seed's
/// stream; per-patch gradients inside a batch are computed in parallel but
/// summed in patch order, so checkpoints are bit-identical for a given seed
/// regardless of thread count. `epochs = 0` returns the initial parameters
/// untouched.
pub fn train(
    net: SegNetwork,
    manifest: &DatasetManifest,
    options: &TrainOptions,
) -> Result<(Checkpoint, TrainReport)> {
    let start = Instant::now();
    if options.batch_size == 0 {
        return Err(Error::Config("batch_size must be at least 1".into()));
    }
    if manifest.patches.is_empty() {
        return Err(Error::Manifest("manifest lists no patches".into()));
    }
    let schema = crate::cloud::LabelSchema::railroad();
    if schema.num_classes() != net.config.num_classes {
        return Err(Error::ShapeMismatch(format!(
            "network emits {} classes, schema has {}",
            net.config.num_classes,
            schema.num_classes()
        )));
    }
    let clouds = manifest.load_patches(&schema)?;
    let patches: Vec<(&[Vector3<f64>], &[u8])> = clouds
        .iter()
        .map(|c| (c.positions(), c.labels()))
        .collect();

    let mut net = net;
    let adam = Adam::new(options.lr);
    let mut state = Adam::initial_state(&net);
    let mut rng = options.seed.rng();
    let mut epoch_mean_loss = Vec::with_capacity(options.epochs);

    for _ in 0..options.epochs {
        let mut order: Vec<usize> = (0..patches.len()).collect();
        rng::shuffle(&mut rng, &mut order);
        let mut loss_sum = 0.0;
        for batch in order.chunks(options.batch_size) {
            let results: Vec<(f64, SegNetwork)> = crate::thread_pool().install(|| {
                batch
                    .par_iter()
                    .map(|&pi| {
                        let (positions, labels) = patches[pi];
                        let (logits, trace) = net.forward_trace(positions)?;
                        let (loss, d_logits) =
                            loss_ce(&logits, labels, net.config.num_classes)?;
                        Ok((loss, net.backward(&trace, &d_logits)))
                    })
                    .collect::<Result<Vec<_>>>()
            })?;
            let mut grads = net.zeros_like();
            let scale = 1.0 / results.len() as f64;
            for (loss, g) in &results {
                grads.add_scaled(g, scale);
                loss_sum += loss;
            }
            adam.step(&mut net, &grads, &mut state);
        }
        let mean = loss_sum / patches.len() as f64;
        if !mean.is_finite() {
            return Err(Error::NonFinite("epoch mean loss"));
        }
        epoch_mean_loss.push(mean);
    }

    let report = TrainReport {
        wall_time_s: start.elapsed().as_secs_f64(),
        epoch_mean_loss,
        epochs: options.epochs,
    };
    let checkpoint = Checkpoint {
        network: net,
        schema,
        optimizer: Some(state),
        epoch: options.epochs as u64,
        rng_seed: options.seed.0,
        rng_word_pos: rng.get_word_pos(),
    };
    Ok((checkpoint, report))
}

/// Predict per-point labels for a whole cloud: the cloud is covered by
/// overlapping nearest-neighbor patches of `patch_size` points (seed points
/// drawn uniformly among still-uncovered points) until every point has been
/// seen; logits from all covering patches are averaged before the argmax.
/// Clouds smaller than `patch_size` are padded by resampling.
pub fn predict(
    checkpoint: &Checkpoint,
    cloud: &PointCloud,
    patch_size: usize,
    seed: RngSeed,
) -> Result<Vec<u8>> {
    let n = cloud.len();
    if n == 0 {
        return Err(Error::EmptyCloud);
    }
    let net = &checkpoint.network;
    let c = net.config.num_classes;
    let positions = cloud.positions();
    let mut rng = seed.rng();

    let mut logit_sum = vec![0.0; n * c];
    let mut hits = vec![0u32; n];

    let run_patch = |indices: &[usize],
                         logit_sum: &mut [f64],
                         hits: &mut [u32]|
     -> Result<()> {
        let pts: Vec<Vector3<f64>> = indices.iter().map(|&i| positions[i]).collect();
        let logits = net.forward(&pts)?;
        for (row, &idx) in indices.iter().enumerate() {
            let src = &logits[row * c..(row + 1) * c];
            let dst = &mut logit_sum[idx * c..(idx + 1) * c];
            for (d, &s) in dst.iter_mut().zip(src) {
                *d += s;
            }
            hits[idx] += 1;
        }
        Ok(())
    };

    if n <= patch_size {
        let mut indices: Vec<usize> = (0..n).collect();
        for _ in n..patch_size {
            indices.push(rng::uniform_usize(&mut rng, n));
        }
        run_patch(&indices, &mut logit_sum, &mut hits)?;
    } else {
        let mut covered = vec![false; n];
        let mut remaining = n;
        while remaining > 0 {
            // Pick the r-th uncovered point as the next patch seed.
            let r = rng::uniform_usize(&mut rng, remaining);
            let mut seen = 0;
            let mut seed_idx = 0;
            for (i, &cov) in covered.iter().enumerate() {
                if !cov {
                    if seen == r {
                        seed_idx = i;
                        break;
                    }
                    seen += 1;
                }
            }
            let indices = knn_around(positions, seed_idx, patch_size);
            run_patch(&indices, &mut logit_sum, &mut hits)?;
            for &i in &indices {
                if !covered[i] {
                    covered[i] = true;
                    remaining -= 1;
                }
            }
        }
    }

    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        debug_assert!(hits[i] > 0);
        let row = &logit_sum[i * c..(i + 1) * c];
        let mut best = 0;
        for (k, &v) in row.iter().enumerate() {
            if v > row[best] {
                best = k;
            }
        }
        labels.push(best as u8);
    }
    Ok(labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cloud::LabelSchema;
    use crate::net::model::NetConfig;
    use crate::pipeline::{assemble_group, make_group_configs};
    use crate::synth::{generate_clean, TrackSpec};

    /// Tiny manifest over patches cut from a short clean track.
    fn tiny_manifest(dir: &std::path::Path, patch_size: usize, seed: u64) -> DatasetManifest {
        let mut spec = TrackSpec::wood_tie();
        spec.length_m = 3.0;
        let cloud = generate_clean(&spec, 150.0, RngSeed(seed)).unwrap();
        let mut group = make_group_configs(0.001).unwrap()[4];
        group.bim_included = false;
        group.level.point_range = (100, cloud.len().max(200));
        group.level.patch_size = patch_size;
        assemble_group(&group, &[cloud], &[], 4, dir, RngSeed(seed + 1)).unwrap()
    }

    #[test]
    fn zero_epochs_returns_initial_parameters() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = tiny_manifest(dir.path(), 64, 1);
        let net = SegNetwork::new(NetConfig::default_for(64, 3), RngSeed(2)).unwrap();
        let init = net.clone();
        let (ckpt, report) = train(
            net,
            &manifest,
            &TrainOptions {
                epochs: 0,
                lr: 0.01,
                batch_size: 4,
                seed: RngSeed(3),
            },
        )
        .unwrap();
        assert_eq!(ckpt.network, init);
        assert!(report.epoch_mean_loss.is_empty());
        assert_eq!(ckpt.optimizer.as_ref().unwrap().step, 0);
    }

    #[test]
    fn overfits_a_single_patch() {
        let dir = tempfile::tempdir().unwrap();
        let mut spec = TrackSpec::wood_tie();
        spec.length_m = 3.0;
        let cloud = generate_clean(&spec, 400.0, RngSeed(4)).unwrap();
        let mut group = make_group_configs(0.001).unwrap()[4];
        group.bim_included = false;
        group.level.point_range = (100, cloud.len().max(200));
        group.level.patch_size = 512;
        let manifest =
            assemble_group(&group, &[cloud], &[], 1, dir.path(), RngSeed(5)).unwrap();

        let net = SegNetwork::new(NetConfig::default_for(512, 3), RngSeed(6)).unwrap();
        let (_, report) = train(
            net,
            &manifest,
            &TrainOptions {
                epochs: 50,
                lr: 0.01,
                batch_size: 1,
                seed: RngSeed(7),
            },
        )
        .unwrap();
        let final_loss = *report.epoch_mean_loss.last().unwrap();
        assert!(final_loss < 0.1, "final loss {final_loss}");
        assert!(report.wall_time_s >= 0.0);
    }

    #[test]
    fn training_is_bit_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = tiny_manifest(dir.path(), 64, 8);
        let opts = TrainOptions {
            epochs: 3,
            lr: 0.02,
            batch_size: 2,
            seed: RngSeed(9),
        };
        let run = || {
            let net = SegNetwork::new(NetConfig::default_for(64, 3), RngSeed(10)).unwrap();
            train(net, &manifest, &opts).unwrap().0
        };
        let a = run();
        let b = run();
        assert_eq!(a.to_bytes(), b.to_bytes());
    }

    #[test]
    fn predict_covers_small_and_large_clouds() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = tiny_manifest(dir.path(), 64, 11);
        let net = SegNetwork::new(NetConfig::default_for(64, 3), RngSeed(12)).unwrap();
        let (ckpt, _) = train(
            net,
            &manifest,
            &TrainOptions {
                epochs: 1,
                lr: 0.01,
                batch_size: 4,
                seed: RngSeed(13),
            },
        )
        .unwrap();

        // Smaller than the patch: one padded patch covers everything.
        let mut spec = TrackSpec::wood_tie();
        spec.length_m = 1.0;
        let small = generate_clean(&spec, 20.0, RngSeed(14)).unwrap();
        assert!(small.len() < 64, "want a sub-patch cloud, got {}", small.len());
        let labels = predict(&ckpt, &small, 64, RngSeed(15)).unwrap();
        assert_eq!(labels.len(), small.len());
        assert!(labels.iter().all(|&l| l < 3));

        // Larger than the patch: overlapping coverage.
        let big = generate_clean(&spec, 500.0, RngSeed(16)).unwrap();
        assert!(big.len() > 64);
        let labels = predict(&ckpt, &big, 64, RngSeed(17)).unwrap();
        assert_eq!(labels.len(), big.len());
        assert!(labels.iter().all(|&l| l < 3));

        let empty = crate::cloud::PointCloud::empty(LabelSchema::railroad());
        assert!(matches!(
            predict(&ckpt, &empty, 64, RngSeed(18)),
            Err(Error::EmptyCloud)
        ));
    }
}
