//! Dataset manifests: the persisted record of an assembled training group.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cloud::{load_ply, save_ply, PointCloud};
use crate::error::{Error, Result};
use crate::pipeline::{augment, subsample_to_level, extract_patches, GroupConfig};
use crate::rng::RngSeed;

/// One patch file plus its provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchRecord {
    /// Path relative to the manifest's directory.
    pub file: String,
    /// Source cloud id, e.g. `pseudo_real[0]` or `synthetic[2]`.
    pub source: String,
    pub rotation_axis: Option<[f64; 3]>,
    pub rotation_angle: Option<f64>,
}

/// Persisted description of a group's training set. Serializes to JSON and
/// round-trips losslessly (timestamps aside, re-assembly with equal inputs
/// and seed reproduces the manifest byte for byte).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub group_id: String,
    pub level: String,
    pub point_range: [usize; 2],
    pub patch_size: usize,
    pub rotation: String,
    pub bim_included: bool,
    pub seed: u64,
    pub created_at: u64,
    pub patches: Vec<PatchRecord>,
    /// Directory the patch paths are relative to; set on load/save.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl DatasetManifest {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<DatasetManifest> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| {
            if e.kind() == std::io::ErrorKind::NotFound {
                Error::MissingPrerequisite(format!("manifest {}", path.display()))
            } else {
                Error::io(path, e)
            }
        })?;
        let mut manifest: DatasetManifest =
            serde_json::from_str(&text).map_err(|e| Error::Manifest(e.to_string()))?;
        manifest.base_dir = path
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from("."));
        Ok(manifest)
    }

    pub fn patch_path(&self, record: &PatchRecord) -> PathBuf {
        self.base_dir.join(&record.file)
    }

    /// Load every patch cloud, verifying existence, size, and labels.
    pub fn load_patches(&self, schema: &crate::cloud::LabelSchema) -> Result<Vec<PointCloud>> {
        let mut patches = Vec::with_capacity(self.patches.len());
        for record in &self.patches {
            let path = self.patch_path(record);
            if !path.exists() {
                return Err(Error::MissingPrerequisite(format!(
                    "patch file {}",
                    path.display()
                )));
            }
            let cloud = load_ply(&path, schema)?;
            if cloud.len() != self.patch_size {
                return Err(Error::Manifest(format!(
                    "{} has {} points, expected {}",
                    path.display(),
                    cloud.len(),
                    self.patch_size
                )));
            }
            patches.push(cloud);
        }
        Ok(patches)
    }
}

/// Assemble one group's training set: each source cloud is subsampled to
/// the group's density level, cut into `patches_per_cloud` patches, and
/// augmented per the rotation strategy; synthetic clouds participate only
/// when `bim_included`. Patches are written as binary PLY under `out_dir`
/// and described by the returned (and persisted) manifest.
///
/// Per-cloud sub-seeds are pure functions of `(seed, cloud index)`, so the
/// result does not depend on processing order.
pub fn assemble_group(
    group: &GroupConfig,
    pseudo_real: &[PointCloud],
    synthetic: &[PointCloud],
    patches_per_cloud: usize,
    out_dir: impl AsRef<Path>,
    seed: RngSeed,
) -> Result<DatasetManifest> {
    if pseudo_real.is_empty() {
        return Err(Error::Config(
            "assemble_group requires at least one pseudo-real cloud".into(),
        ));
    }
    if group.bim_included && synthetic.is_empty() {
        return Err(Error::Config(
            "group includes synthetic model data but no synthetic clouds were given".into(),
        ));
    }
    if patches_per_cloud == 0 {
        return Err(Error::Config("patches_per_cloud must be at least 1".into()));
    }
    let out_dir = out_dir.as_ref();
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    let mut sources: Vec<(String, &PointCloud)> = pseudo_real
        .iter()
        .enumerate()
        .map(|(i, c)| (format!("pseudo_real[{i}]"), c))
        .collect();
    if group.bim_included {
        sources.extend(
            synthetic
                .iter()
                .enumerate()
                .map(|(i, c)| (format!("synthetic[{i}]"), c)),
        );
    }

    let mut records = Vec::new();
    for (cloud_idx, (source, cloud)) in sources.iter().enumerate() {
        let cloud_seed = seed.derive(cloud_idx as u64);
        let leveled = subsample_to_level(cloud, &group.level, cloud_seed.derive(0))?;
        let patches = extract_patches(
            &leveled,
            group.level.patch_size,
            patches_per_cloud,
            cloud_seed.derive(1),
        )?;
        let augmented = augment(&patches, group.rotation, cloud_seed.derive(2))?;
        for (patch_idx, patch) in augmented.iter().enumerate() {
            let file = format!("patch_{cloud_idx:03}_{patch_idx:03}.ply");
            save_ply(&patch.cloud, out_dir.join(&file), false)?;
            records.push(PatchRecord {
                file,
                source: source.clone(),
                rotation_axis: patch.rotation.map(|r| [r.axis.x, r.axis.y, r.axis.z]),
                rotation_angle: patch.rotation.map(|r| r.angle),
            });
        }
    }

    let manifest = DatasetManifest {
        group_id: group.id.as_str().to_string(),
        level: group.level.name.as_str().to_string(),
        point_range: [group.level.point_range.0, group.level.point_range.1],
        patch_size: group.level.patch_size,
        rotation: group.rotation.as_str().to_string(),
        bim_included: group.bim_included,
        seed: seed.0,
        created_at: std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
        patches: records,
        base_dir: out_dir.to_path_buf(),
    };
    manifest.save(out_dir.join("manifest.json"))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cloud::LabelSchema;
    use crate::pipeline::{make_group_configs, GroupId};
    use crate::rng;
    use nalgebra::Vector3;

    fn random_cloud(n: usize, seed: u64) -> PointCloud {
        let mut rng = RngSeed(seed).rng();
        let positions = (0..n)
            .map(|_| {
                Vector3::new(
                    rng::uniform_f64(&mut rng, -3.0, 3.0),
                    rng::uniform_f64(&mut rng, -3.0, 3.0),
                    rng::uniform_f64(&mut rng, -3.0, 3.0),
                )
            })
            .collect();
        let labels = (0..n).map(|_| rng::uniform_usize(&mut rng, 3) as u8).collect();
        PointCloud::new(positions, labels, LabelSchema::railroad()).unwrap()
    }

    fn tiny_groups() -> Vec<GroupConfig> {
        // Small desk scale so unit tests stay fast.
        let mut configs = make_group_configs(0.0005).unwrap();
        for c in &mut configs {
            c.level.point_range = (50, 400);
            c.level.patch_size = 64;
        }
        configs
    }

    #[test]
    fn patch_file_count_is_sources_times_patches() {
        let dir = tempfile::tempdir().unwrap();
        let groups = tiny_groups();
        let g1 = groups[0];
        let pseudo = vec![random_cloud(300, 1), random_cloud(300, 2)];
        let synthetic = vec![
            random_cloud(300, 3),
            random_cloud(300, 4),
            random_cloud(300, 5),
        ];
        let manifest =
            assemble_group(&g1, &pseudo, &synthetic, 4, dir.path(), RngSeed(6)).unwrap();
        assert_eq!(manifest.patches.len(), (2 + 3) * 4);
        for record in &manifest.patches {
            assert!(manifest.patch_path(record).exists());
        }
        let loaded = manifest.load_patches(&LabelSchema::railroad()).unwrap();
        assert!(loaded.iter().all(|p| p.len() == 64));
    }

    #[test]
    fn without_bim_only_pseudo_real_sources_appear() {
        let dir = tempfile::tempdir().unwrap();
        let groups = tiny_groups();
        let g8 = groups[7];
        assert_eq!(g8.id, GroupId::G8);
        let pseudo = vec![random_cloud(200, 7)];
        let synthetic = vec![random_cloud(200, 8)];
        let manifest =
            assemble_group(&g8, &pseudo, &synthetic, 3, dir.path(), RngSeed(9)).unwrap();
        assert!(!manifest.bim_included);
        assert!(manifest
            .patches
            .iter()
            .all(|p| p.source.starts_with("pseudo_real")));
        assert!(manifest
            .patches
            .iter()
            .all(|p| p.rotation_axis.is_none() && p.rotation_angle.is_none()));
    }

    #[test]
    fn reassembly_is_identical_modulo_timestamp() {
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        let groups = tiny_groups();
        let g5 = groups[4];
        let pseudo = vec![random_cloud(250, 10)];
        let synthetic = vec![random_cloud(250, 11)];
        let mut a =
            assemble_group(&g5, &pseudo, &synthetic, 4, dir_a.path(), RngSeed(12)).unwrap();
        let mut b =
            assemble_group(&g5, &pseudo, &synthetic, 4, dir_b.path(), RngSeed(12)).unwrap();
        a.created_at = 0;
        b.created_at = 0;
        a.base_dir = PathBuf::new();
        b.base_dir = PathBuf::new();
        assert_eq!(a, b);
        // Patch files byte-identical as well.
        for record in &a.patches {
            let pa = std::fs::read(dir_a.path().join(&record.file)).unwrap();
            let pb = std::fs::read(dir_b.path().join(&record.file)).unwrap();
            assert_eq!(pa, pb);
        }
    }

    #[test]
    fn manifest_round_trips_through_json() {
        let dir = tempfile::tempdir().unwrap();
        let groups = tiny_groups();
        let g5 = groups[4];
        let manifest = assemble_group(
            &g5,
            &[random_cloud(250, 13)],
            &[random_cloud(250, 14)],
            2,
            dir.path(),
            RngSeed(15),
        )
        .unwrap();
        let loaded = DatasetManifest::load(dir.path().join("manifest.json")).unwrap();
        assert_eq!(manifest, loaded);
        // Every rotation record parses back to the exact float.
        for (a, b) in manifest.patches.iter().zip(&loaded.patches) {
            assert_eq!(a.rotation_axis, b.rotation_axis);
            assert_eq!(a.rotation_angle, b.rotation_angle);
        }
    }

    #[test]
    fn missing_inputs_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let groups = tiny_groups();
        assert!(matches!(
            assemble_group(&groups[0], &[], &[random_cloud(100, 1)], 2, dir.path(), RngSeed(0)),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            assemble_group(&groups[0], &[random_cloud(100, 1)], &[], 2, dir.path(), RngSeed(0)),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            DatasetManifest::load(dir.path().join("nope.json")),
            Err(Error::MissingPrerequisite(_))
        ));
    }
}
