//! Dataset preparation: density levels, patch extraction, rotation
//! augmentation, and the eight experimental group configurations.

mod manifest;

pub use manifest::{assemble_group, DatasetManifest, PatchRecord};

use serde::{Deserialize, Serialize};

use crate::cloud::{rotate, PointCloud, Rotation};
use crate::error::{Error, Result};
use crate::rng::{self, RngSeed};

/// Full-scale patch sizes for the two density levels. A desk-scale factor
/// rescales both while preserving their 10:1 ratio.
const MILLION_PATCH: usize = 372_680;
const MILLION_RANGE: (usize, usize) = (2_000_000, 5_000_000);
const HUNDRED_THOUSAND_RANGE: (usize, usize) = (200_000, 500_000);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LevelName {
    MillionLevel,
    HundredThousandLevel,
}

impl LevelName {
    /// The Table-style label used in manifests and CSV reports.
    pub fn as_str(self) -> &'static str {
        match self {
            LevelName::MillionLevel => "million-level",
            LevelName::HundredThousandLevel => "hundred-thousand-level",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "million-level" => Ok(LevelName::MillionLevel),
            "hundred-thousand-level" => Ok(LevelName::HundredThousandLevel),
            other => Err(Error::Manifest(format!("unknown level name {other:?}"))),
        }
    }
}

/// A subsampling target: permitted per-cloud point range plus the training
/// patch size for that scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DensityLevel {
    pub name: LevelName,
    /// Inclusive [lo, hi] per-cloud point counts.
    pub point_range: (usize, usize),
    pub patch_size: usize,
}

impl DensityLevel {
    /// Million-level at desk-scale factor `scale` in (0, 1]; `scale = 1`
    /// gives the full-size 372,680-point patches.
    pub fn million(scale: f64) -> Result<DensityLevel> {
        let patch = scaled_patch_sizes(scale)?.0;
        Ok(DensityLevel {
            name: LevelName::MillionLevel,
            point_range: scale_range(MILLION_RANGE, scale),
            patch_size: patch,
        })
    }

    /// Hundred-thousand-level at desk-scale factor `scale`; the patch size
    /// is exactly one tenth of the million-level patch (integer division),
    /// so the 10:1 ratio survives any scale.
    pub fn hundred_thousand(scale: f64) -> Result<DensityLevel> {
        let patch = scaled_patch_sizes(scale)?.1;
        Ok(DensityLevel {
            name: LevelName::HundredThousandLevel,
            point_range: scale_range(HUNDRED_THOUSAND_RANGE, scale),
            patch_size: patch,
        })
    }

    pub fn for_name(name: LevelName, scale: f64) -> Result<DensityLevel> {
        match name {
            LevelName::MillionLevel => DensityLevel::million(scale),
            LevelName::HundredThousandLevel => DensityLevel::hundred_thousand(scale),
        }
    }
}

/// Patch sizes `(million, hundred_thousand)` for a desk-scale factor:
/// `ceil(372680 · scale)` and a tenth of that. At `scale = 1` this yields
/// the full sizes (372,680 / 37,268); at the default 1/91 it yields
/// (4,096 / 409).
pub fn scaled_patch_sizes(scale: f64) -> Result<(usize, usize)> {
    if !(scale > 0.0 && scale <= 1.0) {
        return Err(Error::Config(format!(
            "desk-scale factor must be in (0, 1], got {scale}"
        )));
    }
    let million = (MILLION_PATCH as f64 * scale).ceil() as usize;
    let hundred = (million / 10).max(1);
    Ok((million.max(1), hundred))
}

fn scale_range((lo, hi): (usize, usize), scale: f64) -> (usize, usize) {
    (
        ((lo as f64 * scale).round() as usize).max(1),
        ((hi as f64 * scale).round() as usize).max(1),
    )
}

/// How patches are oriented before training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RotationStrategy {
    /// Each patch gets an independent uniform random rotation.
    RandomRotation,
    /// Patches stay in the canonical track frame (identity).
    DirectionAligned,
}

impl RotationStrategy {
    pub fn as_str(self) -> &'static str {
        match self {
            RotationStrategy::RandomRotation => "random",
            RotationStrategy::DirectionAligned => "aligned",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(RotationStrategy::RandomRotation),
            "aligned" => Ok(RotationStrategy::DirectionAligned),
            other => Err(Error::Manifest(format!("unknown rotation strategy {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum GroupId {
    G1,
    G2,
    G3,
    G4,
    G5,
    G6,
    G7,
    G8,
}

impl GroupId {
    pub const ALL: [GroupId; 8] = [
        GroupId::G1,
        GroupId::G2,
        GroupId::G3,
        GroupId::G4,
        GroupId::G5,
        GroupId::G6,
        GroupId::G7,
        GroupId::G8,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            GroupId::G1 => "G1",
            GroupId::G2 => "G2",
            GroupId::G3 => "G3",
            GroupId::G4 => "G4",
            GroupId::G5 => "G5",
            GroupId::G6 => "G6",
            GroupId::G7 => "G7",
            GroupId::G8 => "G8",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        GroupId::ALL
            .iter()
            .copied()
            .find(|g| g.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown group id {s:?} (expected G1..G8)")))
    }
}

impl std::fmt::Display for GroupId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One experimental training configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupConfig {
    pub id: GroupId,
    pub level: DensityLevel,
    pub rotation: RotationStrategy,
    pub bim_included: bool,
}

/// The eight canonical group configurations at the given desk-scale factor:
/// G1..G4 million-level, G5..G8 hundred-thousand-level, alternating
/// random/aligned rotation and with/without synthetic model data.
pub fn make_group_configs(scale: f64) -> Result<Vec<GroupConfig>> {
    let million = DensityLevel::million(scale)?;
    let hundred = DensityLevel::hundred_thousand(scale)?;
    use GroupId::*;
    use RotationStrategy::*;
    let rows = [
        (G1, million, RandomRotation, true),
        (G2, million, RandomRotation, false),
        (G3, million, DirectionAligned, true),
        (G4, million, DirectionAligned, false),
        (G5, hundred, RandomRotation, true),
        (G6, hundred, RandomRotation, false),
        (G7, hundred, DirectionAligned, true),
        (G8, hundred, DirectionAligned, false),
    ];
    Ok(rows
        .into_iter()
        .map(|(id, level, rotation, bim_included)| GroupConfig {
            id,
            level,
            rotation,
            bim_included,
        })
        .collect())
}

/// Bring a cloud into the level's point range: clouds above `hi` are
/// uniformly subsampled to `hi`, clouds already inside the range pass
/// through unchanged, clouds below `lo` are rejected.
pub fn subsample_to_level(
    cloud: &PointCloud,
    level: &DensityLevel,
    seed: RngSeed,
) -> Result<PointCloud> {
    let (lo, hi) = level.point_range;
    let n = cloud.len();
    if n < lo {
        return Err(Error::BelowDensityLevel { n, lo });
    }
    if n > hi {
        crate::cloud::random_subsample(cloud, hi, seed)
    } else {
        Ok(cloud.clone())
    }
}

/// Extract `num_patches` spatially coherent patches of exactly `patch_size`
/// points each: a seed point is drawn uniformly and its `patch_size`
/// nearest neighbors (ties broken by index) form the patch, ordered by
/// ascending original index. Undersized clouds are padded by re-drawing
/// points with replacement after including every point once.
pub fn extract_patches(
    cloud: &PointCloud,
    patch_size: usize,
    num_patches: usize,
    seed: RngSeed,
) -> Result<Vec<PointCloud>> {
    let n = cloud.len();
    if n == 0 {
        return Err(Error::EmptyCloud);
    }
    if patch_size == 0 {
        return Err(Error::Config("patch_size must be at least 1".into()));
    }
    let mut rng = seed.rng();
    let mut patches = Vec::with_capacity(num_patches);
    for _ in 0..num_patches {
        let seed_idx = rng::uniform_usize(&mut rng, n);
        if n >= patch_size {
            patches.push(cloud.select(&knn_of(cloud, seed_idx, patch_size)));
        } else {
            let mut indices: Vec<usize> = (0..n).collect();
            for _ in n..patch_size {
                indices.push(rng::uniform_usize(&mut rng, n));
            }
            patches.push(cloud.select(&indices));
        }
    }
    Ok(patches)
}

/// Indices of the `k` nearest neighbors of point `center` (inclusive),
/// ties broken by lower index, returned in ascending index order.
fn knn_of(cloud: &PointCloud, center: usize, k: usize) -> Vec<usize> {
    let positions = cloud.positions();
    let c = positions[center];
    let mut by_dist: Vec<(f64, usize)> = positions
        .iter()
        .enumerate()
        .map(|(i, p)| ((p - c).norm_squared(), i))
        .collect();
    by_dist
        .select_nth_unstable_by(k - 1, |a, b| a.partial_cmp(b).expect("finite distances"));
    let mut chosen: Vec<usize> = by_dist[..k].iter().map(|&(_, i)| i).collect();
    chosen.sort_unstable();
    chosen
}

/// A patch together with the rotation that produced it (None for identity).
#[derive(Debug, Clone)]
pub struct AugmentedPatch {
    pub cloud: PointCloud,
    pub rotation: Option<Rotation>,
}

/// Apply the rotation strategy: `RandomRotation` rotates each patch by an
/// independent random rotation (recorded for the manifest),
/// `DirectionAligned` passes patches through untouched.
pub fn augment(
    patches: &[PointCloud],
    strategy: RotationStrategy,
    seed: RngSeed,
) -> Result<Vec<AugmentedPatch>> {
    match strategy {
        RotationStrategy::DirectionAligned => Ok(patches
            .iter()
            .map(|p| AugmentedPatch {
                cloud: p.clone(),
                rotation: None,
            })
            .collect()),
        RotationStrategy::RandomRotation => {
            let mut rng = seed.rng();
            patches
                .iter()
                .map(|p| {
                    let r = Rotation::random(&mut rng);
                    Ok(AugmentedPatch {
                        cloud: rotate(p, &r)?,
                        rotation: Some(r),
                    })
                })
                .collect()
        }
    }
}
