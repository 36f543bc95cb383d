//! Labeled point clouds: the universal currency of the pipeline.
//!
//! A [`PointCloud`] is an immutable set of 3D positions (meters, `f64`) with
//! one class label per point and the [`LabelSchema`] the labels refer to.
//! All operations are pure: inputs are never mutated, so values can be
//! shared freely across threads.

mod ply;

pub use ply::{load_ply, save_ply};

use nalgebra::{Matrix3, Unit, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, RngSeed};

/// Ordered class names. Labels everywhere in the crate are indices into this.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSchema {
    class_names: Vec<String>,
}

impl LabelSchema {
    /// Build a schema from ordered class names. Requires at least two
    /// distinct names and at most 256 (labels are stored as bytes).
    pub fn new(class_names: Vec<String>) -> Result<Self> {
        if class_names.len() < 2 {
            return Err(Error::InvalidSchema(format!(
                "need at least 2 classes, got {}",
                class_names.len()
            )));
        }
        if class_names.len() > 256 {
            return Err(Error::InvalidSchema(format!(
                "at most 256 classes supported, got {}",
                class_names.len()
            )));
        }
        for (i, name) in class_names.iter().enumerate() {
            if class_names[..i].contains(name) {
                return Err(Error::InvalidSchema(format!("duplicate class name {name:?}")));
            }
        }
        Ok(LabelSchema { class_names })
    }

    /// The default railroad schema: rail, crosstie, other.
    pub fn railroad() -> Self {
        LabelSchema::new(vec!["rail".into(), "crosstie".into(), "other".into()])
            .expect("static schema is valid")
    }

    /// Number of classes `C`.
    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn name(&self, label: u8) -> &str {
        &self.class_names[label as usize]
    }

    pub fn index_of(&self, name: &str) -> Option<u8> {
        self.class_names.iter().position(|n| n == name).map(|i| i as u8)
    }
}

impl Default for LabelSchema {
    fn default() -> Self {
        LabelSchema::railroad()
    }
}

/// Axis-angle rigid rotation. The axis must be unit length.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rotation {
    pub axis: Vector3<f64>,
    pub angle: f64,
}

impl Rotation {
    pub fn new(axis: Vector3<f64>, angle: f64) -> Result<Self> {
        let norm = axis.norm();
        if (norm - 1.0).abs() > 1e-12 {
            return Err(Error::NonUnitAxis { norm });
        }
        Ok(Rotation { axis, angle })
    }

    pub fn identity() -> Self {
        Rotation {
            axis: Vector3::z(),
            angle: 0.0,
        }
    }

    /// The proper orthonormal 3x3 matrix of this rotation (Rodrigues form).
    pub fn matrix(&self) -> Matrix3<f64> {
        *nalgebra::Rotation3::from_axis_angle(&Unit::new_unchecked(self.axis), self.angle)
            .matrix()
    }

    pub fn inverse(&self) -> Rotation {
        Rotation {
            axis: self.axis,
            angle: -self.angle,
        }
    }

    /// Uniformly random rotation: axis uniform on the sphere (normalized
    /// Gaussian triple), angle uniform in `[0, 2π)`.
    pub fn random(rng: &mut rand_chacha::ChaCha8Rng) -> Rotation {
        let axis = loop {
            let v = Vector3::new(rng::gaussian(rng), rng::gaussian(rng), rng::gaussian(rng));
            let n = v.norm();
            if n > 1e-9 {
                break v / n;
            }
        };
        // Renormalize so the unit invariant holds to 1e-12 exactly.
        let axis = axis / axis.norm();
        let angle = rng::uniform_f64(rng, 0.0, std::f64::consts::TAU);
        Rotation { axis, angle }
    }
}

/// An immutable labeled point cloud.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    positions: Vec<Vector3<f64>>,
    labels: Vec<u8>,
    schema: LabelSchema,
}

impl PointCloud {
    /// Validating constructor: positions and labels must have equal length,
    /// every label must be `< C` and every coordinate finite.
    pub fn new(
        positions: Vec<Vector3<f64>>,
        labels: Vec<u8>,
        schema: LabelSchema,
    ) -> Result<Self> {
        if positions.len() != labels.len() {
            return Err(Error::LengthMismatch {
                what: "positions vs labels",
                left: positions.len(),
                right: labels.len(),
            });
        }
        let c = schema.num_classes();
        for (i, p) in positions.iter().enumerate() {
            if !(p.x.is_finite() && p.y.is_finite() && p.z.is_finite()) {
                return Err(Error::NonFiniteCoordinate { index: i });
            }
        }
        if let Some(&bad) = labels.iter().find(|&&l| (l as usize) >= c) {
            return Err(Error::LabelOutOfRange {
                value: bad as u32,
                num_classes: c,
            });
        }
        Ok(PointCloud {
            positions,
            labels,
            schema,
        })
    }

    pub fn empty(schema: LabelSchema) -> Self {
        PointCloud {
            positions: Vec::new(),
            labels: Vec::new(),
            schema,
        }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn positions(&self) -> &[Vector3<f64>] {
        &self.positions
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn schema(&self) -> &LabelSchema {
        &self.schema
    }

    /// Number of points carrying class `label`.
    pub fn class_count(&self, label: u8) -> usize {
        self.labels.iter().filter(|&&l| l == label).count()
    }

    /// New cloud containing the given point indices, in order.
    pub fn select(&self, indices: &[usize]) -> PointCloud {
        PointCloud {
            positions: indices.iter().map(|&i| self.positions[i]).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            schema: self.schema.clone(),
        }
    }
}

/// Rotate every position by `r`; labels and ordering are unchanged.
pub fn rotate(cloud: &PointCloud, r: &Rotation) -> Result<PointCloud> {
    let norm = r.axis.norm();
    if (norm - 1.0).abs() > 1e-12 {
        return Err(Error::NonUnitAxis { norm });
    }
    let m = r.matrix();
    Ok(PointCloud {
        positions: cloud.positions.iter().map(|p| m * p).collect(),
        labels: cloud.labels.clone(),
        schema: cloud.schema.clone(),
    })
}

/// Uniform subsample without replacement to exactly `target_n` points.
///
/// Selection is a partial Fisher-Yates over the index range; the surviving
/// indices are emitted in ascending original order, so the result is a
/// deterministic function of `(cloud, target_n, seed)`.
pub fn random_subsample(cloud: &PointCloud, target_n: usize, seed: RngSeed) -> Result<PointCloud> {
    let n = cloud.len();
    if target_n > n {
        return Err(Error::SubsampleTooLarge {
            target: target_n,
            available: n,
        });
    }
    let mut rng = seed.rng();
    let mut indices: Vec<usize> = (0..n).collect();
    for i in 0..target_n {
        let j = i + rng::uniform_usize(&mut rng, n - i);
        indices.swap(i, j);
    }
    let mut chosen = indices[..target_n].to_vec();
    chosen.sort_unstable();
    Ok(cloud.select(&chosen))
}

/// Componentwise min/max of all positions. Errors on an empty cloud.
pub fn bounding_box(cloud: &PointCloud) -> Result<(Vector3<f64>, Vector3<f64>)> {
    bounding_box_of(cloud.positions())
}

pub(crate) fn bounding_box_of(positions: &[Vector3<f64>]) -> Result<(Vector3<f64>, Vector3<f64>)> {
    let first = positions.first().ok_or(Error::EmptyCloud)?;
    let mut lo = *first;
    let mut hi = *first;
    for p in &positions[1..] {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    Ok((lo, hi))
}
