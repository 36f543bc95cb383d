//! Parametric railroad geometry and synthetic cloud generation.
//!
//! The track model is a stand-in for an authored infrastructure model: two
//! extruded rails, a row of crosstie boxes, and an optional ballast plane,
//! each carrying its class label so sampled clouds are labeled by
//! construction. [`generate_pseudo_real`] adds a photogrammetric-style
//! noise model (jitter, dropout, clutter) on top of the clean geometry.
//!
//! Axis convention: the track runs along +z (the longitudinal direction),
//! +y is up, +x is lateral. The ballast plane lies at y = 0.

mod mesh;
mod sample;

pub use mesh::{analytic_areas, build_track_mesh, ComponentMesh};
pub use sample::{batch_generate, generate_clean, generate_pseudo_real, sample_surface};

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Parametric track geometry (dimensions in meters).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackSpec {
    pub length_m: f64,
    /// Horizontal separation of the two rails' inner head faces.
    pub gauge_m: f64,
    pub rail_height_m: f64,
    pub rail_head_width_m: f64,
    pub rail_base_width_m: f64,
    pub rail_web_width_m: f64,
    pub tie_length_m: f64,
    pub tie_width_m: f64,
    pub tie_height_m: f64,
    /// Center-to-center crosstie spacing.
    pub tie_spacing_m: f64,
    pub ballast_flag: bool,
    /// Ballast plane overhang beyond the tie ends and track ends.
    pub ballast_margin_m: f64,
}

impl Default for TrackSpec {
    fn default() -> Self {
        TrackSpec::wood_tie()
    }
}

impl TrackSpec {
    /// Standard-gauge track with wood-tie dimensions.
    pub fn wood_tie() -> Self {
        TrackSpec {
            length_m: 10.0,
            gauge_m: 1.435,
            rail_height_m: 0.17,
            rail_head_width_m: 0.07,
            rail_base_width_m: 0.15,
            rail_web_width_m: 0.02,
            tie_length_m: 2.6,
            tie_width_m: 0.23,
            tie_height_m: 0.18,
            tie_spacing_m: 0.5,
            ballast_flag: true,
            ballast_margin_m: 0.5,
        }
    }

    /// Concrete-tie preset: wider, taller ties at larger spacing; rails and
    /// gauge identical to the wood preset.
    pub fn concrete_tie() -> Self {
        TrackSpec {
            tie_length_m: 2.5,
            tie_width_m: 0.28,
            tie_height_m: 0.23,
            tie_spacing_m: 0.6,
            ..TrackSpec::wood_tie()
        }
    }

    /// Check every geometric invariant; the message names the violated one.
    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("length_m", self.length_m),
            ("gauge_m", self.gauge_m),
            ("rail_height_m", self.rail_height_m),
            ("rail_head_width_m", self.rail_head_width_m),
            ("rail_base_width_m", self.rail_base_width_m),
            ("rail_web_width_m", self.rail_web_width_m),
            ("tie_length_m", self.tie_length_m),
            ("tie_width_m", self.tie_width_m),
            ("tie_height_m", self.tie_height_m),
            ("tie_spacing_m", self.tie_spacing_m),
            ("ballast_margin_m", self.ballast_margin_m),
        ];
        for (name, value) in dims {
            if !(value > 0.0) || !value.is_finite() {
                return Err(Error::InvalidTrackSpec(format!(
                    "{name} must be positive, got {value}"
                )));
            }
        }
        if self.gauge_m <= self.rail_head_width_m {
            return Err(Error::InvalidTrackSpec(format!(
                "gauge_m ({}) must exceed rail_head_width_m ({})",
                self.gauge_m, self.rail_head_width_m
            )));
        }
        if self.tie_length_m <= self.gauge_m + 2.0 * self.rail_base_width_m {
            return Err(Error::InvalidTrackSpec(format!(
                "tie_length_m ({}) must exceed gauge_m + 2*rail_base_width_m ({})",
                self.tie_length_m,
                self.gauge_m + 2.0 * self.rail_base_width_m
            )));
        }
        if self.tie_spacing_m <= self.tie_width_m {
            return Err(Error::InvalidTrackSpec(format!(
                "tie_spacing_m ({}) must exceed tie_width_m ({})",
                self.tie_spacing_m, self.tie_width_m
            )));
        }
        Ok(())
    }

    /// Number of crossties that fit along the track.
    pub fn num_ties(&self) -> usize {
        // Small epsilon so exact multiples are not lost to rounding.
        (self.length_m / self.tie_spacing_m + 1e-9).floor() as usize
    }

    /// Copy with tie dimensions and spacing independently perturbed by
    /// uniform factors in `1 ± jitter_pct`; rails and gauge stay fixed.
    pub fn perturb_ties(
        &self,
        jitter_pct: f64,
        rng: &mut rand_chacha::ChaCha8Rng,
    ) -> TrackSpec {
        let mut factor = || 1.0 + rng::uniform_f64(rng, -jitter_pct, jitter_pct);
        TrackSpec {
            tie_length_m: self.tie_length_m * factor(),
            tie_width_m: self.tie_width_m * factor(),
            tie_height_m: self.tie_height_m * factor(),
            tie_spacing_m: self.tie_spacing_m * factor(),
            ..self.clone()
        }
    }
}

/// Surrogate for photogrammetric reconstruction artifacts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseSpec {
    /// Per-axis Gaussian positional jitter (meters).
    pub gaussian_sigma_m: f64,
    /// Fraction of surface points removed, in `[0, 1)`.
    pub dropout_rate: f64,
    /// Extra points labeled "other", as a fraction of the clean count, in `[0, 1]`.
    pub clutter_rate: f64,
    /// Vertical band above the ballast plane where clutter is scattered.
    pub clutter_band_m: f64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        NoiseSpec {
            gaussian_sigma_m: 0.005,
            dropout_rate: 0.10,
            clutter_rate: 0.05,
            clutter_band_m: 0.5,
        }
    }
}

impl NoiseSpec {
    /// The identity noise model: pseudo-real output equals the clean cloud.
    pub fn none() -> Self {
        NoiseSpec {
            gaussian_sigma_m: 0.0,
            dropout_rate: 0.0,
            clutter_rate: 0.0,
            clutter_band_m: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gaussian_sigma_m >= 0.0) || !self.gaussian_sigma_m.is_finite() {
            return Err(Error::InvalidNoiseSpec(format!(
                "gaussian_sigma_m must be >= 0, got {}",
                self.gaussian_sigma_m
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::InvalidNoiseSpec(format!(
                "dropout_rate must be in [0, 1), got {}",
                self.dropout_rate
            )));
        }
        if !(0.0..=1.0).contains(&self.clutter_rate) {
            return Err(Error::InvalidNoiseSpec(format!(
                "clutter_rate must be in [0, 1], got {}",
                self.clutter_rate
            )));
        }
        if !(self.clutter_band_m >= 0.0) || !self.clutter_band_m.is_finite() {
            return Err(Error::InvalidNoiseSpec(format!(
                "clutter_band_m must be >= 0, got {}",
                self.clutter_band_m
            )));
        }
        Ok(())
    }
}

/// On-disk form of a scene description: a `[track]` section and a `[noise]`
/// section, both optional, with per-field defaults.
#[derive(Debug, Default, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct SceneFile {
    track: Option<TrackSpec>,
    noise: Option<NoiseSpec>,
}

/// Parse a scene config file (TOML key-value sections `[track]`, `[noise]`).
/// Missing sections or keys fall back to defaults; the parsed specs are
/// validated before being returned.
pub fn load_scene_config(path: impl AsRef<Path>) -> Result<(TrackSpec, NoiseSpec)> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_scene_config(&text)
}

pub fn parse_scene_config(text: &str) -> Result<(TrackSpec, NoiseSpec)> {
    let file: SceneFile =
        toml::from_str(text).map_err(|e| Error::Config(format!("scene config: {e}")))?;
    let track = file.track.unwrap_or_default();
    let noise = file.noise.unwrap_or_default();
    track.validate()?;
    noise.validate()?;
    Ok((track, noise))
}

/// Write a scene config file in the same format `load_scene_config` reads.
pub fn save_scene_config(
    track: &TrackSpec,
    noise: &NoiseSpec,
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    let file = SceneFile {
        track: Some(track.clone()),
        noise: Some(*noise),
    };
    let text = toml::to_string_pretty(&file)
        .map_err(|e| Error::Config(format!("scene serialize: {e}")))?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Stream tags for noise stages, far above any mesh index so sub-seeds never
/// collide with the per-mesh sampling streams.
pub(crate) const STREAM_JITTER: u64 = u64::MAX;
pub(crate) const STREAM_DROPOUT: u64 = u64::MAX - 1;
pub(crate) const STREAM_CLUTTER: u64 = u64::MAX - 2;
