//! Triangle-mesh construction for the parametric track.
//!
//! Components are open surface shells: faces a scan could never see (tie
//! and rail undersides) are omitted, which also keeps every sampled point's
//! nearest surface unambiguous where components rest on each other.

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::synth::TrackSpec;

/// Labeled triangle mesh for one track component.
#[derive(Debug, Clone, PartialEq)]
pub struct ComponentMesh {
    pub vertices: Vec<Vector3<f64>>,
    pub triangles: Vec<[u32; 3]>,
    /// Class index in the railroad schema (0 rail, 1 crosstie, 2 other).
    pub label: u8,
}

impl ComponentMesh {
    pub fn validate(&self) -> Result<()> {
        let n = self.vertices.len() as u32;
        for (i, t) in self.triangles.iter().enumerate() {
            if t.iter().any(|&v| v >= n) {
                return Err(Error::InvalidMesh(format!(
                    "triangle {i} references vertex out of range (have {n})"
                )));
            }
        }
        Ok(())
    }

    pub fn triangle_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangles[t];
        let (a, b, c) = (
            self.vertices[a as usize],
            self.vertices[b as usize],
            self.vertices[c as usize],
        );
        0.5 * (b - a).cross(&(c - a)).norm()
    }

    /// Total surface area.
    pub fn area(&self) -> f64 {
        (0..self.triangles.len()).map(|t| self.triangle_area(t)).sum()
    }
}

/// Builder accumulating quads into a single component mesh.
struct MeshBuilder {
    vertices: Vec<Vector3<f64>>,
    triangles: Vec<[u32; 3]>,
}

impl MeshBuilder {
    fn new() -> Self {
        MeshBuilder {
            vertices: Vec::new(),
            triangles: Vec::new(),
        }
    }

    fn quad(&mut self, a: Vector3<f64>, b: Vector3<f64>, c: Vector3<f64>, d: Vector3<f64>) {
        let base = self.vertices.len() as u32;
        self.vertices.extend_from_slice(&[a, b, c, d]);
        self.triangles.push([base, base + 1, base + 2]);
        self.triangles.push([base, base + 2, base + 3]);
    }

    fn finish(self, label: u8) -> ComponentMesh {
        ComponentMesh {
            vertices: self.vertices,
            triangles: self.triangles,
            label,
        }
    }
}

/// Proportions of the simplified I-profile: base and head slab heights as
/// fractions of the rail height, web taking the remainder.
const BASE_HEIGHT_FRAC: f64 = 0.18;
const HEAD_HEIGHT_FRAC: f64 = 0.25;

/// The 12-vertex rail cross-section outline in local (x, y), y from the rail
/// base upward, counterclockwise starting at the bottom-left corner. Built
/// from three stacked rectangles (base, web, head).
fn rail_profile(spec: &TrackSpec) -> Vec<(f64, f64)> {
    let h = spec.rail_height_m;
    let (a, b, t) = (
        spec.rail_head_width_m,
        spec.rail_base_width_m,
        spec.rail_web_width_m,
    );
    let bh = BASE_HEIGHT_FRAC * h;
    let hh = HEAD_HEIGHT_FRAC * h;
    let y_web = bh;
    let y_head = h - hh;
    vec![
        (-b / 2.0, 0.0),
        (b / 2.0, 0.0),
        (b / 2.0, y_web),
        (t / 2.0, y_web),
        (t / 2.0, y_head),
        (a / 2.0, y_head),
        (a / 2.0, h),
        (-a / 2.0, h),
        (-a / 2.0, y_head),
        (-t / 2.0, y_head),
        (-t / 2.0, y_web),
        (-b / 2.0, y_web),
    ]
}

/// Extrude the rail profile along z over the full track length. The bottom
/// edge is not extruded (the underside rests on the ties); both ends are
/// capped with the three profile rectangles.
fn build_rail(spec: &TrackSpec, center_x: f64) -> ComponentMesh {
    let profile = rail_profile(spec);
    let y0 = spec.tie_height_m;
    let len = spec.length_m;
    let lift = |&(px, py): &(f64, f64), z: f64| Vector3::new(center_x + px, y0 + py, z);

    let mut mb = MeshBuilder::new();
    let n = profile.len();
    for i in 0..n {
        if i == 0 {
            continue; // skip the bottom edge p0 -> p1
        }
        let j = (i + 1) % n;
        mb.quad(
            lift(&profile[i], 0.0),
            lift(&profile[j], 0.0),
            lift(&profile[j], len),
            lift(&profile[i], len),
        );
    }

    // End caps: base, web, and head rectangles at z = 0 and z = len.
    let h = spec.rail_height_m;
    let bh = BASE_HEIGHT_FRAC * h;
    let hh = HEAD_HEIGHT_FRAC * h;
    let rects = [
        (spec.rail_base_width_m, 0.0, bh),
        (spec.rail_web_width_m, bh, h - hh),
        (spec.rail_head_width_m, h - hh, h),
    ];
    for z in [0.0, len] {
        for &(width, y_lo, y_hi) in &rects {
            mb.quad(
                Vector3::new(center_x - width / 2.0, y0 + y_lo, z),
                Vector3::new(center_x + width / 2.0, y0 + y_lo, z),
                Vector3::new(center_x + width / 2.0, y0 + y_hi, z),
                Vector3::new(center_x - width / 2.0, y0 + y_hi, z),
            );
        }
    }
    mb.finish(0)
}

/// Crosstie box shell: top and four sides, no underside.
fn build_tie(spec: &TrackSpec, center_z: f64) -> ComponentMesh {
    let hx = spec.tie_length_m / 2.0;
    let hz = spec.tie_width_m / 2.0;
    let h = spec.tie_height_m;
    let (z0, z1) = (center_z - hz, center_z + hz);
    let mut mb = MeshBuilder::new();
    let v = |x: f64, y: f64, z: f64| Vector3::new(x, y, z);
    // Top.
    mb.quad(v(-hx, h, z0), v(hx, h, z0), v(hx, h, z1), v(-hx, h, z1));
    // Long faces (normal +-z).
    mb.quad(v(-hx, 0.0, z0), v(hx, 0.0, z0), v(hx, h, z0), v(-hx, h, z0));
    mb.quad(v(-hx, 0.0, z1), v(hx, 0.0, z1), v(hx, h, z1), v(-hx, h, z1));
    // End faces (normal +-x).
    mb.quad(v(-hx, 0.0, z0), v(-hx, 0.0, z1), v(-hx, h, z1), v(-hx, h, z0));
    mb.quad(v(hx, 0.0, z0), v(hx, 0.0, z1), v(hx, h, z1), v(hx, h, z0));
    mb.finish(1)
}

fn build_ballast(spec: &TrackSpec) -> ComponentMesh {
    let hx = spec.tie_length_m / 2.0 + spec.ballast_margin_m;
    let (z0, z1) = (-spec.ballast_margin_m, spec.length_m + spec.ballast_margin_m);
    let mut mb = MeshBuilder::new();
    mb.quad(
        Vector3::new(-hx, 0.0, z0),
        Vector3::new(hx, 0.0, z0),
        Vector3::new(hx, 0.0, z1),
        Vector3::new(-hx, 0.0, z1),
    );
    mb.finish(2)
}

/// Build the labeled component meshes for a track: two rails, the row of
/// crossties, and (iff `ballast_flag`) one ground plane, in that order.
///
/// Rail inner head faces sit at x = ±gauge/2; tie i is centered at
/// z = tie_spacing · (i + 1/2).
pub fn build_track_mesh(spec: &TrackSpec) -> Result<Vec<ComponentMesh>> {
    spec.validate()?;
    let rail_center = (spec.gauge_m + spec.rail_head_width_m) / 2.0;
    let mut meshes = vec![build_rail(spec, -rail_center), build_rail(spec, rail_center)];
    for i in 0..spec.num_ties() {
        let center_z = spec.tie_spacing_m * (i as f64 + 0.5);
        meshes.push(build_tie(spec, center_z));
    }
    if spec.ballast_flag {
        meshes.push(build_ballast(spec));
    }
    for m in &meshes {
        m.validate()?;
    }
    Ok(meshes)
}

/// Analytic surface areas for the default component shells, used to check
/// sampled class proportions against the geometry.
pub fn analytic_areas(spec: &TrackSpec) -> (f64, f64, f64) {
    let h = spec.rail_height_m;
    let (a, b, t) = (
        spec.rail_head_width_m,
        spec.rail_base_width_m,
        spec.rail_web_width_m,
    );
    let perimeter = 2.0 * h + 2.0 * a + 2.0 * b - 2.0 * t;
    let cap = a * (HEAD_HEIGHT_FRAC * h) + t * (h - (BASE_HEIGHT_FRAC + HEAD_HEIGHT_FRAC) * h)
        + b * (BASE_HEIGHT_FRAC * h);
    let rail = 2.0 * ((perimeter - b) * spec.length_m + 2.0 * cap);

    let (tl, tw, th) = (spec.tie_length_m, spec.tie_width_m, spec.tie_height_m);
    let tie_one = tl * tw + 2.0 * tl * th + 2.0 * tw * th;
    let ties = spec.num_ties() as f64 * tie_one;

    let ballast = if spec.ballast_flag {
        (spec.tie_length_m + 2.0 * spec.ballast_margin_m)
            * (spec.length_m + 2.0 * spec.ballast_margin_m)
    } else {
        0.0
    };
    (rail, ties, ballast)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn component_inventory_matches_spec() {
        let mut spec = TrackSpec::wood_tie();
        spec.length_m = 10.0;
        spec.tie_spacing_m = 0.5;
        spec.ballast_flag = true;
        let meshes = build_track_mesh(&spec).unwrap();
        assert_eq!(meshes.len(), 2 + 20 + 1);
        assert_eq!(meshes.iter().filter(|m| m.label == 0).count(), 2);
        assert_eq!(meshes.iter().filter(|m| m.label == 1).count(), 20);
        assert_eq!(meshes.iter().filter(|m| m.label == 2).count(), 1);
    }

    #[test]
    fn short_track_without_ballast_has_no_ties() {
        let mut spec = TrackSpec::wood_tie();
        spec.length_m = 0.4; // shorter than tie spacing
        spec.ballast_flag = false;
        let meshes = build_track_mesh(&spec).unwrap();
        assert_eq!(meshes.len(), 2);
        assert!(meshes.iter().all(|m| m.label == 0));
    }

    #[test]
    fn gauge_read_back_from_rail_vertices() {
        let spec = TrackSpec::wood_tie();
        let meshes = build_track_mesh(&spec).unwrap();
        let head_floor = spec.tie_height_m + spec.rail_height_m * (1.0 - HEAD_HEIGHT_FRAC);
        // Inner head face: of the left rail the max x over head-height
        // vertices, of the right rail the min.
        let head_xs = |m: &ComponentMesh| -> Vec<f64> {
            m.vertices
                .iter()
                .filter(|v| v.y >= head_floor - 1e-12)
                .map(|v| v.x)
                .collect()
        };
        let left = head_xs(&meshes[0]);
        let right = head_xs(&meshes[1]);
        let inner_left = left.iter().cloned().fold(f64::MIN, f64::max);
        let inner_right = right.iter().cloned().fold(f64::MAX, f64::min);
        assert!(
            (inner_right - inner_left - spec.gauge_m).abs() < 1e-9,
            "gauge read back {}",
            inner_right - inner_left
        );
    }

    #[test]
    fn tie_centers_equally_spaced() {
        let spec = TrackSpec::wood_tie();
        let meshes = build_track_mesh(&spec).unwrap();
        let centers: Vec<f64> = meshes
            .iter()
            .filter(|m| m.label == 1)
            .map(|m| {
                let (lo, hi) = m
                    .vertices
                    .iter()
                    .fold((f64::MAX, f64::MIN), |(lo, hi), v| (lo.min(v.z), hi.max(v.z)));
                0.5 * (lo + hi)
            })
            .collect();
        for (i, pair) in centers.windows(2).enumerate() {
            assert!(
                (pair[1] - pair[0] - spec.tie_spacing_m).abs() < 1e-9,
                "gap {i}"
            );
        }
        assert!((centers[0] - 0.5 * spec.tie_spacing_m).abs() < 1e-9);
    }

    #[test]
    fn rails_run_full_length() {
        let spec = TrackSpec::wood_tie();
        let meshes = build_track_mesh(&spec).unwrap();
        for rail in &meshes[..2] {
            let (lo, hi) = rail
                .vertices
                .iter()
                .fold((f64::MAX, f64::MIN), |(lo, hi), v| (lo.min(v.z), hi.max(v.z)));
            assert_eq!(lo, 0.0);
            assert_eq!(hi, spec.length_m);
        }
    }

    #[test]
    fn mesh_area_matches_analytic() {
        let spec = TrackSpec::wood_tie();
        let meshes = build_track_mesh(&spec).unwrap();
        let (rail_a, tie_a, ballast_a) = analytic_areas(&spec);
        let sum = |label: u8| -> f64 {
            meshes.iter().filter(|m| m.label == label).map(|m| m.area()).sum()
        };
        assert!((sum(0) - rail_a).abs() < 1e-9, "rail {} vs {}", sum(0), rail_a);
        assert!((sum(1) - tie_a).abs() < 1e-9);
        assert!((sum(2) - ballast_a).abs() < 1e-9);
    }

    #[test]
    fn invalid_spec_is_rejected() {
        let mut spec = TrackSpec::wood_tie();
        spec.rail_height_m = -1.0;
        assert!(matches!(
            build_track_mesh(&spec),
            Err(Error::InvalidTrackSpec(_))
        ));
    }
}
