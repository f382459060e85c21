use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::Vec3;
use crate::error::{Error, Result};
use crate::image::GrayImage;

/// Frames are square, `IMAGE_SIZE` pixels on a side.
pub const IMAGE_SIZE: usize = 128;
/// Field of view covered by the frame, both in depth and laterally.
pub const IMAGE_DEPTH_M: f64 = 0.04;

/// Contact force at which acoustic coupling reaches `1 − 1/e`.
const COUPLING_FORCE: f64 = 1.0;
const LUMEN_INTENSITY: f64 = 0.05;
const WALL_BOOST: f64 = 0.25;
const WALL_THICKNESS: f64 = 0.3;
const SURFACE_BAND_M: f64 = 0.001;
const NOISE_FLOOR: f64 = 0.01;

/// Simulated tissue block with a single horizontal vessel running along
/// the x axis at `y = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Phantom {
    /// Height of the tissue surface, m.
    pub surface_height: f64,
    /// N/m
    pub tissue_stiffness: f64,
    /// Depth of the vessel centre below the surface, m.
    pub vessel_depth: f64,
    pub vessel_radius: f64,
    /// Contact force that fully closes the lumen, N.
    pub vessel_collapse_force: f64,
    pub acoustic_noise_std: f64,
}

impl Phantom {
    pub const PRESETS: [&'static str; 3] = ["phantom-b-deep", "phantom-b-superficial", "phantom-c"];

    pub fn preset(name: &str) -> Result<Phantom> {
        let p = match name {
            "phantom-b-deep" => Phantom {
                surface_height: 0.075,
                tissue_stiffness: 3000.0,
                vessel_depth: 0.03,
                vessel_radius: 0.005,
                vessel_collapse_force: 30.0,
                acoustic_noise_std: 0.08,
            },
            "phantom-b-superficial" => Phantom {
                surface_height: 0.075,
                tissue_stiffness: 3000.0,
                vessel_depth: 0.02,
                vessel_radius: 0.005,
                vessel_collapse_force: 20.0,
                acoustic_noise_std: 0.08,
            },
            "phantom-c" => Phantom {
                surface_height: 0.05,
                tissue_stiffness: 1000.0,
                vessel_depth: 0.015,
                vessel_radius: 0.003,
                vessel_collapse_force: 15.0,
                acoustic_noise_std: 0.12,
            },
            other => return Err(Error::UnknownPhantom(other.to_string())),
        };
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("surface_height", self.surface_height),
            ("tissue_stiffness", self.tissue_stiffness),
            ("vessel_depth", self.vessel_depth),
            ("vessel_radius", self.vessel_radius),
            ("vessel_collapse_force", self.vessel_collapse_force),
            ("acoustic_noise_std", self.acoustic_noise_std),
        ];
        for (name, v) in fields {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidArgument(format!("phantom {name} must be positive, got {v}")));
            }
        }
        if self.vessel_depth <= self.vessel_radius {
            return Err(Error::InvalidArgument("phantom vessel_depth must exceed vessel_radius".into()));
        }
        Ok(())
    }
}

impl FromStr for Phantom {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Phantom::preset(s)
    }
}

/// Frictionless linear-spring contact along +z.
pub fn phantom_contact_force(phantom: &Phantom, probe_position: Vec3) -> Vec3 {
    let penetration = (phantom.surface_height - probe_position[2]).max(0.0);
    [0.0, 0.0, phantom.tissue_stiffness * penetration]
}

/// Renders a B-mode-like cross section under the probe.
///
/// Rows are depth below the probe face, columns the lateral (y) offset
/// centred on the probe. Intensities are quantized to 8 bits.
pub fn render_synthetic_image<R: Rng + ?Sized>(phantom: &Phantom, probe_position: Vec3, contact_force: f64, rng: &mut R) -> GrayImage {
    let n = IMAGE_SIZE;
    let px = IMAGE_DEPTH_M / n as f64;
    let force = contact_force.max(0.0);
    let coupling = 1.0 - (-force / COUPLING_FORCE).exp();

    let r = phantom.vessel_radius;
    let squeeze = (force / phantom.vessel_collapse_force).min(1.0);
    let lumen_v = r * (1.0 - squeeze);
    let lumen_h = r * (1.0 + 0.5 * squeeze);
    let wall_v = lumen_v + WALL_THICKNESS * r;
    let wall_h = lumen_h + WALL_THICKNESS * r;

    let mut pixels = Vec::with_capacity(n * n);
    for row in 0..n {
        let depth = (row as f64 + 0.5) * px;
        let dz = depth - phantom.vessel_depth;
        let base = if depth < SURFACE_BAND_M {
            0.95
        } else {
            0.35 + 0.4 * (-depth / 0.02).exp()
        };
        for col in 0..n {
            let lateral = (col as f64 + 0.5 - n as f64 / 2.0) * px + probe_position[1];
            let inside = |a: f64, b: f64| b > 0.0 && (lateral / a).powi(2) + (dz / b).powi(2) <= 1.0;
            let tissue = if inside(lumen_h, lumen_v) {
                LUMEN_INTENSITY
            } else if inside(wall_h, wall_v) {
                base + WALL_BOOST
            } else {
                base
            };
            let speckle: f64 = rng.sample(StandardNormal);
            let floor: f64 = rng.sample(StandardNormal);
            let v = coupling * tissue * (1.0 + phantom.acoustic_noise_std * speckle.clamp(-3.0, 3.0)) + NOISE_FLOOR * floor.abs();
            pixels.push(v.clamp(0.0, 1.0));
        }
    }
    let mut img = GrayImage {
        width: n,
        height: n,
        pixels,
    };
    img.quantize();
    img
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn presets_are_valid_and_ordered() {
        for name in Phantom::PRESETS {
            Phantom::preset(name).unwrap().validate().unwrap();
        }
        let b = Phantom::preset("phantom-b-deep").unwrap();
        let c = Phantom::preset("phantom-c").unwrap();
        assert!(b.tissue_stiffness > c.tissue_stiffness);
        assert!(matches!(Phantom::preset("phantom-z"), Err(Error::UnknownPhantom(_))));
    }

    #[test]
    fn invalid_phantom() {
        let mut p = Phantom::preset("phantom-c").unwrap();
        p.vessel_depth = p.vessel_radius;
        assert!(p.validate().is_err());
        p = Phantom::preset("phantom-c").unwrap();
        p.acoustic_noise_std = 0.0;
        assert!(p.validate().is_err());
    }

    #[test]
    fn contact_law() {
        let mut p = Phantom::preset("phantom-c").unwrap();
        p.surface_height = 0.05;
        p.tissue_stiffness = 1000.0;
        assert_eq!(phantom_contact_force(&p, [0.0, 0.0, 0.06]), [0.0; 3]);
        let f = phantom_contact_force(&p, [0.0, 0.0, 0.045]);
        assert!((f[2] - 5.0).abs() < 1e-9);
        let eps = 1e-12;
        let below = phantom_contact_force(&p, [0.0, 0.0, 0.05 - eps])[2];
        let above = phantom_contact_force(&p, [0.0, 0.0, 0.05 + eps])[2];
        assert!(below.abs() < 1e-8 && above == 0.0);
    }

    fn lumen_region_min(p: &Phantom, img: &GrayImage) -> Option<f64> {
        let px = IMAGE_DEPTH_M / IMAGE_SIZE as f64;
        let mut min: Option<f64> = None;
        for row in 0..IMAGE_SIZE {
            for col in 0..IMAGE_SIZE {
                let dz = (row as f64 + 0.5) * px - p.vessel_depth;
                let dy = (col as f64 + 0.5 - IMAGE_SIZE as f64 / 2.0) * px;
                if (dy / p.vessel_radius).powi(2) + (dz / p.vessel_radius).powi(2) <= 1.0 {
                    let v = img.get(row, col);
                    min = Some(min.map_or(v, |m: f64| m.min(v)));
                }
            }
        }
        min
    }

    #[test]
    fn lumen_visible_then_collapsed() {
        for name in Phantom::PRESETS {
            let p = Phantom::preset(name).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(3);
            let open = render_synthetic_image(&p, [0.0; 3], 0.3 * p.vessel_collapse_force, &mut rng);
            assert!(lumen_region_min(&p, &open).unwrap() < 0.2);
            let closed = render_synthetic_image(&p, [0.0; 3], p.vessel_collapse_force, &mut rng);
            assert!(lumen_region_min(&p, &closed).unwrap() >= 0.2, "{name}");
        }
    }

    #[test]
    fn zero_contact_is_dark_and_seeded_frames_repeat() {
        let p = Phantom::preset("phantom-b-deep").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let img = render_synthetic_image(&p, [0.0; 3], 0.0, &mut rng);
        assert!(img.mean() < 0.05);
        assert!(img.pixels.iter().all(|v| (0.0..=1.0).contains(v)));
        let a = render_synthetic_image(&p, [0.0; 3], 8.0, &mut ChaCha8Rng::seed_from_u64(9));
        let b = render_synthetic_image(&p, [0.0; 3], 8.0, &mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(a, b);
        assert_eq!((a.width, a.height), (IMAGE_SIZE, IMAGE_SIZE));
    }
}
