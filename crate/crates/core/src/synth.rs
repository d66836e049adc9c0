//! Procedural place-recognition corpus: textured planar scenes, each seen
//! from several views related by a homography, with occluders.

use nalgebra::{Matrix3, Vector3};

use crate::error::Result;
use crate::numeric::{Rng, Tensor};
use crate::retrieval::{PlaceTag, Pose};

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub scenes: usize,
    pub views: usize,
    pub width: usize,
    pub height: usize,
    /// Distance between neighboring scenes, meters.
    pub spacing_m: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig { scenes: 50, views: 4, width: 192, height: 144, spacing_m: 200.0, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthView {
    pub scene: usize,
    pub view: usize,
    pub image: Tensor<f32>,
    pub tag: PlaceTag,
    /// Maps view pixels to scene-plane coordinates.
    pub to_plane: Matrix3<f64>,
}

struct Texture {
    base: [f64; 3],
    /// `(kx, ky, phase, amplitude per channel)`.
    gratings: Vec<(f64, f64, f64, [f64; 3])>,
    /// `(cx, cy, rx, ry, color, elliptical)`.
    shapes: Vec<(f64, f64, f64, f64, [f64; 3], bool)>,
}

impl Texture {
    fn random(extent: (f64, f64), rng: &mut Rng) -> Self {
        let color = |rng: &mut Rng| [rng.uniform(), rng.uniform(), rng.uniform()];
        let base = color(rng);
        let gratings = (0..6)
            .map(|_| {
                let period = rng.range(8.0, 64.0);
                let angle = rng.range(0.0, std::f64::consts::PI);
                let k = std::f64::consts::TAU / period;
                let amp = [rng.range(-0.2, 0.2), rng.range(-0.2, 0.2), rng.range(-0.2, 0.2)];
                (k * angle.cos(), k * angle.sin(), rng.range(0.0, std::f64::consts::TAU), amp)
            })
            .collect();
        let shapes = (0..40)
            .map(|_| {
                (
                    rng.range(0.0, extent.0),
                    rng.range(0.0, extent.1),
                    rng.range(3.0, 24.0),
                    rng.range(3.0, 24.0),
                    color(rng),
                    rng.uniform() < 0.5,
                )
            })
            .collect();
        Texture { base, gratings, shapes }
    }

    fn sample(&self, x: f64, y: f64) -> [f64; 3] {
        let mut c = self.base;
        for &(cx, cy, rx, ry, col, ellipse) in &self.shapes {
            let (dx, dy) = ((x - cx) / rx, (y - cy) / ry);
            let inside = if ellipse { dx * dx + dy * dy <= 1.0 } else { dx.abs() <= 1.0 && dy.abs() <= 1.0 };
            if inside {
                c = col;
            }
        }
        for &(kx, ky, phase, amp) in &self.gratings {
            let s = (kx * x + ky * y + phase).sin();
            for k in 0..3 {
                c[k] += amp[k] * s;
            }
        }
        c.map(|v| v.clamp(0.0, 1.0))
    }
}

/// View-to-plane homography: small rotation, scale, shift and tilt about
/// the image center.
fn random_view(width: f64, height: f64, rng: &mut Rng, identity: bool) -> Matrix3<f64> {
    if identity {
        return Matrix3::identity();
    }
    let (cx, cy) = (width / 2.0, height / 2.0);
    let theta = rng.range(-6.0, 6.0).to_radians();
    let s = rng.range(0.9, 1.1);
    let (tx, ty) = (rng.range(-12.0, 12.0), rng.range(-10.0, 10.0));
    let (px, py) = (rng.range(-3e-4, 3e-4), rng.range(-3e-4, 3e-4));
    let center = Matrix3::new(1.0, 0.0, -cx, 0.0, 1.0, -cy, 0.0, 0.0, 1.0);
    let back = Matrix3::new(1.0, 0.0, cx + tx, 0.0, 1.0, cy + ty, 0.0, 0.0, 1.0);
    let rot = Matrix3::new(s * theta.cos(), -s * theta.sin(), 0.0, s * theta.sin(), s * theta.cos(), 0.0, 0.0, 0.0, 1.0);
    let tilt = Matrix3::new(1.0, 0.0, 0.0, 0.0, 1.0, 0.0, px, py, 1.0);
    back * rot * tilt * center
}

/// `scenes × views` images in scene-major order. View 0 of every scene is an
/// unwarped, unoccluded reference; the others are warped and partly occluded.
pub fn generate(config: &SynthConfig) -> Result<Vec<SynthView>> {
    let (w, h) = (config.width, config.height);
    let mut out = Vec::with_capacity(config.scenes * config.views);
    for scene in 0..config.scenes {
        let mut rng = Rng::stream(config.seed, scene as u64);
        let texture = Texture::random((w as f64, h as f64), &mut rng);
        let heading = rng.range(0.0, 360.0);
        let origin = (config.spacing_m * scene as f64, 0.0);
        for view in 0..config.views {
            let to_plane = random_view(w as f64, h as f64, &mut rng, view == 0);
            let occluder = (view > 0).then(|| {
                let (ow, oh) = (rng.range(0.15, 0.3) * w as f64, rng.range(0.15, 0.3) * h as f64);
                let (ox, oy) = (rng.range(0.0, w as f64 - ow), rng.range(0.0, h as f64 - oh));
                let gray = rng.uniform();
                (ox, oy, ow, oh, gray)
            });
            let mut data = Vec::with_capacity(w * h * 3);
            for y in 0..h {
                for x in 0..w {
                    let (fx, fy) = (x as f64 + 0.5, y as f64 + 0.5);
                    if let Some((ox, oy, ow, oh, gray)) = occluder {
                        if fx >= ox && fx < ox + ow && fy >= oy && fy < oy + oh {
                            data.extend([gray as f32; 3]);
                            continue;
                        }
                    }
                    let p = to_plane * Vector3::new(fx, fy, 1.0);
                    let c = texture.sample(p[0] / p[2], p[1] / p[2]);
                    data.extend(c.map(|v| v as f32));
                }
            }
            let (dx, dy) = if view == 0 { (0.0, 0.0) } else { (rng.range(-3.0, 3.0), rng.range(-3.0, 3.0)) };
            let yaw = heading + if view == 0 { 0.0 } else { rng.range(-5.0, 5.0) };
            let (e, n) = (origin.0 + dx, origin.1 + dy);
            out.push(SynthView {
                scene,
                view,
                image: Tensor::new(&[h, w, 3], data)?,
                tag: PlaceTag {
                    id: format!("s{scene:03}v{view}"),
                    easting: e,
                    northing: n,
                    heading_deg: Some(yaw.rem_euclid(360.0)),
                    pose: Some(Pose { x: e, y: n, z: 0.0, yaw: yaw.rem_euclid(360.0), pitch: 0.0, roll: 0.0 }),
                },
                to_plane,
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shapes_ids_and_determinism() {
        let cfg = SynthConfig { scenes: 2, views: 3, width: 32, height: 16, ..Default::default() };
        let a = generate(&cfg).unwrap();
        assert_eq!(a.len(), 6);
        assert_eq!(a[4].tag.id, "s001v1");
        assert_eq!(a[0].image.shape(), &[16, 32, 3]);
        assert!(a.iter().all(|v| v.image.data().iter().all(|&p| (0.0..=1.0).contains(&p))));
        assert_eq!(a, generate(&cfg).unwrap());
        assert!(a[0].tag.planar_distance(&a[1].tag) < 10.0);
        assert!(a[0].tag.planar_distance(&a[3].tag) > 100.0);
    }
}
