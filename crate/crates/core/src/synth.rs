//! Procedural face-like fixture images.
//!
//! Each identity is a dark background with a bright elliptical face carrying
//! identity-specific oriented colour gratings, dark eye patches and a nose
//! blob. Samples of an identity are the prototype seen through a small random
//! similarity transform, with a brightness offset and Gaussian noise.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::dataset::{write_manifest, ManifestEntry};
use crate::error::{Error, Result};
use crate::image::{AffineTransform, Image};

const BACKGROUND: [f64; 3] = [22.0, 20.0, 26.0];
const MAX_PROTOTYPE_ATTEMPTS: usize = 500;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub ids: usize,
    pub per_id: usize,
    pub seed: u64,
    pub width: usize,
    pub height: usize,
    pub max_rotation_deg: f64,
    pub scale_range: (f64, f64),
    pub max_translation: f64,
    pub brightness_jitter: f64,
    pub noise_sigma: f64,
    /// Minimum mean absolute pixel difference between any two prototypes.
    pub min_prototype_distance: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            ids: 8,
            per_id: 6,
            seed: 42,
            width: 100,
            height: 100,
            max_rotation_deg: 10.0,
            scale_range: (0.9, 1.1),
            max_translation: 5.0,
            brightness_jitter: 15.0,
            noise_sigma: 4.0,
            min_prototype_distance: 20.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Ellipse {
    center: [f64; 2],
    axes: [f64; 2],
    angle: f64,
}

impl Ellipse {
    /// Coverage in [0, 1] with a roughly one-pixel soft rim.
    fn coverage(&self, p: [f64; 2]) -> f64 {
        let (s, c) = self.angle.sin_cos();
        let dx = p[0] - self.center[0];
        let dy = p[1] - self.center[1];
        let u = (dx * c + dy * s) / self.axes[0];
        let v = (-dx * s + dy * c) / self.axes[1];
        let rho = (u * u + v * v).sqrt();
        let scale = self.axes[0].min(self.axes[1]);
        ((1.0 - rho) * scale + 0.5).clamp(0.0, 1.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Grating {
    theta: f64,
    wavelength: f64,
    phase: f64,
    /// Amplitude per colour channel.
    amplitude: [f64; 3],
}

/// One identity's appearance, defined on a continuous canvas.
#[derive(Debug, Clone, PartialEq)]
pub struct Prototype {
    fur: [f64; 3],
    face: Ellipse,
    gratings: Vec<Grating>,
    patches: Vec<Ellipse>,
    patch_color: [f64; 3],
}

impl Prototype {
    fn random(rng: &mut ChaCha8Rng, width: usize, height: usize) -> Self {
        let (w, h) = (width as f64, height as f64);
        let fur = [
            rng.random_range(120.0..235.0),
            rng.random_range(120.0..235.0),
            rng.random_range(120.0..235.0),
        ];
        let face = Ellipse {
            center: [w / 2.0 + rng.random_range(-2.0..2.0), h / 2.0 + rng.random_range(0.0..3.0)],
            axes: [w * rng.random_range(0.33..0.40), h * rng.random_range(0.36..0.43)],
            angle: rng.random_range(-0.1..0.1),
        };
        let base_theta = rng.random_range(0.0..PI);
        let gratings = (0..2)
            .map(|k| Grating {
                theta: base_theta + k as f64 * rng.random_range(0.5..(PI - 0.5)),
                wavelength: rng.random_range(7.0..14.0),
                phase: rng.random_range(0.0..2.0 * PI),
                amplitude: [
                    rng.random_range(4.0..18.0),
                    rng.random_range(4.0..18.0),
                    rng.random_range(4.0..18.0),
                ],
            })
            .collect();

        let [cx, cy] = face.center;
        let [fa, fb] = face.axes;
        let eye_dx = fa * rng.random_range(0.35..0.55);
        let eye_y = cy - fb * rng.random_range(0.05..0.3);
        let eye_axes = [fa * rng.random_range(0.16..0.28), fb * rng.random_range(0.12..0.22)];
        let tilt = rng.random_range(0.2..0.9);
        let mut patches = vec![
            Ellipse {
                center: [cx - eye_dx, eye_y + rng.random_range(-2.0..2.0)],
                axes: eye_axes,
                angle: tilt,
            },
            Ellipse {
                center: [cx + eye_dx, eye_y + rng.random_range(-2.0..2.0)],
                axes: [eye_axes[0] * rng.random_range(0.85..1.15), eye_axes[1]],
                angle: -tilt + rng.random_range(-0.15..0.15),
            },
        ];
        patches.push(Ellipse {
            center: [cx + rng.random_range(-2.0..2.0), cy + fb * rng.random_range(0.3..0.5)],
            axes: [fa * rng.random_range(0.1..0.18), fb * rng.random_range(0.06..0.11)],
            angle: 0.0,
        });
        let dark = rng.random_range(25.0..60.0);
        Self {
            fur,
            face,
            gratings,
            patches,
            patch_color: [dark, dark, dark + 5.0],
        }
    }

    /// Colour at a point of the prototype canvas.
    fn color(&self, p: [f64; 2]) -> [f64; 3] {
        let face = self.face.coverage(p);
        if face == 0.0 {
            return BACKGROUND;
        }
        let mut fur = self.fur;
        for g in &self.gratings {
            let (s, c) = g.theta.sin_cos();
            let wave = (2.0 * PI * (p[0] * c + p[1] * s) / g.wavelength + g.phase).sin();
            for (f, a) in fur.iter_mut().zip(g.amplitude) {
                *f += a * wave;
            }
        }
        let patch = self.patches.iter().map(|e| e.coverage(p)).fold(0.0, f64::max);
        let mut out = [0.0; 3];
        for ch in 0..3 {
            let inner = fur[ch] + patch * (self.patch_color[ch] - fur[ch]);
            out[ch] = BACKGROUND[ch] + face * (inner - BACKGROUND[ch]);
        }
        out
    }

    /// Noise-free rendering on its own canvas.
    pub fn render(&self, width: usize, height: usize) -> Image {
        Image::from_fn(width, height, |x, y| self.color([x as f64, y as f64]))
    }

    /// Renders the prototype as seen through `view` (prototype → image
    /// coordinates).
    fn render_view(&self, width: usize, height: usize, view: &AffineTransform) -> Result<Image> {
        let inv = view.inverse()?;
        Ok(Image::from_fn(width, height, |x, y| self.color(inv.apply([x as f64, y as f64]))))
    }
}

/// Mean absolute difference over all pixels and channels.
pub fn mean_abs_diff(a: &Image, b: &Image) -> f64 {
    assert_eq!(a.dims(), b.dims(), "images must share dimensions");
    let n = a.data().len() as f64;
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).sum::<f64>() / n
}

#[derive(Debug, Clone)]
pub struct SynthSample {
    pub panda_id: String,
    pub index: usize,
    pub image: Image,
    /// The perturbation applied to the prototype.
    pub view: AffineTransform,
}

#[derive(Debug, Clone)]
pub struct SynthDataset {
    pub prototypes: Vec<Prototype>,
    pub samples: Vec<SynthSample>,
}

pub fn identity_name(i: usize) -> String {
    format!("panda_{i:02}")
}

/// Draws prototypes (redrawing any that is too close to an earlier one) and
/// then `per_id` perturbed samples of each, in identity-major order.
pub fn generate(cfg: &SynthConfig) -> Result<SynthDataset> {
    if cfg.ids == 0 || cfg.per_id == 0 {
        return Err(Error::InvalidConfig("synth needs at least one identity and one image".into()));
    }
    if cfg.width < 16 || cfg.height < 16 {
        return Err(Error::InvalidConfig("synth images must be at least 16x16".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut prototypes: Vec<Prototype> = Vec::with_capacity(cfg.ids);
    let mut renders: Vec<Image> = Vec::with_capacity(cfg.ids);
    for i in 0..cfg.ids {
        let mut attempts = 0;
        loop {
            let p = Prototype::random(&mut rng, cfg.width, cfg.height);
            let img = p.render(cfg.width, cfg.height);
            if renders.iter().all(|r| mean_abs_diff(r, &img) > cfg.min_prototype_distance) {
                prototypes.push(p);
                renders.push(img);
                break;
            }
            attempts += 1;
            if attempts >= MAX_PROTOTYPE_ATTEMPTS {
                return Err(Error::InvalidConfig(format!(
                    "could not draw prototype {i} at distance > {} from the others",
                    cfg.min_prototype_distance
                )));
            }
        }
    }

    let noise = Normal::new(0.0, cfg.noise_sigma).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let center = [(cfg.width as f64 - 1.0) / 2.0, (cfg.height as f64 - 1.0) / 2.0];
    let mut samples = Vec::with_capacity(cfg.ids * cfg.per_id);
    for (i, proto) in prototypes.iter().enumerate() {
        for index in 0..cfg.per_id {
            let angle = rng.random_range(-cfg.max_rotation_deg..=cfg.max_rotation_deg).to_radians();
            let scale = rng.random_range(cfg.scale_range.0..=cfg.scale_range.1);
            let r = cfg.max_translation * rng.random::<f64>().sqrt();
            let phi = rng.random_range(0.0..2.0 * PI);
            let view = AffineTransform::similarity_about(center, angle, scale, [r * phi.cos(), r * phi.sin()]);
            let offset = rng.random_range(-cfg.brightness_jitter..=cfg.brightness_jitter);
            let clean = proto.render_view(cfg.width, cfg.height, &view)?;
            let data = clean
                .data()
                .iter()
                .map(|v| (v + offset + noise.sample(&mut rng)).clamp(0.0, 255.0).round())
                .collect();
            samples.push(SynthSample {
                panda_id: identity_name(i),
                index,
                image: Image::new(cfg.width, cfg.height, data)?,
                view,
            });
        }
    }
    Ok(SynthDataset { prototypes, samples })
}

/// Writes `images/<id>_<k>.png` and `manifest.csv` under `dir`; returns the
/// manifest path.
pub fn write_dataset(ds: &SynthDataset, dir: impl AsRef<Path>) -> Result<PathBuf> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir.join("images"))?;
    let mut entries = Vec::with_capacity(ds.samples.len());
    for s in &ds.samples {
        let rel = format!("images/{}_{:02}.png", s.panda_id, s.index);
        s.image.save_png(dir.join(&rel))?;
        entries.push(ManifestEntry::new(rel, s.panda_id.clone()));
    }
    let manifest = dir.join("manifest.csv");
    write_manifest(&manifest, &entries)?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthConfig {
        SynthConfig {
            ids: 3,
            per_id: 2,
            seed: 5,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn counts_and_names() {
        let ds = generate(&small()).unwrap();
        assert_eq!(ds.samples.len(), 6);
        assert_eq!(ds.samples[0].panda_id, "panda_00");
        assert_eq!(ds.samples[5].panda_id, "panda_02");
        assert!(ds.samples.iter().all(|s| s.image.dims() == (100, 100)));
    }

    #[test]
    fn same_seed_same_pixels() {
        let a = generate(&small()).unwrap();
        let b = generate(&small()).unwrap();
        for (x, y) in a.samples.iter().zip(&b.samples) {
            assert_eq!(x.image, y.image);
        }
        let c = generate(&SynthConfig { seed: 6, ..small() }).unwrap();
        assert_ne!(a.samples[0].image, c.samples[0].image);
    }

    #[test]
    fn prototypes_are_far_apart() {
        let cfg = SynthConfig::default();
        let ds = generate(&cfg).unwrap();
        let renders: Vec<_> = ds.prototypes.iter().map(|p| p.render(100, 100)).collect();
        for i in 0..renders.len() {
            for j in 0..i {
                assert!(mean_abs_diff(&renders[i], &renders[j]) > 20.0);
            }
        }
    }

    #[test]
    fn perturbations_stay_in_range() {
        let ds = generate(&SynthConfig::default()).unwrap();
        for s in &ds.samples {
            let v = &s.view;
            let scale = v.det().sqrt();
            assert!((0.9 - 1e-12..=1.1 + 1e-12).contains(&scale));
            let angle = v.linear[1][0].atan2(v.linear[0][0]).to_degrees();
            assert!(angle.abs() <= 10.0 + 1e-9);
            let c = [49.5, 49.5];
            let moved = v.apply(c);
            assert!((moved[0] - c[0]).hypot(moved[1] - c[1]) <= 5.0 + 1e-9);
            assert!(s.image.data().iter().all(|p| (0.0..=255.0).contains(p) && p.fract() == 0.0));
        }
    }

    #[test]
    fn writes_manifest_and_pngs() {
        let dir = tempfile::tempdir().unwrap();
        let ds = generate(&small()).unwrap();
        let manifest = write_dataset(&ds, dir.path()).unwrap();
        let text = fs::read_to_string(&manifest).unwrap();
        assert_eq!(text.lines().count(), 7);
        assert!(text.starts_with("path,panda_id\nimages/panda_00_00.png,panda_00\n"));
        let back = Image::load(dir.path().join("images/panda_01_01.png")).unwrap();
        assert_eq!(back, ds.samples[3].image);
    }
}
