//! Paired datasets on disk, synthetic degradations and procedural clean images.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use image::{ColorType, ImageReader, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::image::ImageTensor;

/// A degraded image, its clean reference and the shared file stem.
#[derive(Clone, Debug, PartialEq)]
pub struct PairedSample {
    pub degraded: ImageTensor,
    pub clean: ImageTensor,
    pub identifier: String,
}

const EXTENSIONS: [&str; 3] = ["png", "jpg", "jpeg"];

fn image_files(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(format!("listing {}", dir.display()), e))?;
    let mut out = BTreeMap::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(format!("listing {}", dir.display()), e))?.path();
        let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
        if !path.is_file() || !ext.is_some_and(|e| EXTENSIONS.contains(&e.as_str())) {
            continue;
        }
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
        if let Some(prev) = out.insert(stem.clone(), path.clone()) {
            return Err(Error::Data(format!("duplicate stem `{stem}`: {} and {}", prev.display(), path.display())));
        }
    }
    Ok(out)
}

/// Read an 8-bit RGB(A)/gray PNG or JPEG into `[0, 1]`.
pub fn read_image(path: &Path, identifier: &str) -> Result<ImageTensor> {
    let tag = |m: String| Error::Image { identifier: identifier.to_string(), message: m };
    let img = ImageReader::open(path)
        .map_err(|e| tag(e.to_string()))?
        .with_guessed_format()
        .map_err(|e| tag(e.to_string()))?
        .decode()
        .map_err(|e| tag(e.to_string()))?;
    match img.color() {
        ColorType::L8 | ColorType::La8 | ColorType::Rgb8 | ColorType::Rgba8 => {}
        other => {
            return Err(tag(format!(
                "unsupported bit depth ({other:?}); only 8-bit images are accepted"
            )))
        }
    }
    from_rgb8(&img.to_rgb8()).map_err(|e| tag(e.to_string()))
}

pub fn from_rgb8(img: &RgbImage) -> Result<ImageTensor> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    ImageTensor::from_fn(h, w, |c, y, x| img.get_pixel(x as u32, y as u32)[c] as f32 / 255.0)
}

pub fn to_rgb8(image: &ImageTensor) -> RgbImage {
    RgbImage::from_fn(image.width() as u32, image.height() as u32, |x, y| {
        image::Rgb([0, 1, 2].map(|c| (image.get(c, y as usize, x as usize) * 255.0).round().clamp(0.0, 255.0) as u8))
    })
}

pub fn write_png(image: &ImageTensor, path: &Path) -> Result<()> {
    to_rgb8(image)
        .save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| Error::Image { identifier: path.display().to_string(), message: e.to_string() })
}

/// Load `root/input/*` and `root/gt/*`, paired by file stem, in stem order.
pub fn load_paired_dataset(root: &Path) -> Result<Vec<PairedSample>> {
    let inputs = image_files(&root.join("input"))?;
    let gts = image_files(&root.join("gt"))?;
    let mut orphans: Vec<String> = inputs.keys().filter(|k| !gts.contains_key(*k)).map(|k| format!("input/{k}")).collect();
    orphans.extend(gts.keys().filter(|k| !inputs.contains_key(*k)).map(|k| format!("gt/{k}")));
    if !orphans.is_empty() {
        return Err(Error::Unpaired(orphans));
    }
    inputs
        .iter()
        .map(|(stem, path)| {
            let degraded = read_image(path, &format!("input/{stem}"))?;
            let clean = read_image(&gts[stem], &format!("gt/{stem}"))?;
            if (degraded.height(), degraded.width()) != (clean.height(), clean.width()) {
                return Err(Error::Image {
                    identifier: stem.clone(),
                    message: format!(
                        "input is {}x{} but ground truth is {}x{}",
                        degraded.height(),
                        degraded.width(),
                        clean.height(),
                        clean.width()
                    ),
                });
            }
            Ok(PairedSample { degraded, clean, identifier: stem.clone() })
        })
        .collect()
}

/// Write pairs in the layout read by [`load_paired_dataset`].
pub fn write_paired_dataset(root: &Path, samples: &[PairedSample]) -> Result<()> {
    for sub in ["input", "gt"] {
        std::fs::create_dir_all(root.join(sub)).map_err(|e| Error::io(format!("creating {}", root.display()), e))?;
    }
    for s in samples {
        write_png(&s.degraded, &root.join("input").join(format!("{}.png", s.identifier)))?;
        write_png(&s.clean, &root.join("gt").join(format!("{}.png", s.identifier)))?;
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum DegradationKind {
    Haze,
    Blur,
    Rain,
    Lowlight,
}

impl FromStr for DegradationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "haze" => Ok(Self::Haze),
            "blur" => Ok(Self::Blur),
            "rain" => Ok(Self::Rain),
            "lowlight" => Ok(Self::Lowlight),
            other => Err(Error::Data(format!("unknown degradation `{other}` (haze, blur, rain, lowlight)"))),
        }
    }
}

impl fmt::Display for DegradationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Haze => "haze",
            Self::Blur => "blur",
            Self::Rain => "rain",
            Self::Lowlight => "lowlight",
        })
    }
}

/// One rain streak: start point, direction (unit), length, added intensity.
#[derive(Clone, Debug, PartialEq)]
pub struct Streak {
    pub y: f64,
    pub x: f64,
    pub dy: f64,
    pub dx: f64,
    pub length: f64,
    pub intensity: f32,
}

/// A fully specified degradation.
#[derive(Clone, Debug, PartialEq)]
pub enum Degradation {
    /// `I t + A (1 - t)`.
    Haze { transmission: f32, airlight: f32 },
    /// Gaussian blur inside the rectangle `[y0, y0 + h) x [x0, x0 + w)`.
    Blur { sigma: f64, y0: usize, x0: usize, h: usize, w: usize },
    Rain { streaks: Vec<Streak> },
    /// `I^γ` plus Gaussian noise of standard deviation `noise`.
    Lowlight { gamma: f32, noise: f32, seed: u64 },
}

impl Degradation {
    /// Draw parameters for `kind` on an `h x w` image.
    pub fn sample(kind: DegradationKind, h: usize, w: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        match kind {
            DegradationKind::Haze => {
                Self::Haze { transmission: rng.random_range(0.4..=0.8), airlight: rng.random_range(0.7..=1.0) }
            }
            DegradationKind::Blur => {
                let bh = ((h as f64) * rng.random_range(0.35..=0.5)).round() as usize;
                let bw = ((w as f64) * rng.random_range(0.35..=0.5)).round() as usize;
                Self::Blur {
                    sigma: rng.random_range(2.0..=4.0),
                    y0: rng.random_range(0..=h - bh),
                    x0: rng.random_range(0..=w - bw),
                    h: bh,
                    w: bw,
                }
            }
            DegradationKind::Rain => {
                let angle: f64 = rng.random_range(-0.35..=0.35);
                let count = (h * w / 256).max(4);
                let streaks = (0..count)
                    .map(|_| Streak {
                        y: rng.random_range(0.0..h as f64),
                        x: rng.random_range(0.0..w as f64),
                        dy: angle.cos(),
                        dx: angle.sin(),
                        length: rng.random_range(6.0..=(h as f64 / 4.0).max(8.0)),
                        intensity: rng.random_range(0.25..=0.5),
                    })
                    .collect();
                Self::Rain { streaks }
            }
            DegradationKind::Lowlight => Self::Lowlight {
                gamma: rng.random_range(2.0..=4.0),
                noise: rng.random_range(0.0..=0.01),
                seed: rng.random(),
            },
        }
    }

    pub fn apply(&self, clean: &ImageTensor) -> ImageTensor {
        let (h, w) = (clean.height(), clean.width());
        let out = match self {
            Self::Haze { transmission: t, airlight: a } => {
                ImageTensor::from_fn(h, w, |c, y, x| clean.get(c, y, x) * t + a * (1.0 - t))
            }
            Self::Blur { sigma, y0, x0, h: bh, w: bw } => {
                let blurred = gaussian_blur(clean, *sigma);
                ImageTensor::from_fn(h, w, |c, y, x| {
                    let inside = (*y0..y0 + bh).contains(&y) && (*x0..x0 + bw).contains(&x);
                    if inside {
                        blurred[(c * h + y) * w + x]
                    } else {
                        clean.get(c, y, x)
                    }
                })
            }
            Self::Rain { streaks } => {
                let mut mask = vec![0f32; h * w];
                for s in streaks {
                    let steps = s.length.ceil() as usize;
                    for k in 0..=steps {
                        let (py, px) = (s.y + s.dy * k as f64, s.x + s.dx * k as f64);
                        if py >= 0.0 && px >= 0.0 && (py as usize) < h && (px as usize) < w {
                            let i = py as usize * w + px as usize;
                            mask[i] = mask[i].max(s.intensity);
                        }
                    }
                }
                ImageTensor::from_fn(h, w, |c, y, x| (clean.get(c, y, x) + mask[y * w + x]).min(1.0))
            }
            Self::Lowlight { gamma, noise, seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                let normal = Normal::new(0.0f32, 1.0).expect("unit normal");
                let n: Vec<f32> = (0..3 * h * w).map(|_| normal.sample(&mut rng) * noise).collect();
                ImageTensor::from_fn(h, w, |c, y, x| {
                    (clean.get(c, y, x).powf(*gamma) + n[(c * h + y) * w + x]).clamp(0.0, 1.0)
                })
            }
        };
        out.expect("degradations keep values in [0, 1]")
    }
}

/// Sample a degradation of `kind` with `seed` and apply it.
pub fn synth_degrade(clean: &ImageTensor, kind: DegradationKind, seed: u64) -> ImageTensor {
    Degradation::sample(kind, clean.height(), clean.width(), seed).apply(clean)
}

/// Separable Gaussian blur (radius `ceil(3σ)`, edge-replicated), planar output.
fn gaussian_blur(img: &ImageTensor, sigma: f64) -> Vec<f32> {
    let (h, w) = (img.height(), img.width());
    let r = (3.0 * sigma).ceil() as isize;
    let k: Vec<f64> = (-r..=r).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = k.iter().sum();
    let k: Vec<f64> = k.iter().map(|v| v / s).collect();
    let clampi = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    let mut tmp = vec![0f64; 3 * h * w];
    for c in 0..3 {
        for y in 0..h {
            for x in 0..w {
                tmp[(c * h + y) * w + x] = (-r..=r)
                    .map(|d| k[(d + r) as usize] * img.get(c, y, clampi(x as isize + d, w)) as f64)
                    .sum();
            }
        }
    }
    let mut out = vec![0f32; 3 * h * w];
    for c in 0..3 {
        for y in 0..h {
            for x in 0..w {
                out[(c * h + y) * w + x] = (-r..=r)
                    .map(|d| k[(d + r) as usize] * tmp[(c * h + clampi(y as isize + d, h)) * w + x])
                    .sum::<f64>() as f32;
            }
        }
    }
    out
}

/// Procedural clean image: smooth color gradient, slow stripe shading,
/// per-pixel grain and random flat shapes with sharp edges.
pub fn generate_clean(h: usize, w: usize, seed: u64) -> ImageTensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base: [[f32; 3]; 2] = [[0, 1, 2].map(|_| rng.random_range(0.2..0.8)), [0, 1, 2].map(|_| rng.random_range(0.2..0.8))];
    let freq = [rng.random_range(0.02..0.1f32), rng.random_range(0.02..0.1f32)];
    let phase: f32 = rng.random_range(0.0..std::f32::consts::TAU);
    let amp: f32 = rng.random_range(0.05..0.15);
    let shapes: Vec<(f32, f32, f32, f32, bool, [f32; 3])> = (0..rng.random_range(4..9))
        .map(|_| {
            (
                rng.random_range(0.0..h as f32),
                rng.random_range(0.0..w as f32),
                rng.random_range(2.0..(h.min(w) as f32 / 4.0).max(3.0)),
                rng.random_range(2.0..(h.min(w) as f32 / 4.0).max(3.0)),
                rng.random_bool(0.5),
                [0, 1, 2].map(|_| rng.random_range(0.05..0.95)),
            )
        })
        .collect();
    let grain_amp: f32 = rng.random_range(0.05..0.1);
    let grain: Vec<f32> = (0..h * w).map(|_| rng.random_range(-grain_amp..grain_amp)).collect();
    ImageTensor::from_fn(h, w, |c, y, x| {
        let (fy, fx) = (y as f32, x as f32);
        let t = (fy / h as f32 + fx / w as f32) / 2.0;
        let mut v = base[0][c] * (1.0 - t) + base[1][c] * t;
        v += amp * (freq[0] * fy + freq[1] * fx + phase).sin();
        for &(cy, cx, ry, rx, ellipse, color) in &shapes {
            let (dy, dx) = ((fy - cy) / ry, (fx - cx) / rx);
            let hit = if ellipse { dy * dy + dx * dx <= 1.0 } else { dy.abs() <= 1.0 && dx.abs() <= 1.0 };
            if hit {
                v = color[c] + amp * 0.5 * (freq[1] * fy - freq[0] * fx).sin();
            }
        }
        (v + grain[y * w + x]).clamp(0.0, 1.0)
    })
    .expect("generator stays in range")
}

/// `count` synthetic pairs of `kind`, identified `synth_0000`, ...
pub fn synthetic_pairs(kind: DegradationKind, count: usize, h: usize, w: usize, seed: u64) -> Vec<PairedSample> {
    (0..count)
        .map(|i| {
            let s = seed.wrapping_mul(1_000_003).wrapping_add(i as u64);
            let clean = generate_clean(h, w, s);
            let degraded = synth_degrade(&clean, kind, s ^ 0x5eed);
            PairedSample { degraded, clean, identifier: format!("synth_{i:04}") }
        })
        .collect()
}
