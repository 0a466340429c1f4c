//! Deterministic synthetic corpus: procedurally textured "real" images and
//! center-composited "fake" images with ground-truth masks.
//!
//! A real image is a smooth low-frequency color base plus band-limited
//! value-noise texture under a mild vignette, statistically homogeneous
//! across the frame. A fake replaces one center-biased superellipse region
//! with differently parameterized content (texture swap, local blur, or a
//! channel color shift) and alpha-blends the boundary. The mask records
//! the region at 50% alpha or more; training never reads it.
//!
//! Everything is a pure function of (config, seed): identical inputs give
//! bitwise-identical records and files.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifest::ManifestEntry;
use crate::pnm;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Real,
    Fake,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split {other:?}"))),
        }
    }
}

/// Manipulation family controlling the statistical signature of the fake
/// region.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Family {
    #[serde(rename = "texture-swap")]
    TextureSwap,
    #[serde(rename = "blur-patch")]
    BlurPatch,
    #[serde(rename = "color-shift")]
    ColorShift,
}

impl Family {
    pub const ALL: [Family; 3] = [Family::TextureSwap, Family::BlurPatch, Family::ColorShift];

    pub fn as_str(&self) -> &'static str {
        match self {
            Family::TextureSwap => "texture-swap",
            Family::BlurPatch => "blur-patch",
            Family::ColorShift => "color-shift",
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Family {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "texture-swap" => Ok(Family::TextureSwap),
            "blur-patch" => Ok(Family::BlurPatch),
            "color-shift" => Ok(Family::ColorShift),
            other => Err(Error::Config(format!("unknown manipulation family {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub real: usize,
    pub fake: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusConfig {
    pub side: usize,
    pub train: SplitCounts,
    pub val: SplitCounts,
    pub test: SplitCounts,
    pub families: Vec<Family>,
    /// Relative width of the alpha ramp at the region boundary.
    pub blend_softness: f64,
    /// Keep fake-region centers in the middle half of the frame.
    pub center_bias: bool,
    pub global_seed: u64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            side: 64,
            train: SplitCounts { real: 1000, fake: 1000 },
            val: SplitCounts { real: 200, fake: 200 },
            test: SplitCounts { real: 300, fake: 300 },
            families: Family::ALL.to_vec(),
            blend_softness: 0.25,
            center_bias: true,
            global_seed: 7,
        }
    }
}

/// One generated sample. `image` is planar `3 x side x side` in `[0,1]`;
/// `mask` (fakes only) is `side x side` of 0/1 and exists strictly for
/// evaluation.
#[derive(Debug, Clone)]
pub struct SampleRecord {
    pub image: Vec<f64>,
    pub label: Label,
    pub family: Option<Family>,
    pub mask: Option<Vec<u8>>,
    pub split: Split,
    pub seed: u64,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E3779B97F4A7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

/// Mix several u64 parts into one RNG seed.
pub fn derive_seed(parts: &[u64]) -> u64 {
    let mut acc = 0x243F6A8885A308D3u64;
    for &p in parts {
        acc = splitmix(acc ^ splitmix(p));
    }
    acc
}

const TAG_REAL: u64 = 1;
const TAG_FAKE: u64 = 2;
const TAG_SOURCE: u64 = 3;

/// Bilinear value noise on a lattice of the given cell size.
fn value_noise(rng: &mut ChaCha8Rng, side: usize, cell: usize) -> Vec<f64> {
    let cells = side.div_ceil(cell);
    let lat = cells + 1;
    let lattice: Vec<f64> = (0..lat * lat).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut out = vec![0.0; side * side];
    for y in 0..side {
        let fy = y as f64 / cell as f64;
        let gy = fy.floor() as usize;
        let ty = fy - gy as f64;
        for x in 0..side {
            let fx = x as f64 / cell as f64;
            let gx = fx.floor() as usize;
            let tx = fx - gx as f64;
            let v00 = lattice[gy * lat + gx];
            let v01 = lattice[gy * lat + gx + 1];
            let v10 = lattice[(gy + 1) * lat + gx];
            let v11 = lattice[(gy + 1) * lat + gx + 1];
            let top = v00 * (1.0 - tx) + v01 * tx;
            let bot = v10 * (1.0 - tx) + v11 * tx;
            out[y * side + x] = top * (1.0 - ty) + bot * ty;
        }
    }
    out
}

/// Procedurally textured real image: low-frequency base + band-limited
/// texture + mild vignette, clamped to `[0,1]`.
pub fn make_real(seed: u64, cfg: &CorpusConfig) -> SampleRecord {
    let side = cfg.side;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[cfg.global_seed, seed, TAG_REAL]));

    let means: Vec<f64> = (0..3).map(|_| rng.random_range(0.35..0.65)).collect();

    // two low-frequency luminance waves
    let mut waves = Vec::new();
    for _ in 0..2 {
        let amp = rng.random_range(0.015..0.05);
        let freq = rng.random_range(0.5..1.5);
        let theta: f64 = rng.random_range(0.0..std::f64::consts::PI);
        let phase = rng.random_range(0.0..std::f64::consts::TAU);
        waves.push((amp, freq, theta.cos(), theta.sin(), phase));
    }
    let wave_gain: Vec<f64> = (0..3).map(|_| rng.random_range(0.7..1.3)).collect();

    let coarse = value_noise(&mut rng, side, (side / 8).max(2));
    let fine = value_noise(&mut rng, side, (side / 16).max(1));
    let tex_amp = rng.random_range(0.05..0.10);
    let tex_gain: Vec<f64> = (0..3).map(|_| rng.random_range(0.85..1.15)).collect();

    let vignette = rng.random_range(0.0..0.10);

    let n = side * side;
    let mut image = vec![0.0; 3 * n];
    let half = (side as f64 - 1.0) / 2.0;
    let corner = half * half * 2.0;
    for y in 0..side {
        for x in 0..side {
            let idx = y * side + x;
            let mut lum = 0.0;
            for &(amp, freq, cx, sx, phase) in &waves {
                let u = (x as f64 * cx + y as f64 * sx) / side as f64;
                lum += amp * (std::f64::consts::TAU * freq * u + phase).sin();
            }
            let tex = coarse[idx] + 0.5 * fine[idx];
            let r2 = ((x as f64 - half).powi(2) + (y as f64 - half).powi(2)) / corner;
            let vig = 1.0 - vignette * r2;
            for c in 0..3 {
                let v = (means[c] + wave_gain[c] * lum + tex_gain[c] * tex_amp * tex) * vig;
                image[c * n + idx] = v.clamp(0.0, 1.0);
            }
        }
    }
    SampleRecord {
        image,
        label: Label::Real,
        family: None,
        mask: None,
        split: Split::Train,
        seed,
    }
}

/// Separable box blur with clamped edges, per channel.
fn box_blur(image: &[f64], side: usize, radius: usize) -> Vec<f64> {
    let n = side * side;
    let mut tmp = vec![0.0; 3 * n];
    let mut out = vec![0.0; 3 * n];
    let w = (2 * radius + 1) as f64;
    for c in 0..3 {
        let plane = &image[c * n..(c + 1) * n];
        let t = &mut tmp[c * n..(c + 1) * n];
        for y in 0..side {
            for x in 0..side {
                let mut s = 0.0;
                for k in -(radius as isize)..=radius as isize {
                    let xx = (x as isize + k).clamp(0, side as isize - 1) as usize;
                    s += plane[y * side + xx];
                }
                t[y * side + x] = s / w;
            }
        }
    }
    for c in 0..3 {
        let t = &tmp[c * n..(c + 1) * n];
        let o = &mut out[c * n..(c + 1) * n];
        for y in 0..side {
            for x in 0..side {
                let mut s = 0.0;
                for k in -(radius as isize)..=radius as isize {
                    let yy = (y as isize + k).clamp(0, side as isize - 1) as usize;
                    s += t[yy * side + x];
                }
                o[y * side + x] = s / w;
            }
        }
    }
    out
}

/// Region geometry: a superellipse (exponent 2 or 4) with its soft alpha.
struct Region {
    cx: f64,
    cy: f64,
    ax: f64,
    ay: f64,
    exponent: f64,
    blend: f64,
}

impl Region {
    fn sample(rng: &mut ChaCha8Rng, side: usize, blend: f64, center_bias: bool) -> Region {
        let s = side as f64;
        let (lo, hi) = if center_bias { (0.25, 0.75) } else { (0.12, 0.88) };
        let cx = rng.random_range(lo..hi) * s;
        let cy = rng.random_range(lo..hi) * s;
        let rounded_rect = rng.random_range(0..2) == 1;
        let (exponent, amin, amax) = if rounded_rect {
            (4.0, 0.17, 0.28)
        } else {
            (2.0, 0.19, 0.32)
        };
        let ax = rng.random_range(amin..amax) * s;
        let ay = rng.random_range(amin..amax) * s;
        Region {
            cx,
            cy,
            ax,
            ay,
            exponent,
            blend,
        }
    }

    fn rho(&self, x: f64, y: f64) -> f64 {
        let dx = ((x - self.cx) / self.ax).abs();
        let dy = ((y - self.cy) / self.ay).abs();
        (dx.powf(self.exponent) + dy.powf(self.exponent)).powf(1.0 / self.exponent)
    }

    /// 1 inside, smoothstep ramp to exactly 0 at `rho = 1 + blend`.
    fn alpha(&self, x: f64, y: f64) -> f64 {
        let rho = self.rho(x, y);
        if rho <= 1.0 {
            1.0
        } else if rho >= 1.0 + self.blend {
            0.0
        } else {
            let t = (1.0 + self.blend - rho) / self.blend;
            t * t * (3.0 - 2.0 * t)
        }
    }
}

/// Composite a fake over a real sample: replace one center-biased region
/// with family-specific content, alpha-blended at the boundary.
pub fn make_fake(real: &SampleRecord, family: Family, seed: u64, cfg: &CorpusConfig) -> Result<SampleRecord> {
    if real.label != Label::Real {
        return Err(Error::Contract(
            "make_fake requires a real source sample".into(),
        ));
    }
    let side = cfg.side;
    let n = side * side;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[cfg.global_seed, seed, TAG_FAKE]));
    let region = Region::sample(&mut rng, side, cfg.blend_softness, cfg.center_bias);

    // family-specific replacement content for the whole frame
    let content: Vec<f64> = match family {
        Family::BlurPatch => {
            let radius = rng.random_range(2..4usize);
            box_blur(&real.image, side, radius)
        }
        Family::TextureSwap => {
            // keep the local palette (blurred source) but overwrite texture
            // with oriented stripes plus fine noise
            let base = box_blur(&real.image, side, 2);
            let amp = rng.random_range(0.05..0.09);
            let wavelength = rng.random_range(3.0..6.0);
            let theta: f64 = rng.random_range(0.0..std::f64::consts::PI);
            let phase = rng.random_range(0.0..std::f64::consts::TAU);
            let (ct, st) = (theta.cos(), theta.sin());
            let fine = value_noise(&mut rng, side, 2);
            let mut out = base;
            for y in 0..side {
                for x in 0..side {
                    let idx = y * side + x;
                    let u = x as f64 * ct + y as f64 * st;
                    let tex = amp * (std::f64::consts::TAU * u / wavelength + phase).sin()
                        + 0.03 * fine[idx];
                    for c in 0..3 {
                        out[c * n + idx] = (out[c * n + idx] + tex).clamp(0.0, 1.0);
                    }
                }
            }
            out
        }
        Family::ColorShift => {
            // per-channel affine with at least a noticeable gain shift
            let mut gains = [0.0; 3];
            let mut offsets = [0.0; 3];
            for c in 0..3 {
                let delta = rng.random_range(0.08..0.16);
                let sign = if rng.random_range(0..2) == 1 { 1.0 } else { -1.0 };
                gains[c] = 1.0 + sign * delta;
                offsets[c] = rng.random_range(-0.03..0.03);
            }
            let mut out = vec![0.0; 3 * n];
            for c in 0..3 {
                for idx in 0..n {
                    out[c * n + idx] =
                        (real.image[c * n + idx] * gains[c] + offsets[c]).clamp(0.0, 1.0);
                }
            }
            out
        }
    };

    let mut image = real.image.clone();
    let mut mask = vec![0u8; n];
    for y in 0..side {
        for x in 0..side {
            let idx = y * side + x;
            let a = region.alpha(x as f64, y as f64);
            if a > 0.0 {
                for c in 0..3 {
                    image[c * n + idx] =
                        a * content[c * n + idx] + (1.0 - a) * real.image[c * n + idx];
                }
            }
            if a >= 0.5 {
                mask[idx] = 1;
            }
        }
    }
    Ok(SampleRecord {
        image,
        label: Label::Fake,
        family: Some(family),
        mask: Some(mask),
        split: real.split,
        seed,
    })
}

/// Generate the full corpus under `out_dir`: pixmap images, graymap masks,
/// and a JSONL manifest. Returns the manifest path.
pub fn build_corpus(cfg: &CorpusConfig, out_dir: &Path) -> Result<PathBuf> {
    if cfg.families.is_empty() {
        return Err(Error::Config("corpus needs at least one family".into()));
    }
    let images_dir = out_dir.join("images");
    let masks_dir = out_dir.join("masks");
    fs::create_dir_all(&images_dir).map_err(|e| Error::io(&images_dir, e))?;
    fs::create_dir_all(&masks_dir).map_err(|e| Error::io(&masks_dir, e))?;

    let mut entries = Vec::new();
    let mut next_seed = 0u64;
    for split in Split::ALL {
        let counts = match split {
            Split::Train => cfg.train,
            Split::Val => cfg.val,
            Split::Test => cfg.test,
        };
        for _ in 0..counts.real {
            let seed = next_seed;
            next_seed += 1;
            let mut rec = make_real(seed, cfg);
            rec.split = split;
            let rel = format!("images/{}_{seed:06}.ppm", split.as_str());
            write_image(&rec, &out_dir.join(&rel), cfg.side)?;
            entries.push(ManifestEntry {
                path: rel,
                label: Label::Real,
                family: None,
                split,
                seed,
                mask_path: None,
            });
        }
        for i in 0..counts.fake {
            let seed = next_seed;
            next_seed += 1;
            let family = cfg.families[i % cfg.families.len()];
            let mut src = make_real(derive_seed(&[seed, TAG_SOURCE]), cfg);
            src.split = split;
            let rec = make_fake(&src, family, seed, cfg)?;
            let rel = format!("images/{}_{seed:06}.ppm", split.as_str());
            write_image(&rec, &out_dir.join(&rel), cfg.side)?;
            let mask_rel = format!("masks/{}_{seed:06}.pgm", split.as_str());
            let mask_bytes: Vec<u8> = rec
                .mask
                .as_ref()
                .expect("fake has mask")
                .iter()
                .map(|&b| if b > 0 { 255 } else { 0 })
                .collect();
            pnm::write_pgm(&out_dir.join(&mask_rel), cfg.side, cfg.side, &mask_bytes)?;
            entries.push(ManifestEntry {
                path: rel,
                label: Label::Fake,
                family: Some(family),
                split,
                seed,
                mask_path: Some(mask_rel),
            });
        }
    }
    let manifest_path = out_dir.join("manifest.jsonl");
    crate::manifest::save(&entries, &manifest_path)?;
    Ok(manifest_path)
}

fn write_image(rec: &SampleRecord, path: &Path, side: usize) -> Result<()> {
    let rgb = pnm::planar_to_rgb(&rec.image, side, side);
    pnm::write_ppm(path, side, side, &rgb)
}
