//! Box-aware image augmentation with seeded, platform-independent sampling.
//!
//! Random draws use ChaCha8 seeded from a `u64`. The geometric transform and
//! the pixel operations use separate ChaCha streams of the same seed, so
//! toggling pixel ops never changes the sampled geometry.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{clip_box, transform_box_corners, transform_box_custom, Affine, BBox, Point};

/// Side length images are resized to before augmentation.
pub const DEFAULT_RESOLUTION: usize = 512;

const PIXEL_STREAM: u64 = 1;

/// Single-channel image, row-major, intensities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    pixels: Vec<f32>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::config("image dimensions must be positive"));
        }
        if pixels.len() != width * height {
            return Err(Error::config(format!("{} pixels given for a {width}x{height} image", pixels.len())));
        }
        let mut img = GrayImage { width, height, pixels };
        img.clamp();
        Ok(img)
    }

    pub fn filled(width: usize, height: usize, value: f32) -> Result<Self> {
        GrayImage::new(width, height, vec![value; width * height])
    }

    pub fn from_u8(width: usize, height: usize, data: &[u8]) -> Result<Self> {
        GrayImage::new(width, height, data.iter().map(|&v| v as f32 / 255.0).collect())
    }

    pub fn to_u8(&self) -> Vec<u8> {
        self.pixels.iter().map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8).collect()
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.pixels[y * self.width + x]
    }

    fn clamp(&mut self) {
        for v in &mut self.pixels {
            // NaN becomes 0
            *v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum Border {
    Clamp,
    Zero,
}

/// Bilinear sample at pixel-index coordinates (pixel `i` centered on `i`).
fn sample_bilinear(img: &GrayImage, px: f64, py: f64, border: Border) -> f32 {
    let (w, h) = (img.width as isize, img.height as isize);
    let (px, py) = match border {
        Border::Clamp => (px.clamp(0.0, (w - 1) as f64), py.clamp(0.0, (h - 1) as f64)),
        Border::Zero => {
            if px <= -1.0 || py <= -1.0 || px >= w as f64 || py >= h as f64 {
                return 0.0;
            }
            (px, py)
        }
    };
    let x0 = px.floor();
    let y0 = py.floor();
    let fx = (px - x0) as f32;
    let fy = (py - y0) as f32;
    let (x0, y0) = (x0 as isize, y0 as isize);
    let at = |x: isize, y: isize| -> f32 {
        match border {
            Border::Clamp => img.get(x.clamp(0, w - 1) as usize, y.clamp(0, h - 1) as usize),
            Border::Zero => {
                if x < 0 || y < 0 || x >= w || y >= h {
                    0.0
                } else {
                    img.get(x as usize, y as usize)
                }
            }
        }
    };
    let (p00, p10, p01, p11) = (at(x0, y0), at(x0 + 1, y0), at(x0, y0 + 1), at(x0 + 1, y0 + 1));
    let top = p00 + (p10 - p00) * fx;
    let bottom = p01 + (p11 - p01) * fx;
    top + (bottom - top) * fy
}

/// Bilinear resize to `target × target`; boxes are scaled per axis.
pub fn resize(img: &GrayImage, boxes: &[BBox], target: usize) -> Result<(GrayImage, Vec<BBox>)> {
    if target == 0 {
        return Err(Error::config("resize target must be positive"));
    }
    let sx = target as f64 / img.width as f64;
    let sy = target as f64 / img.height as f64;
    let boxes = boxes.iter().map(|b| BBox { x: b.x * sx, y: b.y * sy, w: b.w * sx, h: b.h * sy }).collect();
    if img.width == target && img.height == target {
        return Ok((img.clone(), boxes));
    }
    let (inv_x, inv_y) = (1.0 / sx, 1.0 / sy);
    let mut pixels = Vec::with_capacity(target * target);
    for j in 0..target {
        let py = (j as f64 + 0.5) * inv_y - 0.5;
        for i in 0..target {
            let px = (i as f64 + 0.5) * inv_x - 0.5;
            pixels.push(sample_bilinear(img, px, py, Border::Clamp));
        }
    }
    Ok((GrayImage { width: target, height: target, pixels }, boxes))
}

/// How boxes follow the geometric transform.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RotationMode {
    /// Bounds of the four transformed corners.
    #[default]
    Corners,
    /// Bounds of eight transformed edge points at 1/3 and 2/3 of each edge.
    Custom,
    /// No rotation is sampled; boxes follow the remaining transform by corners.
    Off,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PresetName {
    None,
    Light,
    Heavy,
    HeavyNoRotation,
    HeavyCustomRotation,
}

impl PresetName {
    pub const ALL: [PresetName; 5] = [
        PresetName::None,
        PresetName::Light,
        PresetName::Heavy,
        PresetName::HeavyNoRotation,
        PresetName::HeavyCustomRotation,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PresetName::None => "none",
            PresetName::Light => "light",
            PresetName::Heavy => "heavy",
            PresetName::HeavyNoRotation => "heavy_no_rotation",
            PresetName::HeavyCustomRotation => "heavy_custom_rotation",
        }
    }
}

impl fmt::Display for PresetName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PresetName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PresetName::ALL.into_iter().find(|p| p.as_str() == s).ok_or_else(|| {
            let names: Vec<&str> = PresetName::ALL.iter().map(|p| p.as_str()).collect();
            Error::config(format!("unknown preset {s:?}; valid presets: {}", names.join(", ")))
        })
    }
}

/// Magnitudes and probabilities of the photometric ops.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PixelOpsConfig {
    /// Chance that each enabled op fires.
    pub probability: f64,
    pub noise_sigma_max: f64,
    pub blur_sigma_max: f64,
    pub gamma_min: f64,
    pub gamma_max: f64,
}

impl Default for PixelOpsConfig {
    fn default() -> Self {
        PixelOpsConfig { probability: 0.5, noise_sigma_max: 0.05, blur_sigma_max: 1.5, gamma_min: 0.8, gamma_max: 1.25 }
    }
}

/// A named bundle of augmentation parameters. Angles are in degrees; scale
/// and shift are fractions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentPreset {
    pub name: PresetName,
    pub scale_jitter: f64,
    pub shear_deg: f64,
    pub max_rotation_deg: f64,
    pub rotation_mode: RotationMode,
    /// Maximum shift as a fraction of the image side.
    pub shift_fraction: f64,
    pub hflip: bool,
    pub pixel_noise: bool,
    pub blur: bool,
    pub gamma_jitter: bool,
    #[serde(default)]
    pub pixel: PixelOpsConfig,
}

impl AugmentPreset {
    pub fn named(name: PresetName) -> Self {
        let heavy = AugmentPreset {
            name,
            scale_jitter: 0.15,
            shear_deg: 4.0,
            max_rotation_deg: 6.0,
            rotation_mode: RotationMode::Corners,
            shift_fraction: 0.05,
            hflip: true,
            pixel_noise: true,
            blur: true,
            gamma_jitter: true,
            pixel: PixelOpsConfig::default(),
        };
        match name {
            PresetName::None => AugmentPreset {
                scale_jitter: 0.0,
                shear_deg: 0.0,
                max_rotation_deg: 0.0,
                rotation_mode: RotationMode::Off,
                shift_fraction: 0.0,
                hflip: false,
                pixel_noise: false,
                blur: false,
                gamma_jitter: false,
                ..heavy
            },
            PresetName::Light => AugmentPreset {
                scale_jitter: 0.1,
                shear_deg: 2.5,
                max_rotation_deg: 5.0,
                hflip: false,
                pixel_noise: false,
                blur: false,
                gamma_jitter: false,
                ..heavy
            },
            PresetName::Heavy => heavy,
            PresetName::HeavyNoRotation => {
                AugmentPreset { max_rotation_deg: 0.0, rotation_mode: RotationMode::Off, ..heavy }
            }
            PresetName::HeavyCustomRotation => AugmentPreset { rotation_mode: RotationMode::Custom, ..heavy },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let non_neg = [
            ("scale_jitter", self.scale_jitter),
            ("shear_deg", self.shear_deg),
            ("max_rotation_deg", self.max_rotation_deg),
            ("shift_fraction", self.shift_fraction),
            ("noise_sigma_max", self.pixel.noise_sigma_max),
            ("blur_sigma_max", self.pixel.blur_sigma_max),
        ];
        for (name, v) in non_neg {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(format!("{name} must be non-negative, got {v}")));
            }
        }
        if self.scale_jitter >= 1.0 {
            return Err(Error::config("scale_jitter must be below 1"));
        }
        if self.shear_deg >= 90.0 {
            return Err(Error::config("shear_deg must be below 90"));
        }
        let p = &self.pixel;
        if !(0.0..=1.0).contains(&p.probability) {
            return Err(Error::config("pixel op probability must be in [0, 1]"));
        }
        if !(p.gamma_min > 0.0 && p.gamma_min <= p.gamma_max && p.gamma_max.is_finite()) {
            return Err(Error::config("gamma range must satisfy 0 < gamma_min <= gamma_max"));
        }
        Ok(())
    }
}

/// One sampled geometric augmentation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransformParams {
    pub angle_deg: f64,
    pub scale: f64,
    pub shear_deg: f64,
    pub shift_x: f64,
    pub shift_y: f64,
    pub hflip: bool,
}

impl TransformParams {
    pub const IDENTITY: TransformParams =
        TransformParams { angle_deg: 0.0, scale: 1.0, shear_deg: 0.0, shift_x: 0.0, shift_y: 0.0, hflip: false };

    /// Optional flip, then scale, shear and rotation about the canvas center,
    /// then the shift (fractions of width/height).
    pub fn to_affine(&self, width: f64, height: f64) -> Affine {
        let (cx, cy) = (0.5 * width, 0.5 * height);
        let flip = if self.hflip { Affine::hflip(width) } else { Affine::IDENTITY };
        let linear = Affine::scaling(self.scale, self.scale)
            .then(&Affine::shear_x_deg(self.shear_deg))
            .then(&Affine::rotation_deg(self.angle_deg))
            .about(cx, cy);
        flip.then(&linear).then(&Affine::translation(self.shift_x * width, self.shift_y * height))
    }
}

fn symmetric(rng: &mut ChaCha8Rng, max: f64) -> f64 {
    // always draw, so every preset consumes the stream identically
    let u: f64 = rng.random_range(-1.0..=1.0);
    max * u
}

/// Draws transform parameters. Every draw happens regardless of the preset,
/// so presets differing only in `rotation_mode` get identical parameters.
pub fn sample_params(preset: &AugmentPreset, seed: u64) -> TransformParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let angle = symmetric(&mut rng, preset.max_rotation_deg);
    let scale = 1.0 + symmetric(&mut rng, preset.scale_jitter);
    let shear = symmetric(&mut rng, preset.shear_deg);
    let shift_x = symmetric(&mut rng, preset.shift_fraction);
    let shift_y = symmetric(&mut rng, preset.shift_fraction);
    let flip = rng.random_bool(0.5);
    TransformParams {
        angle_deg: if preset.rotation_mode == RotationMode::Off { 0.0 } else { angle },
        scale,
        shear_deg: shear,
        shift_x,
        shift_y,
        hflip: preset.hflip && flip,
    }
}

/// Samples the geometric transform for a `width × height` canvas.
pub fn sample_transform(preset: &AugmentPreset, width: usize, height: usize, seed: u64) -> Affine {
    sample_params(preset, seed).to_affine(width as f64, height as f64)
}

/// Maps boxes through `t` and clips them to the canvas, dropping empties.
pub fn transform_boxes(boxes: &[BBox], t: &Affine, mode: RotationMode, width: f64, height: f64) -> Vec<BBox> {
    boxes
        .iter()
        .map(|b| match mode {
            RotationMode::Custom => transform_box_custom(b, t),
            RotationMode::Corners | RotationMode::Off => transform_box_corners(b, t),
        })
        .filter_map(|b| clip_box(&b, width, height))
        .collect()
}

/// Warps pixels by `t` (bilinear, zero padding) and maps boxes alongside.
pub fn apply(img: &GrayImage, boxes: &[BBox], t: &Affine, mode: RotationMode) -> Result<(GrayImage, Vec<BBox>)> {
    if !t.is_finite() {
        return Err(Error::config("transform has non-finite coefficients"));
    }
    let inv = t.inverse().ok_or_else(|| Error::config("transform is not invertible"))?;
    let (w, h) = (img.width as f64, img.height as f64);
    let out_boxes = transform_boxes(boxes, t, mode, w, h);
    if t.is_identity() {
        return Ok((img.clone(), out_boxes));
    }
    let mut pixels = Vec::with_capacity(img.pixels.len());
    for j in 0..img.height {
        for i in 0..img.width {
            let src = inv.apply(Point::new(i as f64 + 0.5, j as f64 + 0.5));
            pixels.push(sample_bilinear(img, src.x - 0.5, src.y - 0.5, Border::Zero));
        }
    }
    let mut out = GrayImage { width: img.width, height: img.height, pixels };
    out.clamp();
    Ok((out, out_boxes))
}

pub fn add_gaussian_noise(img: &GrayImage, sigma: f64, rng: &mut impl Rng) -> GrayImage {
    let mut out = img.clone();
    if sigma > 0.0 {
        let normal = Normal::new(0.0, sigma).expect("sigma is positive and finite");
        for v in &mut out.pixels {
            *v += normal.sample(rng) as f32;
        }
    }
    out.clamp();
    out
}

fn gaussian_kernel(sigma: f64) -> Vec<f32> {
    let radius = (3.0 * sigma).ceil().max(1.0) as isize;
    let weights: Vec<f64> = (-radius..=radius).map(|k| (-((k * k) as f64) / (2.0 * sigma * sigma)).exp()).collect();
    let sum: f64 = weights.iter().sum();
    weights.iter().map(|w| (w / sum) as f32).collect()
}

/// Separable Gaussian blur with edge replication.
pub fn gaussian_blur(img: &GrayImage, sigma: f64) -> GrayImage {
    if sigma.is_nan() || sigma <= 0.0 {
        return img.clone();
    }
    let kernel = gaussian_kernel(sigma);
    let radius = (kernel.len() / 2) as isize;
    let (w, h) = (img.width as isize, img.height as isize);
    let mut tmp = vec![0.0f32; img.pixels.len()];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (k, &kw) in kernel.iter().enumerate() {
                let sx = (x + k as isize - radius).clamp(0, w - 1);
                acc += kw * img.pixels[(y * w + sx) as usize];
            }
            tmp[(y * w + x) as usize] = acc;
        }
    }
    let mut pixels = vec![0.0f32; img.pixels.len()];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (k, &kw) in kernel.iter().enumerate() {
                let sy = (y + k as isize - radius).clamp(0, h - 1);
                acc += kw * tmp[(sy * w + x) as usize];
            }
            pixels[(y * w + x) as usize] = acc;
        }
    }
    let mut out = GrayImage { width: img.width, height: img.height, pixels };
    out.clamp();
    out
}

/// `v ↦ v^gamma` per pixel.
pub fn adjust_gamma(img: &GrayImage, gamma: f64) -> GrayImage {
    let g = gamma as f32;
    let mut out = img.clone();
    for v in &mut out.pixels {
        *v = v.powf(g);
    }
    out.clamp();
    out
}

/// Photometric ops: blur, gamma, then noise, each applied with the
/// configured probability when the preset enables it.
pub fn pixel_ops(img: &GrayImage, preset: &AugmentPreset, seed: u64) -> GrayImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(PIXEL_STREAM);
    let p = &preset.pixel;
    let blur_on = rng.random_bool(p.probability);
    let blur_sigma = p.blur_sigma_max * rng.random::<f64>();
    let gamma_on = rng.random_bool(p.probability);
    let gamma = p.gamma_min + (p.gamma_max - p.gamma_min) * rng.random::<f64>();
    let noise_on = rng.random_bool(p.probability);
    let noise_sigma = p.noise_sigma_max * rng.random::<f64>();

    let mut out = img.clone();
    if preset.blur && blur_on {
        out = gaussian_blur(&out, blur_sigma);
    }
    if preset.gamma_jitter && gamma_on {
        out = adjust_gamma(&out, gamma);
    }
    if preset.pixel_noise && noise_on {
        out = add_gaussian_noise(&out, noise_sigma, &mut rng);
    }
    out
}

/// Result of [`augment`].
#[derive(Debug, Clone)]
pub struct Augmented {
    pub image: GrayImage,
    pub boxes: Vec<BBox>,
    pub params: TransformParams,
}

/// Full pipeline: sample the transform, warp image and boxes, then pixel ops.
pub fn augment(img: &GrayImage, boxes: &[BBox], preset: &AugmentPreset, seed: u64) -> Result<Augmented> {
    preset.validate()?;
    let params = sample_params(preset, seed);
    let t = params.to_affine(img.width as f64, img.height as f64);
    let (warped, boxes) = apply(img, boxes, &t, preset.rotation_mode)?;
    let image = pixel_ops(&warped, preset, seed);
    Ok(Augmented { image, boxes, params })
}
