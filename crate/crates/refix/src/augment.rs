//! Image augmentation: a weak flip/shift pipeline and a strong RandAugment
//! pipeline over a fixed pool of fourteen transforms, plus cutout.
//!
//! Sampling and application are split: a *plan* (which transforms, which
//! magnitudes, which crop offsets) is drawn from an explicit random stream,
//! and applying a plan is pure. Batch helpers derive one stream per
//! `(seed, domain, iteration, sample)` key, so augmenting a batch is
//! deterministic, independent of thread count, and embarrassingly parallel.
//!
//! Pixels live in `[0,1]`. Every strong transform clamps its output back to
//! `[0,1]`. Transforms that are defined on 256-level images (posterize,
//! equalize) quantize through `round(p*255)` and divide back.

use rand::Rng;

use crate::error::{Error, Result};
use crate::par;
use crate::rng;
use crate::tensor::{pairwise_sum, Scalar, Tensor};

/// One image in `[C,H,W]` row-major layout with pixels in `[0,1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image<S> {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<S>,
}

impl<S: Scalar> Image<S> {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<S>) -> Result<Self> {
        if channels * height * width != data.len() {
            return Err(Error::dim(format!(
                "image {channels}x{height}x{width} needs {} values, got {}",
                channels * height * width,
                data.len()
            )));
        }
        Ok(Image {
            channels,
            height,
            width,
            data,
        })
    }

    /// Extracts sample `i` of an `[N,C,H,W]` batch.
    pub fn from_batch(batch: &Tensor<S>, i: usize) -> Result<Self> {
        let sh = batch.shape();
        if sh.len() != 4 || i >= sh[0] {
            return Err(Error::dim(format!(
                "from_batch: index {i} in batch of shape {sh:?}"
            )));
        }
        let plane = sh[1] * sh[2] * sh[3];
        Image::new(
            sh[1],
            sh[2],
            sh[3],
            batch.data()[i * plane..(i + 1) * plane].to_vec(),
        )
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn into_data(self) -> Vec<S> {
        self.data
    }

    pub fn to_tensor(&self) -> Tensor<S> {
        Tensor::from_vec(
            vec![self.channels, self.height, self.width],
            self.data.clone(),
        )
        .expect("image dims are consistent")
    }

    fn at(&self, c: usize, y: usize, x: usize) -> S {
        self.data[(c * self.height + y) * self.width + x]
    }

    fn same_shape(&self, data: Vec<S>) -> Image<S> {
        Image {
            channels: self.channels,
            height: self.height,
            width: self.width,
            data,
        }
    }

    fn channel(&self, c: usize) -> &[S] {
        let plane = self.height * self.width;
        &self.data[c * plane..(c + 1) * plane]
    }
}

/// The strong-augmentation transform pool.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TransformKind {
    AutoContrast,
    Brightness,
    Color,
    Contrast,
    Equalize,
    Identity,
    Posterize,
    Rotate,
    Sharpness,
    ShearX,
    ShearY,
    Solarize,
    TranslateX,
    TranslateY,
}

pub const ALL_TRANSFORMS: [TransformKind; 14] = [
    TransformKind::AutoContrast,
    TransformKind::Brightness,
    TransformKind::Color,
    TransformKind::Contrast,
    TransformKind::Equalize,
    TransformKind::Identity,
    TransformKind::Posterize,
    TransformKind::Rotate,
    TransformKind::Sharpness,
    TransformKind::ShearX,
    TransformKind::ShearY,
    TransformKind::Solarize,
    TransformKind::TranslateX,
    TransformKind::TranslateY,
];

impl TransformKind {
    /// Magnitude interval the sampler draws from, or `None` for transforms
    /// without a free parameter. Posterize draws an integer bit count;
    /// rotation is in degrees; shear is a slope; translation is a fraction
    /// of the image extent.
    pub fn magnitude_range(self) -> Option<(f64, f64)> {
        use TransformKind::*;
        match self {
            AutoContrast | Equalize | Identity => None,
            Brightness | Color | Contrast | Sharpness => Some((0.05, 0.95)),
            Posterize => Some((4.0, 8.0)),
            Rotate => Some((-30.0, 30.0)),
            ShearX | ShearY => Some((-0.3, 0.3)),
            Solarize => Some((0.0, 1.0)),
            TranslateX | TranslateY => Some((-0.3, 0.3)),
        }
    }
}

fn clamp01<S: Scalar>(img: Image<S>) -> Image<S> {
    let one = S::one();
    let data = img
        .data
        .iter()
        .map(|&p| {
            if p < S::zero() {
                S::zero()
            } else if p > one {
                one
            } else {
                p
            }
        })
        .collect();
    Image { data, ..img }
}

fn quantize(p: f64) -> usize {
    (p * 255.0).round().clamp(0.0, 255.0) as usize
}

/// `img*f + degenerate*(1-f)` per pixel, ordered so `f = 1` reproduces the
/// input exactly.
fn blend<S: Scalar>(img: &Image<S>, degenerate: &Image<S>, f: f64) -> Image<S> {
    let fs = S::from_f64_lossy(f);
    let gs = S::from_f64_lossy(1.0 - f);
    let data = img
        .data
        .iter()
        .zip(&degenerate.data)
        .map(|(&p, &d)| p * fs + d * gs)
        .collect();
    img.same_shape(data)
}

/// Per-pixel luminance: BT.601 weights for three-channel images, the pixel
/// itself for single-channel, and the channel mean otherwise.
fn luma_plane<S: Scalar>(img: &Image<S>) -> Vec<S> {
    let plane = img.height * img.width;
    if img.channels == 3 {
        let (r, g, b) = (
            S::from_f64_lossy(0.299),
            S::from_f64_lossy(0.587),
            S::from_f64_lossy(0.114),
        );
        (0..plane)
            .map(|i| r * img.data[i] + g * img.data[plane + i] + b * img.data[2 * plane + i])
            .collect()
    } else if img.channels == 1 {
        img.data.clone()
    } else {
        let inv = S::from_f64_lossy(1.0 / img.channels as f64);
        (0..plane)
            .map(|i| {
                let mut acc = S::zero();
                for c in 0..img.channels {
                    acc = acc + img.data[c * plane + i];
                }
                acc * inv
            })
            .collect()
    }
}

fn autocontrast<S: Scalar>(img: &Image<S>) -> Image<S> {
    let plane = img.height * img.width;
    let mut data = img.data.clone();
    for c in 0..img.channels {
        let ch = &img.data[c * plane..(c + 1) * plane];
        let mut lo = S::infinity();
        let mut hi = S::neg_infinity();
        for &p in ch {
            lo = lo.min(p);
            hi = hi.max(p);
        }
        if hi > lo {
            let span = hi - lo;
            for (o, &p) in data[c * plane..(c + 1) * plane].iter_mut().zip(ch) {
                *o = (p - lo) / span;
            }
        }
    }
    img.same_shape(data)
}

fn equalize<S: Scalar>(img: &Image<S>) -> Image<S> {
    let plane = img.height * img.width;
    let mut data = img.data.clone();
    for c in 0..img.channels {
        let ch = &img.data[c * plane..(c + 1) * plane];
        let mut hist = [0u64; 256];
        for &p in ch {
            hist[quantize(p.to_f64_lossy())] += 1;
        }
        let nonzero: Vec<u64> = hist.iter().copied().filter(|&n| n != 0).collect();
        if nonzero.len() <= 1 {
            continue; // flat channel: nothing to spread
        }
        let total: u64 = nonzero.iter().sum();
        let step = (total - nonzero.last().unwrap()) / 255;
        if step == 0 {
            continue;
        }
        // Cumulative remap: level i goes to the (clamped) running count of
        // darker pixels divided by the step.
        let mut lut = [0u8; 256];
        let mut n = step / 2;
        for (i, slot) in lut.iter_mut().enumerate() {
            *slot = (n / step).min(255) as u8;
            n += hist[i];
        }
        for (o, &p) in data[c * plane..(c + 1) * plane].iter_mut().zip(ch) {
            *o = S::from_f64_lossy(lut[quantize(p.to_f64_lossy())] as f64 / 255.0);
        }
    }
    img.same_shape(data)
}

fn posterize<S: Scalar>(img: &Image<S>, bits: u32) -> Image<S> {
    let bits = bits.clamp(1, 8);
    if bits == 8 {
        // Keeping all 8 bits must be a true identity even for intensities
        // off the 1/255 grid, so skip the quantize round-trip entirely.
        return img.clone();
    }
    let mask = (0xFFu32 << (8 - bits)) as u8;
    let data = img
        .data
        .iter()
        .map(|&p| {
            let q = quantize(p.to_f64_lossy()) as u8 & mask;
            S::from_f64_lossy(q as f64 / 255.0)
        })
        .collect();
    img.same_shape(data)
}

fn solarize<S: Scalar>(img: &Image<S>, threshold: f64) -> Image<S> {
    let t = S::from_f64_lossy(threshold);
    let one = S::one();
    let data = img
        .data
        .iter()
        .map(|&p| if p > t { one - p } else { p })
        .collect();
    img.same_shape(data)
}

/// 3x3 smoothing used as the degenerate image for the sharpness blend:
/// kernel `[[1,1,1],[1,5,1],[1,1,1]]/13`, edges replicated.
fn smooth<S: Scalar>(img: &Image<S>) -> Image<S> {
    let (h, w) = (img.height as isize, img.width as isize);
    let thirteenth = S::from_f64_lossy(1.0 / 13.0);
    let five = S::from_f64_lossy(5.0);
    let mut data = Vec::with_capacity(img.data.len());
    for c in 0..img.channels {
        for y in 0..h {
            for x in 0..w {
                let mut acc = S::zero();
                for dy in -1..=1 {
                    for dx in -1..=1 {
                        let sy = (y + dy).clamp(0, h - 1) as usize;
                        let sx = (x + dx).clamp(0, w - 1) as usize;
                        let v = img.at(c, sy, sx);
                        acc = acc + if dy == 0 && dx == 0 { five * v } else { v };
                    }
                }
                data.push(acc * thirteenth);
            }
        }
    }
    img.same_shape(data)
}

/// Samples one channel at fractional coordinates with bilinear weights;
/// coordinates outside the image replicate the nearest edge pixel. Exact at
/// integer coordinates.
fn bilinear<S: Scalar>(plane: &[S], h: usize, w: usize, y: f64, x: f64) -> S {
    let y = y.clamp(0.0, (h - 1) as f64);
    let x = x.clamp(0.0, (w - 1) as f64);
    let y0 = y.floor() as usize;
    let x0 = x.floor() as usize;
    let y1 = (y0 + 1).min(h - 1);
    let x1 = (x0 + 1).min(w - 1);
    let fy = y - y0 as f64;
    let fx = x - x0 as f64;
    let w00 = S::from_f64_lossy((1.0 - fy) * (1.0 - fx));
    let w01 = S::from_f64_lossy((1.0 - fy) * fx);
    let w10 = S::from_f64_lossy(fy * (1.0 - fx));
    let w11 = S::from_f64_lossy(fy * fx);
    plane[y0 * w + x0] * w00
        + plane[y0 * w + x1] * w01
        + plane[y1 * w + x0] * w10
        + plane[y1 * w + x1] * w11
}

/// Resamples the image through an inverse map: for every output pixel the
/// map returns the source coordinates to sample.
fn warp<S: Scalar>(img: &Image<S>, map: impl Fn(f64, f64) -> (f64, f64)) -> Image<S> {
    let (h, w) = (img.height, img.width);
    let mut data = Vec::with_capacity(img.data.len());
    for c in 0..img.channels {
        let plane = img.channel(c);
        for y in 0..h {
            for x in 0..w {
                let (sy, sx) = map(y as f64, x as f64);
                data.push(bilinear(plane, h, w, sy, sx));
            }
        }
    }
    img.same_shape(data)
}

/// Applies one transform at the given magnitude and clamps back to `[0,1]`.
/// Magnitudes are interpreted per [`TransformKind::magnitude_range`]; the
/// parameterless transforms ignore the value.
pub fn apply_transform<S: Scalar>(
    img: &Image<S>,
    kind: TransformKind,
    magnitude: f64,
) -> Image<S> {
    let cy = (img.height - 1) as f64 / 2.0;
    let cx = (img.width - 1) as f64 / 2.0;
    let out = match kind {
        TransformKind::Identity => img.clone(),
        TransformKind::AutoContrast => autocontrast(img),
        TransformKind::Equalize => equalize(img),
        TransformKind::Brightness => {
            let black = img.same_shape(vec![S::zero(); img.data.len()]);
            blend(img, &black, magnitude)
        }
        TransformKind::Color => {
            if img.channels != 3 {
                img.clone() // saturation is undefined off RGB
            } else {
                let luma = luma_plane(img);
                let mut gray = Vec::with_capacity(img.data.len());
                for _ in 0..img.channels {
                    gray.extend_from_slice(&luma);
                }
                blend(img, &img.same_shape(gray), magnitude)
            }
        }
        TransformKind::Contrast => {
            let luma = luma_plane(img);
            let mean = pairwise_sum(&luma) / S::from_usize(luma.len()).unwrap();
            blend(img, &img.same_shape(vec![mean; img.data.len()]), magnitude)
        }
        TransformKind::Sharpness => blend(img, &smooth(img), magnitude),
        TransformKind::Posterize => posterize(img, magnitude.round() as u32),
        TransformKind::Solarize => solarize(img, magnitude),
        TransformKind::Rotate => {
            let rad = magnitude.to_radians();
            let (sin, cos) = rad.sin_cos();
            warp(img, |y, x| {
                let (dy, dx) = (y - cy, x - cx);
                (cy - sin * dx + cos * dy, cx + cos * dx + sin * dy)
            })
        }
        TransformKind::ShearX => warp(img, |y, x| (y, x + magnitude * (y - cy))),
        TransformKind::ShearY => warp(img, |y, x| (y + magnitude * (x - cx), x)),
        TransformKind::TranslateX => {
            let dx = magnitude * img.width as f64;
            warp(img, |y, x| (y, x - dx))
        }
        TransformKind::TranslateY => {
            let dy = magnitude * img.height as f64;
            warp(img, |y, x| (y - dy, x))
        }
    };
    clamp01(out)
}

/// Reflect-pad amount per side: one eighth of the extent, rounded up.
pub fn pad_amount(extent: usize) -> usize {
    extent.div_ceil(8)
}

/// Mirror an index into `[0, n)` without repeating the edge sample
/// (`..., 2, 1, 0, 1, 2, ...`).
fn reflect_index(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let mut i = i;
    let last = (n - 1) as isize;
    loop {
        if i < 0 {
            i = -i;
        } else if i > last {
            i = 2 * last - i;
        } else {
            return i as usize;
        }
    }
}

/// Weak-augmentation plan: optional horizontal flip, then a random crop out
/// of the reflect-padded image at offsets `(dy, dx)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WeakPlan {
    pub flip: bool,
    pub dy: usize,
    pub dx: usize,
}

impl WeakPlan {
    /// The plan that reproduces the input exactly: no flip, centered crop.
    pub fn identity(height: usize, width: usize) -> WeakPlan {
        WeakPlan {
            flip: false,
            dy: pad_amount(height),
            dx: pad_amount(width),
        }
    }
}

/// Draws a weak plan: flip with probability one half, crop offsets uniform
/// over the padded range.
pub fn sample_weak(rng: &mut impl Rng, height: usize, width: usize) -> WeakPlan {
    WeakPlan {
        flip: rng.gen_bool(0.5),
        dy: rng.gen_range(0..=2 * pad_amount(height)),
        dx: rng.gen_range(0..=2 * pad_amount(width)),
    }
}

/// Applies a weak plan. The pad-and-crop is fused into one gather through
/// the reflected index, so no padded intermediate is materialized.
pub fn apply_weak<S: Scalar>(img: &Image<S>, plan: &WeakPlan) -> Image<S> {
    let (h, w) = (img.height, img.width);
    let (py, px) = (pad_amount(h), pad_amount(w));
    let mut data = Vec::with_capacity(img.data.len());
    for c in 0..img.channels {
        for y in 0..h {
            let sy = reflect_index(y as isize + plan.dy as isize - py as isize, h);
            for x in 0..w {
                let mut sx = reflect_index(x as isize + plan.dx as isize - px as isize, w);
                if plan.flip {
                    sx = w - 1 - sx;
                }
                data.push(img.at(c, sy, sx));
            }
        }
    }
    img.same_shape(data)
}

/// One strong-pipeline step: a transform and its sampled magnitude.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StrongOp {
    pub kind: TransformKind,
    pub magnitude: f64,
}

/// Strong-augmentation plan: the sampled transform sequence plus an optional
/// cutout position (top-left corner of the erased square).
#[derive(Debug, Clone, PartialEq)]
pub struct StrongPlan {
    pub ops: Vec<StrongOp>,
    pub cutout: Option<(usize, usize)>,
}

/// Strong-pipeline configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StrongConfig {
    /// Transforms drawn per image (uniformly, with replacement).
    pub n_ops: usize,
    /// Whether to erase a random square afterwards.
    pub cutout: bool,
}

impl Default for StrongConfig {
    fn default() -> Self {
        StrongConfig {
            n_ops: 2,
            cutout: true,
        }
    }
}

/// Cutout square side: half the smaller image extent.
pub fn cutout_side(height: usize, width: usize) -> usize {
    height.min(width) / 2
}

/// Draws a strong plan: `n_ops` transforms uniformly with replacement, each
/// with a magnitude uniform over its range, and a cutout square placed fully
/// inside the image.
pub fn sample_strong(
    rng: &mut impl Rng,
    cfg: &StrongConfig,
    height: usize,
    width: usize,
) -> StrongPlan {
    let ops = (0..cfg.n_ops)
        .map(|_| {
            let kind = ALL_TRANSFORMS[rng.gen_range(0..ALL_TRANSFORMS.len())];
            let magnitude = match kind {
                TransformKind::Posterize => rng.gen_range(4..=8) as f64,
                _ => match kind.magnitude_range() {
                    Some((lo, hi)) => rng.gen_range(lo..=hi),
                    None => 0.0,
                },
            };
            StrongOp { kind, magnitude }
        })
        .collect();
    let cutout = cfg.cutout.then(|| {
        let side = cutout_side(height, width);
        (
            rng.gen_range(0..=height - side),
            rng.gen_range(0..=width - side),
        )
    });
    StrongPlan { ops, cutout }
}

/// Fills a `side x side` square at `(y0, x0)` with mid-gray on every channel.
pub fn apply_cutout<S: Scalar>(img: &Image<S>, y0: usize, x0: usize, side: usize) -> Image<S> {
    let fill = S::from_f64_lossy(0.5);
    let mut data = img.data.clone();
    let plane = img.height * img.width;
    for c in 0..img.channels {
        for y in y0..(y0 + side).min(img.height) {
            for x in x0..(x0 + side).min(img.width) {
                data[c * plane + y * img.width + x] = fill;
            }
        }
    }
    img.same_shape(data)
}

/// Applies a strong plan: the transform sequence in order, then cutout.
pub fn apply_strong<S: Scalar>(img: &Image<S>, plan: &StrongPlan) -> Image<S> {
    let mut out = img.clone();
    for op in &plan.ops {
        out = apply_transform(&out, op.kind, op.magnitude);
    }
    if let Some((y0, x0)) = plan.cutout {
        out = apply_cutout(&out, y0, x0, cutout_side(img.height, img.width));
    }
    out
}

fn batch_map<S: Scalar>(
    batch: &Tensor<S>,
    f: impl Fn(usize, Image<S>) -> Image<S> + Sync,
) -> Result<Tensor<S>> {
    let sh = batch.shape().to_vec();
    if sh.len() != 4 {
        return Err(Error::dim(format!("augment batch: shape {sh:?}")));
    }
    let rows = par::map_range(sh[0], |i| {
        let img = Image::from_batch(batch, i).expect("rank checked above");
        f(i, img).into_data()
    });
    let mut data = Vec::with_capacity(batch.numel());
    for r in rows {
        data.extend_from_slice(&r);
    }
    Tensor::from_vec(sh, data)
}

/// Weakly augments every sample of an `[N,C,H,W]` batch. The stream for
/// sample `i` is keyed by `(seed, domain, iteration, i)`; pass the domain
/// that matches the data role (labeled vs unlabeled).
pub fn augment_weak_batch<S: Scalar>(
    batch: &Tensor<S>,
    seed: u64,
    domain: u64,
    iteration: u64,
) -> Result<Tensor<S>> {
    let (h, w) = (batch.shape()[2], batch.shape()[3]);
    batch_map(batch, |i, img| {
        let mut r = rng::stream(seed, domain, iteration, i as u64);
        apply_weak(&img, &sample_weak(&mut r, h, w))
    })
}

/// Strongly augments every sample of an `[N,C,H,W]` batch. Streams are keyed
/// by `(seed, STRONG, iteration, sample)`.
pub fn augment_strong_batch<S: Scalar>(
    batch: &Tensor<S>,
    seed: u64,
    iteration: u64,
    cfg: &StrongConfig,
) -> Result<Tensor<S>> {
    let (h, w) = (batch.shape()[2], batch.shape()[3]);
    batch_map(batch, |i, img| {
        let mut r = rng::stream(seed, rng::DOMAIN_STRONG, iteration, i as u64);
        apply_strong(&img, &sample_strong(&mut r, cfg, h, w))
    })
}
