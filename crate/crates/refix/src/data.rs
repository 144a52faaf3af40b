//! Datasets and on-disk formats.
//!
//! Tensors are stored in a small self-describing binary format ("RFXT"):
//! a 4-byte magic, version byte, dtype byte (`0` = u8, `1` = f32 LE), rank
//! byte, rank x u32 LE extents, then the row-major payload. Datasets and
//! checkpoints are directories holding RFXT files plus a line-oriented
//! `key = value` manifest that records geometry and file mapping.
//!
//! Also here: class-balanced and long-tailed labeled/unlabeled splits, and
//! two deterministic synthetic-image generators (a 12-glyph shape corpus and
//! a two-class rendered point-cloud set) used by the experiments and tests.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::models::{Arch, ModelSpec, ModelState, ParamMap};
use crate::par;
use crate::rng;
use crate::tensor::{Scalar, Tensor};

const MAGIC: &[u8; 4] = b"RFXT";
const VERSION: u8 = 0x01;
const DTYPE_U8: u8 = 0;
const DTYPE_F32: u8 = 1;

/// Raw payload of an RFXT file.
#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    U8(Vec<u8>),
    F32(Vec<f32>),
}

/// A decoded RFXT tensor before any dtype conversion.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTensor {
    pub shape: Vec<usize>,
    pub payload: Payload,
}

impl RawTensor {
    /// Converts to a scalar tensor: u8 payloads are pixel bytes mapped to
    /// `[0,1]` via `v/255`; f32 payloads convert element-wise.
    pub fn into_scalar_tensor<S: Scalar>(self) -> Result<Tensor<S>> {
        let data: Vec<S> = match self.payload {
            Payload::U8(v) => v
                .into_iter()
                .map(|b| S::from_f64_lossy(b as f64 / 255.0))
                .collect(),
            Payload::F32(v) => v.into_iter().map(|x| S::from_f64_lossy(x as f64)).collect(),
        };
        Tensor::from_vec(self.shape, data)
    }

    /// Interprets a rank-1 u8 tensor as class labels.
    pub fn into_labels(self) -> Result<Vec<usize>> {
        if self.shape.len() != 1 {
            return Err(Error::format(format!(
                "labels must be rank 1, got shape {:?}",
                self.shape
            )));
        }
        match self.payload {
            Payload::U8(v) => Ok(v.into_iter().map(|b| b as usize).collect()),
            Payload::F32(_) => Err(Error::format("labels must have dtype u8, got f32")),
        }
    }
}

fn write_rfxt(path: &Path, shape: &[usize], dtype: u8, payload: &[u8]) -> Result<()> {
    if shape.len() > u8::MAX as usize {
        return Err(Error::format(format!("rank {} exceeds format", shape.len())));
    }
    let mut buf = Vec::with_capacity(7 + 4 * shape.len() + payload.len());
    buf.extend_from_slice(MAGIC);
    buf.push(VERSION);
    buf.push(dtype);
    buf.push(shape.len() as u8);
    for &e in shape {
        let e32 = u32::try_from(e)
            .map_err(|_| Error::format(format!("extent {e} exceeds u32 range")))?;
        buf.extend_from_slice(&e32.to_le_bytes());
    }
    buf.extend_from_slice(payload);
    fs::write(path, buf)?;
    Ok(())
}

/// Writes a u8 tensor (labels, byte images).
pub fn write_rfxt_u8(path: &Path, shape: &[usize], data: &[u8]) -> Result<()> {
    check_count(shape, data.len())?;
    write_rfxt(path, shape, DTYPE_U8, data)
}

/// Writes an f32 tensor (images, parameters) in little-endian order.
pub fn write_rfxt_f32(path: &Path, shape: &[usize], data: &[f32]) -> Result<()> {
    check_count(shape, data.len())?;
    let mut payload = Vec::with_capacity(4 * data.len());
    for &v in data {
        payload.extend_from_slice(&v.to_le_bytes());
    }
    write_rfxt(path, shape, DTYPE_F32, &payload)
}

/// Writes any scalar tensor at f32 precision.
pub fn write_tensor<S: Scalar>(path: &Path, t: &Tensor<S>) -> Result<()> {
    let data: Vec<f32> = t.data().iter().map(|&v| v.to_f64_lossy() as f32).collect();
    write_rfxt_f32(path, t.shape(), &data)
}

fn check_count(shape: &[usize], len: usize) -> Result<()> {
    let numel: usize = shape.iter().product();
    if numel != len {
        return Err(Error::dim(format!(
            "shape {shape:?} implies {numel} elements, got {len}"
        )));
    }
    Ok(())
}

/// Wraps an io failure with the path it happened on; a bare "no such file"
/// is useless once several datasets are in play.
fn io_at(path: &Path, e: std::io::Error) -> Error {
    Error::Io(std::io::Error::new(
        e.kind(),
        format!("{}: {e}", path.display()),
    ))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| io_at(path, e))
}

/// Reads and validates one RFXT file. Errors carry the byte offset of the
/// first malformed field.
pub fn read_rfxt(path: &Path) -> Result<RawTensor> {
    let bytes = fs::read(path).map_err(|e| io_at(path, e))?;
    let fail = |off: usize, what: &str| {
        Error::format(format!("{}: {what} at offset {off}", path.display()))
    };
    if bytes.len() < 7 {
        return Err(fail(bytes.len(), "file shorter than header"));
    }
    if &bytes[0..4] != MAGIC {
        return Err(fail(0, "bad magic (want RFXT)"));
    }
    if bytes[4] != VERSION {
        return Err(fail(4, &format!("unsupported version {}", bytes[4])));
    }
    let dtype = bytes[5];
    if dtype != DTYPE_U8 && dtype != DTYPE_F32 {
        return Err(fail(5, &format!("unknown dtype {dtype}")));
    }
    let ndim = bytes[6] as usize;
    let header = 7 + 4 * ndim;
    if bytes.len() < header {
        return Err(fail(7, "truncated extent list"));
    }
    let mut shape = Vec::with_capacity(ndim);
    for d in 0..ndim {
        let off = 7 + 4 * d;
        let e = u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap());
        shape.push(e as usize);
    }
    let numel: usize = shape.iter().product();
    let elem = if dtype == DTYPE_U8 { 1 } else { 4 };
    let expected = numel * elem;
    if bytes.len() != header + expected {
        return Err(fail(
            header,
            &format!(
                "payload of {} bytes, expected {expected} for shape {shape:?}",
                bytes.len() - header
            ),
        ));
    }
    let payload = match dtype {
        DTYPE_U8 => Payload::U8(bytes[header..].to_vec()),
        _ => Payload::F32(
            bytes[header..]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        ),
    };
    Ok(RawTensor { shape, payload })
}

// ---------------------------------------------------------------------------
// Manifests

fn parse_manifest(text: &str, origin: &Path) -> Result<BTreeMap<String, String>> {
    let mut kv = BTreeMap::new();
    for (ln, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(Error::format(format!(
                "{}:{}: expected `key = value`, got `{line}`",
                origin.display(),
                ln + 1
            )));
        };
        let (k, v) = (k.trim().to_string(), v.trim().to_string());
        if kv.insert(k.clone(), v).is_some() {
            return Err(Error::format(format!(
                "{}:{}: duplicate key `{k}`",
                origin.display(),
                ln + 1
            )));
        }
    }
    Ok(kv)
}

fn req<'m>(kv: &'m BTreeMap<String, String>, key: &str, origin: &Path) -> Result<&'m str> {
    kv.get(key)
        .map(String::as_str)
        .ok_or_else(|| Error::format(format!("{}: missing key `{key}`", origin.display())))
}

fn req_usize(kv: &BTreeMap<String, String>, key: &str, origin: &Path) -> Result<usize> {
    let raw = req(kv, key, origin)?;
    raw.parse().map_err(|_| {
        Error::format(format!(
            "{}: key `{key}` must be an integer, got `{raw}`",
            origin.display()
        ))
    })
}

// ---------------------------------------------------------------------------
// Datasets

/// An image classification dataset. `labels` are visible training targets;
/// `hidden_labels` ride along with unlabeled data for diagnostics only (the
/// trainer never reads them).
#[derive(Debug, Clone)]
pub struct Dataset<S: Scalar> {
    pub images: Tensor<S>,
    pub labels: Option<Vec<usize>>,
    pub hidden_labels: Option<Vec<usize>>,
    pub classes: usize,
}

impl<S: Scalar> Dataset<S> {
    pub fn len(&self) -> usize {
        self.images.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn validate(&self) -> Result<()> {
        let sh = self.images.shape();
        if sh.len() != 4 {
            return Err(Error::data(format!("images must be [N,C,H,W], got {sh:?}")));
        }
        if self.classes < 2 {
            return Err(Error::data(format!("need >= 2 classes, got {}", self.classes)));
        }
        for (name, ls) in [("labels", &self.labels), ("hidden_labels", &self.hidden_labels)] {
            if let Some(ls) = ls {
                if ls.len() != sh[0] {
                    return Err(Error::data(format!(
                        "{name}: {} entries for {} images",
                        ls.len(),
                        sh[0]
                    )));
                }
                if let Some(&bad) = ls.iter().find(|&&l| l >= self.classes) {
                    return Err(Error::data(format!(
                        "{name}: label {bad} out of range for {} classes",
                        self.classes
                    )));
                }
            }
        }
        Ok(())
    }

    /// Gathers the given sample indices into a fresh `[B,C,H,W]` tensor.
    pub fn gather_images(&self, idx: &[usize]) -> Result<Tensor<S>> {
        let sh = self.images.shape();
        let plane = sh[1] * sh[2] * sh[3];
        let mut data = Vec::with_capacity(idx.len() * plane);
        for &i in idx {
            if i >= sh[0] {
                return Err(Error::data(format!("sample index {i} out of {}", sh[0])));
            }
            data.extend_from_slice(&self.images.data()[i * plane..(i + 1) * plane]);
        }
        Tensor::from_vec(vec![idx.len(), sh[1], sh[2], sh[3]], data)
    }

    /// New dataset restricted to the given indices (labels follow along).
    pub fn subset(&self, idx: &[usize]) -> Result<Dataset<S>> {
        let pick = |ls: &Option<Vec<usize>>| ls.as_ref().map(|v| idx.iter().map(|&i| v[i]).collect());
        Ok(Dataset {
            images: self.gather_images(idx)?,
            labels: pick(&self.labels),
            hidden_labels: pick(&self.hidden_labels),
            classes: self.classes,
        })
    }

    /// Moves visible labels out of the training signal: they become hidden
    /// diagnostics and the dataset reads as unlabeled.
    pub fn into_unlabeled(mut self) -> Dataset<S> {
        if self.labels.is_some() {
            self.hidden_labels = self.labels.take();
        }
        self
    }

    /// Writes `manifest`, `images.rfxt`, and label files into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        self.validate()?;
        if self.classes > 256 {
            return Err(Error::data(format!(
                "labels are stored as bytes; {} classes exceed 256",
                self.classes
            )));
        }
        fs::create_dir_all(dir)?;
        let sh = self.images.shape();
        write_tensor(&dir.join("images.rfxt"), &self.images)?;
        let mut manifest = String::new();
        manifest.push_str("kind = dataset\n");
        manifest.push_str(&format!("classes = {}\n", self.classes));
        manifest.push_str(&format!("channels = {}\n", sh[1]));
        manifest.push_str(&format!("height = {}\n", sh[2]));
        manifest.push_str(&format!("width = {}\n", sh[3]));
        manifest.push_str("images = images.rfxt\n");
        for (key, file, ls) in [
            ("labels", "labels.rfxt", &self.labels),
            ("hidden_labels", "hidden_labels.rfxt", &self.hidden_labels),
        ] {
            if let Some(ls) = ls {
                let bytes: Vec<u8> = ls.iter().map(|&l| l as u8).collect();
                write_rfxt_u8(&dir.join(file), &[bytes.len()], &bytes)?;
                manifest.push_str(&format!("{key} = {file}\n"));
            }
        }
        fs::write(dir.join("manifest"), manifest)?;
        Ok(())
    }

    /// Loads a dataset directory, validating geometry against the manifest.
    pub fn load(dir: &Path) -> Result<Dataset<S>> {
        let mpath = dir.join("manifest");
        let kv = parse_manifest(&read_text(&mpath)?, &mpath)?;
        if req(&kv, "kind", &mpath)? != "dataset" {
            return Err(Error::format(format!(
                "{}: kind is not `dataset`",
                mpath.display()
            )));
        }
        let classes = req_usize(&kv, "classes", &mpath)?;
        let want = [
            req_usize(&kv, "channels", &mpath)?,
            req_usize(&kv, "height", &mpath)?,
            req_usize(&kv, "width", &mpath)?,
        ];
        let images = read_rfxt(&dir.join(req(&kv, "images", &mpath)?))?
            .into_scalar_tensor::<S>()?;
        let sh = images.shape().to_vec();
        if sh.len() != 4 || sh[1..] != want {
            return Err(Error::data(format!(
                "images {sh:?} do not match manifest [N, {}, {}, {}]",
                want[0], want[1], want[2]
            )));
        }
        let read_labels = |key: &str| -> Result<Option<Vec<usize>>> {
            match kv.get(key) {
                None => Ok(None),
                Some(file) => Ok(Some(read_rfxt(&dir.join(file))?.into_labels()?)),
            }
        };
        let ds = Dataset {
            images,
            labels: read_labels("labels")?,
            hidden_labels: read_labels("hidden_labels")?,
            classes,
        };
        ds.validate()?;
        Ok(ds)
    }
}

// ---------------------------------------------------------------------------
// Checkpoints

/// A trained model restored from disk.
pub struct Checkpoint<S: Scalar> {
    pub state: ModelState<S>,
    pub iteration: u64,
}

fn arch_to_manifest(spec: &ModelSpec, out: &mut String) {
    match &spec.arch {
        Arch::Mlp { hidden } => {
            out.push_str("arch = mlp\n");
            let widths: Vec<String> = hidden.iter().map(|h| h.to_string()).collect();
            out.push_str(&format!("hidden = {}\n", widths.join(",")));
        }
        Arch::SmallConv { c1, c2 } => {
            out.push_str("arch = smallconv\n");
            out.push_str(&format!("c1 = {c1}\n"));
            out.push_str(&format!("c2 = {c2}\n"));
        }
    }
    out.push_str(&format!("in_channels = {}\n", spec.in_channels));
    out.push_str(&format!("height = {}\n", spec.height));
    out.push_str(&format!("width = {}\n", spec.width));
    out.push_str(&format!("classes = {}\n", spec.classes));
}

fn arch_from_manifest(kv: &BTreeMap<String, String>, origin: &Path) -> Result<ModelSpec> {
    let arch = match req(kv, "arch", origin)? {
        "mlp" => {
            let raw = req(kv, "hidden", origin)?;
            let hidden = raw
                .split(',')
                .filter(|s| !s.trim().is_empty())
                .map(|s| {
                    s.trim().parse::<usize>().map_err(|_| {
                        Error::format(format!(
                            "{}: bad hidden width `{s}`",
                            origin.display()
                        ))
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Arch::Mlp { hidden }
        }
        "smallconv" => Arch::SmallConv {
            c1: req_usize(kv, "c1", origin)?,
            c2: req_usize(kv, "c2", origin)?,
        },
        other => {
            return Err(Error::format(format!(
                "{}: unknown arch `{other}`",
                origin.display()
            )))
        }
    };
    Ok(ModelSpec {
        arch,
        in_channels: req_usize(kv, "in_channels", origin)?,
        height: req_usize(kv, "height", origin)?,
        width: req_usize(kv, "width", origin)?,
        classes: req_usize(kv, "classes", origin)?,
    })
}

/// Saves model weights and their EMA shadow (not optimizer momentum) plus
/// the architecture needed to rebuild the model.
pub fn save_checkpoint<S: Scalar>(
    dir: &Path,
    state: &ModelState<S>,
    iteration: u64,
) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut manifest = String::from("kind = checkpoint\n");
    arch_to_manifest(&state.spec, &mut manifest);
    manifest.push_str(&format!("iteration = {iteration}\n"));
    for (prefix, map) in [("param", &state.params), ("ema", &state.ema)] {
        for (name, tensor) in map {
            let file = format!("{prefix}.{name}.rfxt");
            write_tensor(&dir.join(&file), tensor)?;
            manifest.push_str(&format!("tensor.{prefix}.{name} = {file}\n"));
        }
    }
    fs::write(dir.join("manifest"), manifest)?;
    Ok(())
}

/// Restores a checkpoint. Momentum buffers start at zero.
pub fn load_checkpoint<S: Scalar>(dir: &Path) -> Result<Checkpoint<S>> {
    let mpath = dir.join("manifest");
    let kv = parse_manifest(&read_text(&mpath)?, &mpath)?;
    if req(&kv, "kind", &mpath)? != "checkpoint" {
        return Err(Error::format(format!(
            "{}: kind is not `checkpoint`",
            mpath.display()
        )));
    }
    let spec = arch_from_manifest(&kv, &mpath)?;
    spec.validate()?;
    let iteration = req(&kv, "iteration", &mpath)?
        .parse::<u64>()
        .map_err(|_| Error::format(format!("{}: bad iteration", mpath.display())))?;
    let mut params = ParamMap::new();
    let mut ema = ParamMap::new();
    for (key, file) in &kv {
        let Some(rest) = key.strip_prefix("tensor.") else {
            continue;
        };
        let tensor = read_rfxt(&dir.join(file))?.into_scalar_tensor::<S>()?;
        if let Some(name) = rest.strip_prefix("param.") {
            params.insert(name.to_string(), tensor);
        } else if let Some(name) = rest.strip_prefix("ema.") {
            ema.insert(name.to_string(), tensor);
        } else {
            return Err(Error::format(format!(
                "{}: unknown tensor group in `{key}`",
                mpath.display()
            )));
        }
    }
    let names_match = params.len() == ema.len()
        && params.keys().zip(ema.keys()).all(|(a, b)| a == b);
    if params.is_empty() || !names_match {
        return Err(Error::format(format!(
            "{}: param/ema tensor sets are empty or inconsistent",
            mpath.display()
        )));
    }
    for (name, p) in &params {
        if ema[name].shape() != p.shape() {
            return Err(Error::data(format!(
                "checkpoint tensor {name}: param {:?} vs ema {:?}",
                p.shape(),
                ema[name].shape()
            )));
        }
    }
    let velocity: ParamMap<S> = params
        .iter()
        .map(|(k, v)| (k.clone(), Tensor::zeros(v.shape())))
        .collect();
    Ok(Checkpoint {
        state: ModelState {
            spec,
            params,
            ema,
            velocity,
        },
        iteration,
    })
}

// ---------------------------------------------------------------------------
// Splits

fn indices_by_class(labels: &[usize], classes: usize) -> Vec<Vec<usize>> {
    let mut by_class = vec![Vec::new(); classes];
    for (i, &l) in labels.iter().enumerate() {
        by_class[l].push(i);
    }
    by_class
}

/// Splits into a class-balanced labeled set (`per_class` samples of every
/// class, shuffled per class by a seed-derived stream) and the remainder.
/// Both halves come back sorted by original index.
pub fn balanced_split(
    labels: &[usize],
    classes: usize,
    per_class: usize,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if labels.iter().any(|&l| l >= classes) {
        return Err(Error::data("label out of class range"));
    }
    let mut labeled = Vec::with_capacity(per_class * classes);
    let mut rest = Vec::new();
    for (c, mut idx) in indices_by_class(labels, classes).into_iter().enumerate() {
        if idx.len() < per_class {
            return Err(Error::data(format!(
                "class {c} has {} samples, need {per_class}",
                idx.len()
            )));
        }
        idx.shuffle(&mut rng::stream(seed, rng::DOMAIN_SPLIT, c as u64, 0));
        labeled.extend_from_slice(&idx[..per_class]);
        rest.extend_from_slice(&idx[per_class..]);
    }
    labeled.sort_unstable();
    rest.sort_unstable();
    Ok((labeled, rest))
}

/// Geometric long-tail class sizes: class `k` (zero-based) keeps
/// `n1 * lambda^(-k/(L-1))` samples, rounded to nearest, at least 1.
pub fn long_tailed_counts(n1: usize, lambda: f64, classes: usize) -> Result<Vec<usize>> {
    if classes < 2 {
        return Err(Error::contract("long tail needs >= 2 classes"));
    }
    if !(lambda >= 1.0) {
        return Err(Error::contract(format!(
            "imbalance ratio must be >= 1, got {lambda}"
        )));
    }
    Ok((0..classes)
        .map(|k| {
            let frac = k as f64 / (classes - 1) as f64;
            ((n1 as f64 * lambda.powf(-frac)).round() as usize).max(1)
        })
        .collect())
}

/// Long-tailed split: class `k` contributes `N_k` samples total (per
/// [`long_tailed_counts`]), of which `round(beta * N_k)` are labeled and the
/// rest unlabeled. Classes must have at least `N_k` samples available.
pub fn long_tailed_split(
    labels: &[usize],
    classes: usize,
    n1: usize,
    lambda: f64,
    beta: f64,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(0.0..=1.0).contains(&beta) {
        return Err(Error::contract(format!(
            "labeled fraction must be in [0,1], got {beta}"
        )));
    }
    if labels.iter().any(|&l| l >= classes) {
        return Err(Error::data("label out of class range"));
    }
    let counts = long_tailed_counts(n1, lambda, classes)?;
    let mut labeled = Vec::new();
    let mut unlabeled = Vec::new();
    for (c, mut idx) in indices_by_class(labels, classes).into_iter().enumerate() {
        let keep = counts[c];
        if idx.len() < keep {
            return Err(Error::data(format!(
                "class {c} has {} samples, long tail needs {keep}",
                idx.len()
            )));
        }
        idx.shuffle(&mut rng::stream(seed, rng::DOMAIN_SPLIT, c as u64, 1));
        let n_lab = (beta * keep as f64).round() as usize;
        labeled.extend_from_slice(&idx[..n_lab]);
        unlabeled.extend_from_slice(&idx[n_lab..keep]);
    }
    labeled.sort_unstable();
    unlabeled.sort_unstable();
    Ok((labeled, unlabeled))
}

// ---------------------------------------------------------------------------
// Synthetic generators

/// Standard normal draw (Box-Muller over two uniforms).
fn gauss(rng: &mut impl Rng) -> f64 {
    let u1: f64 = 1.0 - rng.gen::<f64>(); // (0, 1]
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Number of glyph families in the shape corpus.
pub const GLYPH_COUNT: usize = 12;

fn sd_box(dy: f64, dx: f64, by: f64, bx: f64) -> f64 {
    let qy = dy.abs() - by;
    let qx = dx.abs() - bx;
    let oy = qy.max(0.0);
    let ox = qx.max(0.0);
    (ox * ox + oy * oy).sqrt() + qy.max(qx).min(0.0)
}

fn sd_disc(dy: f64, dx: f64, r: f64) -> f64 {
    (dx * dx + dy * dy).sqrt() - r
}

fn sd_triangle(dy: f64, dx: f64, r: f64) -> f64 {
    // Point-up triangle as an intersection of three half planes (max of
    // signed edge distances; exact enough for one-pixel antialiasing).
    let verts = [(-r, 0.0), (0.7 * r, 0.9 * r), (0.7 * r, -0.9 * r)];
    let mut d = f64::NEG_INFINITY;
    for i in 0..3 {
        let (ay, ax) = verts[i];
        let (by, bx) = verts[(i + 1) % 3];
        let (ey, ex) = (by - ay, bx - ax);
        let (py, px) = (dy - ay, dx - ax);
        let cross = ex * py - ey * px;
        d = d.max(-cross / (ex * ex + ey * ey).sqrt());
    }
    d
}

/// Signed distance (in pixels) from the centered offset `(dy, dx)` to glyph
/// family `g` of nominal radius `r`.
fn glyph_distance(g: usize, dy: f64, dx: f64, r: f64) -> f64 {
    match g {
        0 => sd_box(dy, dx, 0.28 * r, r),                       // horizontal bar
        1 => sd_box(dy, dx, r, 0.28 * r),                       // vertical bar
        2 => (sd_disc(dy, dx, 0.0) - 0.8 * r).abs() - 0.22 * r, // ring
        3 => sd_disc(dy, dx, 0.85 * r),                         // disc
        4 => sd_box(dy, dx, 0.22 * r, r).min(sd_box(dy, dx, r, 0.22 * r)), // cross
        5 => {
            // saltire: the cross rotated 45 degrees
            let inv = std::f64::consts::FRAC_1_SQRT_2;
            let (uy, ux) = ((dy + dx) * inv, (dx - dy) * inv);
            sd_box(uy, ux, 0.22 * r, r).min(sd_box(uy, ux, r, 0.22 * r))
        }
        6 => sd_box(dy, dx, 0.75 * r, 0.75 * r).abs() - 0.18 * r, // square outline
        7 => sd_triangle(dy, dx, r),
        8 => sd_box(dy - 0.5 * r, dx, 0.18 * r, 0.85 * r)
            .min(sd_box(dy + 0.5 * r, dx, 0.18 * r, 0.85 * r)), // two bars
        9 => {
            // three dots on a circle
            let mut d = f64::INFINITY;
            for ang in [0.5f64, 2.5943951023931953, 4.68879020478639] {
                // 2*pi/3 apart
                let (cy, cx) = (0.55 * r * ang.sin(), 0.55 * r * ang.cos());
                d = d.min(sd_disc(dy - cy, dx - cx, 0.3 * r));
            }
            d
        }
        10 => sd_box(dy, dx + 0.55 * r, r, 0.22 * r)
            .min(sd_box(dy - 0.55 * r, dx, 0.22 * r, r)), // L corner
        11 => sd_box(dy + 0.45 * r, dx + 0.45 * r, 0.4 * r, 0.4 * r)
            .min(sd_box(dy - 0.45 * r, dx - 0.45 * r, 0.4 * r, 0.4 * r)), // checker
        _ => unreachable!("glyph id out of range"),
    }
}

const SHAPE_FG: f64 = 0.9;
const SHAPE_BG: f64 = 0.1;
// Noise and placement spread are deliberately coarse: a low-label learner
// should face genuinely ambiguous samples, not a margin-heavy toy.
const SHAPE_NOISE: f64 = 0.12;
const SHAPE_JITTER: f64 = 0.18;

/// Generates `n` single-channel `size x size` glyph images with uniformly
/// drawn labels. Per sample: class-defining glyph at radius
/// `0.35*size*scale` with `scale ~ U(0.7, 1.15)`, center jitter
/// `U(-0.18, 0.18)*size` per axis, antialiased coverage between background
/// 0.1 and foreground 0.9, then Gaussian pixel noise (sigma 0.12), clamped
/// to `[0,1]`. Sample `i` depends only on `(seed, i)`.
pub fn gen_shapes<S: Scalar>(
    seed: u64,
    n: usize,
    classes: usize,
    size: usize,
) -> Result<Dataset<S>> {
    if !(2..=GLYPH_COUNT).contains(&classes) {
        return Err(Error::contract(format!(
            "shape corpus supports 2..={GLYPH_COUNT} classes, got {classes}"
        )));
    }
    if size < 8 {
        return Err(Error::contract(format!("size {size} too small, need >= 8")));
    }
    let samples = par::map_range(n, |i| {
        let mut r = rng::stream(seed, rng::DOMAIN_GEN, i as u64, 0);
        let label = r.gen_range(0..classes);
        let scale = r.gen_range(0.7..1.15);
        let jy = r.gen_range(-SHAPE_JITTER..SHAPE_JITTER) * size as f64;
        let jx = r.gen_range(-SHAPE_JITTER..SHAPE_JITTER) * size as f64;
        let radius = 0.35 * size as f64 * scale;
        let cy = (size - 1) as f64 / 2.0 + jy;
        let cx = (size - 1) as f64 / 2.0 + jx;
        let mut pixels = Vec::with_capacity(size * size);
        for y in 0..size {
            for x in 0..size {
                let d = glyph_distance(label, y as f64 - cy, x as f64 - cx, radius);
                let cov = (0.5 - d).clamp(0.0, 1.0);
                let v = SHAPE_BG + (SHAPE_FG - SHAPE_BG) * cov + SHAPE_NOISE * gauss(&mut r);
                pixels.push(S::from_f64_lossy(v.clamp(0.0, 1.0)));
            }
        }
        (pixels, label)
    });
    let mut data = Vec::with_capacity(n * size * size);
    let mut labels = Vec::with_capacity(n);
    for (pixels, label) in samples {
        data.extend_from_slice(&pixels);
        labels.push(label);
    }
    Ok(Dataset {
        images: Tensor::from_vec(vec![n, 1, size, size], data)?,
        labels: Some(labels),
        hidden_labels: None,
        classes,
    })
}

const MOON_POINTS: usize = 48;
const MOON_NOISE: f64 = 0.08;
const MOON_X: (f64, f64) = (-1.3, 2.3);
const MOON_Y: (f64, f64) = (-0.8, 1.3);

/// Generates two-class images of rendered point clouds: each image splats
/// noisy points from one of two interleaved crescent distributions. The
/// class count is fixed at 2.
pub fn gen_moons<S: Scalar>(
    seed: u64,
    n: usize,
    classes: usize,
    size: usize,
) -> Result<Dataset<S>> {
    if classes != 2 {
        return Err(Error::contract(format!(
            "crescent corpus is two-class, got {classes}"
        )));
    }
    if size < 8 {
        return Err(Error::contract(format!("size {size} too small, need >= 8")));
    }
    let samples = par::map_range(n, |i| {
        let mut r = rng::stream(seed, rng::DOMAIN_GEN, i as u64, 1);
        let label = r.gen_range(0..2usize);
        let mut pixels = vec![0.0f64; size * size];
        for _ in 0..MOON_POINTS {
            let t = r.gen_range(0.0..std::f64::consts::PI);
            let nx = MOON_NOISE * gauss(&mut r);
            let ny = MOON_NOISE * gauss(&mut r);
            let (x, y) = if label == 0 {
                (t.cos() + nx, t.sin() + ny)
            } else {
                (1.0 - t.cos() + nx, 0.5 - t.sin() + ny)
            };
            let px = (x - MOON_X.0) / (MOON_X.1 - MOON_X.0) * (size - 1) as f64;
            let py = (MOON_Y.1 - y) / (MOON_Y.1 - MOON_Y.0) * (size - 1) as f64;
            let (y0, y1) = splat_range(py, size);
            let (x0, x1) = splat_range(px, size);
            for iy in y0..=y1 {
                for ix in x0..=x1 {
                    let d2 = (iy as f64 - py).powi(2) + (ix as f64 - px).powi(2);
                    pixels[iy * size + ix] += 0.85 * (-d2 / (2.0 * 0.7 * 0.7)).exp();
                }
            }
        }
        let pixels: Vec<S> = pixels
            .into_iter()
            .map(|v| S::from_f64_lossy(v.clamp(0.0, 1.0)))
            .collect();
        (pixels, label)
    });
    let mut data = Vec::with_capacity(n * size * size);
    let mut labels = Vec::with_capacity(n);
    for (pixels, label) in samples {
        data.extend_from_slice(&pixels);
        labels.push(label);
    }
    Ok(Dataset {
        images: Tensor::from_vec(vec![n, 1, size, size], data)?,
        labels: Some(labels),
        hidden_labels: None,
        classes: 2,
    })
}

fn splat_range(center: f64, size: usize) -> (usize, usize) {
    let lo = (center - 2.5).floor().max(0.0) as usize;
    let hi = (center + 2.5).ceil().min((size - 1) as f64) as usize;
    (lo.min(size - 1), hi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn rfxt_f32_roundtrip_and_exact_size() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("t.rfxt");
        write_rfxt_f32(&p, &[2, 2], &[1.0, -0.5, 0.25, 3.0]).unwrap();
        // 4 magic + 1 version + 1 dtype + 1 rank + 2*4 extents + 4*4 payload
        assert_eq!(fs::metadata(&p).unwrap().len(), 31);
        let rt = read_rfxt(&p).unwrap();
        assert_eq!(rt.shape, vec![2, 2]);
        assert_eq!(rt.payload, Payload::F32(vec![1.0, -0.5, 0.25, 3.0]));
    }

    #[test]
    fn rfxt_u8_roundtrip_and_label_view() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("l.rfxt");
        write_rfxt_u8(&p, &[3], &[0, 2, 1]).unwrap();
        let labels = read_rfxt(&p).unwrap().into_labels().unwrap();
        assert_eq!(labels, vec![0, 2, 1]);
    }

    #[test]
    fn rfxt_u8_maps_bytes_to_unit_interval() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("img.rfxt");
        write_rfxt_u8(&p, &[2], &[0, 255]).unwrap();
        let t = read_rfxt(&p).unwrap().into_scalar_tensor::<f32>().unwrap();
        assert_eq!(t.data(), &[0.0, 1.0]);
    }

    #[test]
    fn rfxt_errors_name_the_offset() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("bad.rfxt");

        fs::write(&p, b"NOPE\x01\x01\x01\x02\x00\x00\x00").unwrap();
        let msg = read_rfxt(&p).unwrap_err().to_string();
        assert!(msg.contains("offset 0"), "{msg}");

        fs::write(&p, b"RFXT\x01\x07\x01\x02\x00\x00\x00").unwrap();
        let msg = read_rfxt(&p).unwrap_err().to_string();
        assert!(msg.contains("dtype 7") && msg.contains("offset 5"), "{msg}");

        // Declared 2 elements of f32 but carries only 4 payload bytes.
        let mut buf = b"RFXT\x01\x01\x01\x02\x00\x00\x00".to_vec();
        buf.extend_from_slice(&1.0f32.to_le_bytes());
        fs::write(&p, buf).unwrap();
        let msg = read_rfxt(&p).unwrap_err().to_string();
        assert!(msg.contains("expected 8") && msg.contains("offset 11"), "{msg}");
    }

    fn tiny_dataset() -> Dataset<f32> {
        Dataset {
            images: Tensor::from_vec(
                vec![4, 1, 2, 2],
                (0..16).map(|i| i as f32 / 16.0).collect(),
            )
            .unwrap(),
            labels: Some(vec![0, 1, 0, 1]),
            hidden_labels: None,
            classes: 2,
        }
    }

    #[test]
    fn dataset_save_load_roundtrip() {
        let dir = tempdir().unwrap();
        let ds = tiny_dataset();
        ds.save(dir.path()).unwrap();
        let back: Dataset<f32> = Dataset::load(dir.path()).unwrap();
        assert_eq!(back.images.data(), ds.images.data());
        assert_eq!(back.labels, ds.labels);
        assert_eq!(back.classes, 2);
        assert!(back.hidden_labels.is_none());
    }

    #[test]
    fn unlabeled_conversion_hides_labels() {
        let ds = tiny_dataset().into_unlabeled();
        assert!(ds.labels.is_none());
        assert_eq!(ds.hidden_labels, Some(vec![0, 1, 0, 1]));
    }

    #[test]
    fn dataset_load_rejects_geometry_mismatch() {
        let dir = tempdir().unwrap();
        tiny_dataset().save(dir.path()).unwrap();
        // Rewrite the manifest claiming a different height.
        let mpath = dir.path().join("manifest");
        let text = fs::read_to_string(&mpath)
            .unwrap()
            .replace("height = 2", "height = 3");
        fs::write(&mpath, text).unwrap();
        assert!(Dataset::<f32>::load(dir.path()).is_err());
    }

    #[test]
    fn dataset_validate_rejects_out_of_range_labels() {
        let mut ds = tiny_dataset();
        ds.labels = Some(vec![0, 1, 2, 1]);
        assert!(ds.validate().is_err());
    }

    #[test]
    fn subset_gathers_images_and_labels() {
        let ds = tiny_dataset();
        let sub = ds.subset(&[2, 0]).unwrap();
        assert_eq!(sub.len(), 2);
        assert_eq!(sub.labels, Some(vec![0, 0]));
        assert_eq!(&sub.images.data()[..4], &ds.images.data()[8..12]);
    }

    #[test]
    fn checkpoint_roundtrip_preserves_weights_and_spec() {
        let dir = tempdir().unwrap();
        let spec = ModelSpec {
            arch: Arch::Mlp { hidden: vec![5] },
            in_channels: 1,
            height: 3,
            width: 3,
            classes: 2,
        };
        let state = crate::models::init::<f32>(&spec, 123).unwrap();
        save_checkpoint(dir.path(), &state, 777).unwrap();
        let back = load_checkpoint::<f32>(dir.path()).unwrap();
        assert_eq!(back.iteration, 777);
        assert_eq!(back.state.spec, spec);
        for (k, v) in &state.params {
            assert_eq!(back.state.params[k].data(), v.data(), "{k}");
            assert_eq!(back.state.ema[k].data(), state.ema[k].data(), "{k}");
            assert!(back.state.velocity[k].data().iter().all(|&x| x == 0.0));
        }
    }

    #[test]
    fn balanced_split_is_balanced_disjoint_and_deterministic() {
        let labels: Vec<usize> = (0..100).map(|i| i % 4).collect();
        let (lab, rest) = balanced_split(&labels, 4, 10, 5).unwrap();
        assert_eq!(lab.len(), 40);
        assert_eq!(rest.len(), 60);
        for c in 0..4 {
            assert_eq!(lab.iter().filter(|&&i| labels[i] == c).count(), 10);
        }
        let mut all: Vec<usize> = lab.iter().chain(&rest).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
        assert_eq!(balanced_split(&labels, 4, 10, 5).unwrap().0, lab);
        assert_ne!(balanced_split(&labels, 4, 10, 6).unwrap().0, lab);
        assert!(balanced_split(&labels, 4, 26, 5).is_err());
    }

    #[test]
    fn long_tailed_counts_follow_geometric_decay() {
        // n1=100, ratio 10, 3 classes: 100, 100/sqrt(10)=31.6 -> 32, 10.
        assert_eq!(long_tailed_counts(100, 10.0, 3).unwrap(), vec![100, 32, 10]);
        // Tiny tails clamp at one sample.
        assert_eq!(long_tailed_counts(5, 100.0, 3).unwrap(), vec![5, 1, 1]);
        assert!(long_tailed_counts(10, 0.5, 3).is_err());
    }

    #[test]
    fn long_tailed_split_sizes_match_counts() {
        let labels: Vec<usize> = (0..300).map(|i| i % 3).collect();
        let (lab, unlab) = long_tailed_split(&labels, 3, 80, 4.0, 0.25, 9).unwrap();
        // counts: 80, 80*4^-0.5=40, 20; labeled: 20, 10, 5.
        let count = |v: &[usize], c: usize| v.iter().filter(|&&i| labels[i] == c).count();
        assert_eq!(
            [count(&lab, 0), count(&lab, 1), count(&lab, 2)],
            [20, 10, 5]
        );
        assert_eq!(
            [count(&unlab, 0), count(&unlab, 1), count(&unlab, 2)],
            [60, 30, 15]
        );
        // Disjoint.
        let mut seen = lab.clone();
        seen.extend_from_slice(&unlab);
        seen.sort_unstable();
        seen.dedup();
        assert_eq!(seen.len(), lab.len() + unlab.len());
    }

    #[test]
    fn shapes_are_deterministic_in_range_and_label_uniform() {
        let a = gen_shapes::<f32>(42, 64, 10, 8).unwrap();
        let b = gen_shapes::<f32>(42, 64, 10, 8).unwrap();
        assert_eq!(a.images.data(), b.images.data());
        assert_eq!(a.labels, b.labels);
        assert_eq!(a.images.shape(), &[64, 1, 8, 8]);
        assert!(a.images.data().iter().all(|v| (0.0..=1.0).contains(v)));

        // Uniform labels: chi-squared over 10 classes, 10^4 draws.
        let big = gen_shapes::<f32>(7, 10_000, 10, 8).unwrap();
        let mut counts = [0f64; 10];
        for &l in big.labels.as_ref().unwrap() {
            counts[l] += 1.0;
        }
        let expect = 1_000.0;
        let chi2: f64 = counts.iter().map(|c| (c - expect) * (c - expect) / expect).sum();
        assert!(chi2 < 30.0, "chi2 = {chi2}, counts {counts:?}");
    }

    #[test]
    fn shape_classes_are_visually_distinct() {
        // Mean image per class; every pair must differ somewhere by a wide
        // margin (the glyphs occupy different pixels).
        let n = 360;
        let ds = gen_shapes::<f32>(3, n, GLYPH_COUNT, 16).unwrap();
        let labels = ds.labels.as_ref().unwrap();
        let mut means = vec![vec![0.0f64; 256]; GLYPH_COUNT];
        let mut counts = vec![0usize; GLYPH_COUNT];
        for i in 0..n {
            counts[labels[i]] += 1;
            for p in 0..256 {
                means[labels[i]][p] += ds.images.data()[i * 256 + p] as f64;
            }
        }
        for c in 0..GLYPH_COUNT {
            assert!(counts[c] > 0, "class {c} never drawn in {n} samples");
            for p in means[c].iter_mut() {
                *p /= counts[c] as f64;
            }
        }
        for a in 0..GLYPH_COUNT {
            for b in (a + 1)..GLYPH_COUNT {
                let max_gap = means[a]
                    .iter()
                    .zip(&means[b])
                    .map(|(x, y)| (x - y).abs())
                    .fold(0.0f64, f64::max);
                assert!(max_gap > 0.08, "classes {a} and {b} overlap: {max_gap}");
            }
        }
    }

    #[test]
    fn moons_require_two_classes_and_are_deterministic() {
        assert!(gen_moons::<f32>(1, 4, 3, 16).is_err());
        let a = gen_moons::<f32>(1, 8, 2, 16).unwrap();
        let b = gen_moons::<f32>(1, 8, 2, 16).unwrap();
        assert_eq!(a.images.data(), b.images.data());
        assert_eq!(a.classes, 2);
        assert!(a.images.data().iter().all(|v| (0.0..=1.0).contains(v)));
        // Images are not blank: each sample splats dozens of points.
        let plane = 256;
        for i in 0..8 {
            let mass: f32 = a.images.data()[i * plane..(i + 1) * plane].iter().sum();
            assert!(mass > 1.0, "sample {i} is nearly blank ({mass})");
        }
    }
}
