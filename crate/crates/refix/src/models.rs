//! Model zoo: a small MLP and a two-block convnet, with EMA shadow weights.
//!
//! Both models take `[N,C,H,W]` images in `[0,1]`, apply a fixed input
//! normalization to `[-1,1]` (no batch statistics anywhere, so single-sample
//! and full-batch forwards agree), and produce `[N,K]` logits. Weights are
//! initialized from a fan-in scaled uniform distribution
//! `U(-sqrt(3/fan_in), sqrt(3/fan_in))` (standard deviation `1/sqrt(fan_in)`);
//! biases start at zero.

use std::collections::BTreeMap;

use rand::Rng;

use crate::error::{Error, Result};
use crate::ops;
use crate::rng;
use crate::tape::{NodeId, Tape};
use crate::tensor::{Scalar, Tensor};

/// Architecture selector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Arch {
    /// Flatten + fully connected layers with ReLU between them.
    Mlp { hidden: Vec<usize> },
    /// conv3x3(c1) -> relu -> pool2 -> conv3x3(c2) -> relu -> pool2 -> linear.
    SmallConv { c1: usize, c2: usize },
}

/// Input geometry, class count, and architecture of a classifier.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelSpec {
    pub arch: Arch,
    pub in_channels: usize,
    pub height: usize,
    pub width: usize,
    pub classes: usize,
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::contract(format!(
                "model needs at least 2 classes, got {}",
                self.classes
            )));
        }
        if self.in_channels == 0 || self.height == 0 || self.width == 0 {
            return Err(Error::contract(format!(
                "degenerate input {}x{}x{}",
                self.in_channels, self.height, self.width
            )));
        }
        match &self.arch {
            Arch::Mlp { hidden } => {
                if hidden.iter().any(|&h| h == 0) {
                    return Err(Error::contract("mlp hidden width of 0"));
                }
            }
            Arch::SmallConv { c1, c2 } => {
                if *c1 == 0 || *c2 == 0 {
                    return Err(Error::contract("conv channel count of 0"));
                }
                if self.height < 4 || self.width < 4 {
                    return Err(Error::contract(format!(
                        "smallconv needs at least 4x4 input, got {}x{}",
                        self.height, self.width
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn input_numel(&self) -> usize {
        self.in_channels * self.height * self.width
    }

    /// Per-layer (name, weight shape, bias length, fan_in) in forward order.
    fn layer_plan(&self) -> Vec<(String, Vec<usize>, usize, usize)> {
        let mut plan = Vec::new();
        match &self.arch {
            Arch::Mlp { hidden } => {
                let mut prev = self.input_numel();
                for (i, &h) in hidden.iter().enumerate() {
                    plan.push((format!("fc{}", i + 1), vec![prev, h], h, prev));
                    prev = h;
                }
                plan.push((
                    format!("fc{}", hidden.len() + 1),
                    vec![prev, self.classes],
                    self.classes,
                    prev,
                ));
            }
            Arch::SmallConv { c1, c2 } => {
                let c = self.in_channels;
                plan.push(("conv1".into(), vec![*c1, c, 3, 3], *c1, c * 9));
                plan.push(("conv2".into(), vec![*c2, *c1, 3, 3], *c2, c1 * 9));
                let feat = c2 * (self.height / 4) * (self.width / 4);
                plan.push(("fc".into(), vec![feat, self.classes], self.classes, feat));
            }
        }
        plan
    }
}

/// Named parameter map. `BTreeMap` fixes the iteration order, which keeps
/// optimizer and EMA updates deterministic.
pub type ParamMap<S> = BTreeMap<String, Tensor<S>>;

/// Trainable parameters plus their EMA shadow and momentum buffers.
#[derive(Debug, Clone)]
pub struct ModelState<S: Scalar> {
    pub spec: ModelSpec,
    pub params: ParamMap<S>,
    pub ema: ParamMap<S>,
    pub velocity: ParamMap<S>,
}

/// Fresh model state. Each layer draws from its own random stream keyed by
/// `(seed, layer index)`, so the values do not depend on map iteration order.
pub fn init<S: Scalar>(spec: &ModelSpec, seed: u64) -> Result<ModelState<S>> {
    spec.validate()?;
    let mut params = ParamMap::new();
    for (li, (name, wshape, blen, fan_in)) in spec.layer_plan().into_iter().enumerate() {
        let bound = (3.0 / fan_in as f64).sqrt();
        let mut r = rng::stream(seed, rng::DOMAIN_INIT, li as u64, 0);
        let numel: usize = wshape.iter().product();
        let w: Vec<S> = (0..numel)
            .map(|_| S::from_f64_lossy(r.gen_range(-bound..bound)))
            .collect();
        params.insert(format!("{name}.weight"), Tensor::from_vec(wshape, w)?);
        params.insert(format!("{name}.bias"), Tensor::zeros(&[blen]));
    }
    let ema = params.clone();
    let velocity: ParamMap<S> = params
        .iter()
        .map(|(k, v)| (k.clone(), Tensor::zeros(v.shape())))
        .collect();
    Ok(ModelState {
        spec: spec.clone(),
        params,
        ema,
        velocity,
    })
}

fn normalize_input<S: Scalar>(input: &Tensor<S>) -> Tensor<S> {
    // Fixed [0,1] -> [-1,1] rescale; substitutes for batch normalization.
    let one = S::one();
    let two = S::from_f64_lossy(2.0);
    input.map(|p| p * two - one)
}

fn check_input<S: Scalar>(spec: &ModelSpec, input: &Tensor<S>) -> Result<()> {
    let sh = input.shape();
    if sh.len() != 4 || sh[1] != spec.in_channels || sh[2] != spec.height || sh[3] != spec.width {
        return Err(Error::Dim(format!(
            "input {:?} does not match model input [N, {}, {}, {}]",
            sh, spec.in_channels, spec.height, spec.width
        )));
    }
    Ok(())
}

/// Forward pass without recording: used for pseudo-label generation (current
/// weights) and evaluation (EMA weights).
pub fn forward_infer<S: Scalar>(
    spec: &ModelSpec,
    params: &ParamMap<S>,
    input: &Tensor<S>,
) -> Result<Tensor<S>> {
    check_input(spec, input)?;
    let n = input.shape()[0];
    let x = normalize_input(input);
    let p = |name: &str| -> Result<&Tensor<S>> {
        params
            .get(name)
            .ok_or_else(|| Error::contract(format!("missing parameter {name}")))
    };
    let logits = match &spec.arch {
        Arch::Mlp { hidden } => {
            let mut h = x.reshape(vec![n, spec.input_numel()])?;
            for i in 1..=hidden.len() + 1 {
                let z = ops::matmul(&h, p(&format!("fc{i}.weight"))?)?;
                let z = ops::bias_add(&z, p(&format!("fc{i}.bias"))?, 1)?;
                h = if i <= hidden.len() { ops::relu(&z) } else { z };
            }
            h
        }
        Arch::SmallConv { c2, .. } => {
            let z = ops::conv2d(&x, p("conv1.weight")?, 1, 1)?;
            let z = ops::bias_add(&z, p("conv1.bias")?, 1)?;
            let (z, _) = ops::max_pool2(&ops::relu(&z))?;
            let z = ops::conv2d(&z, p("conv2.weight")?, 1, 1)?;
            let z = ops::bias_add(&z, p("conv2.bias")?, 1)?;
            let (z, _) = ops::max_pool2(&ops::relu(&z))?;
            let feat = c2 * (spec.height / 4) * (spec.width / 4);
            let z = z.reshape(vec![n, feat])?;
            ops::bias_add(&ops::matmul(&z, p("fc.weight")?)?, p("fc.bias")?, 1)?
        }
    };
    logits.ensure_finite("logits from forward pass")?;
    Ok(logits)
}

/// Parameters registered as tape leaves, ready for recorded forwards.
pub struct TapedParams {
    ids: BTreeMap<String, NodeId>,
}

impl TapedParams {
    pub fn id(&self, name: &str) -> Result<NodeId> {
        self.ids
            .get(name)
            .copied()
            .ok_or_else(|| Error::contract(format!("missing parameter {name}")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, NodeId)> {
        self.ids.iter().map(|(k, &v)| (k, v))
    }
}

/// Registers every parameter on the tape once; multiple recorded forwards
/// (labeled and unlabeled views) share the same leaves so their gradients
/// accumulate.
pub fn leaf_params<S: Scalar>(tape: &mut Tape<S>, params: &ParamMap<S>) -> TapedParams {
    let ids = params
        .iter()
        .map(|(k, v)| (k.clone(), tape.leaf(v.clone())))
        .collect();
    TapedParams { ids }
}

/// Recorded forward pass producing the logits node.
pub fn forward_train<S: Scalar>(
    spec: &ModelSpec,
    tape: &mut Tape<S>,
    params: &TapedParams,
    input: &Tensor<S>,
) -> Result<NodeId> {
    check_input(spec, input)?;
    let n = input.shape()[0];
    let x = tape.leaf(normalize_input(input));
    let logits = match &spec.arch {
        Arch::Mlp { hidden } => {
            let mut h = tape.reshape(x, vec![n, spec.input_numel()])?;
            for i in 1..=hidden.len() + 1 {
                let z = tape.matmul(h, params.id(&format!("fc{i}.weight"))?)?;
                let z = tape.bias_add(z, params.id(&format!("fc{i}.bias"))?, 1)?;
                h = if i <= hidden.len() { tape.relu(z) } else { z };
            }
            h
        }
        Arch::SmallConv { c2, .. } => {
            let z = tape.conv2d(x, params.id("conv1.weight")?, 1, 1)?;
            let z = tape.bias_add(z, params.id("conv1.bias")?, 1)?;
            let z = tape.relu(z);
            let z = tape.max_pool2(z)?;
            let z = tape.conv2d(z, params.id("conv2.weight")?, 1, 1)?;
            let z = tape.bias_add(z, params.id("conv2.bias")?, 1)?;
            let z = tape.relu(z);
            let z = tape.max_pool2(z)?;
            let feat = c2 * (spec.height / 4) * (spec.width / 4);
            let z = tape.reshape(z, vec![n, feat])?;
            let z = tape.matmul(z, params.id("fc.weight")?)?;
            tape.bias_add(z, params.id("fc.bias")?, 1)?
        }
    };
    tape.value(logits).ensure_finite("logits from forward pass")?;
    Ok(logits)
}

/// SGD with momentum and decoupled-from-nothing weight decay folded into the
/// gradient: `v <- momentum*v + grad + weight_decay*theta`,
/// `theta <- theta - lr*v`.
pub fn sgd_step<S: Scalar>(
    state: &mut ModelState<S>,
    grads: &ParamMap<S>,
    lr: S,
    momentum: S,
    weight_decay: S,
) -> Result<()> {
    for (name, theta) in state.params.iter_mut() {
        let g = grads
            .get(name)
            .ok_or_else(|| Error::contract(format!("missing gradient for {name}")))?;
        if g.shape() != theta.shape() {
            return Err(Error::Dim(format!(
                "gradient {:?} vs parameter {:?} for {name}",
                g.shape(),
                theta.shape()
            )));
        }
        let v = state.velocity.get_mut(name).expect("velocity tracks params");
        let new_v: Vec<S> = v
            .data()
            .iter()
            .zip(g.data().iter().zip(theta.data()))
            .map(|(&vv, (&gv, &tv))| momentum * vv + gv + weight_decay * tv)
            .collect();
        let new_v = Tensor::from_vec(theta.shape().to_vec(), new_v)?;
        let new_theta: Vec<S> = theta
            .data()
            .iter()
            .zip(new_v.data())
            .map(|(&tv, &vv)| tv - lr * vv)
            .collect();
        *theta = Tensor::from_vec(theta.shape().to_vec(), new_theta)?;
        *v = new_v;
    }
    Ok(())
}

/// EMA shadow update: `ema <- m*ema + (1-m)*param`.
pub fn ema_update<S: Scalar>(state: &mut ModelState<S>, m: S) {
    let one_minus = S::one() - m;
    for (name, shadow) in state.ema.iter_mut() {
        let p = &state.params[name];
        let data: Vec<S> = shadow
            .data()
            .iter()
            .zip(p.data())
            .map(|(&e, &w)| m * e + one_minus * w)
            .collect();
        *shadow = Tensor::from_vec(shadow.shape().to_vec(), data).expect("same shape");
    }
}
