//! Parameter-update rules.
//!
//! All steps mutate parameters in place and are deterministic functions of
//! their inputs plus an explicit noise seed.

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Gradients, ParamLayers};
use crate::seed;

fn check<P: ParamLayers + ?Sized>(params: &P, grads: &Gradients) -> Result<()> {
    if grads.congruent_with(params.layers()) {
        Ok(())
    } else {
        Err(Error::shape(
            "optimizer gradients",
            params.param_count(),
            grads.param_count(),
        ))
    }
}

/// Applies `w ← w − lr·g + noise()` coordinate by coordinate.
fn apply<P: ParamLayers + ?Sized>(
    params: &mut P,
    grads: &Gradients,
    lr: f64,
    mut noise: impl FnMut() -> f64,
) {
    for (p, g) in params.layers_mut().iter_mut().zip(grads.layers()) {
        for (w, d) in p.weights.iter_mut().zip(g.weights.iter()) {
            *w = *w - lr * d + noise();
        }
        for (w, d) in p.bias.iter_mut().zip(g.bias.iter()) {
            *w = *w - lr * d + noise();
        }
    }
}

fn apply_noiseless<P: ParamLayers + ?Sized>(params: &mut P, grads: &Gradients, lr: f64) {
    for (p, g) in params.layers_mut().iter_mut().zip(grads.layers()) {
        p.weights.zip_mut_with(&g.weights, |w, d| *w -= lr * d);
        p.bias.zip_mut_with(&g.bias, |w, d| *w -= lr * d);
    }
}

/// `w ← w − lr·g`.
pub fn sgd_step<P: ParamLayers + ?Sized>(params: &mut P, grads: &Gradients, lr: f64) -> Result<()> {
    check(params, grads)?;
    apply_noiseless(params, grads, lr);
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamHyper {
    pub lr: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_adam_eps")]
    pub eps: f64,
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_adam_eps() -> f64 {
    1e-8
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper {
            lr: 0.001,
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_adam_eps(),
        }
    }
}

/// Bias-corrected Adam moments for one model.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    m: Gradients,
    v: Gradients,
    step: u64,
    hyper: AdamHyper,
}

impl AdamState {
    pub fn new<P: ParamLayers + ?Sized>(params: &P, hyper: AdamHyper) -> Self {
        let zeros = Gradients::zeros_like(params.layers());
        AdamState {
            m: zeros.clone(),
            v: zeros,
            step: 0,
            hyper,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn hyper(&self) -> AdamHyper {
        self.hyper
    }

    pub fn step<P: ParamLayers + ?Sized>(&mut self, params: &mut P, grads: &Gradients) -> Result<()> {
        check(params, grads)?;
        self.step += 1;
        let AdamHyper {
            lr,
            beta1,
            beta2,
            eps,
        } = self.hyper;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        let layers = params.layers_mut().iter_mut();
        let moments = self.m.layers_mut().iter_mut().zip(self.v.layers_mut().iter_mut());
        for ((p, (m, v)), g) in layers.zip(moments).zip(grads.layers()) {
            let update = |w: &mut f64, m: &mut f64, v: &mut f64, d: f64| {
                *m = beta1 * *m + (1.0 - beta1) * d;
                *v = beta2 * *v + (1.0 - beta2) * d * d;
                *w -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
            };
            for (((w, m), v), d) in p
                .weights
                .iter_mut()
                .zip(m.weights.iter_mut())
                .zip(v.weights.iter_mut())
                .zip(g.weights.iter())
            {
                update(w, m, v, *d);
            }
            for (((w, m), v), d) in p
                .bias
                .iter_mut()
                .zip(m.bias.iter_mut())
                .zip(v.bias.iter_mut())
                .zip(g.bias.iter())
            {
                update(w, m, v, *d);
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SgldConfig {
    pub lr: f64,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
}

fn default_temperature() -> f64 {
    2.0
}

impl SgldConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || !(self.temperature >= 0.0) {
            return Err(Error::Config(format!(
                "sgld needs lr > 0 and temperature >= 0, got {self:?}"
            )));
        }
        Ok(())
    }

    pub fn noise_std(&self) -> f64 {
        (self.temperature * self.lr).sqrt()
    }
}

/// `w ← w − lr·g + ε`, `ε ~ N(0, temperature·lr)` per coordinate.
pub fn sgld_step<P: ParamLayers + ?Sized>(
    params: &mut P,
    grads: &Gradients,
    cfg: &SgldConfig,
    noise_seed: u64,
) -> Result<()> {
    check(params, grads)?;
    cfg.validate()?;
    if cfg.temperature == 0.0 {
        apply_noiseless(params, grads, cfg.lr);
        return Ok(());
    }
    let normal = Normal::new(0.0, cfg.noise_std()).map_err(|e| Error::Numeric(e.to_string()))?;
    let mut rng = seed::rng_for(noise_seed, "sgld", 0);
    apply(params, grads, cfg.lr, || normal.sample(&mut rng));
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DpSgdConfig {
    pub lr: f64,
    #[serde(default = "default_clip")]
    pub clip_norm: f64,
    #[serde(default = "default_sigma")]
    pub noise_multiplier: f64,
}

fn default_clip() -> f64 {
    1.0
}
fn default_sigma() -> f64 {
    1.0
}

impl DpSgdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || !(self.clip_norm > 0.0) || !(self.noise_multiplier >= 0.0) {
            return Err(Error::Config(format!(
                "dp-sgd needs lr > 0, clip_norm > 0, noise_multiplier >= 0, got {self:?}"
            )));
        }
        Ok(())
    }
}

/// Rescales `g` by `min(1, clip / ‖g‖₂)`.
pub fn clip_gradient(g: &Gradients, clip: f64) -> Gradients {
    let norm = g.l2_norm();
    let mut out = g.clone();
    if norm > clip {
        out.scale(clip / norm);
    }
    out
}

/// Per-example clipping, summed, Gaussian noise `N(0, σ²C²)`, averaged, SGD step.
pub fn dpsgd_step<P: ParamLayers + ?Sized>(
    params: &mut P,
    per_example: &[Gradients],
    cfg: &DpSgdConfig,
    noise_seed: u64,
) -> Result<()> {
    cfg.validate()?;
    if per_example.is_empty() {
        return Err(Error::Data("dp-sgd step on an empty batch".into()));
    }
    for g in per_example {
        check(params, g)?;
    }
    let clipped: Vec<Gradients> = per_example
        .iter()
        .map(|g| clip_gradient(g, cfg.clip_norm))
        .collect();
    let noisy_mean = privatized_mean(&clipped, cfg, noise_seed)?;
    apply_noiseless(params, &noisy_mean, cfg.lr);
    Ok(())
}

/// Sum of already-clipped gradients plus noise, divided by the batch size.
pub fn privatized_mean(clipped: &[Gradients], cfg: &DpSgdConfig, noise_seed: u64) -> Result<Gradients> {
    let sigma = cfg.noise_multiplier * cfg.clip_norm;
    if sigma == 0.0 {
        return Gradients::mean(clipped);
    }
    let mut sum = clipped[0].clone();
    for g in &clipped[1..] {
        sum.add_assign(g)?;
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::Numeric(e.to_string()))?;
    let mut rng = seed::rng_for(noise_seed, "dpsgd", 0);
    let n = clipped.len() as f64;
    sum.for_each_param_mut(|v| *v = (*v + normal.sample(&mut rng)) / n);
    Ok(sum)
}

/// Optimizer choice and hyperparameters, as they appear in config files.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum OptimizerConfig {
    Sgd { lr: f64 },
    Adam(AdamHyper),
    Sgld(SgldConfig),
    DpSgd(DpSgdConfig),
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig::Adam(AdamHyper::default())
    }
}

impl OptimizerConfig {
    pub fn lr(&self) -> f64 {
        match self {
            OptimizerConfig::Sgd { lr } => *lr,
            OptimizerConfig::Adam(h) => h.lr,
            OptimizerConfig::Sgld(c) => c.lr,
            OptimizerConfig::DpSgd(c) => c.lr,
        }
    }

    pub fn needs_per_example(&self) -> bool {
        matches!(self, OptimizerConfig::DpSgd(_))
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            OptimizerConfig::Sgd { lr } | OptimizerConfig::Adam(AdamHyper { lr, .. }) => {
                if *lr > 0.0 {
                    Ok(())
                } else {
                    Err(Error::Config(format!("learning rate must be positive, got {lr}")))
                }
            }
            OptimizerConfig::Sgld(c) => c.validate(),
            OptimizerConfig::DpSgd(c) => c.validate(),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            OptimizerConfig::Sgd { .. } => "sgd",
            OptimizerConfig::Adam(_) => "adam",
            OptimizerConfig::Sgld(_) => "sgld",
            OptimizerConfig::DpSgd(_) => "dp-sgd",
        }
    }
}

/// Gradient information handed to [`Optimizer::step`].
pub enum GradientBatch<'a> {
    Mean(&'a Gradients),
    PerExample(&'a [Gradients]),
}

/// A configured optimizer plus whatever state it carries between steps.
#[derive(Debug, Clone)]
pub struct Optimizer {
    config: OptimizerConfig,
    adam: Option<AdamState>,
}

impl Optimizer {
    pub fn new<P: ParamLayers + ?Sized>(config: OptimizerConfig, params: &P) -> Result<Self> {
        config.validate()?;
        let adam = match config {
            OptimizerConfig::Adam(h) => Some(AdamState::new(params, h)),
            _ => None,
        };
        Ok(Optimizer { config, adam })
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.config
    }

    pub fn step<P: ParamLayers + ?Sized>(
        &mut self,
        params: &mut P,
        grads: GradientBatch<'_>,
        noise_seed: u64,
    ) -> Result<()> {
        match (&self.config, grads) {
            (OptimizerConfig::DpSgd(cfg), GradientBatch::PerExample(per)) => {
                dpsgd_step(params, per, cfg, noise_seed)
            }
            (OptimizerConfig::DpSgd(_), GradientBatch::Mean(_)) => Err(Error::Config(
                "dp-sgd requires per-example gradients".into(),
            )),
            (_, GradientBatch::PerExample(per)) => {
                let mean = Gradients::mean(per)?;
                self.step(params, GradientBatch::Mean(&mean), noise_seed)
            }
            (OptimizerConfig::Sgd { lr }, GradientBatch::Mean(g)) => sgd_step(params, g, *lr),
            (OptimizerConfig::Sgld(cfg), GradientBatch::Mean(g)) => {
                sgld_step(params, g, cfg, noise_seed)
            }
            (OptimizerConfig::Adam(_), GradientBatch::Mean(g)) => self
                .adam
                .as_mut()
                .expect("adam state initialised with config")
                .step(params, g),
        }
    }
}
