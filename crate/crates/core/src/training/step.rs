use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    apply_bn_updates, discriminator_forward, generator_forward, ArchConfig, ForwardMode,
    ModelParams,
};
use crate::numerics::{AdamConfig, AdamState, Graph, RngStream, Tape, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Weight of the L1 reconstruction term.
    pub lambda_l1: f64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
    /// Save a checkpoint every this many epochs (0: only the final and
    /// best ones).
    pub checkpoint_every: usize,
    /// Evenly subsample the training split down to this many runs.
    pub max_train_samples: Option<usize>,
    /// Evenly subsample the validation split for checkpoint selection.
    pub max_val_samples: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 1,
            lambda_l1: 100.0,
            lr: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            epsilon: 1e-7,
            seed: 0,
            checkpoint_every: 1,
            max_train_samples: None,
            max_val_samples: None,
        }
    }
}

impl TrainConfig {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if !(self.lambda_l1 >= 0.0) || !self.lambda_l1.is_finite() {
            return Err(Error::Config(format!(
                "lambda_l1 must be >= 0, got {}",
                self.lambda_l1
            )));
        }
        let a = self.adam();
        if !(a.lr > 0.0)
            || !(0.0..1.0).contains(&a.beta1)
            || !(0.0..1.0).contains(&a.beta2)
            || !(a.epsilon > 0.0)
        {
            return Err(Error::Config(format!("invalid Adam settings {a:?}")));
        }
        Ok(())
    }
}

/// Generator and discriminator weights with their optimizer state.
#[derive(Debug, Clone)]
pub struct GanState {
    pub params: ModelParams,
    pub gen_opt: AdamState<f32>,
    pub disc_opt: AdamState<f32>,
}

impl GanState {
    pub fn new(params: ModelParams, adam: AdamConfig) -> Self {
        Self {
            params,
            gen_opt: AdamState::new(adam),
            disc_opt: AdamState::new(adam),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepLosses {
    pub d_loss: f32,
    pub g_adv: f32,
    pub g_l1: f32,
    /// `g_adv + lambda * g_l1`, as differentiated.
    pub g_total: f32,
}

fn finite(v: f32, what: &str) -> Result<f32> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite {
            what: what.to_string(),
        })
    }
}

/// One discriminator update followed by one generator update on a
/// normalized batch `x` (control) and `y` (true spread), both
/// `(N, T, H, W, 1)`.
///
/// The generator runs once; its output is a constant input to the
/// discriminator update, and the generator loss is then evaluated with the
/// freshly updated discriminator.
pub fn gan_train_step(
    state: &mut GanState,
    arch: &ArchConfig,
    x: &Tensor<f32>,
    y: &Tensor<f32>,
    cfg: &TrainConfig,
    rng: &RngStream,
) -> Result<StepLosses> {
    if x.shape() != y.shape() {
        return Err(Error::shape(
            "gan_train_step",
            format!("input {:?} vs target {:?}", x.shape(), y.shape()),
        ));
    }
    let momentum = arch.bn_momentum;

    let mut gt = Tape::<f32>::new();
    let xg = gt.input(x.clone());
    let (fake_v, gen_updates) = generator_forward(
        &mut gt,
        &state.params,
        arch,
        &xg,
        ForwardMode::TRAIN,
        &rng.split_str("gen"),
    )?;
    let fake = gt.value(fake_v).clone();

    let d_loss = {
        let mut dt = Tape::<f32>::new();
        let (xd, yd, fd) = (dt.input(x.clone()), dt.input(y.clone()), dt.input(fake));
        let (real, mut updates) = discriminator_forward(
            &mut dt,
            &state.params,
            arch,
            &xd,
            &yd,
            ForwardMode::TRAIN,
            &rng.split_str("disc.real"),
        )?;
        let (fakel, upd) = discriminator_forward(
            &mut dt,
            &state.params,
            arch,
            &xd,
            &fd,
            ForwardMode::TRAIN,
            &rng.split_str("disc.fake"),
        )?;
        updates.extend(upd);
        let shape = dt.value(real).shape().to_vec();
        let ones = dt.input(Tensor::ones(shape.clone()));
        let zeros = dt.input(Tensor::zeros(shape));
        let lr = dt.bce_with_logits(&real, &ones)?;
        let lf = dt.bce_with_logits(&fakel, &zeros)?;
        let both = dt.add(&lr, &lf)?;
        let loss = dt.scale(&both, 0.5)?;
        let d_loss = finite(dt.value(loss).item(), "d_loss")?;
        let grads = dt.backward(loss)?;
        state.disc_opt.step(&mut state.params, grads.params())?;
        apply_bn_updates(&mut state.params, &updates, momentum)?;
        d_loss
    };

    gt.set_trainable(false);
    let yg = gt.input(y.clone());
    let (logits, _) = discriminator_forward(
        &mut gt,
        &state.params,
        arch,
        &xg,
        &fake_v,
        ForwardMode::TRAIN,
        &rng.split_str("disc.gen"),
    )?;
    let ones = gt.input(Tensor::ones(gt.value(logits).shape().to_vec()));
    let adv = gt.bce_with_logits(&logits, &ones)?;
    let l1 = gt.l1_loss(&fake_v, &yg)?;
    let weighted = gt.scale(&l1, cfg.lambda_l1 as f32)?;
    let total = gt.add(&adv, &weighted)?;
    let g_adv = finite(gt.value(adv).item(), "g_adv")?;
    let g_l1 = finite(gt.value(l1).item(), "g_l1")?;
    let g_total = finite(gt.value(total).item(), "g_total")?;
    let grads = gt.backward(total)?;
    state.gen_opt.step(&mut state.params, grads.params())?;
    apply_bn_updates(&mut state.params, &gen_updates, momentum)?;

    Ok(StepLosses {
        d_loss,
        g_adv,
        g_l1,
        g_total,
    })
}
