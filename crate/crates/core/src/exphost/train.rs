use std::cell::RefCell;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use sha2::{Digest, Sha256};

use super::dataset::{make_dataset, Dataset, DatasetSpec};
use super::net::{backward, batch_layer_stats, error_rate, forward, mean_loss, LayerStats, NetParams, NetSpec};
use crate::error::{contract, Error, Result};
use crate::optim::{self, project_unit, GradSource, OptConfig, OptState, Rule};
use crate::rng::stream_rng;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub net: NetSpec,
    /// Applies to the hidden-layer weight vectors only.
    pub opt: OptConfig,
    /// Plain SGD rate for `gamma`, `beta` and the head. It follows the same
    /// drop schedule as `opt.eta` but does not depend on the hidden weights'
    /// scale, so it is not touched when `opt` is rescaled.
    pub head_eta: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub data: DatasetSpec,
    pub data_seed: u64,
    /// Project every hidden unit back to unit norm after each step.
    pub normalize_weights: bool,
    /// Initial norm of every hidden unit.
    pub init_scale: f64,
    /// Decay of the running statistics collected over the final epoch.
    pub stats_decay: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            net: NetSpec::default(),
            opt: OptConfig::new(Rule::Sgd, 0.1, 1e-4),
            head_eta: 0.1,
            epochs: 50,
            batch_size: 32,
            data: DatasetSpec::default(),
            data_seed: 0,
            normalize_weights: false,
            init_scale: 1.0,
            stats_decay: 0.99,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.net.validate()?;
        self.opt.validate()?;
        if self.opt.rule == Rule::Newton {
            return Err(contract("newton is not supported for network training"));
        }
        if self.epochs == 0 || self.batch_size < 2 {
            return Err(contract("training needs epochs >= 1 and batch_size >= 2"));
        }
        let d = &self.data;
        if d.n_train.min(d.n_val).min(d.n_test) < self.batch_size {
            return Err(contract("every split must hold at least one batch"));
        }
        if d.dim != self.net.input_dim {
            return Err(contract("dataset dimension does not match the network input"));
        }
        if !(self.head_eta >= 0.0 && self.head_eta.is_finite()) {
            return Err(contract("head_eta must be finite and >= 0"));
        }
        if !(self.init_scale > 0.0 && self.init_scale.is_finite()) {
            return Err(contract("init_scale must be positive"));
        }
        if !(0.0..1.0).contains(&self.stats_decay) {
            return Err(contract("stats_decay must lie in [0, 1)"));
        }
        Ok(())
    }

    /// Learning-rate multiplier during `epoch`: 1, then 0.1 from half way,
    /// then 0.01 from 80% of the run.
    pub fn lr_factor(&self, epoch: usize) -> f64 {
        if 10 * epoch >= 8 * self.epochs {
            0.01
        } else if 2 * epoch >= self.epochs {
            0.1
        } else {
            1.0
        }
    }

    /// Hex SHA-256 of the canonical `key = value` rendering.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(super::config::render(self).as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    /// Root-mean-square hidden unit norm at the end of training.
    pub final_norm: f64,
    /// Mean loss over the whole training set, with its own batch statistics.
    pub train_loss: f64,
    /// Same quantity before the first step.
    pub initial_loss: f64,
    pub val_error: f64,
    pub test_error: f64,
    /// Hidden norm before training and after every epoch.
    pub norm_trace: Vec<f64>,
    pub config_hash: String,
    pub seed: u64,
    /// Epoch in which training produced a nonfinite value. The metrics of a
    /// diverged run are NaN.
    pub diverged_at: Option<usize>,
}

impl RunRecord {
    pub fn diverged(&self) -> bool {
        self.diverged_at.is_some()
    }
}

fn rows(x: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(idx.len(), x.ncols(), |i, j| x[(idx[i], j)])
}

fn train_mode_loss(data: &Dataset, p: &NetParams) -> Result<f64> {
    Ok(mean_loss(&forward(&data.x, p, None)?.logits, &data.y))
}

/// Hidden-layer gradient for one batch, with every other parameter held at
/// its current value. The gradient at the current weights is cached so the
/// head update and the optimizer share one backward pass.
struct HiddenGrad<'a> {
    x: &'a DMatrix<f64>,
    y: &'a [f64],
    params: &'a NetParams,
    cached: RefCell<Option<(DVector<f64>, DVector<f64>)>>,
}

impl GradSource for HiddenGrad<'_> {
    fn grad(&self, w: &DVector<f64>) -> Result<DVector<f64>> {
        if let Some((at, g)) = &*self.cached.borrow() {
            if at == w {
                return Ok(g.clone());
            }
        }
        let mut p = self.params.clone();
        p.set_hidden_flat(w);
        let pass = forward(self.x, &p, None)?;
        let g = backward(self.x, self.y, &p, &pass).w;
        Ok(DVector::from_column_slice(g.as_slice()))
    }
}

fn project_columns(w: &mut DMatrix<f64>) -> Result<()> {
    for j in 0..w.ncols() {
        let unit = project_unit(w.column(j).into_owned())?;
        w.set_column(j, &unit);
    }
    Ok(())
}

fn is_divergence(e: &Error) -> bool {
    matches!(
        e,
        Error::Divergence { .. } | Error::DegenerateBatch | Error::DegenerateStep | Error::DegenerateLayer
    )
}

/// Trains the network and evaluates it with the running statistics of the
/// final epoch. A run that produces nonfinite or degenerate values returns a
/// record with `diverged_at` set instead of an error.
pub fn train_small_net(cfg: &TrainConfig, seed: u64) -> Result<RunRecord> {
    cfg.validate()?;
    let splits = make_dataset(&cfg.data, cfg.data_seed)?;
    let mut init_rng = stream_rng(seed, 0);
    let mut shuffle_rng = stream_rng(seed, 1);
    let mut params = NetParams::init(&cfg.net, cfg.init_scale, &mut init_rng);

    let projected = cfg.normalize_weights || cfg.opt.rule == Rule::NormalizedSgd;
    let mut opt = cfg.opt;
    if opt.rule == Rule::NormalizedSgd {
        // the projection happens per unit below
        opt.rule = Rule::Sgd;
    }
    if projected {
        project_columns(&mut params.w)?;
    }

    let diverged = |epoch: usize, norm_trace: Vec<f64>| RunRecord {
        final_norm: f64::NAN,
        train_loss: f64::NAN,
        initial_loss: f64::NAN,
        val_error: f64::NAN,
        test_error: f64::NAN,
        norm_trace,
        config_hash: cfg.hash(),
        seed,
        diverged_at: Some(epoch),
    };

    let initial_loss = match train_mode_loss(&splits.train, &params) {
        Ok(l) => l,
        Err(e) if is_divergence(&e) => return Ok(diverged(0, vec![params.hidden_norm()])),
        Err(e) => return Err(e),
    };
    let mut norm_trace = vec![params.hidden_norm()];
    let mut state = OptState::zeros(cfg.net.input_dim * cfg.net.hidden);
    let mut order: Vec<usize> = (0..splits.train.len()).collect();
    let mut running: Option<LayerStats> = None;
    let batches = splits.train.len() / cfg.batch_size;

    let mut run_epoch = |epoch: usize, params: &mut NetParams, state: &mut OptState| -> Result<()> {
        let factor = cfg.lr_factor(epoch);
        let step_cfg = OptConfig { eta: opt.eta * factor, ..opt };
        let head_eta = cfg.head_eta * factor;
        let last = epoch + 1 == cfg.epochs;
        order.shuffle(&mut shuffle_rng);
        for b in 0..batches {
            let idx = &order[b * cfg.batch_size..(b + 1) * cfg.batch_size];
            let x = rows(&splits.train.x, idx);
            let y: Vec<f64> = idx.iter().map(|&i| splits.train.y[i]).collect();
            let pass = forward(&x, params, None)?;
            if last {
                match running.as_mut() {
                    Some(r) => r.blend(&pass.stats, cfg.stats_decay),
                    None => running = Some(pass.stats.clone()),
                }
            }
            let g = backward(&x, &y, params, &pass);
            let flat = params.hidden_flat();
            let next = {
                let src = HiddenGrad {
                    x: &x,
                    y: &y,
                    params,
                    cached: RefCell::new(Some((flat.clone(), DVector::from_column_slice(g.w.as_slice())))),
                };
                optim::step(&flat, &src, state, &step_cfg)?
            };
            let (w, st) = next;
            *state = st;
            params.set_hidden_flat(&w);
            if projected {
                project_columns(&mut params.w)?;
            }
            params.gamma -= &g.gamma * head_eta;
            params.beta -= &g.beta * head_eta;
            params.head_w -= &g.head_w * head_eta;
            params.head_b -= g.head_b * head_eta;
            if !params.is_finite() {
                return Err(Error::Divergence { step: state.t, what: "parameters" });
            }
        }
        Ok(())
    };

    for epoch in 0..cfg.epochs {
        match run_epoch(epoch, &mut params, &mut state) {
            Ok(()) => norm_trace.push(params.hidden_norm()),
            Err(e) if is_divergence(&e) => {
                log::debug!("run {seed} diverged in epoch {epoch}: {e}");
                return Ok(diverged(epoch, norm_trace));
            }
            Err(e) => return Err(e),
        }
    }

    let evaluate = || -> Result<(f64, f64, f64)> {
        let stats = match &running {
            Some(s) => s.clone(),
            None => batch_layer_stats(&splits.train.x, &params.w)?,
        };
        let val = forward(&splits.val.x, &params, Some(&stats))?;
        let test = forward(&splits.test.x, &params, Some(&stats))?;
        let loss = train_mode_loss(&splits.train, &params)?;
        Ok((loss, error_rate(&val.logits, &splits.val.y), error_rate(&test.logits, &splits.test.y)))
    };
    let (train_loss, val_error, test_error) = match evaluate() {
        Ok(v) if v.0.is_finite() => v,
        Ok(_) => return Ok(diverged(cfg.epochs, norm_trace)),
        Err(e) if is_divergence(&e) => return Ok(diverged(cfg.epochs, norm_trace)),
        Err(e) => return Err(e),
    };
    let final_norm = params.hidden_norm();
    Ok(RunRecord {
        final_norm,
        train_loss,
        initial_loss,
        val_error,
        test_error,
        norm_trace,
        config_hash: cfg.hash(),
        seed,
        diverged_at: None,
    })
}
