//! Adam and the learning-rate schedule.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{check_len, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment accumulators for one flat variable block.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AdamState {
    pub config: AdamConfig,
    pub first: Vec<f64>,
    pub second: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(len: usize, config: AdamConfig) -> Self {
        AdamState {
            config,
            first: vec![0.0; len],
            second: vec![0.0; len],
            step: 0,
        }
    }

    /// One bias-corrected Adam step on `x` with gradient `grad`. Nothing is
    /// modified if the update would be non-finite.
    pub fn update(&mut self, x: &mut [f64], grad: &[f64], lr: f64) -> Result<()> {
        check_len("adam variables", self.first.len(), x.len())?;
        check_len("adam gradient", self.first.len(), grad.len())?;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let t = (self.step + 1) as i32;
        let c1 = 1.0 - libm::pow(beta1, t as f64);
        let c2 = 1.0 - libm::pow(beta2, t as f64);
        let mut first = self.first.clone();
        let mut second = self.second.clone();
        let mut next = x.to_vec();
        for i in 0..x.len() {
            let g = grad[i];
            first[i] = beta1 * first[i] + (1.0 - beta1) * g;
            second[i] = beta2 * second[i] + (1.0 - beta2) * g * g;
            let mh = first[i] / c1;
            let vh = second[i] / c2;
            next[i] -= lr * mh / (libm::sqrt(vh) + eps);
            if !next[i].is_finite() || !second[i].is_finite() {
                return Err(Error::non_finite_at("adam update", i));
            }
        }
        x.copy_from_slice(&next);
        self.first = first;
        self.second = second;
        self.step += 1;
        Ok(())
    }
}

/// Adam over the three shooting blocks `(X, p, λ)`, which share one step
/// counter.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ShootingAdam {
    pub states: AdamState,
    pub params: AdamState,
    pub multipliers: AdamState,
    /// Keep `λ` fixed (single-shooting equivalence runs).
    pub freeze_multipliers: bool,
}

impl ShootingAdam {
    pub fn new(state_len: usize, param_len: usize, config: AdamConfig) -> Self {
        ShootingAdam {
            states: AdamState::new(state_len, config),
            params: AdamState::new(param_len, config),
            multipliers: AdamState::new(state_len, config),
            freeze_multipliers: false,
        }
    }
}

/// Applies a step triple `(Δx, Δp, Δλ)`. The deltas are descent directions,
/// so Adam sees `g = -Δ`. Either all blocks are updated or none.
pub fn adam_update(
    state: &mut ShootingAdam,
    vars: &mut crate::shooting::ShootingVariables,
    dx: &[f64],
    dp: &[f64],
    dlambda: &[f64],
    lr: f64,
) -> Result<()> {
    let neg = |d: &[f64]| d.iter().map(|v| -v).collect::<Vec<f64>>();
    let mut trial_state = state.clone();
    let mut trial = vars.clone();
    trial_state.states.update(&mut trial.states, &neg(dx), lr)?;
    trial_state.params.update(&mut trial.params, &neg(dp), lr)?;
    if !state.freeze_multipliers {
        trial_state
            .multipliers
            .update(&mut trial.multipliers, &neg(dlambda), lr)?;
    }
    *state = trial_state;
    *vars = trial;
    Ok(())
}

/// When to shrink the learning rate.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case", tag = "kind"))]
pub enum DecayRule {
    Constant,
    /// Decay once the loss has not improved by `rel_improvement` (relative)
    /// for `patience` epochs.
    Plateau { patience: usize, rel_improvement: f64 },
    /// Decay at fixed epochs.
    Epochs { at: Vec<usize> },
}

/// Piecewise-constant learning rate. Decay points found by the plateau rule
/// are recorded, so [`lr_at`] stays a pure function of the schedule.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LrSchedule {
    pub initial: f64,
    pub factor: f64,
    pub floor: f64,
    pub rule: DecayRule,
    /// Epochs from which one more decay applies.
    pub decays: Vec<usize>,
    #[cfg_attr(feature = "serde", serde(skip))]
    best: Option<(f64, usize)>,
}

impl LrSchedule {
    pub fn new(initial: f64, rule: DecayRule) -> Self {
        let decays = match &rule {
            DecayRule::Epochs { at } => {
                let mut at = at.clone();
                at.sort_unstable();
                at
            }
            _ => Vec::new(),
        };
        LrSchedule {
            initial,
            factor: 0.5,
            floor: 1e-4,
            rule,
            decays,
            best: None,
        }
    }

    pub fn constant(initial: f64) -> Self {
        Self::new(initial, DecayRule::Constant)
    }

    /// Halve after 100 epochs without a 1% improvement.
    pub fn plateau(initial: f64) -> Self {
        Self::new(
            initial,
            DecayRule::Plateau {
                patience: 100,
                rel_improvement: 0.01,
            },
        )
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.initial > 0.0) || !(self.factor > 0.0 && self.factor <= 1.0) || !(self.floor > 0.0) {
            return Err(Error::InvalidConfig(
                "learning rate needs initial > 0, factor in (0, 1], floor > 0".into(),
            ));
        }
        Ok(())
    }

    /// Feeds the training loss of `epoch` to the plateau rule.
    pub fn observe(&mut self, epoch: usize, loss: f64) {
        let DecayRule::Plateau {
            patience,
            rel_improvement,
        } = self.rule
        else {
            return;
        };
        match self.best {
            Some((best, _)) if loss < best * (1.0 - rel_improvement) => self.best = Some((loss, epoch)),
            Some((best, since)) => {
                if epoch - since >= patience {
                    self.decays.push(epoch + 1);
                    self.best = Some((best.min(loss), epoch));
                }
            }
            None => self.best = Some((loss, epoch)),
        }
    }
}

/// Rate in effect at `epoch`.
pub fn lr_at(schedule: &LrSchedule, epoch: usize) -> f64 {
    let count = schedule.decays.iter().filter(|&&d| d <= epoch).count();
    let lr = schedule.initial * libm::pow(schedule.factor, count as f64);
    lr.max(schedule.floor.min(schedule.initial))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut s = AdamState::new(3, AdamConfig::default());
        let mut x = [1.0, -2.0, 0.5];
        s.update(&mut x, &[0.0; 3], 0.01).unwrap();
        assert_eq!(x, [1.0, -2.0, 0.5]);
        assert_eq!(s.first, [0.0; 3]);
        assert_eq!(s.second, [0.0; 3]);
        assert_eq!(s.step, 1);
    }

    #[test]
    fn first_step_is_a_sign_step() {
        let mut s = AdamState::new(2, AdamConfig::default());
        let mut x = [0.0, 0.0];
        s.update(&mut x, &[3.0, -1e-3], 0.01).unwrap();
        assert!((x[0] + 0.01).abs() < 1e-10);
        assert!((x[1] - 0.01).abs() < 1e-6);
    }

    #[test]
    fn non_finite_update_leaves_state() {
        let mut s = AdamState::new(1, AdamConfig::default());
        let mut x = [1.0];
        assert!(s.update(&mut x, &[f64::NAN], 0.01).is_err());
        assert_eq!((x, s.step), ([1.0], 0));
    }

    #[test]
    fn plateau_decays() {
        let mut s = LrSchedule::plateau(0.01);
        assert_eq!(lr_at(&s, 0), 0.01);
        for e in 0..=250 {
            s.observe(e, 1.0);
        }
        assert_eq!(s.decays, [101, 201]);
        assert_eq!(lr_at(&s, 100), 0.01);
        assert_eq!(lr_at(&s, 101), 0.005);
        assert!((lr_at(&s, 250) - 0.0025).abs() < 1e-18);
    }

    #[test]
    fn fixed_epochs_and_floor() {
        let s = LrSchedule::new(0.01, DecayRule::Epochs { at: (1..20).collect() });
        assert_eq!(lr_at(&s, 0), 0.01);
        assert_eq!(lr_at(&s, 19), 1e-4);
        assert_eq!(lr_at(&LrSchedule::constant(0.01), 5000), 0.01);
    }
}
