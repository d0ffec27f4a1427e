//! Learning-rate and target-momentum schedules, SGD/LARS, and the EMA
//! target update.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::ParamSet;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimConfig {
    /// Learning rate at full scale.
    pub base_lr: f64,
    /// Multiplier applied to `base_lr` for small runs.
    pub lr_scale: f64,
    /// Warmup length in epochs; unset means 10 for BYOL and 0 otherwise.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub warmup_epochs: Option<usize>,
    pub weight_decay: f64,
    pub momentum: f64,
    pub lars: bool,
    pub tau_base: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            base_lr: 1.2,
            lr_scale: 0.1,
            warmup_epochs: None,
            weight_decay: 1e-6,
            momentum: 0.9,
            lars: false,
            tau_base: 0.99,
        }
    }
}

impl OptimConfig {
    pub fn effective_lr(&self) -> f64 {
        self.base_lr * self.lr_scale
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, msg: String| Err(Error::Config { field: format!("optim.{field}"), message: msg });
        if !(self.base_lr > 0.0) {
            return bad("base_lr", format!("must be positive, got {}", self.base_lr));
        }
        if !(self.lr_scale > 0.0) {
            return bad("lr_scale", format!("must be positive, got {}", self.lr_scale));
        }
        if !(self.weight_decay >= 0.0) {
            return bad("weight_decay", format!("must be non-negative, got {}", self.weight_decay));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum", format!("must lie in [0, 1), got {}", self.momentum));
        }
        if !(0.0..=1.0).contains(&self.tau_base) {
            return bad("tau_base", format!("must lie in [0, 1], got {}", self.tau_base));
        }
        Ok(())
    }
}

/// Linear warmup to `eta` over `warmup_steps`, then cosine decay
/// `eta * 0.5 * (cos(pi * k' / K') + 1)` over the remaining steps, where
/// `k'` and `K'` are measured from the end of warmup.
pub fn lr_at(k: usize, total: usize, eta: f64, warmup_steps: usize) -> f64 {
    let k = k.min(total);
    if k < warmup_steps {
        return eta * k as f64 / warmup_steps as f64;
    }
    let span = total.saturating_sub(warmup_steps);
    if span == 0 {
        return eta;
    }
    let progress = (k - warmup_steps) as f64 / span as f64;
    eta * 0.5 * ((progress * PI).cos() + 1.0)
}

/// Cosine-annealed EMA decay `1 - (1 - tau_base) * (cos(pi k / K) + 1) / 2`.
pub fn tau_at(k: usize, total: usize, tau_base: f64) -> f64 {
    if total == 0 {
        return tau_base;
    }
    let progress = k.min(total) as f64 / total as f64;
    1.0 - (1.0 - tau_base) * ((progress * PI).cos() + 1.0) / 2.0
}

/// Per-tensor LARS trust ratio `|w| / |u|`; 1 when either norm vanishes.
pub fn trust_ratio(weight_norm: f64, update_norm: f64) -> f64 {
    if weight_norm > 0.0 && update_norm > 0.0 {
        weight_norm / update_norm
    } else {
        1.0
    }
}

/// Momentum buffers and step counter.
#[derive(Debug, Clone)]
pub struct OptimState {
    pub step: usize,
    pub total_steps: usize,
    velocity: ParamSet,
}

impl OptimState {
    pub fn new(params: &ParamSet, total_steps: usize) -> Self {
        Self { step: 0, total_steps, velocity: params.zeros_like() }
    }
}

/// One momentum-SGD step at learning rate `lr`.
///
/// Without LARS the weight decay is decoupled: `w <- w (1 - lr wd) - lr v`
/// with `v <- m v + g`. With LARS the decayed gradient `u = g + wd w` is
/// rescaled per tensor by `|w| / |u|` before entering the momentum buffer.
pub fn sgd_step(params: &mut ParamSet, grads: &ParamSet, state: &mut OptimState, lr: f64, cfg: &OptimConfig) -> Result<()> {
    params.check_compatible(grads)?;
    params.check_compatible(&state.velocity)?;
    let wd = cfg.weight_decay;
    let m = cfg.momentum;
    let velocity = state.velocity.values_mut();
    for ((w, g), v) in params.values_mut().iter_mut().zip(grads.values()).zip(velocity.iter_mut()) {
        if cfg.lars {
            let u = g + &(&*w * wd);
            let ratio = trust_ratio(w.iter().map(|x| x * x).sum::<f64>().sqrt(), u.iter().map(|x| x * x).sum::<f64>().sqrt());
            v.zip_mut_with(&u, |vi, &ui| *vi = m * *vi + ratio * ui);
            w.zip_mut_with(v, |wi, &vi| *wi -= lr * vi);
        } else {
            v.zip_mut_with(g, |vi, &gi| *vi = m * *vi + gi);
            let shrink = 1.0 - lr * wd;
            w.zip_mut_with(v, |wi, &vi| *wi = *wi * shrink - lr * vi);
        }
    }
    state.step += 1;
    Ok(())
}

/// `target <- tau * target + (1 - tau) * online`, tensor by tensor.
pub fn ema_update(online: &ParamSet, target: &mut ParamSet, tau: f64) -> Result<()> {
    online.check_compatible(target)?;
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::Invalid(format!("EMA decay {tau} outside [0, 1]")));
    }
    let step = 1.0 - tau;
    for (t, o) in target.values_mut().iter_mut().zip(online.values()) {
        // Written as a correction so a target equal to the online network
        // stays exactly fixed.
        t.zip_mut_with(o, |ti, &oi| *ti += step * (oi - *ti));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{arr1, ArrayD};

    fn scalar_set(w: f64) -> ParamSet {
        ParamSet::new(vec![("w".into(), arr1(&[w]).into_dyn())]).unwrap()
    }

    fn first(p: &ParamSet) -> f64 {
        p.values()[0][[0]]
    }

    #[test]
    fn lr_endpoints() {
        let k_max = 1000;
        assert_eq!(lr_at(0, k_max, 1.2, 0), 1.2);
        assert!(lr_at(k_max, k_max, 1.2, 0).abs() < 1e-12);
        assert!((lr_at(500, k_max, 1.2, 0) - 0.6).abs() < 1e-12);
        // warmup ramps from zero and peaks at eta
        assert_eq!(lr_at(0, k_max, 1.2, 100), 0.0);
        assert!((lr_at(50, k_max, 1.2, 100) - 0.6).abs() < 1e-12);
        assert_eq!(lr_at(100, k_max, 1.2, 100), 1.2);
        assert!(lr_at(k_max, k_max, 1.2, 100).abs() < 1e-12);
        let mut prev = f64::INFINITY;
        for k in 100..=k_max {
            let lr = lr_at(k, k_max, 1.2, 100);
            assert!(lr <= prev);
            prev = lr;
        }
    }

    #[test]
    fn tau_endpoints() {
        assert!((tau_at(0, 400, 0.99) - 0.99).abs() < 1e-12);
        assert!((tau_at(400, 400, 0.99) - 1.0).abs() < 1e-12);
        assert!((tau_at(200, 400, 0.99) - 0.995).abs() < 1e-12);
        let mut prev = 0.0;
        for k in 0..=400 {
            let t = tau_at(k, 400, 0.99);
            assert!(t >= prev);
            prev = t;
        }
    }

    #[test]
    fn sgd_cases() {
        let cfg = OptimConfig { weight_decay: 0.0, momentum: 0.0, ..Default::default() };
        let mut p = scalar_set(1.0);
        let mut st = OptimState::new(&p, 10);
        let z = p.zeros_like();
        sgd_step(&mut p, &z, &mut st, 0.1, &cfg).unwrap();
        assert_eq!(first(&p), 1.0);
        // f(w) = w^2 / 2 has gradient w
        let g = scalar_set(1.0);
        sgd_step(&mut p, &g, &mut st, 0.1, &cfg).unwrap();
        assert!((first(&p) - 0.9).abs() < 1e-15);
        assert_eq!(st.step, 2);
    }

    #[test]
    fn decoupled_decay_factor() {
        let cfg = OptimConfig::default();
        let mut p = scalar_set(0.75);
        let mut st = OptimState::new(&p, 10);
        let lr = 0.12;
        let mut expected = 0.75;
        for _ in 0..5 {
            let z = p.zeros_like();
            sgd_step(&mut p, &z, &mut st, lr, &cfg).unwrap();
            expected *= 1.0 - lr * 1e-6;
            assert_eq!(first(&p), expected);
        }
    }

    #[test]
    fn lars_ratio() {
        assert_eq!(trust_ratio(2.0, 2.0), 1.0);
        assert_eq!(trust_ratio(0.0, 2.0), 1.0);
        let cfg = OptimConfig { weight_decay: 0.0, momentum: 0.0, lars: true, ..Default::default() };
        let mut p = ParamSet::new(vec![("w".into(), arr1(&[3.0, 4.0]).into_dyn())]).unwrap();
        let g = ParamSet::new(vec![("w".into(), arr1(&[0.0, 10.0]).into_dyn())]).unwrap();
        let mut st = OptimState::new(&p, 1);
        sgd_step(&mut p, &g, &mut st, 0.1, &cfg).unwrap();
        // ratio 5/10 scales the update to (0, 5)
        assert!((p.values()[0][[1]] - 3.5).abs() < 1e-15);
    }

    #[test]
    fn ema_cases() {
        let online = ParamSet::new(vec![("a".into(), arr1(&[1.0, -2.0]).into_dyn())]).unwrap();
        let start = ParamSet::new(vec![("a".into(), arr1(&[0.5, 0.25]).into_dyn())]).unwrap();

        let mut t = start.clone();
        ema_update(&online, &mut t, 1.0).unwrap();
        assert_eq!(t.values(), start.values());

        let mut t = start.clone();
        ema_update(&online, &mut t, 0.0).unwrap();
        assert_eq!(t.values(), online.values());

        let mut t = start.clone();
        ema_update(&online, &mut t, 0.99).unwrap();
        assert!((t.values()[0][[0]] - (0.99 * 0.5 + 0.01)).abs() < 1e-15);

        let mut same = online.clone();
        ema_update(&online, &mut same, 0.37).unwrap();
        assert_eq!(same.values(), online.values());

        let other = ParamSet::new(vec![("b".into(), ArrayD::zeros(ndarray::IxDyn(&[2])))]).unwrap();
        assert!(ema_update(&other, &mut t, 0.5).is_err());
        assert!(ema_update(&online, &mut t, 1.5).is_err());
    }
}
