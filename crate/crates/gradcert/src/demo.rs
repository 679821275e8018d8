//! Half-moons sweep: GradCert at growing training radii, with the decision
//! gradient sampled on a grid over the unit square.

use serde::Serialize;

use gradcert_core::train::accuracy;
use gradcert_core::{fit, LossKind, Network, Tensor, TrainReport};

use crate::config::ExperimentConfig;
use crate::error::{AppError, AppResult};

#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct SweepPoint {
    pub epsilon_t: f64,
    pub accuracy: f64,
    /// Spread of the decision gradient over the grid; 0 for a linear decision function.
    pub dispersion: f64,
    pub final_probe_delta: f64,
}

pub struct SweepRun {
    pub point: SweepPoint,
    pub net: Network,
    pub report: TrainReport,
    /// `(x1, x2, logit margin, d/dx1, d/dx2)` per grid point.
    pub grid: Vec<[f64; 5]>,
}

/// Gradient of the margin `z_1 - z_0` on a `side x side` grid over `[0, 1]^2`.
pub fn decision_grid(net: &Network, side: usize) -> AppResult<Vec<[f64; 5]>> {
    if net.input_len() != 2 || net.classes() != 2 {
        return Err(AppError::Contract("the half-moons grid needs a 2-input, 2-class model".into()));
    }
    let mut out = Vec::with_capacity(side * side);
    for r in 0..side {
        for c in 0..side {
            let (x1, x2) = (c as f64 / (side - 1) as f64, r as f64 / (side - 1) as f64);
            let x = Tensor::column(vec![x1, x2]);
            let logits = net.logits(&x)?;
            let g1 = net.input_gradient(&x, &LossKind::ClassLogit(1))?;
            let g0 = net.input_gradient(&x, &LossKind::ClassLogit(0))?;
            let g = g1.sub(&g0)?;
            out.push([x1, x2, logits[1] - logits[0], g.data()[0], g.data()[1]]);
        }
    }
    Ok(out)
}

/// `max_i |g_i - mean g|_2` over the grid; 0 exactly when the decision
/// gradient is constant.
pub fn dispersion(grid: &[[f64; 5]]) -> f64 {
    let n = grid.len() as f64;
    let (s1, s2) = grid.iter().fold((0.0, 0.0), |(a, b), p| (a + p[3], b + p[4]));
    let (m1, m2) = (s1 / n, s2 / n);
    grid.iter().map(|p| ((p[3] - m1).powi(2) + (p[4] - m2).powi(2)).sqrt()).fold(0.0, f64::max)
}

/// One GradCert model per `demo.epsilons` entry; ε_t = 0 is plain training.
pub fn halfmoons_sweep(cfg: &ExperimentConfig) -> AppResult<Vec<SweepRun>> {
    let (train, test) = cfg.load_data()?;
    if train.features() != 2 || train.classes != 2 {
        return Err(AppError::Config("demo-halfmoons needs a two-feature, two-class dataset".into()));
    }
    cfg.demo
        .epsilons
        .iter()
        .map(|&eps| {
            let mut c = cfg.clone();
            c.train.regularizer = "grad-cert".into();
            c.train.epsilon = eps;
            let (net, report) = fit(c.init_network(&train)?, &train, Some(&test), &c.train_config()?)?;
            let grid = decision_grid(&net, cfg.demo.grid)?;
            let point = SweepPoint {
                epsilon_t: eps,
                accuracy: accuracy(&net, &test)?,
                dispersion: dispersion(&grid),
                final_probe_delta: report.epochs.last().map_or(0.0, |e| e.probe_delta),
            };
            Ok(SweepRun { point, net, report, grid })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dispersion_of_constant_and_flipping_fields() {
        let constant: Vec<[f64; 5]> = (0..9).map(|i| [i as f64, 0.0, 0.0, 2.0, -1.0]).collect();
        assert_eq!(dispersion(&constant), 0.0);
        let flip: Vec<[f64; 5]> = (0..10).map(|i| [0.0, 0.0, 0.0, if i % 2 == 0 { 3.0 } else { -3.0 }, 4.0]).collect();
        assert!((dispersion(&flip) - 3.0).abs() < 1e-12);
    }
}
