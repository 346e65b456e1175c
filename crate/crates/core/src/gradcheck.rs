//! Central finite-difference checks of the analytic gradients.
//!
//! Relative error is `|analytic - numeric| / max(|analytic|, |numeric|, floor)`.
//! Configurations that land within `kink_margin` of a non-differentiable
//! point (a ReLU pre-activation at zero, or a tiny output norm under
//! normalization) are redrawn, since a finite difference straddling a kink
//! does not approximate either one-sided derivative.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embed::{Descriptor, EmbeddingModel};
use crate::error::{Error, Result};
use crate::loss::{gcl_descriptor_gradients, gcl_loss, LossConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradcheckConfig {
    /// Model layer dimensions, input first.
    pub dims: Vec<usize>,
    pub trials: usize,
    pub seed: u64,
    pub step: f64,
    pub tolerance: f64,
    pub floor: f64,
    pub kink_margin: f64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            dims: vec![8, 16, 6],
            trials: 200,
            seed: 0,
            step: 1e-6,
            tolerance: 1e-4,
            floor: 1e-6,
            kink_margin: 1e-3,
        }
    }
}

impl GradcheckConfig {
    pub fn validate(&self) -> Result<()> {
        if !(2..=4).contains(&self.dims.len()) || self.dims.contains(&0) {
            return Err(Error::invalid("dims must list 2 to 4 positive sizes"));
        }
        if !(self.step > 0.0 && self.tolerance > 0.0 && self.floor > 0.0 && self.kink_margin >= 0.0)
        {
            return Err(Error::invalid("step, tolerance and floor must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub trials: usize,
    /// Individual derivatives compared.
    pub checks: usize,
    pub max_rel_error: f64,
    pub failures: usize,
}

impl SuiteReport {
    fn record(&mut self, analytic: f64, numeric: f64, cfg: &GradcheckConfig) {
        let err = relative_error(analytic, numeric, cfg.floor);
        self.checks += 1;
        if err > self.max_rel_error || err.is_nan() {
            self.max_rel_error = err;
        }
        if !(err <= cfg.tolerance) {
            self.failures += 1;
        }
    }

    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub loss_level: SuiteReport,
    pub model_level: SuiteReport,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.loss_level.passed() && self.model_level.passed()
    }

    pub fn max_rel_error(&self) -> f64 {
        self.loss_level
            .max_rel_error
            .max(self.model_level.max_rel_error)
    }

    pub fn is_vacuous(&self) -> bool {
        self.loss_level.checks == 0 && self.model_level.checks == 0
    }
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

fn central(mut f: impl FnMut(f64) -> Result<f64>, x: f64, h: f64) -> Result<f64> {
    Ok((f(x + h)? - f(x - h)?) / (2.0 * h))
}

fn uniform_vec(rng: &mut ChaCha8Rng, n: usize, lim: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-lim..lim)).collect()
}

/// Derivative in `d` and in both descriptors, per random configuration.
pub fn loss_level(cfg: &GradcheckConfig) -> Result<SuiteReport> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let loss_cfg = LossConfig::default();
    let tau = loss_cfg.margin_tau;
    let dim = *cfg.dims.last().expect("validated");
    let mut rep = SuiteReport::default();
    for _ in 0..cfg.trials {
        let psi = match rng.random_range(0..4) {
            0 => 0.0,
            1 => 1.0,
            _ => rng.random_range(0.0..=1.0),
        };
        let d = loop {
            let d = rng.random_range(cfg.kink_margin.max(cfg.step * 10.0)..2.0);
            if (d - tau).abs() >= cfg.kink_margin {
                break d;
            }
        };
        let analytic = gcl_loss(d, psi, &loss_cfg)?.dloss_dd;
        let numeric = central(|x| Ok(gcl_loss(x, psi, &loss_cfg)?.loss), d, cfg.step)?;
        rep.record(analytic, numeric, cfg);

        let (a, b) = loop {
            let a = uniform_vec(&mut rng, dim, 1.0);
            let b = uniform_vec(&mut rng, dim, 1.0);
            let dist = a
                .iter()
                .zip(&b)
                .map(|(x, y)| (x - y).powi(2))
                .sum::<f64>()
                .sqrt();
            if dist > cfg.kink_margin && (dist - tau).abs() >= cfg.kink_margin {
                break (a, b);
            }
        };
        let g = gcl_descriptor_gradients(
            &Descriptor::new(a.clone()),
            &Descriptor::new(b.clone()),
            psi,
            &loss_cfg,
        )?;
        let loss_of = |a: &[f64], b: &[f64]| -> Result<f64> {
            Ok(gcl_descriptor_gradients(
                &Descriptor::new(a.to_vec()),
                &Descriptor::new(b.to_vec()),
                psi,
                &loss_cfg,
            )?
            .loss)
        };
        for i in 0..dim {
            let num_a = central(
                |x| {
                    let mut p = a.clone();
                    p[i] = x;
                    loss_of(&p, &b)
                },
                a[i],
                cfg.step,
            )?;
            rep.record(g.grad_a[i], num_a, cfg);
            let num_b = central(
                |x| {
                    let mut p = b.clone();
                    p[i] = x;
                    loss_of(&a, &p)
                },
                b[i],
                cfg.step,
            )?;
            rep.record(g.grad_b[i], num_b, cfg);
        }
        rep.trials += 1;
    }
    Ok(rep)
}

/// Smallest |pre-activation| over hidden units, and the output pre-norm.
fn kink_distance(model: &EmbeddingModel, input: &[f64]) -> f64 {
    let mut x = input.to_vec();
    let mut closest = f64::INFINITY;
    let last = model.layers.len() - 1;
    for (li, l) in model.layers.iter().enumerate() {
        let z: Vec<f64> = (0..l.out_dim)
            .map(|o| {
                l.bias[o]
                    + (0..l.in_dim)
                        .map(|i| l.weights[o * l.in_dim + i] * x[i])
                        .sum::<f64>()
            })
            .collect();
        if li < last {
            closest = z.iter().fold(closest, |m, v| m.min(v.abs()));
            x = z.into_iter().map(|v| v.max(0.0)).collect();
        } else if model.output_normalize {
            closest = closest.min(z.iter().map(|v| v * v).sum::<f64>().sqrt());
        }
    }
    closest
}

/// Every shared parameter of a siamese pair, per random configuration.
pub fn model_level(cfg: &GradcheckConfig) -> Result<SuiteReport> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x005E_ED0F_D1FF);
    let loss_cfg = LossConfig::default();
    let tau = loss_cfg.margin_tau;
    let in_dim = cfg.dims[0];
    let mut rep = SuiteReport::default();
    for _ in 0..cfg.trials {
        let (model, a, b, psi) = loop {
            let normalize = rng.random_bool(0.75);
            let model = EmbeddingModel::new(&cfg.dims, normalize, rng.random())?;
            let a = uniform_vec(&mut rng, in_dim, 1.0);
            let b = uniform_vec(&mut rng, in_dim, 1.0);
            let psi = rng.random_range(0.0..=1.0);
            if kink_distance(&model, &a) < cfg.kink_margin
                || kink_distance(&model, &b) < cfg.kink_margin
            {
                continue;
            }
            let da = model.forward(&a)?.descriptor;
            let db = model.forward(&b)?.descriptor;
            let d = crate::loss::l2_distance(&da, &db)?;
            if d > cfg.kink_margin && (d - tau).abs() >= cfg.kink_margin {
                break (model, a, b, psi);
            }
        };
        let (_, grads) = model.backward_pair(&a, &b, psi, &loss_cfg)?;
        let analytic = grads.to_flat();
        let params = model.flat_params();
        let mut probe = model.clone();
        for (k, &g) in analytic.iter().enumerate() {
            let numeric = central(
                |x| {
                    let mut p = params.clone();
                    p[k] = x;
                    probe.set_flat_params(&p)?;
                    probe.pair_loss(&a, &b, psi, &loss_cfg)
                },
                params[k],
                cfg.step,
            )?;
            rep.record(g, numeric, cfg);
        }
        rep.trials += 1;
    }
    Ok(rep)
}

pub fn run(cfg: &GradcheckConfig) -> Result<GradcheckReport> {
    Ok(GradcheckReport {
        loss_level: loss_level(cfg)?,
        model_level: model_level(cfg)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_trials_is_vacuous() {
        let rep = run(&GradcheckConfig {
            trials: 0,
            ..GradcheckConfig::default()
        })
        .unwrap();
        assert!(rep.passed() && rep.is_vacuous());
    }

    #[test]
    fn small_run_passes() {
        let rep = run(&GradcheckConfig {
            trials: 10,
            ..GradcheckConfig::default()
        })
        .unwrap();
        assert!(rep.passed(), "{rep:?}");
        assert_eq!(rep.loss_level.trials, 10);
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(1e-9, 0.0, 1e-6), 1e-3);
        assert_eq!(relative_error(2.0, 1.0, 1e-6), 0.5);
    }
}
