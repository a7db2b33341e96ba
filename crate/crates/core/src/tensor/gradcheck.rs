//! Central finite-difference gradient checking.
//!
//! The numeric side only ever evaluates forward passes, so it stays
//! independent of the backward rules it is checking. Coordinates whose
//! `±step` perturbation changes [`Tape::branch_signature`] straddle a kink
//! (relu, clamp, pooling argmax) and are skipped rather than compared.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Tape, Tensor, Var};
use crate::Error;

#[derive(Clone, Debug)]
pub struct GradCheckConfig {
    pub step: f64,
    /// Denominator floor of the relative error, so that near-zero gradients
    /// are compared on an absolute scale.
    pub floor: f64,
    /// Compare at most this many coordinates (sampled without replacement);
    /// `None` checks every coordinate.
    pub max_coords: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-5,
            floor: 1e-6,
            max_coords: None,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct CoordCheck {
    pub input: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub checks: Vec<CoordCheck>,
    pub skipped_kinks: usize,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.checks.iter().map(|c| c.rel_error).fold(0.0, f64::max)
    }

    pub fn worst(&self) -> Option<&CoordCheck> {
        self.checks
            .iter()
            .max_by(|a, b| a.rel_error.total_cmp(&b.rel_error))
    }

    pub fn passes(&self, rtol: f64) -> bool {
        !self.checks.is_empty() && self.max_rel_error() <= rtol
    }
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares the tape gradient of `f` against central differences.
///
/// `f` receives a fresh tape plus one leaf per entry of `inputs` and must
/// return a scalar loss.
pub fn check_gradients<F>(inputs: &[Tensor], f: F, cfg: &GradCheckConfig) -> Result<GradCheckReport, Error>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var, Error>,
{
    let eval = |values: &[Tensor]| -> Result<(f64, u64), Error> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|t| tape.leaf(t.clone(), false)).collect();
        let loss = f(&mut tape, &vars)?;
        let value = tape.value(loss).item().ok_or_else(|| {
            Error::from(super::TensorError::NotScalar(tape.value(loss).shape()))
        })?;
        Ok((value, tape.branch_signature()))
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let loss = f(&mut tape, &vars)?;
    tape.backward(loss)?;
    let base_sig = tape.branch_signature();
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| {
            tape.grad(v)
                .map(|g| g.data().to_vec())
                .unwrap_or_else(|| vec![0.0; t.len()])
        })
        .collect();

    let mut coords: Vec<(usize, usize)> = inputs
        .iter()
        .enumerate()
        .flat_map(|(i, t)| (0..t.len()).map(move |j| (i, j)))
        .collect();
    if cfg.max_coords.is_some() {
        coords.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed));
    }

    let mut report = GradCheckReport::default();
    let mut values = inputs.to_vec();
    for (input, index) in coords {
        if cfg.max_coords.is_some_and(|m| report.checks.len() >= m) {
            break;
        }
        let original = values[input].data()[index];
        values[input].data_mut()[index] = original + cfg.step;
        let (plus, sig_plus) = eval(&values)?;
        values[input].data_mut()[index] = original - cfg.step;
        let (minus, sig_minus) = eval(&values)?;
        values[input].data_mut()[index] = original;
        if sig_plus != base_sig || sig_minus != base_sig {
            report.skipped_kinks += 1;
            continue;
        }
        let numeric = (plus - minus) / (2.0 * cfg.step);
        let a = analytic[input][index];
        report.checks.push(CoordCheck {
            input,
            index,
            analytic: a,
            numeric,
            rel_error: relative_error(a, numeric, cfg.floor),
        });
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_tensor(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
        let data = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
        Tensor::new(rows, cols, data).unwrap()
    }

    /// Values at least `gap` away from zero, for kinked primitives.
    fn away_from_zero(rng: &mut ChaCha8Rng, rows: usize, cols: usize, gap: f64) -> Tensor {
        let data = (0..rows * cols)
            .map(|_| {
                let m: f64 = rng.random_range(gap..1.5);
                if rng.random_bool(0.5) { m } else { -m }
            })
            .collect();
        Tensor::new(rows, cols, data).unwrap()
    }

    fn assert_passes(report: &GradCheckReport, rtol: f64, min_checks: usize) {
        assert!(
            report.checks.len() >= min_checks,
            "only {} coordinates checked",
            report.checks.len()
        );
        assert!(
            report.passes(rtol),
            "worst coordinate: {:?}",
            report.worst()
        );
    }

    /// Every primitive, ≥100 random coordinates each, rel error ≤ 1e-4.
    #[test]
    fn every_primitive_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let cfg = GradCheckConfig::default();
        type Build = fn(&mut Tape, &[Var]) -> Result<Var, Error>;
        let cases: Vec<(&str, Vec<Tensor>, Build)> = vec![
            (
                "matmul",
                vec![random_tensor(&mut rng, 12, 6), random_tensor(&mut rng, 6, 5)],
                |t, v| {
                    let c = t.matmul(v[0], v[1])?;
                    let c2 = t.mul(c, c)?;
                    Ok(t.sum(c2))
                },
            ),
            (
                "add_sub_mul",
                vec![random_tensor(&mut rng, 10, 10), random_tensor(&mut rng, 10, 10)],
                |t, v| {
                    let a = t.add(v[0], v[1])?;
                    let s = t.sub(v[0], v[1])?;
                    let m = t.mul(a, s)?;
                    let m = t.mul(m, v[1])?;
                    Ok(t.sum(m))
                },
            ),
            (
                "div",
                vec![random_tensor(&mut rng, 10, 10), away_from_zero(&mut rng, 10, 10, 0.5)],
                |t, v| {
                    let d = t.div(v[0], v[1])?;
                    Ok(t.sum(d))
                },
            ),
            (
                "bias_and_columns",
                vec![
                    random_tensor(&mut rng, 25, 4),
                    random_tensor(&mut rng, 1, 4),
                    away_from_zero(&mut rng, 25, 1, 0.5),
                ],
                |t, v| {
                    let b = t.add_bias(v[0], v[1])?;
                    let m = t.mul_col(b, v[2])?;
                    let d = t.div_col(m, v[2])?;
                    let d = t.mul(d, m)?;
                    Ok(t.sum(d))
                },
            ),
            (
                "exp_log_sqrt_scalar",
                vec![away_from_zero(&mut rng, 10, 10, 0.2)],
                |t, v| {
                    let sq = t.mul(v[0], v[0])?;
                    let r = t.sqrt(sq);
                    let l = t.log(r);
                    let e = t.exp(v[0]);
                    let e = t.scale(e, 0.5);
                    let e = t.add_scalar(e, 2.0);
                    let s = t.mul(l, e)?;
                    t.mean(s).map_err(Into::into)
                },
            ),
            (
                "relu_clamp",
                vec![away_from_zero(&mut rng, 10, 10, 1e-3)],
                |t, v| {
                    let r = t.relu(v[0]);
                    let c = t.clamp_min(v[0], 0.0);
                    let p = t.mul(r, c)?;
                    let q = t.add(p, r)?;
                    Ok(t.sum(q))
                },
            ),
            (
                "softmax_pick_log",
                vec![random_tensor(&mut rng, 20, 6)],
                |t, v| {
                    let s = t.softmax(v[0])?;
                    let labels: Vec<usize> = (0..20).map(|i| i % 6).collect();
                    let p = t.pick(s, &labels)?;
                    let l = t.log(p);
                    let c = t.column(s, 2)?;
                    let c = t.mul(c, c)?;
                    let both = t.add(l, c)?;
                    Ok(t.sum(both))
                },
            ),
            (
                "concat_gather_rowsum_reshape",
                vec![random_tensor(&mut rng, 12, 5), random_tensor(&mut rng, 12, 4)],
                |t, v| {
                    let c = t.concat(v[0], v[1])?;
                    let g = t.gather(c, &[3, 3, 0, 11, 7, 2])?;
                    let g2 = t.mul(g, g)?;
                    let r = t.row_sum(g2);
                    let r = t.reshape(r, 2, 3)?;
                    let r = t.mul(r, r)?;
                    Ok(t.sum(r))
                },
            ),
            (
                "grouped_max_pool",
                // distinct values spaced far apart: no ties within a step
                vec![{
                    let mut vals: Vec<f64> = (0..120).map(|i| i as f64 * 0.01).collect();
                    vals.shuffle(&mut rng);
                    Tensor::new(30, 4, vals).unwrap()
                }],
                |t, v| {
                    let table: Vec<usize> = (0..40).map(|i| (i * 7) % 30).collect();
                    let p = t.grouped_max_pool(v[0], &table, 4)?;
                    let p = t.mul(p, p)?;
                    Ok(t.sum(p))
                },
            ),
            (
                "weighted_gather",
                vec![random_tensor(&mut rng, 8, 16), random_tensor(&mut rng, 12, 3)],
                |t, v| {
                    let table: Vec<usize> = (0..36).map(|i| (i * 5) % 8).collect();
                    let y = t.weighted_gather(v[0], v[1], &table)?;
                    let y = t.mul(y, y)?;
                    Ok(t.sum(y))
                },
            ),
        ];
        for (name, inputs, build) in cases {
            let report = check_gradients(&inputs, build, &cfg).unwrap();
            assert!(report.checks.len() >= 100, "{name}: {} coords", report.checks.len());
            assert!(report.passes(1e-4), "{name}: {:?}", report.worst());
        }
    }

    #[test]
    fn matmul_gradient_tight_tolerance() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = random_tensor(&mut rng, 4, 3);
        let b = random_tensor(&mut rng, 3, 5);
        let report = check_gradients(
            &[a, b],
            |t, v| {
                let c = t.matmul(v[0], v[1])?;
                Ok(t.sum(c))
            },
            &GradCheckConfig::default(),
        )
        .unwrap();
        assert_passes(&report, 1e-6, 27);
    }

    #[test]
    fn concat_then_sum_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let report = check_gradients(
            &[random_tensor(&mut rng, 3, 2), random_tensor(&mut rng, 3, 1)],
            |t, v| {
                let c = t.concat(v[0], v[1])?;
                Ok(t.sum(c))
            },
            &GradCheckConfig::default(),
        )
        .unwrap();
        for c in &report.checks {
            assert_eq!(c.analytic, 1.0);
            assert!((c.numeric - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn kink_crossings_are_skipped() {
        let x = Tensor::new(1, 3, vec![0.0, 1.0, -1.0]).unwrap();
        let report = check_gradients(
            &[x],
            |t, v| {
                let r = t.relu(v[0]);
                Ok(t.sum(r))
            },
            &GradCheckConfig::default(),
        )
        .unwrap();
        assert_eq!(report.skipped_kinks, 1);
        assert_passes(&report, 1e-9, 2);
    }
}
