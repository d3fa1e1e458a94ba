use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use super::Value;

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Standard deviation source for a linear Gaussian site: a number, or the
/// name of a parent whose value is used.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum StdSource {
    Const(f64),
    Parent(String),
}

/// Conditional distribution of a site given its parents, in the named form
/// used by the JSON program format.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ConditionalDist {
    /// One probability row per joint parent configuration. Rows are indexed
    /// in mixed radix with the last parent varying fastest.
    CategoricalTable {
        rows: Vec<Vec<f64>>,
    },
    GaussianLinear {
        mean_parent: String,
        std: StdSource,
    },
    GaussianConst {
        mean: f64,
        std: f64,
    },
    /// Shape/rate parameterisation; the mean is `shape / rate`.
    GammaConst {
        shape: f64,
        rate: f64,
    },
    /// `|p| < 1` gives a {0.0, 1.0} Bernoulli(|p|) draw, otherwise
    /// Gaussian(p, s), where p and s are the named parents' values.
    BranchBernoulliGaussian {
        value_parent: String,
        std_parent: String,
    },
}

#[derive(Clone, Debug)]
pub(crate) enum Scale {
    Const(f64),
    Parent(usize),
}

/// Index-resolved conditional used on the hot sampling path.
#[derive(Clone, Debug)]
pub(crate) enum Cpd {
    Table {
        rows: Vec<Vec<f64>>,
        parents: Vec<usize>,
        radices: Vec<usize>,
    },
    GaussianLinear {
        mean: usize,
        std: Scale,
    },
    GaussianConst {
        mean: f64,
        std: f64,
    },
    Gamma {
        shape: f64,
        rate: f64,
        sampler: Gamma<f64>,
    },
    Branch {
        value: usize,
        std: usize,
    },
}

fn gaussian_log_pdf(x: f64, mean: f64, std: f64) -> f64 {
    if std.is_nan() || std <= 0.0 || !std.is_finite() || !x.is_finite() {
        return f64::NEG_INFINITY;
    }
    let z = (x - mean) / std;
    -LN_SQRT_2PI - std.ln() - 0.5 * z * z
}

fn gaussian_draw<R: Rng + ?Sized>(rng: &mut R, mean: f64, std: f64) -> f64 {
    let z: f64 = StandardNormal.sample(rng);
    if std > 0.0 {
        mean + std * z
    } else {
        mean
    }
}

pub(crate) fn draw_from_probs<R: Rng + ?Sized>(rng: &mut R, probs: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (k, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            last_positive = k;
        }
        acc += p;
        if u < acc {
            return k;
        }
    }
    last_positive
}

impl Cpd {
    fn row_index(parents: &[usize], radices: &[usize], values: &[Value]) -> usize {
        parents
            .iter()
            .zip(radices)
            .fold(0, |row, (&p, &r)| row * r + values[p].state())
    }

    pub(crate) fn table_row<'a>(&'a self, values: &[Value]) -> Option<&'a [f64]> {
        match self {
            Cpd::Table {
                rows,
                parents,
                radices,
            } => Some(&rows[Self::row_index(parents, radices, values)]),
            _ => None,
        }
    }

    /// Draw a value given the already-populated parent values.
    pub(crate) fn sample<R: Rng + ?Sized>(&self, values: &[Value], rng: &mut R) -> Value {
        match self {
            Cpd::Table { .. } => {
                let row = self.table_row(values).expect("table");
                Value::State(draw_from_probs(rng, row))
            }
            Cpd::GaussianLinear { mean, std } => {
                let mu = values[*mean].as_f64();
                let sd = match std {
                    Scale::Const(s) => *s,
                    Scale::Parent(p) => values[*p].as_f64(),
                };
                Value::Real(gaussian_draw(rng, mu, sd))
            }
            Cpd::GaussianConst { mean, std } => Value::Real(gaussian_draw(rng, *mean, *std)),
            Cpd::Gamma { sampler, .. } => Value::Real(sampler.sample(rng)),
            Cpd::Branch { value, std } => {
                let p = values[*value].as_f64();
                if p.abs() < 1.0 {
                    let u: f64 = rng.random();
                    Value::Real(if u < p.abs() { 1.0 } else { 0.0 })
                } else {
                    Value::Real(gaussian_draw(rng, p, values[*std].as_f64()))
                }
            }
        }
    }

    /// Log mass (categorical, Bernoulli branch) or log density of `x`.
    pub(crate) fn log_density(&self, x: Value, values: &[Value]) -> f64 {
        match self {
            Cpd::Table { .. } => {
                let row = self.table_row(values).expect("table");
                match x {
                    Value::State(k) if k < row.len() => row[k].ln(),
                    _ => f64::NEG_INFINITY,
                }
            }
            Cpd::GaussianLinear { mean, std } => {
                let sd = match std {
                    Scale::Const(s) => *s,
                    Scale::Parent(p) => values[*p].as_f64(),
                };
                gaussian_log_pdf(x.as_f64(), values[*mean].as_f64(), sd)
            }
            Cpd::GaussianConst { mean, std } => gaussian_log_pdf(x.as_f64(), *mean, *std),
            Cpd::Gamma { shape, rate, .. } => {
                let x = x.as_f64();
                if x > 0.0 && x.is_finite() {
                    shape * rate.ln() - ln_gamma(*shape) + (shape - 1.0) * x.ln() - rate * x
                } else {
                    f64::NEG_INFINITY
                }
            }
            Cpd::Branch { value, std } => {
                let p = values[*value].as_f64();
                let x = x.as_f64();
                if p.abs() < 1.0 {
                    if x == 1.0 {
                        p.abs().ln()
                    } else if x == 0.0 {
                        (1.0 - p.abs()).ln()
                    } else {
                        f64::NEG_INFINITY
                    }
                } else {
                    gaussian_log_pdf(x, p, values[*std].as_f64())
                }
            }
        }
    }
}
