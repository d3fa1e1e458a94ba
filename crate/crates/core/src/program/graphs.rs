//! Benchmark graph families and the built-in branching program.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use super::{ConditionalDist, ProgramSpec, SiteSpec};
use crate::error::{Error, Result};
use crate::rng;

/// Binary site whose CPT rows are `[1 - p, p]` with `p ~ Uniform(0, 1)` per
/// parent configuration.
fn random_binary_site<R: Rng>(name: String, parents: &[String], rng: &mut R) -> SiteSpec {
    let rows = (0..1usize << parents.len())
        .map(|_| {
            let p: f64 = rng.random();
            vec![1.0 - p, p]
        })
        .collect();
    let parents: Vec<&str> = parents.iter().map(String::as_str).collect();
    SiteSpec::categorical(name, &parents, rows)
}

fn node(i: usize) -> String {
    format!("X{i}")
}

/// Chain `X0 → X1 → … → X{n-1}`.
pub fn make_chain(n: usize, seed: u64) -> Result<ProgramSpec> {
    if n < 2 {
        return Err(Error::SizeTooSmall {
            family: "chain",
            min: 2,
            got: n,
        });
    }
    let mut rng = rng::stream(seed, "cpt");
    let sites = (0..n)
        .map(|i| {
            let parents = if i == 0 { vec![] } else { vec![node(i - 1)] };
            random_binary_site(node(i), &parents, &mut rng)
        })
        .collect();
    ProgramSpec::new(format!("chain{n}"), sites)
}

/// Grid with node `(r, c)` at index `r * cols + c`, edges pointing right and
/// down. Parents are listed in index order (up, then left).
pub fn make_grid(rows: usize, cols: usize, seed: u64) -> Result<ProgramSpec> {
    if rows == 0 || cols == 0 || rows * cols < 2 {
        return Err(Error::SizeTooSmall {
            family: "grid",
            min: 2,
            got: rows * cols,
        });
    }
    let mut rng = rng::stream(seed, "cpt");
    let mut sites = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            let mut parents = Vec::new();
            if r > 0 {
                parents.push(node((r - 1) * cols + c));
            }
            if c > 0 {
                parents.push(node(r * cols + c - 1));
            }
            sites.push(random_binary_site(node(r * cols + c), &parents, &mut rng));
        }
    }
    let name = if rows == cols {
        format!("grid{}", rows * cols)
    } else {
        format!("grid{rows}x{cols}")
    };
    ProgramSpec::new(name, sites)
}

/// Star with root `X0` and edges `X0 → Xi`.
pub fn make_star(n: usize, seed: u64) -> Result<ProgramSpec> {
    if n < 2 {
        return Err(Error::SizeTooSmall {
            family: "star",
            min: 2,
            got: n,
        });
    }
    let mut rng = rng::stream(seed, "cpt");
    let root = vec![node(0)];
    let sites = (0..n)
        .map(|i| {
            let parents: &[String] = if i == 0 { &[] } else { &root };
            random_binary_site(node(i), parents, &mut rng)
        })
        .collect();
    ProgramSpec::new(format!("star{n}"), sites)
}

/// The branching random-walk program: `t0 ~ N(0, 3)`, `v ~ Gamma(3, 1)`,
/// then `t1..t50`, each a Bernoulli(|t_{i-1}|) draw when `|t_{i-1}| < 1` and
/// a Gaussian(t_{i-1}, v) draw otherwise. The mixed-measure sites are not
/// proposable.
pub fn builtin_probprog() -> ProgramSpec {
    let mut sites = vec![
        SiteSpec::continuous(
            "t0",
            &[],
            ConditionalDist::GaussianConst {
                mean: 0.0,
                std: 3.0,
            },
        ),
        SiteSpec::continuous(
            "v",
            &[],
            ConditionalDist::GammaConst {
                shape: 3.0,
                rate: 1.0,
            },
        ),
    ];
    for i in 1..=50 {
        let prev = format!("t{}", i - 1);
        sites.push(
            SiteSpec::continuous(
                format!("t{i}"),
                &[prev.as_str(), "v"],
                ConditionalDist::BranchBernoulliGaussian {
                    value_parent: prev.clone(),
                    std_parent: "v".into(),
                },
            )
            .with_proposable(false),
        );
    }
    ProgramSpec::new("probprog", sites).expect("built-in program is valid")
}

/// Named program family, as accepted on the command line (`chain4`,
/// `grid9`, `grid3x4`, `star8`, `probprog`).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GraphFamily {
    Chain(usize),
    Grid(usize, usize),
    Star(usize),
    ProbProg,
}

impl GraphFamily {
    /// The eight benchmark graphs.
    pub const BENCHMARK: [GraphFamily; 8] = [
        GraphFamily::Chain(4),
        GraphFamily::Chain(16),
        GraphFamily::Chain(32),
        GraphFamily::Grid(3, 3),
        GraphFamily::Grid(4, 4),
        GraphFamily::Star(4),
        GraphFamily::Star(8),
        GraphFamily::Star(32),
    ];

    pub fn build(self, seed: u64) -> Result<ProgramSpec> {
        match self {
            GraphFamily::Chain(n) => make_chain(n, seed),
            GraphFamily::Grid(r, c) => make_grid(r, c, seed),
            GraphFamily::Star(n) => make_star(n, seed),
            GraphFamily::ProbProg => Ok(builtin_probprog()),
        }
    }

    pub fn node_count(self) -> usize {
        match self {
            GraphFamily::Chain(n) | GraphFamily::Star(n) => n,
            GraphFamily::Grid(r, c) => r * c,
            GraphFamily::ProbProg => 52,
        }
    }
}

impl fmt::Display for GraphFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GraphFamily::Chain(n) => write!(f, "chain{n}"),
            GraphFamily::Grid(r, c) if r == c => write!(f, "grid{}", r * c),
            GraphFamily::Grid(r, c) => write!(f, "grid{r}x{c}"),
            GraphFamily::Star(n) => write!(f, "star{n}"),
            GraphFamily::ProbProg => write!(f, "probprog"),
        }
    }
}

impl FromStr for GraphFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase();
        let bad = || Error::InvalidConfig(format!("unknown graph family `{s}`"));
        let num = |t: &str| t.parse::<usize>().map_err(|_| bad());
        if lower == "probprog" {
            return Ok(GraphFamily::ProbProg);
        }
        if let Some(n) = lower.strip_prefix("chain") {
            return Ok(GraphFamily::Chain(num(n)?));
        }
        if let Some(n) = lower.strip_prefix("star") {
            return Ok(GraphFamily::Star(num(n)?));
        }
        if let Some(rest) = lower.strip_prefix("grid") {
            if let Some((r, c)) = rest.split_once('x') {
                return Ok(GraphFamily::Grid(num(r)?, num(c)?));
            }
            let n = num(rest)?;
            let side = (n as f64).sqrt().round() as usize;
            if side * side != n {
                return Err(Error::InvalidConfig(format!(
                    "grid{n} is not square; use gridRxC"
                )));
            }
            return Ok(GraphFamily::Grid(side, side));
        }
        Err(bad())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::program::{SiteKind, Value};

    #[test]
    fn chain_edges() {
        let p = make_chain(4, 7).unwrap();
        assert_eq!(p.len(), 4);
        assert_eq!(p.edges(), vec![(0, 1), (1, 2), (2, 3)]);
    }

    #[test]
    fn grid_edges() {
        let p = make_grid(3, 3, 7).unwrap();
        assert_eq!(p.len(), 9);
        let edges = p.edges();
        assert_eq!(edges.len(), 12);
        assert!(edges.contains(&(0, 1)) && edges.contains(&(0, 3)));
        assert!(!edges.contains(&(4, 8)));
        assert!(edges.contains(&(5, 8)) && edges.contains(&(7, 8)));
    }

    #[test]
    fn star_edges() {
        let p = make_star(8, 7).unwrap();
        assert_eq!(p.len(), 8);
        let edges = p.edges();
        assert_eq!(edges.len(), 7);
        assert!(edges.iter().all(|&(a, _)| a == 0));
    }

    #[test]
    fn too_small() {
        assert!(matches!(make_chain(1, 0), Err(Error::SizeTooSmall { .. })));
        assert!(matches!(make_star(0, 0), Err(Error::SizeTooSmall { .. })));
        assert!(matches!(
            make_grid(1, 1, 0),
            Err(Error::SizeTooSmall { .. })
        ));
        assert!(make_grid(1, 2, 0).is_ok());
    }

    #[test]
    fn generators_are_deterministic() {
        for fam in GraphFamily::BENCHMARK {
            let a = fam.build(5).unwrap().to_json_string();
            let b = fam.build(5).unwrap().to_json_string();
            let c = fam.build(6).unwrap().to_json_string();
            assert_eq!(a, b);
            assert_ne!(a, c);
        }
    }

    #[test]
    fn family_names_round_trip() {
        for fam in GraphFamily::BENCHMARK {
            assert_eq!(fam.to_string().parse::<GraphFamily>().unwrap(), fam);
        }
        assert_eq!(
            "Grid3x4".parse::<GraphFamily>().unwrap(),
            GraphFamily::Grid(3, 4)
        );
        assert!("grid10".parse::<GraphFamily>().is_err());
        assert!("tree5".parse::<GraphFamily>().is_err());
    }

    #[test]
    fn probprog_structure() {
        let p = builtin_probprog();
        assert_eq!(p.len(), 52);
        assert_eq!(p.site(0).name, "t0");
        assert_eq!(p.site(1).name, "v");
        assert_eq!(p.site(51).name, "t50");
        assert!(p.sites().iter().all(|s| s.kind == SiteKind::Continuous));
        assert!(p.sites()[2..].iter().all(|s| !s.proposable));
        assert_eq!(p.parent_indices(2), &[0, 1]);
        assert_eq!(p.parent_indices(51), &[50, 1]);
    }

    #[test]
    fn probprog_prior_moments() {
        let p = builtin_probprog();
        let mut rng = rng::stream(1, "t");
        let n = 100_000;
        let (mut t0, mut t0sq, mut v) = (0.0, 0.0, 0.0);
        for _ in 0..n {
            let a = p.ancestral_sample(&mut rng);
            let x = a.values[0].as_f64();
            t0 += x;
            t0sq += x * x;
            v += a.values[1].as_f64();
            assert!(p.log_joint(&a, None).is_finite());
        }
        let n = n as f64;
        let std = (t0sq / n - (t0 / n).powi(2)).sqrt();
        assert!((std - 3.0).abs() < 0.05, "{std}");
        assert!((v / n - 3.0).abs() < 0.05, "{}", v / n);
    }

    #[test]
    fn probprog_branch_is_bernoulli_below_one() {
        let p = builtin_probprog();
        let mut rng = rng::stream(2, "t");
        let mut values = vec![Value::Real(0.5), Value::Real(3.0)];
        values.resize(52, Value::Real(0.0));
        let n = 100_000;
        let mut sum = 0.0;
        for _ in 0..n {
            let x = p.sample_site(2, &values, &mut rng).as_f64();
            assert!(x == 0.0 || x == 1.0);
            sum += x;
        }
        assert!((sum / n as f64 - 0.5).abs() < 0.01);

        let mut a = p.ancestral_sample(&mut rng);
        a.values[0] = Value::Real(0.5);
        a.values[2] = Value::Real(0.5);
        assert_eq!(p.log_joint(&a, None), f64::NEG_INFINITY);
    }
}
