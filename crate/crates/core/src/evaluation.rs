//! Test sets, ground truth, the correlation metric and the benchmark grid.

use std::fmt;
use std::io::Write;
use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::{cond_marginals, importance_estimate, Marginal, MarginalSet, Proposal};
use crate::masking::{compute_prior_stats, sample_mask, EncodingLayout, DEFAULT_PRIOR_SAMPLES};
use crate::neural::{build_um, ArchSpec, TrainMode, UmModel};
use crate::program::{enumerate_posterior, Evidence, GraphFamily, ProgramSpec};
use crate::rng;
use crate::training::{train, TrainConfig};

pub const DEFAULT_QUERIES: usize = 100;
pub const DEFAULT_IS_SAMPLES: usize = 1_000_000;

/// Largest program handed to enumeration by [`GroundTruthMethod::auto`].
const AUTO_ENUMERATION_SITES: usize = 20;

#[derive(Clone, Debug, PartialEq)]
pub struct TestQuery {
    pub evidence: Evidence,
    /// Unobserved sites, ascending.
    pub query_sites: Vec<usize>,
}

/// Queries from prior draws: each keeps the unmasked part of a fresh
/// ancestral sample as evidence. Empty and full masks are redrawn.
pub fn make_test_set<R: Rng + ?Sized>(
    program: &ProgramSpec,
    n_queries: usize,
    rng: &mut R,
) -> Result<Vec<TestQuery>> {
    if n_queries < 1 {
        return Err(Error::InvalidConfig("need at least one query".into()));
    }
    let n = program.len();
    if n < 2 {
        return Err(Error::InvalidConfig(
            "queries need a program with at least two sites".into(),
        ));
    }
    let mut out = Vec::with_capacity(n_queries);
    while out.len() < n_queries {
        let sample = program.ancestral_sample(rng);
        let mask = sample_mask(n, rng);
        if mask.size() == 0 || mask.size() == n {
            continue;
        }
        let mut evidence = Evidence::new();
        let mut query_sites = Vec::new();
        for i in 0..n {
            if mask.is_masked(i) {
                query_sites.push(i);
            } else {
                evidence.observe(i, sample.values[i]);
            }
        }
        out.push(TestQuery {
            evidence,
            query_sites,
        });
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroundTruthMethod {
    Enumeration,
    IsPrior { n: usize },
}

impl GroundTruthMethod {
    /// Enumeration for small all-categorical programs, otherwise 1M-sample
    /// likelihood weighting.
    pub fn auto(program: &ProgramSpec) -> Self {
        if program.all_categorical() && program.len() <= AUTO_ENUMERATION_SITES {
            GroundTruthMethod::Enumeration
        } else {
            GroundTruthMethod::IsPrior {
                n: DEFAULT_IS_SAMPLES,
            }
        }
    }
}

impl fmt::Display for GroundTruthMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GroundTruthMethod::Enumeration => f.write_str("enumeration"),
            GroundTruthMethod::IsPrior { n } => write!(f, "is_prior({n})"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruth {
    pub marginals: MarginalSet,
    pub method: GroundTruthMethod,
}

pub fn ground_truth(
    program: &ProgramSpec,
    query: &TestQuery,
    method: GroundTruthMethod,
    seed: u64,
) -> Result<GroundTruth> {
    let marginals = match method {
        GroundTruthMethod::Enumeration => enumerate_posterior(program, &query.evidence)?,
        GroundTruthMethod::IsPrior { n } => {
            importance_estimate(program, &query.evidence, Proposal::Prior, n, seed)?.marginals
        }
    };
    Ok(GroundTruth { marginals, method })
}

/// Ground truths for a whole test set; query `q` uses the stream
/// `derive_indexed(seed, "truth", q)`.
pub fn ground_truths(
    program: &ProgramSpec,
    queries: &[TestQuery],
    method: GroundTruthMethod,
    seed: u64,
) -> Result<Vec<GroundTruth>> {
    queries
        .iter()
        .enumerate()
        .map(|(q, query)| {
            ground_truth(
                program,
                query,
                method,
                rng::derive_indexed(seed, "truth", q as u64),
            )
        })
        .collect()
}

/// Pearson product-moment correlation.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::LengthMismatch(format!(
            "pearson: {} vs {} values",
            xs.len(),
            ys.len()
        )));
    }
    if xs.len() < 2 {
        return Err(Error::LengthMismatch(
            "pearson needs at least two pairs".into(),
        ));
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("pearson input".into()));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 {
        return Err(Error::ZeroVariance("first series"));
    }
    if syy == 0.0 {
        return Err(Error::ZeroVariance("second series"));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct CorrelationScores {
    /// Over pooled non-reference state probabilities; `None` if the program
    /// has no categorical site.
    pub categorical: Option<f64>,
    /// Over pooled posterior means of continuous sites.
    pub continuous: Option<f64>,
}

/// `(prediction, truth)` pairs.
pub type Pairs = Vec<(f64, f64)>;

/// Pooled prediction/truth pairs for every query and unobserved site:
/// `(categorical pairs, continuous pairs)`.
pub fn pooled_pairs(predictions: &[MarginalSet], truths: &[GroundTruth]) -> Result<(Pairs, Pairs)> {
    if predictions.len() != truths.len() {
        return Err(Error::LengthMismatch(format!(
            "{} predictions for {} ground truths",
            predictions.len(),
            truths.len()
        )));
    }
    let mut cat = Vec::new();
    let mut cont = Vec::new();
    for (pred, truth) in predictions.iter().zip(truths) {
        for (site, t) in truth.marginals.iter() {
            let p = pred
                .get(site)
                .ok_or_else(|| Error::LengthMismatch(format!("no prediction for site #{site}")))?;
            match (p, t) {
                (Marginal::Categorical(p), Marginal::Categorical(t)) => {
                    cat.extend(p.iter().zip(t).skip(1).map(|(a, b)| (*a, *b)))
                }
                (Marginal::Continuous { mean: p }, Marginal::Continuous { mean: t }) => {
                    cont.push((*p, *t))
                }
                _ => {
                    return Err(Error::LengthMismatch(format!(
                        "site #{site}: prediction and ground truth disagree on kind"
                    )))
                }
            }
        }
    }
    Ok((cat, cont))
}

fn score(pairs: &[(f64, f64)]) -> Result<Option<f64>> {
    if pairs.is_empty() {
        return Ok(None);
    }
    let (xs, ys): (Vec<f64>, Vec<f64>) = pairs.iter().copied().unzip();
    pearson(&xs, &ys).map(Some).map_err(|e| match e {
        Error::ZeroVariance("first series") => Error::ZeroVariance("predictions"),
        Error::ZeroVariance("second series") => Error::ZeroVariance("ground truth"),
        e => e,
    })
}

pub fn score_predictions(
    predictions: &[MarginalSet],
    truths: &[GroundTruth],
) -> Result<CorrelationScores> {
    let (cat, cont) = pooled_pairs(predictions, truths)?;
    Ok(CorrelationScores {
        categorical: score(&cat)?,
        continuous: score(&cont)?,
    })
}

/// Correlation between the network's single-pass marginals and the ground
/// truth, pooled over all queries.
pub fn correlation_score(
    model: &UmModel,
    queries: &[TestQuery],
    truths: &[GroundTruth],
) -> Result<CorrelationScores> {
    let predictions = queries
        .iter()
        .map(|q| cond_marginals(model, &q.evidence))
        .collect::<Result<Vec<_>>>()?;
    score_predictions(&predictions, truths)
}

#[derive(Clone, Debug)]
pub struct BenchmarkConfig {
    pub families: Vec<GraphFamily>,
    pub modes: Vec<TrainMode>,
    pub presets: Vec<u8>,
    /// Batch size, iterations and logging; the seed is replaced per cell.
    pub budget: TrainConfig,
    pub seeds: Vec<u64>,
    pub n_queries: usize,
    pub is_samples: usize,
    pub prior_samples: usize,
    /// Fill the `seconds` column. Off by default so reports are
    /// byte-reproducible.
    pub record_timing: bool,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        BenchmarkConfig {
            families: GraphFamily::BENCHMARK.to_vec(),
            modes: vec![TrainMode::Standard, TrainMode::Flexible],
            presets: vec![1, 2, 3],
            budget: TrainConfig::default(),
            seeds: vec![0],
            n_queries: DEFAULT_QUERIES,
            is_samples: DEFAULT_IS_SAMPLES,
            prior_samples: DEFAULT_PRIOR_SAMPLES,
            record_timing: false,
        }
    }
}

impl BenchmarkConfig {
    pub fn cell_count(&self) -> usize {
        self.families.len() * self.modes.len() * self.presets.len() * self.seeds.len()
    }

    fn validate(&self) -> Result<()> {
        self.budget.validate()?;
        for &p in &self.presets {
            crate::neural::Architecture::preset(p)?;
        }
        if self.n_queries < 1 || self.is_samples < 1 {
            return Err(Error::InvalidConfig(
                "query and sample counts must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchmarkRow {
    pub graph: String,
    pub mode: TrainMode,
    pub preset: u8,
    pub seed: u64,
    pub correlation_cat: Option<f64>,
    pub correlation_cont: Option<f64>,
    pub iters: usize,
    pub batch: usize,
    pub seconds: Option<f64>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct BenchmarkReport {
    pub rows: Vec<BenchmarkRow>,
}

pub const BENCHMARK_CSV_HEADER: [&str; 9] = [
    "graph",
    "mode",
    "preset",
    "seed",
    "correlation_cat",
    "correlation_cont",
    "iters",
    "batch",
    "seconds",
];

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl BenchmarkReport {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(BENCHMARK_CSV_HEADER)?;
        for r in &self.rows {
            w.write_record([
                r.graph.clone(),
                r.mode.to_string(),
                r.preset.to_string(),
                r.seed.to_string(),
                opt(r.correlation_cat),
                opt(r.correlation_cont),
                r.iters.to_string(),
                r.batch.to_string(),
                opt(r.seconds),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn errors(&self) -> impl Iterator<Item = &BenchmarkRow> {
        self.rows.iter().filter(|r| r.error.is_some())
    }

    /// Mean categorical correlation over the successful cells matching
    /// `mode` and `preset`.
    pub fn mean_correlation(&self, mode: TrainMode, preset: u8) -> Option<f64> {
        let v: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| r.mode == mode && r.preset == preset)
            .filter_map(|r| r.correlation_cat)
            .collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }
}

/// Shared per-(graph, seed) inputs: every mode and preset sees the same
/// program, prior statistics, test set and ground truths.
struct GraphSetup {
    program: ProgramSpec,
    stats: crate::masking::PriorStats,
    queries: Vec<TestQuery>,
    truths: Vec<GroundTruth>,
}

fn setup_graph(family: GraphFamily, seed: u64, cfg: &BenchmarkConfig) -> Result<GraphSetup> {
    let tag = family.to_string();
    let program = family.build(rng::derive_seed(seed, &format!("graph/{tag}")))?;
    let stats = compute_prior_stats(
        &program,
        cfg.prior_samples,
        &mut rng::stream(seed, &format!("stats/{tag}")),
    )?;
    let queries = make_test_set(
        &program,
        cfg.n_queries,
        &mut rng::stream(seed, &format!("queries/{tag}")),
    )?;
    let method = match GroundTruthMethod::auto(&program) {
        GroundTruthMethod::IsPrior { .. } => GroundTruthMethod::IsPrior { n: cfg.is_samples },
        m => m,
    };
    let truths = ground_truths(
        &program,
        &queries,
        method,
        rng::derive_seed(seed, &format!("truth/{tag}")),
    )?;
    Ok(GraphSetup {
        program,
        stats,
        queries,
        truths,
    })
}

fn run_cell(
    setup: &GraphSetup,
    mode: TrainMode,
    preset: u8,
    seed: u64,
    cfg: &BenchmarkConfig,
) -> Result<(CorrelationScores, f64)> {
    let p = &setup.program;
    // mode is left out of the seed so both modes start from the same weights
    // and see the same batches
    let cell_seed = rng::derive_seed(seed, &format!("train/{}/{preset}", p.name()));
    let mut model = build_um(
        p,
        ArchSpec::Preset(preset),
        mode,
        EncodingLayout::new(p),
        setup.stats.clone(),
        cell_seed,
    )?;
    let budget = TrainConfig {
        seed: cell_seed,
        ..cfg.budget.clone()
    };
    let start = Instant::now();
    train(&mut model, &budget)?;
    let seconds = start.elapsed().as_secs_f64();
    Ok((
        correlation_score(&model, &setup.queries, &setup.truths)?,
        seconds,
    ))
}

/// Run every (graph, seed, mode, preset) cell. Failures are kept as rows with
/// an error message and no correlation; the run carries on.
pub fn run_benchmark(cfg: &BenchmarkConfig) -> Result<BenchmarkReport> {
    run_benchmark_with(cfg, |_| {})
}

/// As [`run_benchmark`], calling `progress` as each cell finishes.
pub fn run_benchmark_with<F>(cfg: &BenchmarkConfig, progress: F) -> Result<BenchmarkReport>
where
    F: Fn(&BenchmarkRow) + Sync,
{
    cfg.validate()?;
    let mut graph_cells = Vec::new();
    for &family in &cfg.families {
        for &seed in &cfg.seeds {
            graph_cells.push((family, seed));
        }
    }
    let mut cells = Vec::new();
    for (g, &(family, seed)) in graph_cells.iter().enumerate() {
        for &mode in &cfg.modes {
            for &preset in &cfg.presets {
                cells.push((g, family, seed, mode, preset));
            }
        }
    }
    let setups: Vec<Result<GraphSetup>> = graph_cells
        .par_iter()
        .map(|&(family, seed)| setup_graph(family, seed, cfg))
        .collect();
    let rows = cells
        .par_iter()
        .map(|&(g, family, seed, mode, preset)| {
            let result = setups[g]
                .as_ref()
                .map_err(|e| e.to_string())
                .and_then(|s| run_cell(s, mode, preset, seed, cfg).map_err(|e| e.to_string()));
            let (scores, seconds, error) = match result {
                Ok((s, t)) => (s, Some(t), None),
                Err(e) => (CorrelationScores::default(), None, Some(e)),
            };
            let row = BenchmarkRow {
                graph: family.to_string(),
                mode,
                preset,
                seed,
                correlation_cat: scores.categorical,
                correlation_cont: scores.continuous,
                iters: cfg.budget.iterations,
                batch: cfg.budget.batch_size,
                seconds: seconds.filter(|_| cfg.record_timing),
                error,
            };
            progress(&row);
            row
        })
        .collect();
    Ok(BenchmarkReport { rows })
}
