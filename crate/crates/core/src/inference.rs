//! Using a trained network: direct conditional marginals, the sequential
//! chain-rule proposal, and self-normalised importance sampling with either
//! the prior (likelihood weighting) or the network guide as proposal.

use std::fmt;

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use crate::marginals::{Marginal, MarginalSet};

use crate::error::{Error, Result};
use crate::masking::{encode, encode_into, encode_site};
use crate::neural::{Prediction, UmModel};
use crate::program::{draw_from_probs, Assignment, Evidence, ProgramSpec, SiteKind, Value};
use crate::rng;

/// Samples per independent random stream in importance sampling.
pub const CHUNK: usize = 4096;

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GuideConfig {
    /// Continuous proposal std as a multiple of the prior std.
    pub sigma_factor: f64,
    /// Weight of the uniform component mixed into categorical proposals.
    pub floor: f64,
}

impl Default for GuideConfig {
    fn default() -> Self {
        GuideConfig {
            sigma_factor: 0.5,
            floor: 1e-3,
        }
    }
}

impl GuideConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_factor > 0.0 && self.sigma_factor.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "sigma factor must be positive, got {}",
                self.sigma_factor
            )));
        }
        if !(0.0..=0.1).contains(&self.floor) {
            return Err(Error::InvalidConfig(format!(
                "categorical floor must be in [0, 0.1], got {}",
                self.floor
            )));
        }
        Ok(())
    }

    fn mix(&self, probs: &[f64]) -> Vec<f64> {
        let u = self.floor / probs.len() as f64;
        probs.iter().map(|p| (1.0 - self.floor) * p + u).collect()
    }
}

#[derive(Clone, Copy, Debug)]
pub enum Proposal<'a> {
    Prior,
    Guide(&'a UmModel, GuideConfig),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ProposalTag {
    #[serde(rename = "prior")]
    Prior,
    #[serde(rename = "um-guide")]
    Guide,
}

impl fmt::Display for ProposalTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ProposalTag::Prior => "prior",
            ProposalTag::Guide => "um-guide",
        })
    }
}

impl Proposal<'_> {
    pub fn tag(&self) -> ProposalTag {
        match self {
            Proposal::Prior => ProposalTag::Prior,
            Proposal::Guide(..) => ProposalTag::Guide,
        }
    }
}

/// Single forward pass: marginals of every unobserved site given `evidence`.
pub fn cond_marginals(model: &UmModel, evidence: &Evidence) -> Result<MarginalSet> {
    model.program.check_evidence(evidence)?;
    let x = encode(&model.layout, &model.stats, evidence)?;
    let preds = model.forward(&x)?;
    let mut out = MarginalSet::new();
    for (i, pred) in preds.into_iter().enumerate() {
        if evidence.is_observed(i) {
            continue;
        }
        let m = match pred {
            Prediction::Probs(p) => Marginal::Categorical(p),
            Prediction::Mean(z) => Marginal::Continuous {
                mean: model.stats.destandardize(i, z),
            },
        };
        out.insert(i, m);
    }
    Ok(out)
}

fn gaussian_log_pdf(x: f64, mean: f64, std: f64) -> f64 {
    let z = (x - mean) / std;
    -LN_SQRT_2PI - std.ln() - 0.5 * z * z
}

/// Lock-step guided proposals for `rows` samples sharing one stream. Site by
/// site in program order, every unobserved proposable site is drawn from
/// the network's prediction given the evidence plus all sites drawn so far;
/// other unobserved sites come from their own conditional. Returns the
/// assignments (flattened, row-major) and each row's proposal log density.
fn propose_rows<R: Rng + ?Sized>(
    model: &UmModel,
    evidence: &Evidence,
    cfg: &GuideConfig,
    rows: usize,
    rng: &mut R,
) -> Result<(Vec<Value>, Vec<f64>)> {
    let program = &model.program;
    let n = program.len();
    let width = model.layout.width();
    let mut first = vec![0.0; width];
    encode_into(&model.layout, &model.stats, evidence, &mut first)?;
    let mut inputs = Array2::zeros((rows, width));
    for mut row in inputs.rows_mut() {
        row.as_slice_mut().expect("row").copy_from_slice(&first);
    }
    let mut values = vec![Value::State(0); rows * n];
    for (i, v) in evidence.iter() {
        for r in 0..rows {
            values[r * n + i] = v;
        }
    }
    let mut log_q = vec![0.0; rows];
    for i in 0..n {
        if evidence.is_observed(i) {
            continue;
        }
        let site = program.site(i);
        if !site.proposable {
            for r in 0..rows {
                let vals = &mut values[r * n..(r + 1) * n];
                let v = program.sample_site(i, vals, rng);
                log_q[r] += program.site_log_density(i, v, vals);
                vals[i] = v;
                let row = inputs.row_mut(r).into_slice().expect("row");
                encode_site(&model.layout, &model.stats, i, Some(v), row);
            }
            continue;
        }
        let preds = model.forward_site_batch(inputs.view(), i)?;
        for r in 0..rows {
            let pred = preds.row(r);
            let v = match site.kind {
                SiteKind::Categorical { .. } => {
                    let q = cfg.mix(pred.as_slice().expect("row"));
                    let k = draw_from_probs(rng, &q);
                    log_q[r] += q[k].ln();
                    Value::State(k)
                }
                SiteKind::Continuous => {
                    let mean = model.stats.destandardize(i, pred[0]);
                    let (_, prior_std) = model.stats.mean_std(i).expect("continuous");
                    let sd = cfg.sigma_factor * prior_std;
                    let z: f64 = StandardNormal.sample(rng);
                    let x = mean + sd * z;
                    log_q[r] += gaussian_log_pdf(x, mean, sd);
                    Value::Real(x)
                }
            };
            values[r * n + i] = v;
            let row = inputs.row_mut(r).into_slice().expect("row");
            encode_site(&model.layout, &model.stats, i, Some(v), row);
        }
    }
    if log_q.iter().any(|l| l.is_nan()) {
        return Err(Error::NonFinite("proposal log density".into()));
    }
    Ok((values, log_q))
}

/// One guided proposal: a full assignment consistent with `evidence`, and
/// the log proposal density of the sampled (unobserved) part.
pub fn sequential_propose<R: Rng + ?Sized>(
    model: &UmModel,
    evidence: &Evidence,
    cfg: &GuideConfig,
    rng: &mut R,
) -> Result<(Assignment, f64)> {
    cfg.validate()?;
    model.program.check_evidence(evidence)?;
    let (values, log_q) = propose_rows(model, evidence, cfg, 1, rng)?;
    Ok((Assignment { values }, log_q[0]))
}

/// Recompute the guide's log density of `assignment` from scratch, one
/// fresh encoding and forward pass per proposable site.
pub fn replay_log_q(
    model: &UmModel,
    evidence: &Evidence,
    cfg: &GuideConfig,
    assignment: &Assignment,
) -> Result<f64> {
    let program = &model.program;
    let mut seen = evidence.clone();
    let mut total = 0.0;
    for i in 0..program.len() {
        if evidence.is_observed(i) {
            continue;
        }
        let v = assignment.values[i];
        let site = program.site(i);
        total += if !site.proposable {
            program.site_log_density(i, v, &assignment.values)
        } else {
            match cond_marginals(model, &seen)?.get(i) {
                Some(Marginal::Categorical(p)) => cfg.mix(p)[v.state()].ln(),
                Some(Marginal::Continuous { mean }) => {
                    let (_, prior_std) = model.stats.mean_std(i).expect("continuous");
                    gaussian_log_pdf(v.as_f64(), *mean, cfg.sigma_factor * prior_std)
                }
                None => unreachable!("site {i} is unobserved"),
            }
        };
        seen.observe(i, v);
    }
    Ok(total)
}

/// Weighted samples from one importance-sampling run.
#[derive(Clone, Debug)]
pub struct WeightedSampleSet {
    pub assignments: Vec<Assignment>,
    pub log_weights: Vec<f64>,
    pub evidence: Evidence,
    pub proposal: ProposalTag,
}

/// Draw one chunk, handing each `(values, log_w)` to `visit`.
fn sample_chunk<F: FnMut(&[Value], f64)>(
    program: &ProgramSpec,
    evidence: &Evidence,
    proposal: &Proposal<'_>,
    len: usize,
    seed: u64,
    chunk: u64,
    mut visit: F,
) -> Result<()> {
    let mut rng = rng::indexed_stream(seed, "importance", chunk);
    match proposal {
        Proposal::Prior => {
            let mut buf = vec![Value::State(0); program.len()];
            for _ in 0..len {
                let lw = program.sample_into(&mut buf, Some(evidence), &mut rng);
                visit(&buf, lw);
            }
        }
        Proposal::Guide(model, cfg) => {
            let n = program.len();
            let (values, log_q) = propose_rows(model, evidence, cfg, len, &mut rng)?;
            for (r, lq) in log_q.into_iter().enumerate() {
                let vals = &values[r * n..(r + 1) * n];
                visit(vals, program.log_joint_values(vals) - lq);
            }
        }
    }
    Ok(())
}

fn check_run(
    program: &ProgramSpec,
    evidence: &Evidence,
    proposal: &Proposal<'_>,
    n: usize,
) -> Result<()> {
    if n < 1 {
        return Err(Error::InvalidConfig("need at least one sample".into()));
    }
    program.check_evidence(evidence)?;
    if let Proposal::Guide(model, cfg) = proposal {
        cfg.validate()?;
        if model.program != *program {
            return Err(Error::InvalidConfig(
                "guide was trained for a different program".into(),
            ));
        }
    }
    Ok(())
}

fn chunks(n: usize) -> Vec<(u64, usize)> {
    (0..n.div_ceil(CHUNK))
        .map(|c| (c as u64, CHUNK.min(n - c * CHUNK)))
        .collect()
}

/// Draw `n` weighted samples. Chunks of [`CHUNK`] samples use independent
/// streams derived from `seed`, so results do not depend on thread count.
pub fn importance_sample(
    program: &ProgramSpec,
    evidence: &Evidence,
    proposal: Proposal<'_>,
    n: usize,
    seed: u64,
) -> Result<WeightedSampleSet> {
    check_run(program, evidence, &proposal, n)?;
    let parts = chunks(n)
        .into_par_iter()
        .map(|(c, len)| {
            let mut a = Vec::with_capacity(len);
            let mut w = Vec::with_capacity(len);
            sample_chunk(program, evidence, &proposal, len, seed, c, |vals, lw| {
                a.push(Assignment {
                    values: vals.to_vec(),
                });
                w.push(lw);
            })?;
            Ok((a, w))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut assignments = Vec::with_capacity(n);
    let mut log_weights = Vec::with_capacity(n);
    for (a, w) in parts {
        assignments.extend(a);
        log_weights.extend(w);
    }
    if log_weights.iter().all(|&w| w == f64::NEG_INFINITY) {
        return Err(Error::DegenerateWeights);
    }
    if log_weights
        .iter()
        .any(|w| w.is_nan() || *w == f64::INFINITY)
    {
        return Err(Error::NonFinite("importance weights".into()));
    }
    Ok(WeightedSampleSet {
        assignments,
        log_weights,
        evidence: evidence.clone(),
        proposal: proposal.tag(),
    })
}

/// Running self-normalised sums, kept relative to the largest log weight
/// seen so far.
#[derive(Clone, Debug)]
struct Accumulator {
    max: f64,
    sum: f64,
    sum_sq: f64,
    /// Per site: weighted state counts (categorical) or `[weighted sum]`.
    sites: Vec<Option<Vec<f64>>>,
    count: usize,
}

impl Accumulator {
    fn new(program: &ProgramSpec, evidence: &Evidence) -> Self {
        Accumulator {
            max: f64::NEG_INFINITY,
            sum: 0.0,
            sum_sq: 0.0,
            sites: program
                .sites()
                .iter()
                .enumerate()
                .map(|(i, s)| {
                    (!evidence.is_observed(i)).then(|| vec![0.0; s.kind.arity().unwrap_or(1)])
                })
                .collect(),
            count: 0,
        }
    }

    fn rescale(&mut self, new_max: f64) {
        if new_max > self.max {
            let f = if self.max == f64::NEG_INFINITY {
                0.0
            } else {
                (self.max - new_max).exp()
            };
            self.sum *= f;
            self.sum_sq *= f * f;
            for s in self.sites.iter_mut().flatten() {
                s.iter_mut().for_each(|x| *x *= f);
            }
            self.max = new_max;
        }
    }

    fn push(&mut self, values: &[Value], log_w: f64) {
        self.count += 1;
        if log_w == f64::NEG_INFINITY {
            return;
        }
        self.rescale(log_w);
        let w = (log_w - self.max).exp();
        self.sum += w;
        self.sum_sq += w * w;
        for (slot, v) in self.sites.iter_mut().zip(values) {
            if let Some(s) = slot {
                match v {
                    Value::State(k) => s[*k] += w,
                    Value::Real(x) => s[0] += w * x,
                }
            }
        }
    }

    fn merge(&mut self, mut other: Accumulator) {
        self.count += other.count;
        if other.max == f64::NEG_INFINITY {
            return;
        }
        self.rescale(other.max);
        other.rescale(self.max);
        self.sum += other.sum;
        self.sum_sq += other.sum_sq;
        for (a, b) in self.sites.iter_mut().zip(other.sites) {
            if let (Some(a), Some(b)) = (a, b) {
                a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
            }
        }
    }

    fn finish(self, program: &ProgramSpec) -> Result<ImportanceEstimate> {
        if self.sum.is_nan() || self.sum <= 0.0 {
            return Err(Error::DegenerateWeights);
        }
        let mut marginals = MarginalSet::new();
        for (i, slot) in self.sites.into_iter().enumerate() {
            if let Some(s) = slot {
                let m = match program.site(i).kind {
                    SiteKind::Categorical { .. } => {
                        Marginal::Categorical(s.into_iter().map(|x| x / self.sum).collect())
                    }
                    SiteKind::Continuous => Marginal::Continuous {
                        mean: s[0] / self.sum,
                    },
                };
                marginals.insert(i, m);
            }
        }
        Ok(ImportanceEstimate {
            marginals,
            ess: self.sum * self.sum / self.sum_sq,
            n: self.count,
            log_evidence: self.max + (self.sum / self.count as f64).ln(),
        })
    }
}

/// Posterior estimate reduced from a weighted sample.
#[derive(Clone, Debug, PartialEq)]
pub struct ImportanceEstimate {
    pub marginals: MarginalSet,
    pub ess: f64,
    pub n: usize,
    /// Log of the mean unnormalised weight.
    pub log_evidence: f64,
}

impl ImportanceEstimate {
    pub fn to_json(&self, program: &ProgramSpec, proposal: ProposalTag) -> serde_json::Value {
        serde_json::json!({
            "proposal": proposal.to_string(),
            "n": self.n,
            "ess": self.ess,
            "log_evidence": self.log_evidence,
            "marginals": self.marginals.to_json(program),
        })
    }
}

/// Importance sampling reduced on the fly, without keeping the samples.
/// Draws exactly the same samples as [`importance_sample`] with the same
/// arguments.
pub fn importance_estimate(
    program: &ProgramSpec,
    evidence: &Evidence,
    proposal: Proposal<'_>,
    n: usize,
    seed: u64,
) -> Result<ImportanceEstimate> {
    check_run(program, evidence, &proposal, n)?;
    let parts = chunks(n)
        .into_par_iter()
        .map(|(c, len)| {
            let mut acc = Accumulator::new(program, evidence);
            sample_chunk(program, evidence, &proposal, len, seed, c, |vals, lw| {
                acc.push(vals, lw)
            })?;
            Ok(acc)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut total = Accumulator::new(program, evidence);
    for p in parts {
        total.merge(p);
    }
    total.finish(program)
}

/// Self-normalised marginal estimates for every unobserved site.
pub fn posterior_estimates(
    program: &ProgramSpec,
    samples: &WeightedSampleSet,
) -> Result<MarginalSet> {
    let mut acc = Accumulator::new(program, &samples.evidence);
    for (a, &lw) in samples.assignments.iter().zip(&samples.log_weights) {
        acc.push(&a.values, lw);
    }
    Ok(acc.finish(program)?.marginals)
}

/// `(Σw)² / Σw²` from log weights; 0 when every weight is zero.
pub fn ess_from_log_weights(log_weights: &[f64]) -> f64 {
    let max = log_weights
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return 0.0;
    }
    let (s, s2) = log_weights.iter().fold((0.0, 0.0), |(s, s2), &lw| {
        let w = (lw - max).exp();
        (s + w, s2 + w * w)
    });
    s * s / s2
}

pub fn effective_sample_size(samples: &WeightedSampleSet) -> f64 {
    ess_from_log_weights(&samples.log_weights)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::masking::{compute_prior_stats, EncodingLayout};
    use crate::neural::{build_um, ArchSpec, TrainMode};
    use crate::program::fixtures::chain2;
    use crate::program::{builtin_probprog, enumerate_posterior, SiteSpec};

    fn untrained(p: &ProgramSpec, seed: u64) -> UmModel {
        let stats = compute_prior_stats(p, 5000, &mut rng::stream(seed, "s")).unwrap();
        build_um(
            p,
            ArchSpec::Preset(1),
            TrainMode::Standard,
            EncodingLayout::new(p),
            stats,
            seed,
        )
        .unwrap()
    }

    /// Zero weights with head biases set to log-probabilities, so the model
    /// predicts exactly `probs` for site 0 whatever the input.
    fn constant_model(p: &ProgramSpec, probs: &[f64]) -> UmModel {
        let mut m = untrained(p, 1);
        for d in m.trunk.iter_mut().chain(m.heads.iter_mut()) {
            d.w.fill(0.0);
            d.b.fill(0.0);
        }
        for (b, q) in m.heads[0].b.iter_mut().zip(probs) {
            *b = q.ln();
        }
        m
    }

    #[test]
    fn fully_observed_queries() {
        let p = chain2();
        let m = untrained(&p, 2);
        let ev = Evidence::new()
            .with(0, Value::State(1))
            .with(1, Value::State(0));
        assert!(cond_marginals(&m, &ev).unwrap().is_empty());
        let (a, lq) =
            sequential_propose(&m, &ev, &GuideConfig::default(), &mut rng::stream(0, "t")).unwrap();
        assert_eq!(a.values, vec![Value::State(1), Value::State(0)]);
        assert_eq!(lq, 0.0);
    }

    #[test]
    fn zero_weights_give_uniform_marginals() {
        let p = chain2();
        let m = constant_model(&p, &[1.0, 1.0]);
        let out = cond_marginals(&m, &Evidence::new()).unwrap();
        for (_, mg) in out.iter() {
            assert_eq!(mg.probs().unwrap(), &[0.5, 0.5]);
        }
        assert!(matches!(
            cond_marginals(&m, &Evidence::new().with(5, Value::State(0))),
            Err(Error::UnknownSite(_))
        ));
    }

    #[test]
    fn guided_single_site_frequencies() {
        let p = ProgramSpec::new(
            "one",
            vec![SiteSpec::categorical("a", &[], vec![vec![0.5, 0.5]])],
        )
        .unwrap();
        let m = constant_model(&p, &[0.7, 0.3]);
        let cfg = GuideConfig {
            floor: 0.0,
            ..GuideConfig::default()
        };
        let mut r = rng::stream(3, "t");
        let mut ones = 0;
        for _ in 0..10_000 {
            let (a, lq) = sequential_propose(&m, &Evidence::new(), &cfg, &mut r).unwrap();
            if a.values[0] == Value::State(1) {
                ones += 1;
                assert!((lq - 0.3f64.ln()).abs() < 1e-12);
            } else {
                assert!((lq - 0.7f64.ln()).abs() < 1e-12);
            }
        }
        assert!((ones as f64 / 1e4 - 0.3).abs() < 0.01, "{ones}");
    }

    #[test]
    fn exact_proposal_gives_full_ess() {
        let p = ProgramSpec::new(
            "one",
            vec![SiteSpec::categorical("a", &[], vec![vec![0.5, 0.5]])],
        )
        .unwrap();
        let m = constant_model(&p, &[1.0, 1.0]);
        let cfg = GuideConfig {
            floor: 0.0,
            ..GuideConfig::default()
        };
        let s = importance_sample(&p, &Evidence::new(), Proposal::Guide(&m, cfg), 5000, 1).unwrap();
        assert!(s.log_weights.iter().all(|&w| w == s.log_weights[0]));
        assert_eq!(effective_sample_size(&s), 5000.0);
    }

    #[test]
    fn empty_evidence_prior_weights_are_zero() {
        let p = chain2();
        let s = importance_sample(&p, &Evidence::new(), Proposal::Prior, 20_000, 4).unwrap();
        assert!(s.log_weights.iter().all(|&w| w == 0.0));
        assert_eq!(effective_sample_size(&s), 20_000.0);
        let est = posterior_estimates(&p, &s).unwrap();
        assert!((est.get(0).unwrap().probs().unwrap()[1] - 0.3).abs() < 0.01);
        assert!((est.get(1).unwrap().probs().unwrap()[1] - 0.41).abs() < 0.01);
    }

    #[test]
    fn likelihood_weighting_chain2() {
        let p = chain2();
        let ev = Evidence::new().with(1, Value::State(1));
        let s = importance_sample(&p, &ev, Proposal::Prior, 100_000, 5).unwrap();
        let est = posterior_estimates(&p, &s).unwrap();
        let p1 = est.get(0).unwrap().probs().unwrap()[1];
        assert!((p1 - 0.6585).abs() < 0.01, "{p1}");
        // the streaming reduction sees the same samples
        let streamed = importance_estimate(&p, &ev, Proposal::Prior, 100_000, 5).unwrap();
        assert!(streamed.marginals.max_abs_diff(&est) < 1e-12);
        assert!((streamed.ess - effective_sample_size(&s)).abs() < 1e-6 * streamed.ess);
        assert!((streamed.log_evidence - 0.41f64.ln()).abs() < 0.01);
    }

    #[test]
    fn posterior_estimate_reductions() {
        let p = ProgramSpec::new(
            "one",
            vec![SiteSpec::categorical("a", &[], vec![vec![0.5, 0.5]])],
        )
        .unwrap();
        let mk = |vals: &[usize], lw: &[f64]| WeightedSampleSet {
            assignments: vals
                .iter()
                .map(|&k| Assignment {
                    values: vec![Value::State(k)],
                })
                .collect(),
            log_weights: lw.to_vec(),
            evidence: Evidence::new(),
            proposal: ProposalTag::Prior,
        };
        let s = mk(&[0, 0, 1, 1], &[0.0; 4]);
        assert_eq!(
            posterior_estimates(&p, &s)
                .unwrap()
                .get(0)
                .unwrap()
                .probs()
                .unwrap(),
            &[0.5, 0.5]
        );
        let ninf = f64::NEG_INFINITY;
        let s = mk(&[1, 0, 0, 0], &[0.0, ninf, ninf, ninf]);
        assert_eq!(
            posterior_estimates(&p, &s)
                .unwrap()
                .get(0)
                .unwrap()
                .probs()
                .unwrap(),
            &[0.0, 1.0]
        );
        assert_eq!(effective_sample_size(&s), 1.0);
        let s = mk(&[1, 0], &[ninf, ninf]);
        assert!(matches!(
            posterior_estimates(&p, &s),
            Err(Error::DegenerateWeights)
        ));
    }

    #[test]
    fn ess_formula() {
        assert_eq!(ess_from_log_weights(&[0.0; 100]), 100.0);
        let w = [2f64.ln(), 0.0, 0.0];
        assert!((ess_from_log_weights(&w) - 16.0 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn impossible_evidence_is_degenerate() {
        let p = ProgramSpec::new(
            "det",
            vec![
                SiteSpec::categorical("a", &[], vec![vec![1.0, 0.0]]),
                SiteSpec::categorical("b", &["a"], vec![vec![1.0, 0.0], vec![0.5, 0.5]]),
            ],
        )
        .unwrap();
        let ev = Evidence::new().with(1, Value::State(1));
        assert!(matches!(
            importance_sample(&p, &ev, Proposal::Prior, 1000, 1),
            Err(Error::DegenerateWeights)
        ));
        assert!(enumerate_posterior(&p, &ev).is_err());
    }

    #[test]
    fn thread_count_does_not_change_results() {
        let p = chain2();
        let ev = Evidence::new().with(1, Value::State(1));
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| importance_estimate(&p, &ev, Proposal::Prior, 50_000, 8).unwrap())
        };
        assert_eq!(run(1), run(3));
    }

    #[test]
    fn probprog_branch_sites_follow_their_conditional() {
        let p = builtin_probprog();
        let m = untrained(&p, 4);
        let cfg = GuideConfig::default();
        let ev = Evidence::new()
            .with(0, Value::Real(0.5))
            .with(1, Value::Real(2.0));
        let mut r = rng::stream(5, "t");
        let mut ones = 0;
        for _ in 0..2000 {
            let (a, lq) = sequential_propose(&m, &ev, &cfg, &mut r).unwrap();
            let t1 = a.values[2].as_f64();
            assert!(t1 == 0.0 || t1 == 1.0);
            ones += t1 as usize;
            assert!(lq.is_finite());
            let replay = replay_log_q(&m, &ev, &cfg, &a).unwrap();
            assert!((replay - lq).abs() < 1e-9);
            assert!(p.log_joint(&a, None).is_finite());
        }
        assert!((ones as f64 / 2000.0 - 0.5).abs() < 0.05);
    }
}
