//! Input encoding and random masking.
//!
//! Each site owns a contiguous block of input slots: `k` probability slots
//! for a categorical site of arity `k` (one-hot when observed, the prior
//! marginal when not) or one standardised-value slot for a continuous site,
//! followed by one observed-flag slot.

use std::ops::Range;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::program::{Assignment, Evidence, ProgramSpec, SiteKind, Value};

pub const STD_FLOOR: f64 = 1e-6;
pub const DEFAULT_PRIOR_SAMPLES: usize = 100_000;
pub const MIN_PRIOR_SAMPLES: usize = 1000;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SiteSlots {
    pub kind: SiteKind,
    /// Value slots: `k` probabilities or a single standardised value.
    pub values: Range<usize>,
    pub flag: usize,
    /// Output slots of this site's head in the concatenated prediction.
    pub output: Range<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncodingLayout {
    sites: Vec<SiteSlots>,
    width: usize,
    output_width: usize,
}

impl EncodingLayout {
    pub fn new(program: &ProgramSpec) -> Self {
        let mut sites = Vec::with_capacity(program.len());
        let (mut at, mut out) = (0, 0);
        for s in program.sites() {
            let k = s.kind.arity().unwrap_or(1);
            sites.push(SiteSlots {
                kind: s.kind,
                values: at..at + k,
                flag: at + k,
                output: out..out + k,
            });
            at += k + 1;
            out += k;
        }
        EncodingLayout {
            sites,
            width: at,
            output_width: out,
        }
    }

    /// Input width `D`.
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn output_width(&self) -> usize {
        self.output_width
    }

    pub fn sites(&self) -> &[SiteSlots] {
        &self.sites
    }

    pub fn site(&self, i: usize) -> &SiteSlots {
        &self.sites[i]
    }

    pub fn len(&self) -> usize {
        self.sites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SiteStats {
    Categorical(Vec<f64>),
    Continuous { mean: f64, std: f64 },
}

/// Prior marginals (categorical) and prior mean/std (continuous), estimated
/// from ancestral samples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PriorStats {
    pub sites: Vec<SiteStats>,
    pub n_samples: usize,
}

impl PriorStats {
    pub fn mean_std(&self, i: usize) -> Option<(f64, f64)> {
        match self.sites[i] {
            SiteStats::Continuous { mean, std } => Some((mean, std)),
            SiteStats::Categorical(_) => None,
        }
    }

    pub fn standardize(&self, i: usize, x: f64) -> f64 {
        let (mean, std) = self.mean_std(i).expect("continuous site");
        (x - mean) / std
    }

    pub fn destandardize(&self, i: usize, z: f64) -> f64 {
        let (mean, std) = self.mean_std(i).expect("continuous site");
        z * std + mean
    }
}

pub fn compute_prior_stats<R: Rng + ?Sized>(
    program: &ProgramSpec,
    n_samples: usize,
    rng: &mut R,
) -> Result<PriorStats> {
    if n_samples < MIN_PRIOR_SAMPLES {
        return Err(Error::InvalidConfig(format!(
            "prior statistics need at least {MIN_PRIOR_SAMPLES} samples, got {n_samples}"
        )));
    }
    let n_sites = program.len();
    let mut counts: Vec<Vec<usize>> = program
        .sites()
        .iter()
        .map(|s| vec![0; s.kind.arity().unwrap_or(0)])
        .collect();
    // Welford accumulators
    let mut mean = vec![0.0; n_sites];
    let mut m2 = vec![0.0; n_sites];
    let mut buf = vec![Value::State(0); n_sites];
    for n in 1..=n_samples {
        program.sample_into(&mut buf, None, rng);
        for (i, v) in buf.iter().enumerate() {
            match *v {
                Value::State(k) => counts[i][k] += 1,
                Value::Real(x) => {
                    let d = x - mean[i];
                    mean[i] += d / n as f64;
                    m2[i] += d * (x - mean[i]);
                }
            }
        }
    }
    let sites = program
        .sites()
        .iter()
        .enumerate()
        .map(|(i, s)| match s.kind {
            SiteKind::Categorical { .. } => SiteStats::Categorical(
                counts[i]
                    .iter()
                    .map(|&c| c as f64 / n_samples as f64)
                    .collect(),
            ),
            SiteKind::Continuous => SiteStats::Continuous {
                mean: mean[i],
                std: (m2[i] / n_samples as f64).sqrt().max(STD_FLOOR),
            },
        })
        .collect();
    let stats = PriorStats { sites, n_samples };
    for (i, s) in stats.sites.iter().enumerate() {
        if let SiteStats::Continuous { mean, std } = s {
            if !mean.is_finite() || !std.is_finite() {
                return Err(Error::NonFinite(format!(
                    "prior statistics of `{}`",
                    program.site(i).name
                )));
            }
        }
    }
    Ok(stats)
}

/// Sites that become unobserved in a training input.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    masked: Vec<bool>,
}

impl Mask {
    pub fn from_sites(n_sites: usize, sites: &[usize]) -> Self {
        let mut masked = vec![false; n_sites];
        for &s in sites {
            masked[s] = true;
        }
        Mask { masked }
    }

    pub fn is_masked(&self, site: usize) -> bool {
        self.masked[site]
    }

    /// Number of masked sites.
    pub fn size(&self) -> usize {
        self.masked.iter().filter(|&&m| m).count()
    }

    pub fn sites(&self) -> impl Iterator<Item = usize> + '_ {
        self.masked
            .iter()
            .enumerate()
            .filter_map(|(i, &m)| m.then_some(i))
    }
}

/// Mask size `i ~ U{0, …, N}`, then `i` distinct sites uniformly.
pub fn sample_mask<R: Rng + ?Sized>(n_sites: usize, rng: &mut R) -> Mask {
    let size = rng.random_range(0..=n_sites);
    let mut masked = vec![false; n_sites];
    for s in index::sample(rng, n_sites, size) {
        masked[s] = true;
    }
    Mask { masked }
}

fn check_value(layout: &EncodingLayout, i: usize, v: Value) -> Result<()> {
    match (layout.site(i).kind, v) {
        (SiteKind::Categorical { arity }, Value::State(k)) if k < arity => Ok(()),
        (SiteKind::Categorical { arity }, Value::State(k)) => Err(Error::InvalidEvidence(format!(
            "state {k} out of range for site #{i} (arity {arity})"
        ))),
        (SiteKind::Continuous, Value::Real(x)) if x.is_finite() => Ok(()),
        _ => Err(Error::InvalidEvidence(format!(
            "ill-typed value for site #{i}"
        ))),
    }
}

/// Write site `i`'s block: observed with `value`, or unobserved (prior).
pub(crate) fn encode_site(
    layout: &EncodingLayout,
    stats: &PriorStats,
    i: usize,
    value: Option<Value>,
    out: &mut [f64],
) {
    let slots = layout.site(i);
    let vals = &mut out[slots.values.clone()];
    match (value, &stats.sites[i]) {
        (Some(Value::State(k)), _) => {
            vals.fill(0.0);
            vals[k] = 1.0;
        }
        (Some(Value::Real(x)), SiteStats::Continuous { mean, std }) => {
            vals[0] = (x - mean) / std;
        }
        (None, SiteStats::Categorical(prior)) => vals.copy_from_slice(prior),
        (None, SiteStats::Continuous { .. }) => vals[0] = 0.0,
        (Some(Value::Real(_)), SiteStats::Categorical(_)) => unreachable!("checked by caller"),
    }
    out[slots.flag] = if value.is_some() { 1.0 } else { 0.0 };
}

pub fn encode_into(
    layout: &EncodingLayout,
    stats: &PriorStats,
    evidence: &Evidence,
    out: &mut [f64],
) -> Result<()> {
    if out.len() != layout.width() {
        return Err(Error::LengthMismatch(format!(
            "encoding buffer has {} slots, layout needs {}",
            out.len(),
            layout.width()
        )));
    }
    for (i, v) in evidence.iter() {
        if i >= layout.len() {
            return Err(Error::UnknownSite(format!("#{i}")));
        }
        check_value(layout, i, v)?;
    }
    for i in 0..layout.len() {
        encode_site(layout, stats, i, evidence.get(i), out);
    }
    Ok(())
}

/// Input vector for `evidence`; unobserved sites carry their prior.
pub fn encode(
    layout: &EncodingLayout,
    stats: &PriorStats,
    evidence: &Evidence,
) -> Result<Vec<f64>> {
    let mut out = vec![0.0; layout.width()];
    encode_into(layout, stats, evidence, &mut out)?;
    Ok(out)
}

/// Training target of `sample` at site `i`: the state index, or the
/// standardised real.
pub fn target_value(stats: &PriorStats, i: usize, v: Value) -> Value {
    match v {
        Value::State(_) => v,
        Value::Real(x) => Value::Real(stats.standardize(i, x)),
    }
}

/// Input buffer for a masked sample, without building an `Evidence`.
pub(crate) fn encode_masked_into(
    layout: &EncodingLayout,
    stats: &PriorStats,
    sample: &[Value],
    mask: &Mask,
    out: &mut [f64],
) {
    for (i, &v) in sample.iter().enumerate() {
        let value = (!mask.is_masked(i)).then_some(v);
        encode_site(layout, stats, i, value, out);
    }
}

/// `(input, target)`: the sample encoded with masked sites unobserved, and
/// the sample's value at every site.
pub fn make_training_pair(
    layout: &EncodingLayout,
    stats: &PriorStats,
    sample: &Assignment,
    mask: &Mask,
) -> (Vec<f64>, Vec<Value>) {
    let mut input = vec![0.0; layout.width()];
    encode_masked_into(layout, stats, &sample.values, mask, &mut input);
    let target = sample
        .values
        .iter()
        .enumerate()
        .map(|(i, &v)| target_value(stats, i, v))
        .collect();
    (input, target)
}

/// Encoding of a full sample with continuous values decoded back to their
/// original scale (used by the round-trip property).
pub fn decode_observed(
    layout: &EncodingLayout,
    stats: &PriorStats,
    input: &[f64],
) -> Vec<Option<Value>> {
    layout
        .sites()
        .iter()
        .enumerate()
        .map(|(i, slots)| {
            if input[slots.flag] != 1.0 {
                return None;
            }
            let vals = &input[slots.values.clone()];
            Some(match slots.kind {
                SiteKind::Categorical { .. } => {
                    Value::State(vals.iter().position(|&x| x == 1.0).unwrap_or(0))
                }
                SiteKind::Continuous => Value::Real(stats.destandardize(i, vals[0])),
            })
        })
        .collect()
}
