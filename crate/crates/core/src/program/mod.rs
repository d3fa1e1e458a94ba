//! Bounded probabilistic programs.
//!
//! A [`ProgramSpec`] is an ordered list of sites in topological order. Each
//! site is categorical or continuous and carries a conditional distribution
//! over its parents' values. Programs are validated on construction and on
//! deserialisation, then immutable.

mod dist;
mod enumerate;
mod graphs;

use std::collections::{BTreeMap, HashMap};

use rand::Rng;
use rand_distr::Gamma;
use serde::{Deserialize, Serialize};

pub(crate) use dist::{draw_from_probs, Cpd};
pub use dist::{ConditionalDist, StdSource};
pub use enumerate::{enumerate_posterior, MAX_ENUMERATION};
pub use graphs::{builtin_probprog, make_chain, make_grid, make_star, GraphFamily};

use crate::error::{Error, Result};

const ROW_SUM_TOL: f64 = 1e-9;

/// A site value: a state index for categorical sites, a real otherwise.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Value {
    State(usize),
    Real(f64),
}

impl Value {
    pub fn as_f64(self) -> f64 {
        match self {
            Value::State(k) => k as f64,
            Value::Real(x) => x,
        }
    }

    /// State index; reals are truncated. Only meaningful for categorical sites.
    pub fn state(self) -> usize {
        match self {
            Value::State(k) => k,
            Value::Real(x) => x as usize,
        }
    }

    pub fn to_json(self) -> serde_json::Value {
        match self {
            Value::State(k) => serde_json::Value::from(k),
            Value::Real(x) => serde_json::Value::from(x),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SiteKind {
    Categorical { arity: usize },
    Continuous,
}

impl SiteKind {
    pub fn arity(self) -> Option<usize> {
        match self {
            SiteKind::Categorical { arity } => Some(arity),
            SiteKind::Continuous => None,
        }
    }

    pub fn is_categorical(self) -> bool {
        matches!(self, SiteKind::Categorical { .. })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SiteSpec {
    pub name: String,
    pub kind: SiteKind,
    pub parents: Vec<String>,
    pub dist: ConditionalDist,
    /// Eligible for network-guided proposals; otherwise the site is proposed
    /// from its own conditional.
    pub proposable: bool,
}

impl SiteSpec {
    pub fn categorical(name: impl Into<String>, parents: &[&str], rows: Vec<Vec<f64>>) -> Self {
        let arity = rows.first().map_or(0, Vec::len);
        SiteSpec {
            name: name.into(),
            kind: SiteKind::Categorical { arity },
            parents: parents.iter().map(|p| p.to_string()).collect(),
            dist: ConditionalDist::CategoricalTable { rows },
            proposable: true,
        }
    }

    pub fn continuous(name: impl Into<String>, parents: &[&str], dist: ConditionalDist) -> Self {
        SiteSpec {
            name: name.into(),
            kind: SiteKind::Continuous,
            parents: parents.iter().map(|p| p.to_string()).collect(),
            dist,
            proposable: true,
        }
    }

    pub fn with_proposable(mut self, proposable: bool) -> Self {
        self.proposable = proposable;
        self
    }
}

/// Full sample of all sites, in site order.
#[derive(Clone, Debug, PartialEq)]
pub struct Assignment {
    pub values: Vec<Value>,
}

/// Partial map site index → observed value.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Evidence {
    values: BTreeMap<usize, Value>,
}

impl Evidence {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn observe(&mut self, site: usize, value: Value) -> &mut Self {
        self.values.insert(site, value);
        self
    }

    pub fn with(mut self, site: usize, value: Value) -> Self {
        self.values.insert(site, value);
        self
    }

    pub fn get(&self, site: usize) -> Option<Value> {
        self.values.get(&site).copied()
    }

    pub fn is_observed(&self, site: usize) -> bool {
        self.values.contains_key(&site)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, Value)> + '_ {
        self.values.iter().map(|(&k, &v)| (k, v))
    }

    pub fn observed_sites(&self) -> impl Iterator<Item = usize> + '_ {
        self.values.keys().copied()
    }

    /// Evidence observing every site of `assignment`.
    pub fn full(assignment: &Assignment) -> Self {
        Evidence {
            values: assignment.values.iter().copied().enumerate().collect(),
        }
    }

    /// Parse `{"site_name": value, ...}`.
    pub fn from_json(program: &ProgramSpec, json: &serde_json::Value) -> Result<Self> {
        let obj = json
            .as_object()
            .ok_or_else(|| Error::InvalidEvidence("expected a JSON object".into()))?;
        let mut ev = Evidence::new();
        for (name, raw) in obj {
            let idx = program
                .site_index(name)
                .ok_or_else(|| Error::UnknownSite(name.clone()))?;
            let value = match program.sites[idx].kind {
                SiteKind::Categorical { .. } => Value::State(raw.as_u64().ok_or_else(|| {
                    Error::InvalidEvidence(format!(
                        "site `{name}` is categorical and needs a state index, got {raw}"
                    ))
                })? as usize),
                SiteKind::Continuous => Value::Real(raw.as_f64().ok_or_else(|| {
                    Error::InvalidEvidence(format!("site `{name}` needs a number, got {raw}"))
                })?),
            };
            ev.observe(idx, value);
        }
        program.check_evidence(&ev)?;
        Ok(ev)
    }

    pub fn to_json(&self, program: &ProgramSpec) -> serde_json::Value {
        let map: serde_json::Map<String, serde_json::Value> = self
            .iter()
            .map(|(i, v)| (program.sites[i].name.clone(), v.to_json()))
            .collect();
        serde_json::Value::Object(map)
    }
}

#[derive(Clone, Debug)]
struct CompiledSite {
    parents: Vec<usize>,
    cpd: Cpd,
}

/// A validated program with a fixed number of sites.
#[derive(Clone, Debug)]
pub struct ProgramSpec {
    name: String,
    sites: Vec<SiteSpec>,
    compiled: Vec<CompiledSite>,
    index: HashMap<String, usize>,
}

impl PartialEq for ProgramSpec {
    fn eq(&self, other: &Self) -> bool {
        self.name == other.name && self.sites == other.sites
    }
}

impl ProgramSpec {
    pub fn new(name: impl Into<String>, sites: Vec<SiteSpec>) -> Result<Self> {
        let name = name.into();
        if sites.is_empty() {
            return Err(Error::InvalidProgram("program has no sites".into()));
        }
        let mut index = HashMap::with_capacity(sites.len());
        let mut compiled = Vec::with_capacity(sites.len());
        for (i, site) in sites.iter().enumerate() {
            let parents = site
                .parents
                .iter()
                .map(|p| match index.get(p) {
                    Some(&j) => Ok(j),
                    None if p == &site.name || sites.iter().any(|s| &s.name == p) => {
                        Err(Error::InvalidProgram(format!(
                            "site `{}` has parent `{p}` that does not precede it",
                            site.name
                        )))
                    }
                    None => Err(Error::InvalidProgram(format!(
                        "site `{}` has unknown parent `{p}`",
                        site.name
                    ))),
                })
                .collect::<Result<Vec<_>>>()?;
            let cpd = compile_site(site, &parents, &sites)?;
            if index.insert(site.name.clone(), i).is_some() {
                return Err(Error::InvalidProgram(format!(
                    "duplicate site name `{}`",
                    site.name
                )));
            }
            compiled.push(CompiledSite { parents, cpd });
        }
        Ok(ProgramSpec {
            name,
            sites,
            compiled,
            index,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn sites(&self) -> &[SiteSpec] {
        &self.sites
    }

    pub fn site(&self, i: usize) -> &SiteSpec {
        &self.sites[i]
    }

    pub fn len(&self) -> usize {
        self.sites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }

    pub fn site_index(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn parent_indices(&self, i: usize) -> &[usize] {
        &self.compiled[i].parents
    }

    /// All directed edges `(parent, child)`.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        self.compiled
            .iter()
            .enumerate()
            .flat_map(|(c, s)| s.parents.iter().map(move |&p| (p, c)))
            .collect()
    }

    pub fn all_categorical(&self) -> bool {
        self.sites.iter().all(|s| s.kind.is_categorical())
    }

    pub(crate) fn cpd(&self, i: usize) -> &Cpd {
        &self.compiled[i].cpd
    }

    pub fn check_value(&self, site: usize, value: Value) -> Result<()> {
        let s = &self.sites[site];
        match (s.kind, value) {
            (SiteKind::Categorical { arity }, Value::State(k)) if k < arity => Ok(()),
            (SiteKind::Categorical { arity }, Value::State(k)) => Err(Error::InvalidEvidence(
                format!("state {k} out of range for `{}` (arity {arity})", s.name),
            )),
            (SiteKind::Continuous, Value::Real(x)) if x.is_finite() => Ok(()),
            (SiteKind::Continuous, Value::Real(_)) => Err(Error::InvalidEvidence(format!(
                "non-finite value for `{}`",
                s.name
            ))),
            _ => Err(Error::InvalidEvidence(format!(
                "value kind does not match site `{}`",
                s.name
            ))),
        }
    }

    pub fn check_evidence(&self, evidence: &Evidence) -> Result<()> {
        for (i, v) in evidence.iter() {
            if i >= self.len() {
                return Err(Error::UnknownSite(format!("#{i}")));
            }
            self.check_value(i, v)?;
        }
        Ok(())
    }

    /// Draw every site from its conditional, in site order.
    pub fn ancestral_sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Assignment {
        let mut values = vec![Value::Real(0.0); self.len()];
        self.sample_into(&mut values, None, rng);
        Assignment { values }
    }

    /// Ancestral sampling into a reusable buffer. Observed sites are clamped
    /// and the summed log density of the clamped values is returned (the
    /// likelihood weight), 0 when nothing is clamped.
    pub fn sample_into<R: Rng + ?Sized>(
        &self,
        values: &mut [Value],
        clamp: Option<&Evidence>,
        rng: &mut R,
    ) -> f64 {
        let mut log_w = 0.0;
        for (i, site) in self.compiled.iter().enumerate() {
            match clamp.and_then(|e| e.get(i)) {
                Some(v) => {
                    log_w += site.cpd.log_density(v, values);
                    values[i] = v;
                }
                None => values[i] = site.cpd.sample(values, rng),
            }
        }
        log_w
    }

    /// Log conditional density of site `i` holding `value`, given the parent
    /// values in `values`.
    pub fn site_log_density(&self, i: usize, value: Value, values: &[Value]) -> f64 {
        self.compiled[i].cpd.log_density(value, values)
    }

    pub fn sample_site<R: Rng + ?Sized>(&self, i: usize, values: &[Value], rng: &mut R) -> Value {
        self.compiled[i].cpd.sample(values, rng)
    }

    /// Sum of per-site log conditionals; `-inf` if any value has zero mass.
    pub fn log_joint(&self, assignment: &Assignment, evidence_override: Option<&Evidence>) -> f64 {
        let mut values = assignment.values.clone();
        if let Some(ev) = evidence_override {
            for (i, v) in ev.iter() {
                values[i] = v;
            }
        }
        self.log_joint_values(&values)
    }

    pub(crate) fn log_joint_values(&self, values: &[Value]) -> f64 {
        self.compiled
            .iter()
            .enumerate()
            .map(|(i, s)| s.cpd.log_density(values[i], values))
            .sum()
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(&ProgramJson::from(self)).expect("program serialises")
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let raw: ProgramJson = serde_json::from_str(s)?;
        raw.try_into()
    }
}

fn compile_site(site: &SiteSpec, parents: &[usize], sites: &[SiteSpec]) -> Result<Cpd> {
    let bad = |msg: String| Error::InvalidProgram(format!("site `{}`: {msg}", site.name));
    let parent_pos = |name: &str| -> Result<usize> {
        site.parents
            .iter()
            .position(|p| p == name)
            .map(|k| parents[k])
            .ok_or_else(|| bad(format!("`{name}` is not listed as a parent")))
    };
    match (&site.dist, site.kind) {
        (ConditionalDist::CategoricalTable { rows }, SiteKind::Categorical { arity }) => {
            if arity < 2 {
                return Err(bad(format!("arity must be at least 2, got {arity}")));
            }
            let mut radices = Vec::with_capacity(parents.len());
            for &p in parents {
                match sites[p].kind {
                    SiteKind::Categorical { arity } => radices.push(arity),
                    SiteKind::Continuous => {
                        return Err(bad("table parents must be categorical".into()))
                    }
                }
            }
            let expected: usize = radices.iter().product();
            if rows.len() != expected {
                return Err(bad(format!("expected {expected} rows, got {}", rows.len())));
            }
            for (r, row) in rows.iter().enumerate() {
                if row.len() != arity {
                    return Err(bad(format!(
                        "row {r} has {} entries, arity {arity}",
                        row.len()
                    )));
                }
                if row.iter().any(|p| !(0.0..=1.0).contains(p)) {
                    return Err(bad(format!("row {r} has entries outside [0, 1]")));
                }
                let sum: f64 = row.iter().sum();
                if (sum - 1.0).abs() > ROW_SUM_TOL {
                    return Err(bad(format!("row {r} sums to {sum}")));
                }
            }
            Ok(Cpd::Table {
                rows: rows.clone(),
                parents: parents.to_vec(),
                radices,
            })
        }
        (ConditionalDist::CategoricalTable { .. }, SiteKind::Continuous) => {
            Err(bad("continuous site cannot use a categorical table".into()))
        }
        (_, SiteKind::Categorical { .. }) => {
            Err(bad("categorical site needs a categorical table".into()))
        }
        (ConditionalDist::GaussianLinear { mean_parent, std }, SiteKind::Continuous) => {
            let std = match std {
                StdSource::Const(s) if *s > 0.0 && s.is_finite() => dist::Scale::Const(*s),
                StdSource::Const(s) => return Err(bad(format!("std must be positive, got {s}"))),
                StdSource::Parent(p) => dist::Scale::Parent(parent_pos(p)?),
            };
            Ok(Cpd::GaussianLinear {
                mean: parent_pos(mean_parent)?,
                std,
            })
        }
        (ConditionalDist::GaussianConst { mean, std }, SiteKind::Continuous) => {
            if !(*std > 0.0 && std.is_finite() && mean.is_finite()) {
                return Err(bad(format!("invalid Gaussian({mean}, {std})")));
            }
            Ok(Cpd::GaussianConst {
                mean: *mean,
                std: *std,
            })
        }
        (ConditionalDist::GammaConst { shape, rate }, SiteKind::Continuous) => {
            if !(*shape > 0.0 && *rate > 0.0 && shape.is_finite() && rate.is_finite()) {
                return Err(bad(format!("invalid Gamma({shape}, {rate})")));
            }
            Ok(Cpd::Gamma {
                shape: *shape,
                rate: *rate,
                sampler: Gamma::new(*shape, 1.0 / rate).map_err(|e| bad(e.to_string()))?,
            })
        }
        (
            ConditionalDist::BranchBernoulliGaussian {
                value_parent,
                std_parent,
            },
            SiteKind::Continuous,
        ) => Ok(Cpd::Branch {
            value: parent_pos(value_parent)?,
            std: parent_pos(std_parent)?,
        }),
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum KindTag {
    Categorical,
    Continuous,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Serialize, Deserialize)]
struct SiteJson {
    name: String,
    kind: KindTag,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    arity: Option<usize>,
    parents: Vec<String>,
    dist: ConditionalDist,
    #[serde(default = "default_true")]
    proposable: bool,
}

#[derive(Debug, Serialize, Deserialize)]
pub(crate) struct ProgramJson {
    name: String,
    sites: Vec<SiteJson>,
}

impl From<&ProgramSpec> for ProgramJson {
    fn from(p: &ProgramSpec) -> Self {
        ProgramJson {
            name: p.name.clone(),
            sites: p
                .sites
                .iter()
                .map(|s| SiteJson {
                    name: s.name.clone(),
                    kind: match s.kind {
                        SiteKind::Categorical { .. } => KindTag::Categorical,
                        SiteKind::Continuous => KindTag::Continuous,
                    },
                    arity: s.kind.arity(),
                    parents: s.parents.clone(),
                    dist: s.dist.clone(),
                    proposable: s.proposable,
                })
                .collect(),
        }
    }
}

impl TryFrom<ProgramJson> for ProgramSpec {
    type Error = Error;

    fn try_from(raw: ProgramJson) -> Result<Self> {
        let sites = raw
            .sites
            .into_iter()
            .map(|s| {
                let kind = match (s.kind, s.arity) {
                    (KindTag::Categorical, Some(arity)) => SiteKind::Categorical { arity },
                    (KindTag::Categorical, None) => {
                        return Err(Error::InvalidProgram(format!(
                            "categorical site `{}` is missing its arity",
                            s.name
                        )))
                    }
                    (KindTag::Continuous, _) => SiteKind::Continuous,
                };
                Ok(SiteSpec {
                    name: s.name,
                    kind,
                    parents: s.parents,
                    dist: s.dist,
                    proposable: s.proposable,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        ProgramSpec::new(raw.name, sites)
    }
}

impl Serialize for ProgramSpec {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        ProgramJson::from(self).serialize(s)
    }
}

impl<'de> Deserialize<'de> for ProgramSpec {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let raw = ProgramJson::deserialize(d)?;
        raw.try_into().map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;

    /// Two binary sites: P(X0=1)=0.3, P(X1=1|X0=0)=0.2, P(X1=1|X0=1)=0.9.
    pub fn chain2() -> ProgramSpec {
        ProgramSpec::new(
            "chain2",
            vec![
                SiteSpec::categorical("X0", &[], vec![vec![0.7, 0.3]]),
                SiteSpec::categorical("X1", &["X0"], vec![vec![0.8, 0.2], vec![0.1, 0.9]]),
            ],
        )
        .unwrap()
    }

    /// Binary chain with all mass on state 0.
    pub fn deterministic_chain(n: usize) -> ProgramSpec {
        let mut sites = vec![SiteSpec::categorical("X0", &[], vec![vec![1.0, 0.0]])];
        for i in 1..n {
            let parent = format!("X{}", i - 1);
            sites.push(SiteSpec::categorical(
                format!("X{i}"),
                &[parent.as_str()],
                vec![vec![1.0, 0.0], vec![1.0, 0.0]],
            ));
        }
        ProgramSpec::new("det", sites).unwrap()
    }
}

#[cfg(test)]
mod tests {
    use super::fixtures::*;
    use super::*;
    use crate::rng;

    #[test]
    fn deterministic_chain_always_samples_zero() {
        let p = deterministic_chain(2);
        let mut r = rng::stream(3, "t");
        for _ in 0..100 {
            assert_eq!(
                p.ancestral_sample(&mut r).values,
                vec![Value::State(0), Value::State(0)]
            );
        }
    }

    #[test]
    fn chain2_marginal_converges() {
        let p = chain2();
        let mut r = rng::stream(11, "t");
        let n = 100_000;
        let ones = (0..n)
            .filter(|_| p.ancestral_sample(&mut r).values[1] == Value::State(1))
            .count();
        let freq = ones as f64 / n as f64;
        assert!((freq - 0.41).abs() < 0.01, "{freq}");
    }

    #[test]
    fn log_joint_is_product_of_cpt_entries() {
        let p = chain2();
        let a = Assignment {
            values: vec![Value::State(1), Value::State(1)],
        };
        let lj = p.log_joint(&a, None);
        assert!((lj - 0.27f64.ln()).abs() < 1e-12);
        assert_eq!(lj, p.log_joint(&a, None));
        let ev = Evidence::new().with(1, Value::State(0));
        assert!((p.log_joint(&a, Some(&ev)) - (0.3f64 * 0.1).ln()).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_programs() {
        let forward_ref = ProgramSpec::new(
            "bad",
            vec![
                SiteSpec::categorical("A", &["B"], vec![vec![0.5, 0.5], vec![0.5, 0.5]]),
                SiteSpec::categorical("B", &[], vec![vec![0.5, 0.5]]),
            ],
        );
        assert!(matches!(forward_ref, Err(Error::InvalidProgram(_))));

        let bad_sum = ProgramSpec::new(
            "bad",
            vec![SiteSpec::categorical("A", &[], vec![vec![0.5, 0.6]])],
        );
        assert!(bad_sum.is_err());

        let wrong_rows = ProgramSpec::new(
            "bad",
            vec![
                SiteSpec::categorical("A", &[], vec![vec![0.5, 0.5]]),
                SiteSpec::categorical("B", &["A"], vec![vec![0.5, 0.5]]),
            ],
        );
        assert!(wrong_rows.is_err());

        let dup = ProgramSpec::new(
            "bad",
            vec![
                SiteSpec::categorical("A", &[], vec![vec![0.5, 0.5]]),
                SiteSpec::categorical("A", &[], vec![vec![0.5, 0.5]]),
            ],
        );
        assert!(dup.is_err());

        let unary = ProgramSpec::new(
            "bad",
            vec![SiteSpec::categorical("A", &[], vec![vec![1.0]])],
        );
        assert!(unary.is_err());

        let bad_gamma = ProgramSpec::new(
            "bad",
            vec![SiteSpec::continuous(
                "g",
                &[],
                ConditionalDist::GammaConst {
                    shape: 0.0,
                    rate: 1.0,
                },
            )],
        );
        assert!(bad_gamma.is_err());
    }

    #[test]
    fn json_round_trip_and_validation_on_load() {
        let p = builtin_probprog();
        let s = p.to_json_string();
        let back = ProgramSpec::from_json_str(&s).unwrap();
        assert_eq!(p, back);
        assert_eq!(s, back.to_json_string());

        let broken = s.replacen("\"parents\": []", "\"parents\": [\"t5\"]", 1);
        assert!(ProgramSpec::from_json_str(&broken).is_err());
    }

    #[test]
    fn evidence_json_parsing() {
        let p = chain2();
        let ev = Evidence::from_json(&p, &serde_json::json!({"X1": 1})).unwrap();
        assert_eq!(ev.get(1), Some(Value::State(1)));
        assert_eq!(ev.to_json(&p), serde_json::json!({"X1": 1}));
        match Evidence::from_json(&p, &serde_json::json!({"Z": 1})) {
            Err(Error::UnknownSite(name)) => assert_eq!(name, "Z"),
            other => panic!("{other:?}"),
        }
        assert!(Evidence::from_json(&p, &serde_json::json!({"X1": 2})).is_err());
        assert!(Evidence::from_json(&p, &serde_json::json!({"X1": 0.5})).is_err());
    }
}
