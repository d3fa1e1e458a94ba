use std::collections::BTreeMap;

use crate::program::ProgramSpec;

/// Posterior marginal of one site: a probability vector for categorical
/// sites, the (de-standardised) mean for continuous ones.
#[derive(Clone, Debug, PartialEq)]
pub enum Marginal {
    Categorical(Vec<f64>),
    Continuous { mean: f64 },
}

impl Marginal {
    pub fn probs(&self) -> Option<&[f64]> {
        match self {
            Marginal::Categorical(p) => Some(p),
            Marginal::Continuous { .. } => None,
        }
    }

    pub fn mean(&self) -> Option<f64> {
        match self {
            Marginal::Continuous { mean } => Some(*mean),
            Marginal::Categorical(_) => None,
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        match self {
            Marginal::Categorical(p) => serde_json::Value::from(p.clone()),
            Marginal::Continuous { mean } => serde_json::json!({ "mean": mean }),
        }
    }
}

/// Marginals keyed by site index, unobserved sites only.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MarginalSet {
    entries: BTreeMap<usize, Marginal>,
}

impl MarginalSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, site: usize, m: Marginal) {
        self.entries.insert(site, m);
    }

    pub fn get(&self, site: usize) -> Option<&Marginal> {
        self.entries.get(&site)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, &Marginal)> + '_ {
        self.entries.iter().map(|(&k, v)| (k, v))
    }

    pub fn sites(&self) -> impl Iterator<Item = usize> + '_ {
        self.entries.keys().copied()
    }

    /// Largest absolute difference over matching categorical entries.
    pub fn max_abs_diff(&self, other: &MarginalSet) -> f64 {
        self.iter()
            .filter_map(|(i, m)| Some((m.probs()?, other.get(i)?.probs()?)))
            .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs()))
            .fold(0.0, f64::max)
    }

    pub fn to_json(&self, program: &ProgramSpec) -> serde_json::Value {
        let map: serde_json::Map<String, serde_json::Value> = self
            .iter()
            .map(|(i, m)| (program.site(i).name.clone(), m.to_json()))
            .collect();
        serde_json::Value::Object(map)
    }

    /// Aligned text table, one row per site.
    pub fn to_table(&self, program: &ProgramSpec) -> String {
        let width = self
            .sites()
            .map(|i| program.site(i).name.len())
            .max()
            .unwrap_or(4)
            .max(4);
        let mut out = format!("{:<width$}  marginal\n", "site");
        for (i, m) in self.iter() {
            let body = match m {
                Marginal::Categorical(p) => p
                    .iter()
                    .map(|x| format!("{x:.5}"))
                    .collect::<Vec<_>>()
                    .join("  "),
                Marginal::Continuous { mean } => format!("mean {mean:.5}"),
            };
            out.push_str(&format!("{:<width$}  {body}\n", program.site(i).name));
        }
        out
    }
}
