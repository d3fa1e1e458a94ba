//! JSON checkpoint format.
//!
//! Weights are nested row-major arrays (`w[input][output]`). Optimiser
//! moments are not persisted; a loaded model starts with fresh optimisers.

use std::collections::BTreeMap;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::{Architecture, Dense, TrainMode, UmModel};
use crate::error::{Error, Result};
use crate::masking::{EncodingLayout, PriorStats, SiteStats};
use crate::program::{ProgramSpec, SiteKind};

#[derive(Clone, Debug, Serialize, Deserialize)]
struct LayerJson {
    w: Vec<Vec<f64>>,
    b: Vec<f64>,
}

impl From<&Dense> for LayerJson {
    fn from(d: &Dense) -> Self {
        LayerJson {
            w: d.w.rows().into_iter().map(|r| r.to_vec()).collect(),
            b: d.b.to_vec(),
        }
    }
}

impl LayerJson {
    fn into_dense(self, inputs: usize, outputs: usize, what: &str) -> Result<Dense> {
        let bad =
            || Error::InvalidConfig(format!("checkpoint {what} should be {inputs}x{outputs}"));
        if self.w.len() != inputs
            || self.w.iter().any(|r| r.len() != outputs)
            || self.b.len() != outputs
        {
            return Err(bad());
        }
        let flat: Vec<f64> = self.w.into_iter().flatten().collect();
        if flat.iter().chain(&self.b).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("checkpoint {what}")));
        }
        Ok(Dense {
            w: Array2::from_shape_vec((inputs, outputs), flat).map_err(|_| bad())?,
            b: Array1::from(self.b),
        })
    }
}

/// Serialised form of a [`UmModel`].
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Checkpoint {
    program: ProgramSpec,
    arch: Architecture,
    #[serde(default)]
    preset: Option<u8>,
    mode: TrainMode,
    stats: PriorStats,
    trunk: Vec<LayerJson>,
    heads: BTreeMap<String, LayerJson>,
    rng_seed: u64,
    steps_trained: u64,
}

impl From<&UmModel> for Checkpoint {
    fn from(m: &UmModel) -> Self {
        Checkpoint {
            program: m.program.clone(),
            arch: m.arch,
            preset: m.preset,
            mode: m.mode,
            stats: m.stats.clone(),
            trunk: m.trunk.iter().map(LayerJson::from).collect(),
            heads: m
                .heads
                .iter()
                .enumerate()
                .map(|(j, h)| (m.program.site(j).name.clone(), LayerJson::from(h)))
                .collect(),
            rng_seed: m.rng_seed,
            steps_trained: m.steps_trained,
        }
    }
}

impl TryFrom<Checkpoint> for UmModel {
    type Error = Error;

    fn try_from(mut c: Checkpoint) -> Result<Self> {
        c.arch.validate()?;
        let layout = EncodingLayout::new(&c.program);
        if c.stats.sites.len() != c.program.len() {
            return Err(Error::InvalidConfig(
                "checkpoint stats do not match program".into(),
            ));
        }
        for (s, slots) in c.stats.sites.iter().zip(layout.sites()) {
            let ok = match (s, slots.kind) {
                (SiteStats::Categorical(p), SiteKind::Categorical { arity }) => p.len() == arity,
                (SiteStats::Continuous { std, .. }, SiteKind::Continuous) => *std > 0.0,
                _ => false,
            };
            if !ok {
                return Err(Error::InvalidConfig(
                    "checkpoint stats do not match program".into(),
                ));
            }
        }
        if c.trunk.len() != c.arch.hidden_layers {
            return Err(Error::InvalidConfig(format!(
                "checkpoint has {} trunk layers, architecture says {}",
                c.trunk.len(),
                c.arch.hidden_layers
            )));
        }
        let mut fan_in = layout.width();
        let mut trunk = Vec::with_capacity(c.trunk.len());
        for (l, layer) in c.trunk.into_iter().enumerate() {
            trunk.push(layer.into_dense(fan_in, c.arch.width, &format!("trunk layer {l}"))?);
            fan_in = c.arch.width;
        }
        let mut heads = Vec::with_capacity(c.program.len());
        for (site, slots) in c.program.sites().iter().zip(layout.sites()) {
            let layer = c.heads.remove(&site.name).ok_or_else(|| {
                Error::InvalidConfig(format!("checkpoint lacks head `{}`", site.name))
            })?;
            heads.push(layer.into_dense(
                c.arch.width,
                slots.output.len(),
                &format!("head `{}`", site.name),
            )?);
        }
        if let Some(extra) = c.heads.keys().next() {
            return Err(Error::UnknownSite(extra.clone()));
        }
        let mut model = UmModel {
            program: c.program,
            layout,
            stats: c.stats,
            arch: c.arch,
            preset: c.preset,
            mode: c.mode,
            trunk,
            heads,
            optimizers: Vec::new(),
            rng_seed: c.rng_seed,
            steps_trained: c.steps_trained,
        };
        model.reset_optimizers();
        Ok(model)
    }
}

impl UmModel {
    pub fn to_checkpoint_json(&self) -> String {
        serde_json::to_string(&Checkpoint::from(self)).expect("checkpoint serialises")
    }

    pub fn from_checkpoint_json(s: &str) -> Result<Self> {
        let c: Checkpoint = serde_json::from_str(s)?;
        c.try_into()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::masking::compute_prior_stats;
    use crate::neural::{build_um, ArchSpec};
    use crate::program::builtin_probprog;
    use crate::rng;

    #[test]
    fn checkpoint_round_trip_is_lossless() {
        let p = builtin_probprog();
        let stats = compute_prior_stats(&p, 1000, &mut rng::stream(1, "s")).unwrap();
        let m = build_um(
            &p,
            ArchSpec::Preset(1),
            TrainMode::Flexible,
            EncodingLayout::new(&p),
            stats,
            9,
        )
        .unwrap();
        let s = m.to_checkpoint_json();
        let back = UmModel::from_checkpoint_json(&s).unwrap();
        assert_eq!(back.trunk, m.trunk);
        assert_eq!(back.heads, m.heads);
        assert_eq!(back.stats, m.stats);
        assert_eq!(back.optimizers.len(), 52);
        assert_eq!(s, back.to_checkpoint_json());

        let v: serde_json::Value = serde_json::from_str(&s).unwrap();
        for key in [
            "program",
            "arch",
            "mode",
            "stats",
            "trunk",
            "heads",
            "rng_seed",
            "steps_trained",
        ] {
            assert!(v.get(key).is_some(), "{key}");
        }
        assert_eq!(v["mode"], "flexible");
        assert_eq!(v["arch"]["h"], 2);
    }

    #[test]
    fn corrupted_checkpoint_is_rejected() {
        let p = builtin_probprog();
        let stats = compute_prior_stats(&p, 1000, &mut rng::stream(1, "s")).unwrap();
        let m = build_um(
            &p,
            ArchSpec::Preset(1),
            TrainMode::Standard,
            EncodingLayout::new(&p),
            stats,
            9,
        )
        .unwrap();
        let mut v: serde_json::Value = serde_json::from_str(&m.to_checkpoint_json()).unwrap();
        v["arch"]["s"] = 11.into();
        assert!(UmModel::from_checkpoint_json(&v.to_string()).is_err());
    }
}
