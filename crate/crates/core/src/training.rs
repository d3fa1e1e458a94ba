//! Training loop.
//!
//! Every iteration draws a fresh batch of prior samples, masks each one with
//! its own random mask, and takes one optimisation step. Standard mode sums
//! all head losses under one optimiser; flexible mode walks the heads in
//! site order and lets each head's optimiser step the trunk and that head
//! on the head's own loss.

use std::io::Write;
use std::time::Instant;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::masking::{encode_masked_into, sample_mask, target_value};
use crate::neural::{HeadSelection, TargetColumn, TrainMode, UmModel};
use crate::program::{SiteKind, Value};
use crate::rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub iterations: usize,
    pub seed: u64,
    pub loss_log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 512,
            iterations: 5000,
            seed: 0,
            loss_log_every: 100,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 1 || self.iterations < 1 || self.loss_log_every < 1 {
            return Err(Error::InvalidConfig(
                "batch size, iterations and log interval must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossRecord {
    /// 1-based iteration count at which the losses were measured.
    pub step: u64,
    pub per_head: Vec<f64>,
    pub summed: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    pub head_names: Vec<String>,
    pub records: Vec<LossRecord>,
    pub seconds: f64,
    pub steps: u64,
}

impl TrainReport {
    pub fn final_summed_loss(&self) -> Option<f64> {
        self.records.last().map(|r| r.summed)
    }

    /// `step,head_name,loss`
    pub fn write_head_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["step", "head_name", "loss"])?;
        for r in &self.records {
            for (name, loss) in self.head_names.iter().zip(&r.per_head) {
                out.write_record([r.step.to_string(), name.clone(), loss.to_string()])?;
            }
        }
        out.flush()?;
        Ok(())
    }

    /// `step,summed_loss`
    pub fn write_summed_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["step", "summed_loss"])?;
        for r in &self.records {
            out.write_record([r.step.to_string(), r.summed.to_string()])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// One training batch: masked inputs and per-site targets. Depends only on
/// the program, the prior statistics, the config seed and the iteration.
pub fn training_batch(
    model: &UmModel,
    config: &TrainConfig,
    iteration: u64,
) -> (Array2<f64>, Vec<TargetColumn>) {
    let program = &model.program;
    let n = program.len();
    let mut rng = rng::indexed_stream(config.seed, "batch", iteration);
    let mut inputs = Array2::zeros((config.batch_size, model.layout.width()));
    let mut targets: Vec<TargetColumn> = program
        .sites()
        .iter()
        .map(|s| match s.kind {
            SiteKind::Categorical { .. } => {
                TargetColumn::States(Vec::with_capacity(config.batch_size))
            }
            SiteKind::Continuous => TargetColumn::Reals(Vec::with_capacity(config.batch_size)),
        })
        .collect();
    let mut sample = vec![Value::State(0); n];
    for mut row in inputs.rows_mut() {
        program.sample_into(&mut sample, None, &mut rng);
        let mask = sample_mask(n, &mut rng);
        encode_masked_into(
            &model.layout,
            &model.stats,
            &sample,
            &mask,
            row.as_slice_mut().expect("row"),
        );
        for (i, (col, &v)) in targets.iter_mut().zip(&sample).enumerate() {
            match (col, target_value(&model.stats, i, v)) {
                (TargetColumn::States(c), Value::State(k)) => c.push(k),
                (TargetColumn::Reals(c), Value::Real(x)) => c.push(x),
                _ => unreachable!("value kind matches site kind"),
            }
        }
    }
    (inputs, targets)
}

fn at_iteration(it: u64, e: Error) -> Error {
    match e {
        Error::NonFinite(msg) => Error::NonFinite(format!("{msg} (iteration {it})")),
        other => other,
    }
}

/// Train `model` in its own mode. Deterministic given the model's initial
/// parameters and `config.seed`.
pub fn train(model: &mut UmModel, config: &TrainConfig) -> Result<TrainReport> {
    config.validate()?;
    let start = Instant::now();
    let n = model.n_sites();
    let mut dropout_rng = rng::stream(config.seed, "dropout");
    let mut records = Vec::new();
    let first = model.steps_trained;
    for it in 0..config.iterations as u64 {
        let (inputs, targets) = training_batch(model, config, it);
        let mut per_head = vec![0.0; n];
        match model.mode {
            TrainMode::Standard => {
                let (grads, losses) = model
                    .backward_batch(
                        inputs.view(),
                        &targets,
                        HeadSelection::All,
                        Some(&mut dropout_rng),
                    )
                    .map_err(|e| at_iteration(it, e))?;
                model
                    .apply_gradients(&grads, 0)
                    .map_err(|e| at_iteration(it, e))?;
                for (slot, l) in per_head.iter_mut().zip(losses) {
                    *slot = l.expect("all heads selected");
                }
            }
            TrainMode::Flexible => {
                for (j, slot) in per_head.iter_mut().enumerate() {
                    let (grads, losses) = model
                        .backward_batch(
                            inputs.view(),
                            &targets,
                            HeadSelection::Single(j),
                            Some(&mut dropout_rng),
                        )
                        .map_err(|e| at_iteration(it, e))?;
                    model
                        .apply_gradients(&grads, j)
                        .map_err(|e| at_iteration(it, e))?;
                    *slot = losses[j].expect("head selected");
                }
            }
        }
        model.steps_trained += 1;
        let step = it + 1;
        if step % config.loss_log_every as u64 == 0 || step == config.iterations as u64 {
            let summed = per_head.iter().sum::<f64>();
            if !summed.is_finite() {
                return Err(Error::NonFinite(format!("training loss (iteration {it})")));
            }
            records.push(LossRecord {
                step: first + step,
                per_head,
                summed,
            });
        }
    }
    Ok(TrainReport {
        head_names: model
            .program
            .sites()
            .iter()
            .map(|s| s.name.clone())
            .collect(),
        records,
        seconds: start.elapsed().as_secs_f64(),
        steps: model.steps_trained,
    })
}

/// Advisory diagnostic: mean summed loss over the last (up to) 10 logged
/// points is below the mean over the first 10.
pub fn loss_curve_monotone_check(report: &TrainReport) -> bool {
    let losses: Vec<f64> = report.records.iter().map(|r| r.summed).collect();
    if losses.len() < 2 {
        return false;
    }
    let w = (losses.len() / 2).min(10);
    let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
    mean(&losses[losses.len() - w..]) < mean(&losses[..w])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::masking::{compute_prior_stats, encode, EncodingLayout};
    use crate::neural::{build_um, ArchSpec, Prediction};
    use crate::program::fixtures::deterministic_chain;
    use crate::program::{make_chain, Evidence, ProgramSpec, SiteSpec};

    fn report_from(losses: &[f64]) -> TrainReport {
        TrainReport {
            head_names: vec!["a".into()],
            records: losses
                .iter()
                .enumerate()
                .map(|(i, &l)| LossRecord {
                    step: i as u64,
                    per_head: vec![l],
                    summed: l,
                })
                .collect(),
            seconds: 0.0,
            steps: losses.len() as u64,
        }
    }

    fn model(p: &ProgramSpec, preset: u8, mode: TrainMode, seed: u64) -> UmModel {
        let stats = compute_prior_stats(p, 10_000, &mut rng::stream(seed, "stats")).unwrap();
        build_um(
            p,
            ArchSpec::Preset(preset),
            mode,
            EncodingLayout::new(p),
            stats,
            seed,
        )
        .unwrap()
    }

    #[test]
    fn monotone_check() {
        let down: Vec<f64> = (0..30).map(|i| 10.0 - i as f64 * 0.1).collect();
        assert!(loss_curve_monotone_check(&report_from(&down)));
        assert!(!loss_curve_monotone_check(&report_from(&[1.0; 30])));
        assert!(!loss_curve_monotone_check(&report_from(&[1.0])));
    }

    #[test]
    fn single_site_converges_to_prior() {
        let p = ProgramSpec::new(
            "one",
            vec![SiteSpec::categorical("a", &[], vec![vec![0.35, 0.65]])],
        )
        .unwrap();
        for mode in [TrainMode::Standard, TrainMode::Flexible] {
            let mut m = model(&p, 1, mode, 1);
            let cfg = TrainConfig {
                batch_size: 256,
                iterations: 2000,
                seed: 2,
                loss_log_every: 100,
            };
            train(&mut m, &cfg).unwrap();
            let x = encode(&m.layout, &m.stats, &Evidence::new()).unwrap();
            match &m.forward(&x).unwrap()[0] {
                Prediction::Probs(q) => assert!((q[1] - 0.65).abs() < 0.02, "{mode}: {q:?}"),
                _ => unreachable!(),
            }
        }
    }

    #[test]
    fn deterministic_chain_is_learned_exactly() {
        let p = deterministic_chain(4);
        let mut m = model(&p, 1, TrainMode::Standard, 3);
        let cfg = TrainConfig {
            batch_size: 64,
            iterations: 1000,
            seed: 4,
            loss_log_every: 50,
        };
        let report = train(&mut m, &cfg).unwrap();
        let last = report.final_summed_loss().unwrap();
        assert!(last < 1e-3, "{last}");
        assert!(loss_curve_monotone_check(&report));
        assert_eq!(report.records.len(), 20);
        assert_eq!(report.steps, 1000);
    }

    #[test]
    fn training_is_bit_reproducible() {
        let p = make_chain(4, 1).unwrap();
        let cfg = TrainConfig {
            batch_size: 32,
            iterations: 50,
            seed: 9,
            loss_log_every: 10,
        };
        for mode in [TrainMode::Standard, TrainMode::Flexible] {
            let mut a = model(&p, 2, mode, 5);
            let mut b = model(&p, 2, mode, 5);
            let ra = train(&mut a, &cfg).unwrap();
            let rb = train(&mut b, &cfg).unwrap();
            assert_eq!(a.to_checkpoint_json(), b.to_checkpoint_json());
            assert_eq!(ra.records, rb.records);
        }
    }

    #[test]
    fn modes_consume_identical_batches() {
        let p = make_chain(8, 1).unwrap();
        let s = model(&p, 1, TrainMode::Standard, 5);
        let f = model(&p, 1, TrainMode::Flexible, 5);
        let cfg = TrainConfig::default();
        for it in [0, 1, 77] {
            assert_eq!(training_batch(&s, &cfg, it), training_batch(&f, &cfg, it));
        }
    }

    #[test]
    fn masks_vary_between_iterations() {
        let p = make_chain(8, 1).unwrap();
        let m = model(&p, 1, TrainMode::Standard, 5);
        let cfg = TrainConfig {
            batch_size: 1,
            ..TrainConfig::default()
        };
        let flags: Vec<usize> = m.layout.sites().iter().map(|s| s.flag).collect();
        let sizes: std::collections::BTreeSet<usize> = (0..100)
            .map(|it| {
                let (x, _) = training_batch(&m, &cfg, it);
                flags.iter().filter(|&&f| x[[0, f]] == 0.0).count()
            })
            .collect();
        assert!(sizes.len() >= 2);
    }

    #[test]
    fn csv_outputs() {
        let r = report_from(&[2.0, 1.5]);
        let mut a = Vec::new();
        r.write_head_csv(&mut a).unwrap();
        assert_eq!(
            String::from_utf8(a).unwrap(),
            "step,head_name,loss\n0,a,2\n1,a,1.5\n"
        );
        let mut b = Vec::new();
        r.write_summed_csv(&mut b).unwrap();
        assert_eq!(
            String::from_utf8(b).unwrap(),
            "step,summed_loss\n0,2\n1,1.5\n"
        );
    }
}
