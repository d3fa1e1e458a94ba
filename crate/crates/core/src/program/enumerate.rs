//! Exact posterior marginals by brute-force summation over completions.

use super::{Evidence, ProgramSpec, SiteKind, Value};
use crate::error::{Error, Result};
use crate::marginals::{Marginal, MarginalSet};

/// Largest number of completions the oracle will sum over.
pub const MAX_ENUMERATION: usize = 1 << 20;

/// `P(X_i = k | evidence)` for every unobserved site of an all-categorical
/// program.
pub fn enumerate_posterior(program: &ProgramSpec, evidence: &Evidence) -> Result<MarginalSet> {
    program.check_evidence(evidence)?;
    let mut arities = Vec::with_capacity(program.len());
    for s in program.sites() {
        match s.kind {
            SiteKind::Categorical { arity } => arities.push(arity),
            SiteKind::Continuous => {
                return Err(Error::EnumerationRefused(format!(
                    "site `{}` is continuous",
                    s.name
                )))
            }
        }
    }
    let hidden: Vec<usize> = (0..program.len())
        .filter(|&i| !evidence.is_observed(i))
        .collect();
    let mut total: usize = 1;
    for &i in &hidden {
        total = total
            .checked_mul(arities[i])
            .filter(|&t| t <= MAX_ENUMERATION)
            .ok_or_else(|| {
                Error::EnumerationRefused(format!(
                    "more than {MAX_ENUMERATION} completions to sum over"
                ))
            })?;
    }

    let mut values: Vec<Value> = (0..program.len())
        .map(|i| evidence.get(i).unwrap_or(Value::State(0)))
        .collect();
    let mut acc: Vec<Vec<f64>> = hidden.iter().map(|&i| vec![0.0; arities[i]]).collect();
    let mut z = 0.0;
    for _ in 0..total {
        let mut joint = 1.0;
        for i in 0..program.len() {
            let row = program.cpd(i).table_row(&values).expect("categorical");
            joint *= row[values[i].state()];
            if joint == 0.0 {
                break;
            }
        }
        if joint > 0.0 {
            z += joint;
            for (slot, &i) in acc.iter_mut().zip(&hidden) {
                slot[values[i].state()] += joint;
            }
        }
        // mixed-radix increment, first hidden site fastest
        for &i in &hidden {
            let next = values[i].state() + 1;
            if next < arities[i] {
                values[i] = Value::State(next);
                break;
            }
            values[i] = Value::State(0);
        }
    }
    if z.is_nan() || z <= 0.0 {
        return Err(Error::InvalidEvidence(
            "evidence has zero probability".into(),
        ));
    }
    let mut out = MarginalSet::new();
    for (probs, &i) in acc.into_iter().zip(&hidden) {
        out.insert(
            i,
            Marginal::Categorical(probs.into_iter().map(|p| p / z).collect()),
        );
    }
    Ok(out)
}
