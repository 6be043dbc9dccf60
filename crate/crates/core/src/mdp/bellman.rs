use super::{FiniteMdp, RandomizedDecisionRule};
use crate::error::Result;
use crate::planner::BackupProvider;

/// Greedy one-step backup `L v` with its deterministic maximiser.
///
/// Ties are broken towards the lowest action id.
pub fn bellman_optimal(mdp: &FiniteMdp, v: &[f64]) -> Result<(Vec<f64>, RandomizedDecisionRule)> {
    mdp.check_vector(v)?;
    let n = mdp.num_states();
    let mut values = vec![0.0; n];
    let mut choice = vec![0usize; n];
    for s in 0..n {
        let (q, a) = greedy_at(mdp, v, s);
        values[s] = q;
        choice[s] = a;
    }
    let rule = RandomizedDecisionRule::deterministic(mdp, &choice)?;
    Ok((values, rule))
}

/// `L_d v = r_d + P_d v`.
pub fn bellman_policy(mdp: &FiniteMdp, d: &RandomizedDecisionRule, v: &[f64]) -> Result<Vec<f64>> {
    mdp.check_vector(v)?;
    d.validate(mdp)?;
    Ok((0..mdp.num_states())
        .map(|s| {
            d.probs[s]
                .iter()
                .enumerate()
                .filter(|(_, &w)| w != 0.0)
                .map(|(a, &w)| w * mdp.q_value(s, a, v))
                .sum()
        })
        .collect())
}

#[inline]
fn greedy_at(mdp: &FiniteMdp, v: &[f64], s: usize) -> (f64, usize) {
    let mut best = (f64::NEG_INFINITY, 0);
    for a in 0..mdp.num_actions(s) {
        let q = mdp.q_value(s, a, v);
        if q > best.0 {
            best = (q, a);
        }
    }
    best
}

#[inline]
fn minimal_at(mdp: &FiniteMdp, v: &[f64], s: usize) -> (f64, usize) {
    let mut best = (f64::INFINITY, 0);
    for a in 0..mdp.num_actions(s) {
        let q = mdp.q_value(s, a, v);
        if q < best.0 {
            best = (q, a);
        }
    }
    best
}

impl BackupProvider for FiniteMdp {
    type Choice = usize;

    fn num_states(&self) -> usize {
        FiniteMdp::num_states(self)
    }

    fn greedy_sweep(&self, v: &[f64], out: &mut [f64]) {
        for (s, o) in out.iter_mut().enumerate() {
            *o = greedy_at(self, v, s).0;
        }
    }

    fn minimal_sweep(&self, v: &[f64], out: &mut [f64]) {
        for (s, o) in out.iter_mut().enumerate() {
            *o = minimal_at(self, v, s).0;
        }
    }

    fn greedy_choice(&self, v: &[f64], s: usize) -> (f64, usize) {
        greedy_at(self, v, s)
    }

    fn minimal_choice(&self, v: &[f64], s: usize) -> (f64, usize) {
        minimal_at(self, v, s)
    }

    fn choice_backup(&self, s: usize, choice: &usize, v: &[f64]) -> f64 {
        self.q_value(s, *choice, v)
    }
}
