//! Diameter through minimal expected hitting times.

use super::FiniteMdp;
use crate::error::{Error, Result};
use crate::par::Execution;

#[derive(Debug, Clone, Copy)]
pub struct DiameterOptions {
    /// Value iteration stops once no hitting time moves by more than `eps`.
    pub eps: f64,
    /// Hitting times beyond this are reported as `+inf`.
    pub cap: f64,
    pub max_iter: usize,
    pub execution: Execution,
}

impl Default for DiameterOptions {
    fn default() -> Self {
        DiameterOptions { eps: 1e-9, cap: 1e7, max_iter: 100_000_000, execution: Execution::default() }
    }
}

/// `max_{s != s'} min_pi E[steps from s to s']`, or `+inf`.
pub fn diameter(mdp: &FiniteMdp, eps: f64) -> Result<f64> {
    diameter_with(mdp, &DiameterOptions { eps, ..DiameterOptions::default() })
}

pub fn diameter_with(mdp: &FiniteMdp, opts: &DiameterOptions) -> Result<f64> {
    if !(opts.eps > 0.0) {
        return Err(Error::invalid(format!("eps must be positive, got {}", opts.eps)));
    }
    let n = mdp.num_states();
    if n == 1 {
        return Ok(0.0);
    }
    let per_target = opts.execution.map_range(n, |t| hitting_times(mdp, t, opts));
    let mut d: f64 = 0.0;
    for times in per_target {
        d = d.max(times.into_iter().fold(0.0, f64::max));
    }
    Ok(d)
}

/// Minimal expected hitting times of `target` from every state.
pub(crate) fn hitting_times(mdp: &FiniteMdp, target: usize, opts: &DiameterOptions) -> Vec<f64> {
    let n = mdp.num_states();
    let allowed = almost_sure_actions(mdp, target);
    let mut tau = vec![0.0; n];
    for s in 0..n {
        if s != target && allowed[s].is_empty() {
            tau[s] = f64::INFINITY;
        }
    }
    for _ in 0..opts.max_iter {
        let mut change: f64 = 0.0;
        // Gauss-Seidel sweep: the iterates stay monotone and converge faster.
        for s in 0..n {
            if s == target || tau[s].is_infinite() {
                continue;
            }
            let best = allowed[s]
                .iter()
                .map(|&a| {
                    1.0 + mdp
                        .successors(s, a)
                        .iter()
                        .map(|&(j, p)| p * tau[j])
                        .sum::<f64>()
                })
                .fold(f64::INFINITY, f64::min);
            change = change.max((best - tau[s]).abs());
            tau[s] = best;
        }
        if tau.iter().any(|&t| t.is_finite() && t > opts.cap) {
            tau.iter_mut().filter(|t| **t > opts.cap).for_each(|t| *t = f64::INFINITY);
            return tau;
        }
        if change <= opts.eps {
            break;
        }
    }
    tau
}

/// For each state, the actions from which `target` stays reachable with
/// probability one. Empty means the target cannot be reached almost surely.
fn almost_sure_actions(mdp: &FiniteMdp, target: usize) -> Vec<Vec<usize>> {
    let n = mdp.num_states();
    let mut keep = vec![true; n];
    loop {
        let allowed: Vec<Vec<usize>> = (0..n)
            .map(|s| {
                (0..mdp.num_actions(s))
                    .filter(|&a| mdp.successors(s, a).iter().all(|&(j, _)| keep[j]))
                    .collect()
            })
            .collect();
        // Backward reachability of the target through allowed actions.
        let mut reach = vec![false; n];
        reach[target] = true;
        let mut grew = true;
        while grew {
            grew = false;
            for s in 0..n {
                if keep[s]
                    && !reach[s]
                    && allowed[s]
                        .iter()
                        .any(|&a| mdp.successors(s, a).iter().any(|&(j, _)| reach[j]))
                {
                    reach[s] = true;
                    grew = true;
                }
            }
        }
        if reach == keep {
            return allowed
                .into_iter()
                .enumerate()
                .map(|(s, acts)| if keep[s] { acts } else { Vec::new() })
                .collect();
        }
        keep = reach;
    }
}
