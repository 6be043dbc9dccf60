//! Exact policy evaluation, relative value iteration and enumeration of
//! span-constrained deterministic policies.

use nalgebra::{DMatrix, DVector};

use super::{bellman::bellman_optimal, sp, FiniteMdp, GainBias, RandomizedDecisionRule};
use crate::error::{Error, NonConvergence, Result};
use crate::par::Execution;

const MAX_SQUARINGS: usize = 64;
const STATIONARY_TOL: f64 = 1e-13;
const STATIONARY_FALLBACK_TOL: f64 = 1e-9;

/// Gain and bias of the stationary policy `d^inf`.
///
/// Computes the Cesaro-limit matrix `P*` of the chain (via repeated squaring
/// of the aperiodic transform `(P + I) / 2`, which has the same limit), then
/// `g = P* r` and `h = ((I - P + P*)^-1 - P*) r`. Works for multichain
/// policies, in which case the gain is not constant.
pub fn evaluate_policy(mdp: &FiniteMdp, d: &RandomizedDecisionRule) -> Result<GainBias> {
    d.validate(mdp)?;
    let n = mdp.num_states();
    let (r, p) = d.induced_chain(mdp);
    let p = DMatrix::from_row_slice(n, n, &p);
    let r = DVector::from_vec(r);
    let p_star = stationary_matrix(&p)?;

    let eye = DMatrix::<f64>::identity(n, n);
    let fundamental = (&eye - &p + &p_star).lu();
    let inverse = fundamental.try_inverse().ok_or_else(|| {
        Error::NumericalFailure("I - P + P* is singular; the chain limit is inaccurate".into())
    })?;
    let gain = &p_star * &r;
    let bias = (inverse - &p_star) * &r;

    let residual = (&gain - &p * &gain).amax().max((&bias + &gain - &r - &p * &bias).amax());
    if !residual.is_finite() || residual > 1e-6 {
        return Err(Error::NumericalFailure(format!(
            "evaluation equations violated by {residual:.3e}"
        )));
    }
    Ok(GainBias::new(gain.as_slice().to_vec(), bias.as_slice().to_vec()))
}

fn stationary_matrix(p: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = p.nrows();
    let mut q = (p + DMatrix::<f64>::identity(n, n)) * 0.5;
    let mut change = f64::INFINITY;
    for _ in 0..MAX_SQUARINGS {
        let mut next = &q * &q;
        // Rounding drift in the row sums is amplified by each squaring.
        for mut row in next.row_iter_mut() {
            let total = row.sum();
            row /= total;
        }
        change = (&next - &q).amax();
        q = next;
        if change <= STATIONARY_TOL {
            return Ok(q);
        }
    }
    if change <= STATIONARY_FALLBACK_TOL {
        return Ok(q);
    }
    Err(Error::NumericalFailure(format!(
        "limit matrix still moving by {change:.3e} after {MAX_SQUARINGS} squarings"
    )))
}

/// Options of relative value iteration.
#[derive(Debug, Clone, Copy)]
pub struct RviOptions {
    /// Stop once `span(u[n+1] - u[n]) <= eps` (in gain units).
    pub eps: f64,
    pub max_iter: usize,
    /// Aperiodicity weight in `(0, 1]`: iterate `tau * L u + (1 - tau) u`.
    /// `1.0` is plain relative value iteration.
    pub tau: f64,
    pub ref_state: usize,
}

impl Default for RviOptions {
    fn default() -> Self {
        RviOptions { eps: 1e-8, max_iter: 1_000_000, tau: 1.0, ref_state: 0 }
    }
}

/// Optimal gain and bias by relative value iteration.
///
/// The MDP is assumed weakly communicating. The returned gain is within
/// `eps` of the optimal gain.
pub fn optimal_gain_bias(mdp: &FiniteMdp, eps: f64, max_iter: usize) -> Result<GainBias> {
    optimal_gain_bias_with(mdp, &RviOptions { eps, max_iter, ..RviOptions::default() })
}

pub fn optimal_gain_bias_with(mdp: &FiniteMdp, opts: &RviOptions) -> Result<GainBias> {
    if !(opts.eps > 0.0) {
        return Err(Error::invalid(format!("eps must be positive, got {}", opts.eps)));
    }
    if !(opts.tau > 0.0 && opts.tau <= 1.0) {
        return Err(Error::invalid(format!("tau must lie in (0, 1], got {}", opts.tau)));
    }
    let n = mdp.num_states();
    if opts.ref_state >= n {
        return Err(Error::invalid(format!("reference state {} out of range", opts.ref_state)));
    }
    let tau = opts.tau;
    let mut u = vec![0.0; n];
    let mut next = vec![0.0; n];
    for iter in 0..=opts.max_iter {
        for s in 0..n {
            let best = (0..mdp.num_actions(s))
                .map(|a| mdp.q_value(s, a, &u))
                .fold(f64::NEG_INFINITY, f64::max);
            next[s] = tau * best + (1.0 - tau) * u[s];
        }
        let (lo, hi) = diff_range(&next, &u);
        if hi - lo <= opts.eps * tau {
            let g = 0.5 * (lo + hi) / tau;
            let shift = next[opts.ref_state];
            let bias: Vec<f64> = next.iter().map(|x| x - shift).collect();
            return Ok(GainBias::new(vec![g; n], bias));
        }
        if iter == opts.max_iter {
            let shift = next[opts.ref_state];
            let last: Vec<f64> = next.iter().map(|x| x - shift).collect();
            // One extra step so the error can tell cycling from slow progress.
            let (third, _) = bellman_optimal(mdp, &last)?;
            let shift = third[opts.ref_state];
            let third: Vec<f64> = third.iter().map(|x| x - shift).collect();
            return Err(NonConvergence::from_tail(
                "relative value iteration",
                opts.max_iter,
                [&u, &last, &third],
                opts.eps,
            )
            .into());
        }
        let shift = next[opts.ref_state];
        for (x, y) in u.iter_mut().zip(&next) {
            *x = y - shift;
        }
    }
    unreachable!()
}

fn diff_range(a: &[f64], b: &[f64]) -> (f64, f64) {
    a.iter()
        .zip(b)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (x, y)| (lo.min(x - y), hi.max(x - y)))
}

/// Default bound on the number of deterministic rules enumerated.
pub const DEFAULT_ENUMERATION_CAP: u128 = 1 << 20;

/// All deterministic rules with constant gain and bias span at most `c`,
/// with their evaluation. Intended as a brute-force oracle on small MDPs.
pub fn enumerate_deterministic_pi_c(
    mdp: &FiniteMdp,
    c: f64,
) -> Result<Vec<(RandomizedDecisionRule, GainBias)>> {
    enumerate_deterministic_pi_c_with(mdp, c, DEFAULT_ENUMERATION_CAP, Execution::default())
}

pub fn enumerate_deterministic_pi_c_with(
    mdp: &FiniteMdp,
    c: f64,
    cap: u128,
    exec: Execution,
) -> Result<Vec<(RandomizedDecisionRule, GainBias)>> {
    if c.is_nan() || c < 0.0 {
        return Err(Error::invalid(format!("span bound must be non-negative, got {c}")));
    }
    let n = mdp.num_states();
    let mut count: u128 = 1;
    for s in 0..n {
        count = count.saturating_mul(mdp.num_actions(s) as u128);
    }
    if count > cap {
        return Err(Error::TooLarge { count, cap });
    }
    let decode = |mut code: usize| -> Vec<usize> {
        (0..n)
            .map(|s| {
                let k = mdp.num_actions(s);
                let a = code % k;
                code /= k;
                a
            })
            .collect()
    };
    let evaluated = exec.map_range(count as usize, |code| -> Result<_> {
        let d = RandomizedDecisionRule::deterministic(mdp, &decode(code))?;
        let gb = evaluate_policy(mdp, &d)?;
        Ok((d, gb))
    });
    let mut out = Vec::new();
    for item in evaluated {
        let (d, gb) = item?;
        if gb.constant_gain && sp(&gb.bias) <= c + 1e-9 {
            out.push((d, gb));
        }
    }
    Ok(out)
}
