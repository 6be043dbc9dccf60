//! Span-constrained planning.
//!
//! [`op_tc`] truncates a Bellman backup so that its span never exceeds `c`,
//! [`greedy_span_policy`] recovers a randomized decision rule achieving the
//! truncated backup, and [`scopt`] runs relative value iteration with the
//! truncated operator. Everything is generic over a [`BackupProvider`], so the
//! same loop serves plain MDPs and bounded-parameter MDPs.

use std::fmt::Debug;

use crate::error::{Error, NonConvergence, Result};
use crate::mdp::{mid_range_of_diff, min_max, sp, span_of_diff, FiniteMdp, RandomizedDecisionRule};

/// Slack used when comparing a minimal backup with the truncation level.
pub const FEASIBILITY_SLACK: f64 = 1e-12;

/// A source of one-step optimistic and pessimistic backups.
///
/// Both backups must be translation-linear in `v`, and the greedy value must
/// dominate the minimal one.
pub trait BackupProvider: Sync {
    /// What the maximiser or minimiser picks at a state.
    type Choice: Clone + Debug + PartialEq + Send + Sync;

    fn num_states(&self) -> usize;

    /// `out[s] = max over choices of the backup at s`.
    fn greedy_sweep(&self, v: &[f64], out: &mut [f64]);

    /// `out[s] = min over choices of the backup at s`.
    fn minimal_sweep(&self, v: &[f64], out: &mut [f64]);

    fn greedy_choice(&self, v: &[f64], s: usize) -> (f64, Self::Choice);

    fn minimal_choice(&self, v: &[f64], s: usize) -> (f64, Self::Choice);

    /// The backup at `s` of a fixed choice.
    fn choice_backup(&self, s: usize, choice: &Self::Choice, v: &[f64]) -> f64;
}

/// Upper bound on the span of the value function. `+inf` means unconstrained.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpanConstraint(f64);

impl SpanConstraint {
    pub fn new(c: f64) -> Result<Self> {
        if c.is_nan() || c < 0.0 {
            return Err(Error::invalid(format!("span bound must be non-negative, got {c}")));
        }
        Ok(SpanConstraint(c))
    }

    pub fn unconstrained() -> Self {
        SpanConstraint(f64::INFINITY)
    }

    pub fn value(self) -> f64 {
        self.0
    }

    pub fn is_unconstrained(self) -> bool {
        self.0.is_infinite()
    }
}

/// Closest point to `v` (in span) among vectors of span at most `c`:
/// `w(s) = min(v(s), min v + c)`.
pub fn project_span(v: &[f64], c: SpanConstraint) -> Vec<f64> {
    let (lo, _) = min_max(v);
    let top = lo + c.0;
    v.iter().map(|&x| x.min(top)).collect()
}

/// Truncated backup `T_c v = project_span(L v)`.
pub fn op_tc<B: BackupProvider + ?Sized>(backend: &B, v: &[f64], c: SpanConstraint) -> Result<Vec<f64>> {
    check_len(backend, v)?;
    let mut out = vec![0.0; v.len()];
    tc_into(backend, v, c, &mut out);
    Ok(out)
}

fn tc_into<B: BackupProvider + ?Sized>(backend: &B, v: &[f64], c: SpanConstraint, out: &mut [f64]) {
    backend.greedy_sweep(v, out);
    let (lo, _) = min_max(out);
    let top = lo + c.0;
    out.iter_mut().for_each(|x| *x = x.min(top));
}

/// Whether some mixture of choices at `s` reaches `T_c v(s)`.
pub fn feasible_at<B: BackupProvider + ?Sized>(
    backend: &B,
    v: &[f64],
    c: SpanConstraint,
    s: usize,
) -> Result<bool> {
    check_len(backend, v)?;
    if s >= backend.num_states() {
        return Err(Error::invalid(format!("state {s} out of range")));
    }
    let mut lv = vec![0.0; v.len()];
    backend.greedy_sweep(v, &mut lv);
    let (lo, _) = min_max(&lv);
    Ok(backend.minimal_choice(v, s).0 <= lo + c.0 + FEASIBILITY_SLACK)
}

fn check_len<B: BackupProvider + ?Sized>(backend: &B, v: &[f64]) -> Result<()> {
    if v.len() != backend.num_states() {
        return Err(Error::invalid(format!(
            "vector has length {}, expected {}",
            v.len(),
            backend.num_states()
        )));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::invalid("vector has non-finite entries"));
    }
    Ok(())
}

/// A stationary rule mixing at most two choices per state.
#[derive(Debug, Clone, PartialEq)]
pub struct MixedDecision<C> {
    /// Per state, `(weight, choice)` pairs with weights summing to one.
    pub parts: Vec<Vec<(f64, C)>>,
}

impl<C: Clone> MixedDecision<C> {
    pub fn deterministic(choices: Vec<C>) -> Self {
        MixedDecision { parts: choices.into_iter().map(|c| vec![(1.0, c)]).collect() }
    }

    pub fn num_states(&self) -> usize {
        self.parts.len()
    }

    /// The choice played at `s` when the rule is deterministic there.
    pub fn single(&self, s: usize) -> Option<&C> {
        match self.parts[s].as_slice() {
            [(_, c)] => Some(c),
            _ => None,
        }
    }

    /// Draws a choice at `s`.
    pub fn sample<R: rand::Rng + ?Sized>(&self, s: usize, rng: &mut R) -> &C {
        let parts = &self.parts[s];
        if parts.len() == 1 {
            return &parts[0].1;
        }
        let weights: Vec<f64> = parts.iter().map(|(w, _)| *w).collect();
        &parts[crate::mdp::sample_index(&weights, rng)].1
    }
}

impl MixedDecision<usize> {
    /// The same rule as a [`RandomizedDecisionRule`] on `mdp`.
    pub fn to_rule(&self, mdp: &FiniteMdp) -> Result<RandomizedDecisionRule> {
        if self.parts.len() != mdp.num_states() {
            return Err(Error::invalid("decision does not match the MDP size"));
        }
        let probs = self
            .parts
            .iter()
            .enumerate()
            .map(|(s, parts)| {
                let mut row = vec![0.0; mdp.num_actions(s)];
                for &(w, a) in parts {
                    row[a] += w;
                }
                row
            })
            .collect();
        RandomizedDecisionRule::new(mdp, probs)
    }
}

/// Backup of a mixed rule: `sum_i w_i * backup(choice_i)`.
pub fn mixture_backup<B: BackupProvider + ?Sized>(
    backend: &B,
    d: &MixedDecision<B::Choice>,
    v: &[f64],
) -> Vec<f64> {
    d.parts
        .iter()
        .enumerate()
        .map(|(s, parts)| parts.iter().map(|(w, ch)| w * backend.choice_backup(s, ch, v)).sum())
        .collect()
}

/// The rule `G_c v` and per-state feasibility flags.
///
/// Greedy states keep the greedy choice. Truncated but feasible states mix the
/// greedy and minimal choices so that the backup equals `min L v + c`.
/// Infeasible states play the minimal choice.
pub fn greedy_span_policy<B: BackupProvider + ?Sized>(
    backend: &B,
    v: &[f64],
    c: SpanConstraint,
) -> Result<(MixedDecision<B::Choice>, Vec<bool>)> {
    check_len(backend, v)?;
    let n = v.len();
    let greedy: Vec<(f64, B::Choice)> = (0..n).map(|s| backend.greedy_choice(v, s)).collect();
    let lo = greedy.iter().map(|g| g.0).fold(f64::INFINITY, f64::min);
    let top = lo + c.0;
    let mut parts = Vec::with_capacity(n);
    let mut feasible = Vec::with_capacity(n);
    for (s, (v_hi, a_hi)) in greedy.into_iter().enumerate() {
        if v_hi <= top {
            parts.push(vec![(1.0, a_hi)]);
            feasible.push(true);
            continue;
        }
        let (v_lo, a_lo) = backend.minimal_choice(v, s);
        if v_lo > top + FEASIBILITY_SLACK {
            parts.push(vec![(1.0, a_lo)]);
            feasible.push(false);
        } else if v_lo >= top {
            parts.push(vec![(1.0, a_lo)]);
            feasible.push(true);
        } else {
            let gap = v_hi - v_lo;
            debug_assert!(gap > 0.0);
            let w_lo = (v_hi - top) / gap;
            let w_hi = (top - v_lo) / gap;
            parts.push(vec![(w_hi, a_hi), (w_lo, a_lo)]);
            feasible.push(true);
        }
    }
    Ok((MixedDecision { parts }, feasible))
}

#[derive(Debug, Clone, Copy)]
pub struct ScOptOptions {
    pub c: SpanConstraint,
    pub ref_state: usize,
    /// Known span-contraction factor of the backup, in `[0, 1)`. Zero drops
    /// the geometric term of the stopping rule after the first step.
    pub gamma: f64,
    pub eps: f64,
    pub max_iter: usize,
}

impl ScOptOptions {
    pub fn new(c: SpanConstraint, eps: f64) -> Self {
        ScOptOptions { c, ref_state: 0, gamma: 0.0, eps, max_iter: 1_000_000 }
    }
}

#[derive(Debug, Clone)]
pub struct ScOptResult<C> {
    pub v_final: Vec<f64>,
    pub policy: MixedDecision<C>,
    pub gain_estimate: f64,
    /// Number of applications of `T_c`.
    pub iterations: usize,
    pub per_state_feasible: Vec<bool>,
    /// Left-hand side of the stopping test when it fired.
    pub stop_residual: f64,
}

/// Relative value iteration with the truncated operator.
///
/// Iterates `v[n+1] = T_c v[n] - (T_c v[n])(ref) e` until
/// `sp(v[n+1] - v[n]) + 2 gamma^n / (1 - gamma) sp(v[1] - v[0]) <= eps`, then
/// returns `v[n]`, the rule `G_c v[n]` and the mid-range of `T_c v[n] - v[n]`
/// as gain estimate.
pub fn scopt<B: BackupProvider + ?Sized>(
    backend: &B,
    v0: &[f64],
    opts: &ScOptOptions,
) -> Result<ScOptResult<B::Choice>> {
    check_len(backend, v0)?;
    let n = v0.len();
    if opts.ref_state >= n {
        return Err(Error::invalid(format!("reference state {} out of range", opts.ref_state)));
    }
    if !(opts.eps > 0.0) {
        return Err(Error::invalid(format!("eps must be positive, got {}", opts.eps)));
    }
    if !(0.0..1.0).contains(&opts.gamma) {
        return Err(Error::invalid(format!("gamma must lie in [0, 1), got {}", opts.gamma)));
    }
    let c = opts.c;
    if sp(v0) > c.0 + FEASIBILITY_SLACK {
        return Err(Error::Precondition(format!(
            "initial vector has span {} above the bound {}",
            sp(v0),
            c.0
        )));
    }

    let mut v = v0.to_vec();
    let mut tv = vec![0.0; n];
    let mut next = vec![0.0; n];
    let mut first_step = 0.0;
    for iter in 0..opts.max_iter {
        tc_into(backend, &v, c, &mut tv);
        let shift = tv[opts.ref_state];
        for (x, y) in next.iter_mut().zip(&tv) {
            *x = y - shift;
        }
        let step = span_of_diff(&next, &v);
        if iter == 0 {
            first_step = step;
        }
        let residual = step + 2.0 * opts.gamma.powi(iter as i32) / (1.0 - opts.gamma) * first_step;
        if residual <= opts.eps {
            let gain_estimate = mid_range_of_diff(&tv, &v);
            let (policy, per_state_feasible) = greedy_span_policy(backend, &v, c)?;
            return Ok(ScOptResult {
                v_final: v,
                policy,
                gain_estimate,
                iterations: iter + 1,
                per_state_feasible,
                stop_residual: residual,
            });
        }
        std::mem::swap(&mut v, &mut next);
    }
    // `v` holds v[n+1] and `next` holds v[n]; one more step tells a cycle
    // from slow progress.
    tc_into(backend, &v, c, &mut tv);
    let shift = tv[opts.ref_state];
    let after: Vec<f64> = tv.iter().map(|y| y - shift).collect();
    Err(NonConvergence::from_tail("ScOpt", opts.max_iter, [&next, &v, &after], opts.eps).into())
}

/// The first `count` raw iterates `v0, T_c v0, T_c^2 v0, ...` (no shifting).
pub fn tc_iterates<B: BackupProvider + ?Sized>(
    backend: &B,
    v0: &[f64],
    c: SpanConstraint,
    count: usize,
) -> Result<Vec<Vec<f64>>> {
    check_len(backend, v0)?;
    let mut out = vec![v0.to_vec()];
    while out.len() < count {
        let last = out.last().unwrap();
        let mut next = vec![0.0; v0.len()];
        tc_into(backend, last, c, &mut next);
        out.push(next);
    }
    out.truncate(count);
    Ok(out)
}
