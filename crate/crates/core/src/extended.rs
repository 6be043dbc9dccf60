//! Bounded-parameter MDPs.
//!
//! Each state-action pair carries a reward interval and a box of transition
//! probabilities. The optimistic backup picks the best reward and the best
//! kernel in the box, which turns planning in the whole set into planning in
//! a single "extended" MDP with compact action sets.

use std::cmp::Ordering;

use crate::error::{Error, NonConvergence, Result};
use crate::mdp::{mid_range_of_diff, min_max, span_of_diff, FiniteMdp, PairLayout, ROW_SUM_TOL};
use crate::planner::{greedy_span_policy, BackupProvider, MixedDecision, SpanConstraint};

/// Reward intervals and transition boxes for every state-action pair.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundedParamMdp {
    r_max: f64,
    layout: PairLayout,
    r_lo: Vec<f64>,
    r_hi: Vec<f64>,
    /// Row-major, `num_pairs * num_states`.
    p_lo: Vec<f64>,
    p_hi: Vec<f64>,
}

impl BoundedParamMdp {
    /// Checks every interval and that every box meets the simplex.
    pub fn new(
        r_max: f64,
        layout: PairLayout,
        r_lo: Vec<f64>,
        r_hi: Vec<f64>,
        p_lo: Vec<f64>,
        p_hi: Vec<f64>,
    ) -> Result<Self> {
        let pairs = layout.num_pairs();
        let n = layout.num_states();
        if r_lo.len() != pairs || r_hi.len() != pairs || p_lo.len() != pairs * n || p_hi.len() != pairs * n {
            return Err(Error::invalid("interval arrays do not match the layout"));
        }
        let bmdp = BoundedParamMdp { r_max, layout, r_lo, r_hi, p_lo, p_hi };
        for s in 0..n {
            for a in 0..bmdp.layout.num_actions(s) {
                bmdp.check_pair(s, a)?;
            }
        }
        Ok(bmdp)
    }

    /// Like [`new`](Self::new) after clipping rewards to `[0, r_max]` and
    /// probabilities to `[0, 1]`.
    pub fn clipped(
        r_max: f64,
        layout: PairLayout,
        mut r_lo: Vec<f64>,
        mut r_hi: Vec<f64>,
        mut p_lo: Vec<f64>,
        mut p_hi: Vec<f64>,
    ) -> Result<Self> {
        r_lo.iter_mut().chain(r_hi.iter_mut()).for_each(|x| *x = x.clamp(0.0, r_max));
        p_lo.iter_mut().chain(p_hi.iter_mut()).for_each(|x| *x = x.clamp(0.0, 1.0));
        Self::new(r_max, layout, r_lo, r_hi, p_lo, p_hi)
    }

    /// Point intervals around the parameters of `mdp`.
    pub fn from_mdp(mdp: &FiniteMdp) -> Self {
        let layout = mdp.layout().clone();
        let n = mdp.num_states();
        let mut r = Vec::with_capacity(layout.num_pairs());
        let mut p = Vec::with_capacity(layout.num_pairs() * n);
        for s in 0..n {
            for a in 0..mdp.num_actions(s) {
                r.push(mdp.reward(s, a));
                p.extend_from_slice(mdp.trans(s, a));
            }
        }
        BoundedParamMdp {
            r_max: mdp.r_max(),
            layout,
            r_lo: r.clone(),
            r_hi: r,
            p_lo: p.clone(),
            p_hi: p,
        }
    }

    fn check_pair(&self, s: usize, a: usize) -> Result<()> {
        let (lo, hi) = (self.r_lo(s, a), self.r_hi(s, a));
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return Err(Error::invalid(format!("reward interval [{lo}, {hi}] of ({s},{a}) is empty")));
        }
        let (plo, phi) = (self.p_lo(s, a), self.p_hi(s, a));
        if plo.iter().zip(phi).any(|(l, h)| !(l.is_finite() && h.is_finite() && 0.0 <= *l && l <= h && *h <= 1.0)) {
            return Err(Error::invalid(format!("transition box of ({s},{a}) is malformed")));
        }
        let (sum_lo, sum_hi): (f64, f64) = (plo.iter().sum(), phi.iter().sum());
        if sum_lo > 1.0 + ROW_SUM_TOL || sum_hi < 1.0 - ROW_SUM_TOL {
            return Err(Error::invalid(format!(
                "transition box of ({s},{a}) misses the simplex (sums {sum_lo}, {sum_hi})"
            )));
        }
        Ok(())
    }

    pub fn num_states(&self) -> usize {
        self.layout.num_states()
    }

    pub fn r_max(&self) -> f64 {
        self.r_max
    }

    pub fn layout(&self) -> &PairLayout {
        &self.layout
    }

    pub fn r_lo(&self, s: usize, a: usize) -> f64 {
        self.r_lo[self.layout.pair(s, a)]
    }

    pub fn r_hi(&self, s: usize, a: usize) -> f64 {
        self.r_hi[self.layout.pair(s, a)]
    }

    pub fn p_lo(&self, s: usize, a: usize) -> &[f64] {
        let n = self.num_states();
        let k = self.layout.pair(s, a);
        &self.p_lo[k * n..(k + 1) * n]
    }

    pub fn p_hi(&self, s: usize, a: usize) -> &[f64] {
        let n = self.num_states();
        let k = self.layout.pair(s, a);
        &self.p_hi[k * n..(k + 1) * n]
    }

    /// Whether the parameters of `mdp` lie in the set, with slack `tol`.
    pub fn contains(&self, mdp: &FiniteMdp, tol: f64) -> bool {
        if mdp.layout() != &self.layout {
            return false;
        }
        (0..self.num_states()).all(|s| {
            (0..self.layout.num_actions(s)).all(|a| {
                let r = mdp.reward(s, a);
                r >= self.r_lo(s, a) - tol
                    && r <= self.r_hi(s, a) + tol
                    && mdp
                        .trans(s, a)
                        .iter()
                        .zip(self.p_lo(s, a).iter().zip(self.p_hi(s, a)))
                        .all(|(p, (l, h))| *p >= l - tol && *p <= h + tol)
            })
        })
    }

    /// Whether every transition box is a single point.
    pub fn is_point(&self) -> bool {
        self.p_lo == self.p_hi
    }
}

/// One fictitious action of the extended MDP.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtendedVertex {
    pub action: usize,
    pub reward: f64,
    pub trans: Vec<f64>,
}

/// A rule of the extended MDP, mixing at most two vertices per state.
pub type ExtendedDecision = MixedDecision<ExtendedVertex>;

impl ExtendedDecision {
    /// Probability of each underlying action at `s`, merging vertices that
    /// share an action.
    pub fn action_marginals(&self, s: usize) -> Vec<(usize, f64)> {
        let mut out: Vec<(usize, f64)> = Vec::with_capacity(2);
        for (w, vx) in &self.parts[s] {
            match out.iter_mut().find(|(a, _)| *a == vx.action) {
                Some(entry) => entry.1 += w,
                None => out.push((vx.action, *w)),
            }
        }
        out
    }
}

fn check_box(p_lo: &[f64], p_hi: &[f64], v: &[f64]) -> Result<()> {
    if p_lo.len() != v.len() || p_hi.len() != v.len() {
        return Err(Error::invalid("box and vector lengths differ"));
    }
    let (sum_lo, sum_hi): (f64, f64) = (p_lo.iter().sum(), p_hi.iter().sum());
    if p_lo.iter().zip(p_hi).any(|(l, h)| !(0.0 <= *l && l <= h && *h <= 1.0))
        || sum_lo > 1.0 + ROW_SUM_TOL
        || sum_hi < 1.0 - ROW_SUM_TOL
    {
        return Err(Error::invalid("transition box does not meet the simplex"));
    }
    Ok(())
}

fn descending(v: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&i, &j| v[j].partial_cmp(&v[i]).unwrap_or(Ordering::Equal).then(i.cmp(&j)));
    order
}

fn ascending(v: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&i, &j| v[i].partial_cmp(&v[j]).unwrap_or(Ordering::Equal).then(i.cmp(&j)));
    order
}

/// Fills the box greedily along `order`, starting from the lower bounds.
fn fill(p_lo: &[f64], p_hi: &[f64], order: &[usize]) -> Vec<f64> {
    let mut p = p_lo.to_vec();
    let mut rest = 1.0 - p_lo.iter().sum::<f64>();
    for &j in order {
        if rest <= 0.0 {
            break;
        }
        let add = (p_hi[j] - p_lo[j]).min(rest);
        p[j] += add;
        rest -= add;
    }
    p
}

/// Same as `fill(..)` dotted with `v`, without allocating.
fn fill_dot(p_lo: &[f64], p_hi: &[f64], order: &[usize], v: &[f64]) -> f64 {
    let mut value = 0.0;
    let mut mass = 0.0;
    for (l, x) in p_lo.iter().zip(v) {
        value += l * x;
        mass += l;
    }
    let mut rest = 1.0 - mass;
    for &j in order {
        if rest <= 0.0 {
            break;
        }
        let add = (p_hi[j] - p_lo[j]).min(rest);
        value += add * v[j];
        rest -= add;
    }
    value
}

/// The kernel in the box maximising `p . v`. Ties in `v` favour lower states.
pub fn inner_max_transition(p_lo: &[f64], p_hi: &[f64], v: &[f64]) -> Result<Vec<f64>> {
    check_box(p_lo, p_hi, v)?;
    Ok(fill(p_lo, p_hi, &descending(v)))
}

/// The kernel in the box minimising `p . v`.
pub fn inner_min_transition(p_lo: &[f64], p_hi: &[f64], v: &[f64]) -> Result<Vec<f64>> {
    check_box(p_lo, p_hi, v)?;
    Ok(fill(p_lo, p_hi, &ascending(v)))
}

type Scored = (f64, ExtendedVertex);

/// Greedy and minimal backups at `s` with the vertices achieving them.
pub fn extended_backup(bmdp: &BoundedParamMdp, v: &[f64], s: usize) -> Result<(Scored, Scored)> {
    if v.len() != bmdp.num_states() {
        return Err(Error::invalid("vector length does not match the state count"));
    }
    if s >= bmdp.num_states() {
        return Err(Error::invalid(format!("state {s} out of range")));
    }
    Ok((bmdp.greedy_choice(v, s), bmdp.minimal_choice(v, s)))
}

fn best_vertex(bmdp: &BoundedParamMdp, v: &[f64], s: usize, order: &[usize], maximise: bool) -> Scored {
    let mut best: Option<(f64, usize)> = None;
    for a in 0..bmdp.layout.num_actions(s) {
        let r = if maximise { bmdp.r_hi(s, a) } else { bmdp.r_lo(s, a) };
        let q = r + fill_dot(bmdp.p_lo(s, a), bmdp.p_hi(s, a), order, v);
        let better = match best {
            None => true,
            Some((b, _)) => (maximise && q > b) || (!maximise && q < b),
        };
        if better {
            best = Some((q, a));
        }
    }
    let (q, a) = best.expect("every state has an action");
    let reward = if maximise { bmdp.r_hi(s, a) } else { bmdp.r_lo(s, a) };
    let trans = fill(bmdp.p_lo(s, a), bmdp.p_hi(s, a), order);
    (q, ExtendedVertex { action: a, reward, trans })
}

fn sweep(bmdp: &BoundedParamMdp, v: &[f64], out: &mut [f64], maximise: bool) {
    let order = if maximise { descending(v) } else { ascending(v) };
    for (s, o) in out.iter_mut().enumerate() {
        let mut best = if maximise { f64::NEG_INFINITY } else { f64::INFINITY };
        for a in 0..bmdp.layout.num_actions(s) {
            let r = if maximise { bmdp.r_hi(s, a) } else { bmdp.r_lo(s, a) };
            let q = r + fill_dot(bmdp.p_lo(s, a), bmdp.p_hi(s, a), &order, v);
            best = if maximise { best.max(q) } else { best.min(q) };
        }
        *o = best;
    }
}

impl BackupProvider for BoundedParamMdp {
    type Choice = ExtendedVertex;

    fn num_states(&self) -> usize {
        BoundedParamMdp::num_states(self)
    }

    fn greedy_sweep(&self, v: &[f64], out: &mut [f64]) {
        sweep(self, v, out, true);
    }

    fn minimal_sweep(&self, v: &[f64], out: &mut [f64]) {
        sweep(self, v, out, false);
    }

    fn greedy_choice(&self, v: &[f64], s: usize) -> Scored {
        best_vertex(self, v, s, &descending(v), true)
    }

    fn minimal_choice(&self, v: &[f64], s: usize) -> Scored {
        best_vertex(self, v, s, &ascending(v), false)
    }

    fn choice_backup(&self, _s: usize, choice: &ExtendedVertex, v: &[f64]) -> f64 {
        choice.reward + choice.trans.iter().zip(v).map(|(p, x)| p * x).sum::<f64>()
    }
}

/// The modified set: rewards may drop to zero and every kernel must put at
/// least `eta` on `attract`. `eta == 0` only widens the rewards.
pub fn modify(bmdp: &BoundedParamMdp, eta: f64, attract: usize) -> Result<BoundedParamMdp> {
    if !(0.0..=1.0).contains(&eta) {
        return Err(Error::invalid(format!("eta must lie in [0, 1], got {eta}")));
    }
    let n = bmdp.num_states();
    if attract >= n {
        return Err(Error::invalid(format!("attracting state {attract} out of range")));
    }
    let mut out = bmdp.clone();
    out.r_lo.iter_mut().for_each(|r| *r = 0.0);
    if eta == 0.0 {
        return Ok(out);
    }
    for s in 0..n {
        for a in 0..bmdp.layout.num_actions(s) {
            let k = bmdp.layout.pair(s, a);
            let hi = out.p_hi[k * n + attract];
            if hi < eta {
                return Err(Error::Precondition(format!(
                    "pair ({s},{a}) cannot reach state {attract} with probability {eta} (upper bound {hi})"
                )));
            }
            let lo = &mut out.p_lo[k * n + attract];
            *lo = lo.max(eta);
            let sum_lo: f64 = out.p_lo[k * n..(k + 1) * n].iter().sum();
            if sum_lo > 1.0 + ROW_SUM_TOL {
                return Err(Error::Precondition(format!(
                    "pair ({s},{a}): lower bounds sum to {sum_lo} after modification"
                )));
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct EviResult {
    /// The last iterate the decision is greedy on, shifted to minimum zero.
    pub u: Vec<f64>,
    pub decision: ExtendedDecision,
    pub gain_estimate: f64,
    pub iterations: usize,
}

/// Extended value iteration: value iteration with the optimistic backup,
/// stopped once `span(u[n+1] - u[n]) <= eps`.
pub fn evi(bmdp: &BoundedParamMdp, eps: f64, max_iter: usize) -> Result<EviResult> {
    if !(eps > 0.0) {
        return Err(Error::invalid(format!("eps must be positive, got {eps}")));
    }
    let n = bmdp.num_states();
    let mut u = vec![0.0; n];
    let mut next = vec![0.0; n];
    for iter in 0..max_iter {
        bmdp.greedy_sweep(&u, &mut next);
        if span_of_diff(&next, &u) <= eps {
            let gain_estimate = mid_range_of_diff(&next, &u);
            let choices = (0..n).map(|s| bmdp.greedy_choice(&u, s).1).collect();
            return Ok(EviResult {
                u,
                decision: MixedDecision::deterministic(choices),
                gain_estimate,
                iterations: iter + 1,
            });
        }
        let (lo, _) = min_max(&next);
        for (x, y) in u.iter_mut().zip(&next) {
            *x = y - lo;
        }
    }
    bmdp.greedy_sweep(&u, &mut next);
    let (lo, _) = min_max(&next);
    let last: Vec<f64> = next.iter().map(|y| y - lo).collect();
    let mut after = vec![0.0; n];
    bmdp.greedy_sweep(&last, &mut after);
    let (lo, _) = min_max(&after);
    after.iter_mut().for_each(|x| *x -= lo);
    Err(NonConvergence::from_tail("extended value iteration", max_iter, [&u, &last, &after], eps).into())
}

/// `G_c v` on the extended MDP.
pub fn extended_span_policy(
    bmdp: &BoundedParamMdp,
    v: &[f64],
    c: SpanConstraint,
) -> Result<(ExtendedDecision, Vec<bool>)> {
    greedy_span_policy(bmdp, v, c)
}
