//! Finite average-reward MDPs.
//!
//! A [`FiniteMdp`] stores, for every state, a list of actions with their mean
//! reward, reward distribution and transition row. State-action pairs are
//! addressed through a [`PairLayout`] so that per-pair statistics can live in
//! flat vectors.

mod bellman;
mod diameter;
mod eval;

pub use bellman::{bellman_optimal, bellman_policy};
pub use diameter::{diameter, diameter_with, DiameterOptions};
pub use eval::{
    enumerate_deterministic_pi_c, enumerate_deterministic_pi_c_with, evaluate_policy,
    optimal_gain_bias, optimal_gain_bias_with, RviOptions, DEFAULT_ENUMERATION_CAP,
};

use rand::Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::error::{Error, Result};

/// Row sums must match 1 within this tolerance.
pub const ROW_SUM_TOL: f64 = 1e-12;
/// Gain vectors whose span is below this are treated as constant.
pub const CONSTANT_GAIN_TOL: f64 = 1e-9;

/// `max(v) - min(v)`.
///
/// Returns an error on empty input or non-finite entries.
pub fn span(v: &[f64]) -> Result<f64> {
    if v.is_empty() {
        return Err(Error::invalid("span of an empty vector"));
    }
    if let Some(i) = v.iter().position(|x| !x.is_finite()) {
        return Err(Error::invalid(format!("span: entry {i} is not finite ({})", v[i])));
    }
    Ok(sp(v))
}

/// Unchecked span. Callers guarantee `v` is non-empty.
#[inline]
pub(crate) fn sp(v: &[f64]) -> f64 {
    let (lo, hi) = min_max(v);
    hi - lo
}

#[inline]
pub(crate) fn min_max(v: &[f64]) -> (f64, f64) {
    v.iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)))
}

#[inline]
pub(crate) fn span_of_diff(a: &[f64], b: &[f64]) -> f64 {
    let (lo, hi) = a
        .iter()
        .zip(b)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (x, y)| {
            let d = x - y;
            (lo.min(d), hi.max(d))
        });
    hi - lo
}

/// Midpoint of the range of `a - b`; the usual gain estimate of value iteration.
#[inline]
pub(crate) fn mid_range_of_diff(a: &[f64], b: &[f64]) -> f64 {
    let (lo, hi) = a
        .iter()
        .zip(b)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (x, y)| {
            let d = x - y;
            (lo.min(d), hi.max(d))
        });
    0.5 * (lo + hi)
}

/// Index map between `(state, action)` pairs and a flat range.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairLayout {
    offsets: Vec<usize>,
}

impl PairLayout {
    pub fn new(actions_per_state: &[usize]) -> Self {
        let mut offsets = Vec::with_capacity(actions_per_state.len() + 1);
        let mut acc = 0;
        offsets.push(0);
        for &n in actions_per_state {
            acc += n;
            offsets.push(acc);
        }
        PairLayout { offsets }
    }

    pub fn num_states(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn num_actions(&self, s: usize) -> usize {
        self.offsets[s + 1] - self.offsets[s]
    }

    pub fn max_actions(&self) -> usize {
        (0..self.num_states()).map(|s| self.num_actions(s)).max().unwrap_or(0)
    }

    pub fn num_pairs(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    #[inline]
    pub fn pair(&self, s: usize, a: usize) -> usize {
        debug_assert!(a < self.num_actions(s));
        self.offsets[s] + a
    }

    pub fn contains(&self, s: usize, a: usize) -> bool {
        s < self.num_states() && a < self.num_actions(s)
    }

    pub fn check(&self, s: usize, a: usize) -> Result<usize> {
        if self.contains(s, a) {
            Ok(self.pair(s, a))
        } else {
            Err(Error::invalid(format!("no state-action pair ({s}, {a})")))
        }
    }
}

/// Reward distribution of one state-action pair, supported on `[0, r_max]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardDist {
    /// Always the mean.
    Deterministic,
    /// `r_max` with probability `p`, else 0.
    Bernoulli(f64),
    /// Finitely many reward values drawn independently of the next state.
    Categorical { values: Vec<f64>, probs: Vec<f64> },
}

impl RewardDist {
    fn mean(&self, deterministic_value: f64, r_max: f64) -> f64 {
        match self {
            RewardDist::Deterministic => deterministic_value,
            RewardDist::Bernoulli(p) => p * r_max,
            RewardDist::Categorical { values, probs } => {
                values.iter().zip(probs).map(|(v, p)| v * p).sum()
            }
        }
    }

    fn sample<R: Rng + ?Sized>(&self, mean: f64, r_max: f64, rng: &mut R) -> f64 {
        match self {
            RewardDist::Deterministic => mean,
            RewardDist::Bernoulli(p) => {
                if rng.random::<f64>() < *p {
                    r_max
                } else {
                    0.0
                }
            }
            RewardDist::Categorical { values, probs } => {
                let i = sample_index(probs, rng);
                values[i]
            }
        }
    }
}

/// Inverse-CDF draw from a probability vector.
pub(crate) fn sample_index<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p <= 0.0 {
            continue;
        }
        acc += p;
        last = i;
        if u < acc {
            return i;
        }
    }
    last
}

/// One action of one state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionSpec {
    pub reward_mean: f64,
    pub reward_dist: RewardDist,
    /// Dense transition row over all states.
    pub trans: Vec<f64>,
}

impl ActionSpec {
    pub fn deterministic(reward: f64, trans: Vec<f64>) -> Self {
        ActionSpec { reward_mean: reward, reward_dist: RewardDist::Deterministic, trans }
    }

    /// Moves to `next` with probability one.
    pub fn goto(reward: f64, next: usize, num_states: usize) -> Self {
        let mut trans = vec![0.0; num_states];
        trans[next] = 1.0;
        Self::deterministic(reward, trans)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct MdpDocument {
    num_states: usize,
    r_max: f64,
    actions: Vec<Vec<ActionSpec>>,
}

/// A validated finite MDP.
///
/// Invariants (checked by [`FiniteMdp::new`]): every row is a probability
/// vector within [`ROW_SUM_TOL`], every state has an action, and every mean
/// reward lies in `[0, r_max]`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "MdpDocument", into = "MdpDocument")]
pub struct FiniteMdp {
    r_max: f64,
    actions: Vec<Vec<ActionSpec>>,
    layout: PairLayout,
    // Sparse copy of each row, indexed by pair.
    succ: Vec<Vec<(usize, f64)>>,
}

impl TryFrom<MdpDocument> for FiniteMdp {
    type Error = Error;

    fn try_from(doc: MdpDocument) -> Result<Self> {
        if doc.actions.len() != doc.num_states {
            return Err(Error::invalid(format!(
                "num_states is {} but `actions` has {} entries",
                doc.num_states,
                doc.actions.len()
            )));
        }
        FiniteMdp::new(doc.r_max, doc.actions)
    }
}

impl From<FiniteMdp> for MdpDocument {
    fn from(m: FiniteMdp) -> Self {
        MdpDocument { num_states: m.num_states(), r_max: m.r_max, actions: m.actions }
    }
}

impl FiniteMdp {
    pub fn new(r_max: f64, actions: Vec<Vec<ActionSpec>>) -> Result<Self> {
        let n = actions.len();
        if n == 0 {
            return Err(Error::invalid("an MDP needs at least one state"));
        }
        if !(r_max.is_finite() && r_max > 0.0) {
            return Err(Error::invalid(format!("r_max must be positive, got {r_max}")));
        }
        for (s, acts) in actions.iter().enumerate() {
            if acts.is_empty() {
                return Err(Error::invalid(format!("state {s} has no action")));
            }
            for (a, spec) in acts.iter().enumerate() {
                validate_action(s, a, spec, n, r_max)?;
            }
        }
        let layout = PairLayout::new(&actions.iter().map(Vec::len).collect::<Vec<_>>());
        let succ = actions
            .iter()
            .flatten()
            .map(|spec| {
                spec.trans
                    .iter()
                    .enumerate()
                    .filter(|(_, &p)| p > 0.0)
                    .map(|(j, &p)| (j, p))
                    .collect()
            })
            .collect();
        Ok(FiniteMdp { r_max, actions, layout, succ })
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let doc: MdpDocument = serde_json::from_str(s)?;
        Self::try_from(doc)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json_str(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("an MDP always serialises")
    }

    pub fn num_states(&self) -> usize {
        self.actions.len()
    }

    pub fn num_actions(&self, s: usize) -> usize {
        self.actions[s].len()
    }

    pub fn r_max(&self) -> f64 {
        self.r_max
    }

    pub fn layout(&self) -> &PairLayout {
        &self.layout
    }

    pub fn action(&self, s: usize, a: usize) -> &ActionSpec {
        &self.actions[s][a]
    }

    pub fn actions(&self, s: usize) -> &[ActionSpec] {
        &self.actions[s]
    }

    #[inline]
    pub fn reward(&self, s: usize, a: usize) -> f64 {
        self.actions[s][a].reward_mean
    }

    #[inline]
    pub fn trans(&self, s: usize, a: usize) -> &[f64] {
        &self.actions[s][a].trans
    }

    /// Non-zero entries of `p(.|s,a)`.
    #[inline]
    pub fn successors(&self, s: usize, a: usize) -> &[(usize, f64)] {
        &self.succ[self.layout.pair(s, a)]
    }

    /// `r(s,a) + p(.|s,a) . v`.
    #[inline]
    pub fn q_value(&self, s: usize, a: usize, v: &[f64]) -> f64 {
        self.reward(s, a) + self.successors(s, a).iter().map(|&(j, p)| p * v[j]).sum::<f64>()
    }

    /// Largest support size over all rows (the `Γ` of regret bounds).
    pub fn support_gamma(&self) -> usize {
        self.succ.iter().map(Vec::len).max().unwrap_or(0)
    }

    /// Draws a reward and a next state.
    pub fn sample<R: Rng + ?Sized>(&self, s: usize, a: usize, rng: &mut R) -> Result<(f64, usize)> {
        self.layout.check(s, a)?;
        Ok(self.sample_unchecked(s, a, rng))
    }

    #[inline]
    pub(crate) fn sample_unchecked<R: Rng + ?Sized>(&self, s: usize, a: usize, rng: &mut R) -> (f64, usize) {
        let spec = &self.actions[s][a];
        let r = spec.reward_dist.sample(spec.reward_mean, self.r_max, rng);
        let row = self.successors(s, a);
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for &(j, p) in row {
            acc += p;
            if u < acc {
                return (r, j);
            }
        }
        (r, row.last().map(|&(j, _)| j).unwrap_or(s))
    }

    pub(crate) fn check_vector(&self, v: &[f64]) -> Result<()> {
        if v.len() != self.num_states() {
            return Err(Error::invalid(format!(
                "vector has length {} but the MDP has {} states",
                v.len(),
                self.num_states()
            )));
        }
        Ok(())
    }
}

fn validate_action(s: usize, a: usize, spec: &ActionSpec, n: usize, r_max: f64) -> Result<()> {
    let at = |what: String| Error::invalid(format!("state {s}, action {a}: {what}"));
    if spec.trans.len() != n {
        return Err(at(format!("transition row has length {} (expected {n})", spec.trans.len())));
    }
    if let Some(j) = spec.trans.iter().position(|p| !p.is_finite() || *p < 0.0) {
        return Err(at(format!("transition entry {j} is {}", spec.trans[j])));
    }
    let total: f64 = spec.trans.iter().sum();
    if (total - 1.0).abs() > ROW_SUM_TOL {
        return Err(at(format!("transition row sums to {total}")));
    }
    let m = spec.reward_mean;
    if !(m.is_finite() && (0.0..=r_max).contains(&m)) {
        return Err(at(format!("reward mean {m} outside [0, {r_max}]")));
    }
    match &spec.reward_dist {
        RewardDist::Deterministic => {}
        RewardDist::Bernoulli(p) => {
            if !(0.0..=1.0).contains(p) {
                return Err(at(format!("bernoulli parameter {p} outside [0, 1]")));
            }
        }
        RewardDist::Categorical { values, probs } => {
            if values.len() != probs.len() || values.is_empty() {
                return Err(at("categorical reward needs matching non-empty values/probs".into()));
            }
            if values.iter().any(|v| !(0.0..=r_max).contains(v)) {
                return Err(at(format!("categorical reward value outside [0, {r_max}]")));
            }
            if probs.iter().any(|p| *p < 0.0) || (probs.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                return Err(at("categorical reward probabilities are not a distribution".into()));
            }
        }
    }
    let implied = spec.reward_dist.mean(m, r_max);
    if (implied - m).abs() > 1e-9 {
        return Err(at(format!("reward mean {m} disagrees with its distribution (mean {implied})")));
    }
    Ok(())
}

/// Per-state distribution over actions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomizedDecisionRule {
    pub probs: Vec<Vec<f64>>,
}

impl RandomizedDecisionRule {
    /// Validates against `mdp`: shapes match and each row is a distribution.
    pub fn new(mdp: &FiniteMdp, probs: Vec<Vec<f64>>) -> Result<Self> {
        let d = RandomizedDecisionRule { probs };
        d.validate(mdp)?;
        Ok(d)
    }

    pub fn deterministic(mdp: &FiniteMdp, actions: &[usize]) -> Result<Self> {
        if actions.len() != mdp.num_states() {
            return Err(Error::invalid("one action per state is required"));
        }
        let probs = actions
            .iter()
            .enumerate()
            .map(|(s, &a)| {
                mdp.layout().check(s, a)?;
                let mut row = vec![0.0; mdp.num_actions(s)];
                row[a] = 1.0;
                Ok(row)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(RandomizedDecisionRule { probs })
    }

    pub fn validate(&self, mdp: &FiniteMdp) -> Result<()> {
        if self.probs.len() != mdp.num_states() {
            return Err(Error::invalid(format!(
                "decision rule covers {} states, MDP has {}",
                self.probs.len(),
                mdp.num_states()
            )));
        }
        for (s, row) in self.probs.iter().enumerate() {
            if row.len() != mdp.num_actions(s) {
                return Err(Error::invalid(format!(
                    "state {s}: rule has {} weights for {} actions",
                    row.len(),
                    mdp.num_actions(s)
                )));
            }
            if row.iter().any(|w| !w.is_finite() || *w < 0.0) {
                return Err(Error::invalid(format!("state {s}: negative or non-finite weight")));
            }
            let total: f64 = row.iter().sum();
            if (total - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::invalid(format!("state {s}: weights sum to {total}")));
            }
        }
        Ok(())
    }

    /// The action played with probability one in `s`, if any.
    pub fn deterministic_action(&self, s: usize) -> Option<usize> {
        self.probs[s].iter().position(|&w| w == 1.0)
    }

    /// Action-averaged reward vector and dense transition matrix (row-major).
    pub fn induced_chain(&self, mdp: &FiniteMdp) -> (Vec<f64>, Vec<f64>) {
        let n = mdp.num_states();
        let mut r = vec![0.0; n];
        let mut p = vec![0.0; n * n];
        for s in 0..n {
            for (a, &w) in self.probs[s].iter().enumerate() {
                if w == 0.0 {
                    continue;
                }
                r[s] += w * mdp.reward(s, a);
                for &(j, q) in mdp.successors(s, a) {
                    p[s * n + j] += w * q;
                }
            }
        }
        (r, p)
    }
}

/// Gain and bias of a policy, or of the optimality equation.
#[derive(Debug, Clone, PartialEq)]
pub struct GainBias {
    pub gain: Vec<f64>,
    /// Canonical representative with `bias[0] == 0`.
    pub bias: Vec<f64>,
    pub constant_gain: bool,
}

impl GainBias {
    pub(crate) fn new(gain: Vec<f64>, mut bias: Vec<f64>) -> Self {
        let shift = bias[0];
        bias.iter_mut().for_each(|h| *h -= shift);
        let constant_gain = sp(&gain) <= CONSTANT_GAIN_TOL;
        GainBias { gain, bias, constant_gain }
    }

    /// The common gain value, when the gain is constant.
    pub fn scalar_gain(&self) -> Option<f64> {
        self.constant_gain.then(|| {
            let (lo, hi) = min_max(&self.gain);
            0.5 * (lo + hi)
        })
    }

    pub fn bias_span(&self) -> f64 {
        sp(&self.bias)
    }
}
