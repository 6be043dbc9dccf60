//! Visit statistics and empirical-Bernstein confidence sets.

use std::io::Write;

use crate::error::{Error, Result};
use crate::extended::BoundedParamMdp;
use crate::mdp::PairLayout;

/// Per-pair counts, reward means (Welford) and transition counts.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats {
    layout: PairLayout,
    r_max: f64,
    count: Vec<u64>,
    mean: Vec<f64>,
    /// Welford sum of squared deviations.
    m2: Vec<f64>,
    /// Row-major, `num_pairs * num_states`.
    trans: Vec<u64>,
}

impl RunningStats {
    pub fn new(layout: PairLayout, r_max: f64) -> Self {
        let pairs = layout.num_pairs();
        let n = layout.num_states();
        RunningStats {
            layout,
            r_max,
            count: vec![0; pairs],
            mean: vec![0.0; pairs],
            m2: vec![0.0; pairs],
            trans: vec![0; pairs * n],
        }
    }

    pub fn layout(&self) -> &PairLayout {
        &self.layout
    }

    pub fn r_max(&self) -> f64 {
        self.r_max
    }

    pub fn num_states(&self) -> usize {
        self.layout.num_states()
    }

    /// Records one transition.
    pub fn update(&mut self, s: usize, a: usize, reward: f64, next: usize) -> Result<()> {
        let k = self.layout.check(s, a)?;
        if !(0.0..=self.r_max).contains(&reward) {
            return Err(Error::invalid(format!("reward {reward} outside [0, {}]", self.r_max)));
        }
        let n = self.num_states();
        if next >= n {
            return Err(Error::invalid(format!("next state {next} out of range")));
        }
        self.count[k] += 1;
        let old = self.mean[k];
        let new = old + (reward - old) / self.count[k] as f64;
        self.mean[k] = new;
        self.m2[k] += (reward - old) * (reward - new);
        self.trans[k * n + next] += 1;
        Ok(())
    }

    pub fn count(&self, s: usize, a: usize) -> u64 {
        self.count[self.layout.pair(s, a)]
    }

    /// Visit counts of all pairs, in layout order.
    pub fn counts(&self) -> &[u64] {
        &self.count
    }

    pub fn mean_reward(&self, s: usize, a: usize) -> f64 {
        self.mean[self.layout.pair(s, a)]
    }

    /// Unbiased sample variance; zero below two samples.
    pub fn reward_variance(&self, s: usize, a: usize) -> f64 {
        let k = self.layout.pair(s, a);
        if self.count[k] < 2 {
            0.0
        } else {
            (self.m2[k] / (self.count[k] - 1) as f64).max(0.0)
        }
    }

    pub fn trans_count(&self, s: usize, a: usize, next: usize) -> u64 {
        self.trans[self.layout.pair(s, a) * self.num_states() + next]
    }

    /// Empirical transition probability; zero for unvisited pairs.
    pub fn p_hat(&self, s: usize, a: usize, next: usize) -> f64 {
        let k = self.layout.pair(s, a);
        if self.count[k] == 0 {
            0.0
        } else {
            self.trans[k * self.num_states() + next] as f64 / self.count[k] as f64
        }
    }

    /// Dumps the per-pair statistics as CSV.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "s,a,n,mean_reward,reward_variance")?;
        for s in 0..self.num_states() {
            for a in 0..self.layout.num_actions(s) {
                writeln!(
                    out,
                    "{s},{a},{},{},{}",
                    self.count(s, a),
                    self.mean_reward(s, a),
                    self.reward_variance(s, a)
                )?;
            }
        }
        Ok(())
    }
}

/// Records one transition in `stats`.
pub fn welford_update(stats: &mut RunningStats, s: usize, a: usize, reward: f64, next: usize) -> Result<()> {
    stats.update(s, a, reward, next)
}

/// Confidence level and the shrink factors applied to both radii.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConfidenceParams {
    pub delta: f64,
    pub alpha_r: f64,
    pub alpha_p: f64,
}

impl ConfidenceParams {
    pub fn new(delta: f64, alpha_r: f64, alpha_p: f64) -> Result<Self> {
        if !(delta > 0.0 && delta < 1.0) {
            return Err(Error::invalid(format!("delta must lie in (0, 1), got {delta}")));
        }
        for (name, alpha) in [("alpha_r", alpha_r), ("alpha_p", alpha_p)] {
            if !(alpha > 0.0 && alpha <= 1.0) {
                return Err(Error::invalid(format!("{name} must lie in (0, 1], got {alpha}")));
            }
        }
        Ok(ConfidenceParams { delta, alpha_r, alpha_p })
    }

    /// Unshrunk radii, as required by the regret guarantee.
    pub fn theoretical(delta: f64) -> Result<Self> {
        Self::new(delta, 1.0, 1.0)
    }
}

/// `ln(2 S A t_k / delta)`, with `A` the largest action count.
fn log_term(layout: &PairLayout, t_k: u64, delta: f64) -> f64 {
    let sa = (layout.num_states() * layout.max_actions()) as f64;
    (2.0 * sa * t_k.max(1) as f64 / delta).ln()
}

fn bernstein(alpha: f64, variance: f64, range: f64, b: f64, n: u64) -> f64 {
    let first = (14.0 * alpha * variance * b / n.max(1) as f64).sqrt();
    let second = 49.0 / 3.0 * alpha * range * b / n.saturating_sub(1).max(1) as f64;
    first + second
}

/// Reward radius of `(s, a)` at episode start `t_k`.
pub fn beta_r(stats: &RunningStats, s: usize, a: usize, t_k: u64, params: &ConfidenceParams) -> f64 {
    let b = log_term(&stats.layout, t_k, params.delta);
    bernstein(params.alpha_r, stats.reward_variance(s, a), stats.r_max, b, stats.count(s, a))
}

/// Transition radius of `(s, a, next)` at episode start `t_k`.
pub fn beta_p(stats: &RunningStats, s: usize, a: usize, next: usize, t_k: u64, params: &ConfidenceParams) -> f64 {
    let b = log_term(&stats.layout, t_k, params.delta);
    let p = stats.p_hat(s, a, next);
    bernstein(params.alpha_p, p * (1.0 - p), 1.0, b, stats.count(s, a))
}

/// The set of MDPs compatible with `stats` at episode start `t_k`.
///
/// Each interval is centred on the empirical estimate and clipped to the
/// admissible range. Unvisited pairs get the whole simplex as transition set.
pub fn build_confidence_set(stats: &RunningStats, t_k: u64, params: &ConfidenceParams) -> Result<BoundedParamMdp> {
    let layout = stats.layout.clone();
    let n = layout.num_states();
    let pairs = layout.num_pairs();
    let b = log_term(&layout, t_k, params.delta);
    let mut r_lo = Vec::with_capacity(pairs);
    let mut r_hi = Vec::with_capacity(pairs);
    let mut p_lo = Vec::with_capacity(pairs * n);
    let mut p_hi = Vec::with_capacity(pairs * n);
    for s in 0..n {
        for a in 0..layout.num_actions(s) {
            let k = layout.pair(s, a);
            let count = stats.count[k];
            let mean = stats.mean[k];
            let radius = bernstein(params.alpha_r, stats.reward_variance(s, a), stats.r_max, b, count);
            r_lo.push(mean - radius);
            r_hi.push(mean + radius);
            if count == 0 {
                p_lo.extend(std::iter::repeat_n(0.0, n));
                p_hi.extend(std::iter::repeat_n(1.0, n));
                continue;
            }
            for next in 0..n {
                let p = stats.trans[k * n + next] as f64 / count as f64;
                let radius = bernstein(params.alpha_p, p * (1.0 - p), 1.0, b, count);
                p_lo.push(p - radius);
                p_hi.push(p + radius);
            }
        }
    }
    BoundedParamMdp::clipped(stats.r_max, layout, r_lo, r_hi, p_lo, p_hi)
}
