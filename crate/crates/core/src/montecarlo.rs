//! Monte Carlo check of the value functions: simulate the controlled counting
//! processes by thinning and average the running rewards.
//!
//! Rewards are accumulated in compensator form (fill rate times quote instead
//! of the quote at each fill), integrated exactly between events. On the time
//! interval `[t_j, t_{j+1})` the quotes and aggregates of slice `j + 1` apply,
//! which is the slice the backward Euler step into `t_j` reads.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use rayon::prelude::*;

use crate::equilibrium::EquilibriumSolution;
use crate::error::{ModelError, Result};
use crate::field::TimeField;
use crate::maker::MakerQuotePolicy;
use crate::model::{lambda_maker, lambda_taker, MarketParams, StateGrids};

/// Initial states of both agents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct StartState {
    pub q: i64,
    pub q_m: i64,
    pub b: i64,
}

/// Mutable state of one path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathState {
    pub t: f64,
    pub q: i64,
    pub q_m: i64,
    pub b: i64,
    pub maker_reward: f64,
    pub taker_reward: f64,
    pub stream: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McStats {
    pub mean: f64,
    pub stderr: f64,
}

impl McStats {
    pub fn from_samples(x: &[f64]) -> Self {
        let n = x.len() as f64;
        let mean = pairwise_sum(x) / n;
        let dev: Vec<f64> = x.iter().map(|v| (v - mean) * (v - mean)).collect();
        let var = if x.len() > 1 {
            pairwise_sum(&dev) / (n - 1.0)
        } else {
            0.0
        };
        Self {
            mean,
            stderr: (var / n).sqrt(),
        }
    }

    /// `(mean - reference) / stderr`; zero when both the gap and the error vanish.
    pub fn z_score(&self, reference: f64) -> f64 {
        let gap = self.mean - reference;
        if self.stderr > 0.0 {
            gap / self.stderr
        } else if gap.abs() <= 1e-12 * (1.0 + reference.abs()) {
            0.0
        } else {
            gap.signum() * f64::INFINITY
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct McReport {
    pub maker: McStats,
    pub taker: McStats,
    pub maker_pde: f64,
    pub taker_pde: f64,
    pub maker_z: f64,
    pub taker_z: f64,
    pub n_paths: usize,
    pub seed: u64,
    /// Constant added to every maker quote.
    pub maker_offset: f64,
    /// Jumps that would have left a grid. Gating makes this zero.
    pub out_of_grid: usize,
}

/// Pairwise (cascade) summation; the result depends only on the input order.
pub fn pairwise_sum(x: &[f64]) -> f64 {
    const LEAF: usize = 32;
    if x.len() <= LEAF {
        x.iter().sum()
    } else {
        let (a, b) = x.split_at(x.len() / 2);
        pairwise_sum(a) + pairwise_sum(b)
    }
}

/// Deterministic per-path generator.
pub fn path_rng(seed: u64, path: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path);
    rng
}

/// Next candidate time of a homogeneous clock of rate `dominating` started at `t`,
/// or `None` when it falls at or beyond `horizon` (or the clock is off).
pub fn propose<R: Rng + ?Sized>(rng: &mut R, t: f64, horizon: f64, dominating: f64) -> Option<f64> {
    if dominating <= 0.0 {
        return None;
    }
    let e: f64 = rng.sample(Exp1);
    let tau = t + e / dominating;
    (tau < horizon).then_some(tau)
}

/// Uniform mark on `[0, dominating)`; a candidate is routed to the first
/// channel whose cumulative rate exceeds it and rejected if none does.
pub fn mark<R: Rng + ?Sized>(rng: &mut R, dominating: f64) -> f64 {
    rng.random::<f64>() * dominating
}

/// Event times of a point process with intensity `rate(t) <= dominating` on `[0, horizon)`.
pub fn thinned_events<R: Rng + ?Sized>(
    rng: &mut R,
    horizon: f64,
    dominating: f64,
    rate: impl Fn(f64) -> f64,
) -> Vec<f64> {
    let mut out = Vec::new();
    let mut t = 0.0;
    while let Some(tau) = propose(rng, t, horizon, dominating) {
        t = tau;
        if mark(rng, dominating) < rate(tau) {
            out.push(tau);
        }
    }
    out
}

/// Piecewise-linear cumulative reward per state, exact for piecewise-constant rates.
struct Cumulative {
    grid: TimeField,
    dt: f64,
    n_steps: usize,
}

impl Cumulative {
    fn build(grids: &StateGrids, n_states: usize, rate: impl Fn(usize, usize) -> f64) -> Self {
        let mut grid = TimeField::zeros(grids.n_times(), n_states);
        for j in 0..grids.n_steps {
            for s in 0..n_states {
                let v = grid.get(j, s) + grids.dt * rate(j + 1, s);
                grid.set(j + 1, s, v);
            }
        }
        Self {
            grid,
            dt: grids.dt,
            n_steps: grids.n_steps,
        }
    }

    fn interval(&self, t: f64) -> usize {
        ((t / self.dt) as usize).min(self.n_steps - 1)
    }

    fn at(&self, s: usize, t: f64) -> f64 {
        let j = self.interval(t);
        let lo = self.grid.get(j, s);
        let hi = self.grid.get(j + 1, s);
        lo + (t - j as f64 * self.dt) / self.dt * (hi - lo)
    }

    fn end(&self, s: usize) -> f64 {
        self.grid.get(self.n_steps, s)
    }

    fn between(&self, s: usize, a: f64, b: Option<f64>) -> f64 {
        let hi = match b {
            Some(t) => self.at(s, t),
            None => self.end(s),
        };
        hi - self.at(s, a)
    }
}

/// Precomputed per-state rate lookups for both agents.
struct Simulator<'a> {
    p: &'a MarketParams,
    g: &'a StateGrids,
    sol: &'a EquilibriumSolution,
    maker_pol: &'a MakerQuotePolicy,
    maker_cum: Cumulative,
    taker_cum: Cumulative,
    maker_dom: Vec<f64>,
    taker_dom: Vec<f64>,
}

impl<'a> Simulator<'a> {
    fn new(sol: &'a EquilibriumSolution, maker_pol: &'a MakerQuotePolicy) -> Self {
        let p = &sol.params;
        let g = &sol.grids;
        let nq = g.maker.len();
        let nt = g.taker_nodes();

        let maker_rates = |j: usize, i: usize| -> (f64, f64) {
            let rb = if g.maker.can_buy(i) {
                lambda_maker(sol.aggregates.mean_ask[j], maker_pol.bid.get(j, i), p)
            } else {
                0.0
            };
            let ra = if g.maker.can_sell(i) {
                lambda_maker(sol.aggregates.mean_bid[j], maker_pol.ask.get(j, i), p)
            } else {
                0.0
            };
            (rb, ra)
        };
        let risk = p.phi * p.sigma * p.sigma;
        let maker_cum = Cumulative::build(g, nq, |j, i| {
            let (rb, ra) = maker_rates(j, i);
            let q = g.maker.value(i) as f64;
            rb * maker_pol.bid.get(j, i)
                + ra * maker_pol.ask.get(j, i)
                + q * sol.aggregates.impact_drift[j]
                - risk * q * q
        });

        let pol = &sol.taker_policy;
        let risk_m = p.gamma * p.sigma * p.sigma;
        let taker_cum = Cumulative::build(g, nt, |j, n| {
            let (iq, ib) = g.split_node(n);
            let q = g.taker.value(iq) as f64;
            let b = g.signal.value(ib) as f64;
            let mut f = b * q - risk_m * q * q + q * sol.aggregates.impact_drift[j];
            if g.taker.can_buy(iq) {
                let d = pol.bid.get(j, n);
                f += lambda_taker(d, p) * d;
            }
            if g.taker.can_sell(iq) {
                let d = pol.ask.get(j, n);
                f += lambda_taker(d, p) * d;
            }
            f
        });

        let mut maker_dom = vec![0.0f64; nq];
        let mut taker_dom = vec![0.0f64; nt];
        for j in 1..g.n_times() {
            for (i, dom) in maker_dom.iter_mut().enumerate() {
                let (rb, ra) = maker_rates(j, i);
                *dom = dom.max(rb + ra);
            }
            for (n, dom) in taker_dom.iter_mut().enumerate() {
                let r = taker_rates(p, g, pol, j, n);
                *dom = dom.max(r.iter().sum());
            }
        }
        Self {
            p,
            g,
            sol,
            maker_pol,
            maker_cum,
            taker_cum,
            maker_dom,
            taker_dom,
        }
    }

    fn run_path(&self, start: StartState, seed: u64, path: u64) -> Result<(PathState, usize)> {
        let g = self.g;
        let p = self.p;
        let horizon = p.horizon;
        let mut rng = path_rng(seed, path);
        let mut out_of_grid = 0;
        let mut st = PathState {
            t: 0.0,
            q: start.q,
            q_m: start.q_m,
            b: start.b,
            maker_reward: 0.0,
            taker_reward: 0.0,
            stream: path,
        };

        // maker
        let mut i = g.maker.index_of(start.q)?;
        let mut t = 0.0;
        loop {
            let next = propose(&mut rng, t, horizon, self.maker_dom[i]);
            st.maker_reward += self.maker_cum.between(i, t, next);
            let Some(tau) = next else { break };
            t = tau;
            let j = self.maker_cum.interval(tau) + 1;
            let u = mark(&mut rng, self.maker_dom[i]);
            let rb = if g.maker.can_buy(i) {
                lambda_maker(
                    self.sol.aggregates.mean_ask[j],
                    self.maker_pol.bid.get(j, i),
                    p,
                )
            } else {
                0.0
            };
            if u < rb {
                if i + 1 < g.maker.len() {
                    i += 1
                } else {
                    out_of_grid += 1
                }
                continue;
            }
            let ra = if g.maker.can_sell(i) {
                lambda_maker(
                    self.sol.aggregates.mean_bid[j],
                    self.maker_pol.ask.get(j, i),
                    p,
                )
            } else {
                0.0
            };
            if u < rb + ra {
                if i > 0 {
                    i -= 1
                } else {
                    out_of_grid += 1
                }
            }
        }
        st.q = g.maker.value(i);

        // taker
        let mut n = g.taker_node_of(start.q_m, start.b)?;
        let nb = g.signal.len();
        t = 0.0;
        loop {
            let next = propose(&mut rng, t, horizon, self.taker_dom[n]);
            st.taker_reward += self.taker_cum.between(n, t, next);
            let Some(tau) = next else { break };
            t = tau;
            let j = self.taker_cum.interval(tau) + 1;
            let u = mark(&mut rng, self.taker_dom[n]);
            let r = taker_rates(p, g, &self.sol.taker_policy, j, n);
            let (iq, ib) = g.split_node(n);
            let mut acc = 0.0;
            for (channel, rate) in r.iter().enumerate() {
                acc += rate;
                if u < acc {
                    let target = match channel {
                        0 => (iq + 1 < g.taker.len()).then(|| n + nb),
                        1 => (iq > 0).then(|| n - nb),
                        2 => (ib + 1 < nb).then(|| n + 1),
                        _ => (ib > 0).then(|| n - 1),
                    };
                    match target {
                        Some(m) => n = m,
                        None => out_of_grid += 1,
                    }
                    break;
                }
            }
        }
        let (iq, ib) = g.split_node(n);
        st.q_m = g.taker.value(iq);
        st.b = g.signal.value(ib);
        st.t = horizon;
        Ok((st, out_of_grid))
    }
}

/// Gated taker channel rates: bid fill, ask fill, signal up, signal down.
fn taker_rates(
    p: &MarketParams,
    g: &StateGrids,
    pol: &crate::taker::TakerQuotePolicy,
    j: usize,
    n: usize,
) -> [f64; 4] {
    let (iq, ib) = g.split_node(n);
    [
        if g.taker.can_buy(iq) {
            lambda_taker(pol.bid.get(j, n), p)
        } else {
            0.0
        },
        if g.taker.can_sell(iq) {
            lambda_taker(pol.ask.get(j, n), p)
        } else {
            0.0
        },
        if g.signal.can_rise(ib) {
            p.lambda_plus
        } else {
            0.0
        },
        if g.signal.can_fall(ib) {
            p.lambda_minus
        } else {
            0.0
        },
    ]
}

fn simulate_with(
    sol: &EquilibriumSolution,
    maker_pol: &MakerQuotePolicy,
    maker_offset: f64,
    start: StartState,
    n_paths: usize,
    seed: u64,
) -> Result<McReport> {
    if n_paths < 2 {
        return Err(ModelError::InvalidParameter {
            field: "paths",
            reason: format!("need at least 2 paths, got {n_paths}"),
        });
    }
    let g = &sol.grids;
    let maker_pde = sol.maker_value.at(g, 0, start.q)?;
    let taker_pde = sol.taker_value.at(g, 0, start.q_m, start.b)?;
    let sim = Simulator::new(sol, maker_pol);
    let results: Vec<(PathState, usize)> = (0..n_paths as u64)
        .into_par_iter()
        .map(|path| sim.run_path(start, seed, path))
        .collect::<Result<_>>()?;
    let maker: Vec<f64> = results.iter().map(|(s, _)| s.maker_reward).collect();
    let taker: Vec<f64> = results.iter().map(|(s, _)| s.taker_reward).collect();
    let out_of_grid = results.iter().map(|(_, k)| k).sum();
    let maker = McStats::from_samples(&maker);
    let taker = McStats::from_samples(&taker);
    Ok(McReport {
        maker_z: maker.z_score(maker_pde),
        taker_z: taker.z_score(taker_pde),
        maker,
        taker,
        maker_pde,
        taker_pde,
        n_paths,
        seed,
        maker_offset,
        out_of_grid,
    })
}

/// Both agents under their equilibrium feedback quotes.
pub fn simulate_paths(
    sol: &EquilibriumSolution,
    start: StartState,
    n_paths: usize,
    seed: u64,
) -> Result<McReport> {
    simulate_with(sol, &sol.maker_policy, 0.0, start, n_paths, seed)
}

/// As [`simulate_paths`] with `offset` added to every maker quote (then clamped).
/// The taker side is unchanged.
pub fn simulate_objective_offpolicy(
    sol: &EquilibriumSolution,
    offset: f64,
    start: StartState,
    n_paths: usize,
    seed: u64,
) -> Result<McReport> {
    if offset == 0.0 {
        return simulate_paths(sol, start, n_paths, seed);
    }
    let shifted = sol.maker_policy.shifted(offset, &sol.params);
    simulate_with(sol, &shifted, offset, start, n_paths, seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pairwise_sum_matches_naive_on_integers() {
        let x: Vec<f64> = (0..1000).map(|i| i as f64).collect();
        assert_eq!(pairwise_sum(&x), 499_500.0);
        assert_eq!(pairwise_sum(&[]), 0.0);
    }

    #[test]
    fn stats_of_constant_sample() {
        let s = McStats::from_samples(&[2.0; 10]);
        assert_eq!(s.mean, 2.0);
        assert_eq!(s.stderr, 0.0);
        assert_eq!(s.z_score(2.0), 0.0);
        assert!(s.z_score(1.0).is_infinite());
    }

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let a: f64 = path_rng(7, 3).random();
        let b: f64 = path_rng(7, 3).random();
        let c: f64 = path_rng(7, 4).random();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn propose_respects_horizon() {
        let mut rng = path_rng(1, 0);
        assert_eq!(propose(&mut rng, 0.0, 1.0, 0.0), None);
        for _ in 0..100 {
            if let Some(t) = propose(&mut rng, 0.5, 1.0, 3.0) {
                assert!((0.5..1.0).contains(&t));
            }
        }
    }

    #[test]
    fn cumulative_is_exact_for_piecewise_constant_rates() {
        let mut p = MarketParams::table1();
        p.horizon = 1.0;
        let g = StateGrids::new(&p, 4).unwrap();
        // rate of slice j + 1 on interval j: 1, 2, 3, 4
        let c = Cumulative::build(&g, 1, |j, _| j as f64);
        assert!((c.end(0) - 2.5).abs() < 1e-15);
        assert!((c.between(0, 0.125, Some(0.625)) - (0.125 + 0.5 + 0.375)).abs() < 1e-15);
    }
}
