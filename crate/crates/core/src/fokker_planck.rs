//! Forward transport of the takers' joint (inventory, signal) mass under a
//! feedback policy, and the mass-weighted aggregates felt by both agents.

use crate::error::{ModelError, Result};
use crate::field::TimeField;
use crate::model::{check_stability, impact_l_gated, lambda_taker, MarketParams, StateGrids};
use crate::taker::TakerQuotePolicy;

/// Tolerance on `sum p = 1` enforced at every time slice.
pub const MASS_TOLERANCE: f64 = 1e-10;

/// `p(t_i, q^m, b^m)` on the taker node layout.
#[derive(Debug, Clone, PartialEq)]
pub struct MassField {
    pub mass: TimeField,
}

impl MassField {
    pub fn at(&self, grids: &StateGrids, t: usize, q_m: i64, b: i64) -> Result<f64> {
        Ok(self.mass.get(t, grids.taker_node_of(q_m, b)?))
    }

    /// Checks total mass and sign on every slice.
    pub fn check_invariants(&self) -> Result<()> {
        for t in 0..self.mass.n_times() {
            check_slice(self.mass.slice(t), t)?;
        }
        Ok(())
    }

    /// `max_i ||p(t_{i+1}) - p(t_i)||_inf / dt`.
    pub fn time_lipschitz(&self, dt: f64) -> f64 {
        let mut worst: f64 = 0.0;
        for t in 0..self.mass.n_times().saturating_sub(1) {
            let a = self.mass.slice(t);
            let b = self.mass.slice(t + 1);
            for (x, y) in a.iter().zip(b) {
                worst = worst.max((y - x).abs() / dt);
            }
        }
        worst
    }

    /// Conditional law of `q^m` given `b^m = b` at slice `t`, indexed by inventory.
    pub fn conditional_inventory(&self, grids: &StateGrids, t: usize, b: i64) -> Result<Vec<f64>> {
        let ib = grids.signal.index_of(b)?;
        let column: Vec<f64> = (0..grids.taker.len())
            .map(|iq| self.mass.get(t, grids.node(iq, ib)))
            .collect();
        normalise(column)
    }

    /// Conditional law of `b^m` given `q^m = q_m` at slice `t`, indexed by signal.
    pub fn conditional_signal(&self, grids: &StateGrids, t: usize, q_m: i64) -> Result<Vec<f64>> {
        let iq = grids.taker.index_of(q_m)?;
        let row: Vec<f64> = (0..grids.signal.len())
            .map(|ib| self.mass.get(t, grids.node(iq, ib)))
            .collect();
        normalise(row)
    }
}

fn normalise(mut v: Vec<f64>) -> Result<Vec<f64>> {
    let total: f64 = v.iter().sum();
    if total <= 0.0 {
        return Err(ModelError::InvalidMass(
            "conditioning event has zero probability".into(),
        ));
    }
    v.iter_mut().for_each(|x| *x /= total);
    Ok(v)
}

fn check_slice(slice: &[f64], t: usize) -> Result<()> {
    let total: f64 = slice.iter().sum();
    if (total - 1.0).abs() > MASS_TOLERANCE {
        return Err(ModelError::InvalidMass(format!(
            "slice {t} sums to {total:.17e}"
        )));
    }
    if let Some(neg) = slice.iter().find(|&&v| v < 0.0 || !v.is_finite()) {
        return Err(ModelError::InvalidMass(format!(
            "slice {t} has entry {neg:e}"
        )));
    }
    Ok(())
}

/// Initial distribution of the takers' (inventory, signal).
#[derive(Debug, Clone, PartialEq)]
pub enum InitialMass {
    PointMass {
        q_m: i64,
        b: i64,
    },
    Uniform,
    /// Explicit probabilities on the node layout.
    Custom(Vec<f64>),
}

impl Default for InitialMass {
    fn default() -> Self {
        Self::PointMass { q_m: 0, b: 0 }
    }
}

impl InitialMass {
    pub fn build(&self, grids: &StateGrids) -> Result<Vec<f64>> {
        let n = grids.taker_nodes();
        let v = match self {
            Self::PointMass { q_m, b } => {
                let mut v = vec![0.0; n];
                v[grids.taker_node_of(*q_m, *b)?] = 1.0;
                v
            }
            Self::Uniform => vec![1.0 / n as f64; n],
            Self::Custom(v) => {
                if v.len() != n {
                    return Err(ModelError::InvalidMass(format!(
                        "expected {n} entries, got {}",
                        v.len()
                    )));
                }
                v.clone()
            }
        };
        check_slice(&v, 0)?;
        Ok(v)
    }

    /// Whether `P_0(q, b) = P_0(-q, -b)` on the grid.
    pub fn is_mirror_symmetric(&self, grids: &StateGrids) -> Result<bool> {
        let v = self.build(grids)?;
        Ok((0..v.len()).all(|n| (v[n] - v[grids.mirror_node(n)]).abs() <= 1e-15))
    }
}

/// Aggregates on one slice.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SliceAggregates {
    /// Mean bid quote of the takers whose bid is active.
    pub mean_bid: f64,
    /// Mean ask quote of the takers whose ask is active.
    pub mean_ask: f64,
    /// `kappa * sum p L(q, bid, ask)`.
    pub impact_drift: f64,
}

/// Per-slice aggregates over the whole time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanFieldAggregates {
    pub mean_bid: Vec<f64>,
    pub mean_ask: Vec<f64>,
    pub impact_drift: Vec<f64>,
}

impl MeanFieldAggregates {
    pub fn at(&self, t: usize) -> SliceAggregates {
        SliceAggregates {
            mean_bid: self.mean_bid[t],
            mean_ask: self.mean_ask[t],
            impact_drift: self.impact_drift[t],
        }
    }

    pub fn len(&self) -> usize {
        self.mean_bid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean_bid.is_empty()
    }
}

/// Mean-field aggregates of one slice of taker quotes.
///
/// The mean quotes average over the mass that can trade on that side, so a
/// taker at its inventory cap does not drag the mean bid toward zero. With no
/// active mass the mean falls back to the myopic quote.
pub fn impact_aggregate(
    mass: &[f64],
    bid: &[f64],
    ask: &[f64],
    p: &MarketParams,
    grids: &StateGrids,
) -> SliceAggregates {
    let nb = grids.signal.len();
    let nq = grids.taker.len();
    let mut mean_bid = 0.0;
    let mut mean_ask = 0.0;
    let mut bid_mass = 0.0;
    let mut ask_mass = 0.0;
    let mut flow = 0.0;
    for iq in 0..nq {
        let can_buy = grids.taker.can_buy(iq);
        let can_sell = grids.taker.can_sell(iq);
        for ib in 0..nb {
            let n = iq * nb + ib;
            let m = mass[n];
            if m == 0.0 {
                continue;
            }
            if can_buy {
                mean_bid += m * bid[n];
                bid_mass += m;
            }
            if can_sell {
                mean_ask += m * ask[n];
                ask_mass += m;
            }
            flow += m * impact_l_gated(can_sell, can_buy, bid[n], ask[n], p);
        }
    }
    let myopic = p.taker_myopic_quote();
    SliceAggregates {
        mean_bid: if bid_mass > 0.0 {
            mean_bid / bid_mass
        } else {
            myopic
        },
        mean_ask: if ask_mass > 0.0 {
            mean_ask / ask_mass
        } else {
            myopic
        },
        impact_drift: p.kappa * flow,
    }
}

/// Aggregates of a mass flow played against a policy, slice by slice.
pub fn aggregates(
    flow: &MassField,
    policy: &TakerQuotePolicy,
    p: &MarketParams,
    grids: &StateGrids,
) -> MeanFieldAggregates {
    let nt = flow.mass.n_times();
    let mut out = MeanFieldAggregates {
        mean_bid: Vec::with_capacity(nt),
        mean_ask: Vec::with_capacity(nt),
        impact_drift: Vec::with_capacity(nt),
    };
    for t in 0..nt {
        let a = impact_aggregate(
            flow.mass.slice(t),
            policy.bid.slice(t),
            policy.ask.slice(t),
            p,
            grids,
        );
        out.mean_bid.push(a.mean_bid);
        out.mean_ask.push(a.mean_ask);
        out.impact_drift.push(a.impact_drift);
    }
    out
}

/// `dp/dt` on one slice. Every outflow is credited to its target node, so the
/// entries sum to zero. Returns the largest total exit rate.
pub fn fp_rhs(
    mass: &[f64],
    bid: &[f64],
    ask: &[f64],
    p: &MarketParams,
    grids: &StateGrids,
    out: &mut [f64],
) -> f64 {
    let nb = grids.signal.len();
    let nq = grids.taker.len();
    out.iter_mut().for_each(|v| *v = 0.0);
    let mut max_rate: f64 = 0.0;
    for iq in 0..nq {
        for ib in 0..nb {
            let n = iq * nb + ib;
            let m = mass[n];
            let mut rate = 0.0;
            if iq + 1 < nq {
                let r = lambda_taker(bid[n], p);
                rate += r;
                out[n] -= r * m;
                out[n + nb] += r * m;
            }
            if iq > 0 {
                let r = lambda_taker(ask[n], p);
                rate += r;
                out[n] -= r * m;
                out[n - nb] += r * m;
            }
            if ib + 1 < nb {
                rate += p.lambda_plus;
                out[n] -= p.lambda_plus * m;
                out[n + 1] += p.lambda_plus * m;
            }
            if ib > 0 {
                rate += p.lambda_minus;
                out[n] -= p.lambda_minus * m;
                out[n - 1] += p.lambda_minus * m;
            }
            max_rate = max_rate.max(rate);
        }
    }
    max_rate
}

/// Largest total exit rate of a policy over the slices used by [`solve_fp`].
pub fn max_exit_rate(policy: &TakerQuotePolicy, p: &MarketParams, grids: &StateGrids) -> f64 {
    let nb = grids.signal.len();
    let nq = grids.taker.len();
    let mut worst: f64 = 0.0;
    for t in 0..grids.n_steps {
        let bid = policy.bid.slice(t);
        let ask = policy.ask.slice(t);
        for iq in 0..nq {
            for ib in 0..nb {
                let n = iq * nb + ib;
                let mut rate = 0.0;
                if iq + 1 < nq {
                    rate += lambda_taker(bid[n], p);
                }
                if iq > 0 {
                    rate += lambda_taker(ask[n], p);
                }
                if ib + 1 < nb {
                    rate += p.lambda_plus;
                }
                if ib > 0 {
                    rate += p.lambda_minus;
                }
                worst = worst.max(rate);
            }
        }
    }
    worst
}

/// Forward explicit Euler `p(t+dt) = p(t) + dt * fp_rhs(p(t), policy(t))`.
///
/// Refuses to run when the policy violates the stability bound; checks mass
/// conservation and non-negativity on every slice.
pub fn solve_fp(
    p0: &[f64],
    policy: &TakerQuotePolicy,
    p: &MarketParams,
    grids: &StateGrids,
) -> Result<MassField> {
    let n = grids.taker_nodes();
    if p0.len() != n {
        return Err(ModelError::Shape(format!(
            "initial mass has {} entries, grid has {n}",
            p0.len()
        )));
    }
    if policy.bid.n_times() != grids.n_times() || policy.bid.n_nodes() != n {
        return Err(ModelError::Shape("policy does not match the grid".into()));
    }
    check_slice(p0, 0)?;
    check_stability("Fokker-Planck", max_exit_rate(policy, p, grids), grids.dt)?;

    let mut mass = TimeField::zeros(grids.n_times(), n);
    mass.slice_mut(0).copy_from_slice(p0);
    let mut dp = vec![0.0; n];
    for i in 0..grids.n_steps {
        fp_rhs(
            mass.slice(i),
            policy.bid.slice(i),
            policy.ask.slice(i),
            p,
            grids,
            &mut dp,
        );
        let (next, cur) = mass.pair_mut(i + 1, i);
        for ((x, &c), &d) in next.iter_mut().zip(cur).zip(&dp) {
            *x = c + grids.dt * d;
        }
        check_slice(next, i + 1)?;
    }
    Ok(MassField { mass })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::taker::TakerQuotePolicy;
    use proptest::prelude::*;

    fn small_grids(p: &MarketParams, n: usize) -> StateGrids {
        StateGrids::new(p, n).unwrap()
    }

    #[test]
    fn single_inventory_signal_chain() {
        let mut p = MarketParams::table1();
        p.q_tilde_m = 0;
        p.b_tilde = 1;
        let grids = small_grids(&p, 10);
        let pol = TakerQuotePolicy::myopic(&p, &grids);
        let mut out = vec![0.0; 3];
        fp_rhs(
            &[0.0, 1.0, 0.0],
            pol.bid.slice(0),
            pol.ask.slice(0),
            &p,
            &grids,
            &mut out,
        );
        assert_eq!(out, vec![1.5, -3.0, 1.5]);
    }

    #[test]
    fn frozen_dynamics_keep_mass() {
        let mut p = MarketParams::table1();
        p.a_m = 0.0;
        p.lambda_plus = 0.0;
        p.lambda_minus = 0.0;
        let grids = small_grids(&p, 20);
        let pol = TakerQuotePolicy::myopic(&p, &grids);
        let p0 = InitialMass::Uniform.build(&grids).unwrap();
        let flow = solve_fp(&p0, &pol, &p, &grids).unwrap();
        for t in 0..grids.n_times() {
            assert_eq!(flow.mass.slice(t), &p0[..]);
        }
    }

    #[test]
    fn symmetric_inputs_stay_symmetric() {
        let p = MarketParams::table1();
        let grids = small_grids(&p, 2000);
        let pol = TakerQuotePolicy::myopic(&p, &grids);
        let p0 = InitialMass::default().build(&grids).unwrap();
        let flow = solve_fp(&p0, &pol, &p, &grids).unwrap();
        flow.check_invariants().unwrap();
        for t in [0, 100, 2000] {
            let s = flow.mass.slice(t);
            for n in 0..s.len() {
                assert!((s[n] - s[grids.mirror_node(n)]).abs() < 1e-14);
            }
        }
        let agg = aggregates(&flow, &pol, &p, &grids);
        assert!(agg.impact_drift.iter().all(|d| d.abs() < 1e-15));
    }

    #[test]
    fn uniform_mass_constant_quotes_average() {
        let p = MarketParams::table1();
        let grids = small_grids(&p, 1);
        let n = grids.taker_nodes();
        let d = 0.3;
        let mass = vec![1.0 / n as f64; n];
        let a = impact_aggregate(&mass, &vec![d; n], &vec![d; n], &p, &grids);
        assert!((a.mean_bid - d).abs() < 1e-14);
        assert!((a.mean_ask - d).abs() < 1e-14);
        // all mass at the cap: no active bid
        let mut top = vec![0.0; n];
        top[grids.taker_node_of(p.q_tilde_m, 0).unwrap()] = 1.0;
        let a = impact_aggregate(&top, &vec![d; n], &vec![d; n], &p, &grids);
        assert_eq!(a.mean_bid, p.taker_myopic_quote());
        assert!((a.mean_ask - d).abs() < 1e-15);
    }

    #[test]
    fn two_node_impact_drift() {
        let p = MarketParams::table1();
        let grids = small_grids(&p, 1);
        let n = grids.taker_nodes();
        let mut mass = vec![0.0; n];
        mass[grids.taker_node_of(0, 0).unwrap()] = 0.5;
        mass[grids.taker_node_of(10, 0).unwrap()] = 0.5;
        let a = impact_aggregate(&mass, &vec![0.1; n], &vec![0.2; n], &p, &grids);
        let expected = p.kappa * (lambda_taker(0.1, &p) - lambda_taker(0.2, &p));
        assert!((a.impact_drift - expected).abs() < 1e-15);
        assert!((a.mean_bid - 0.1).abs() < 1e-15);
        assert!((a.mean_ask - 0.2).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_initial_mass() {
        let p = MarketParams::table1();
        let grids = small_grids(&p, 10);
        let n = grids.taker_nodes();
        let mut v = vec![0.0; n];
        v[0] = 1.5;
        v[1] = -0.5;
        assert!(matches!(
            InitialMass::Custom(v).build(&grids),
            Err(ModelError::InvalidMass(_))
        ));
        assert!(InitialMass::Custom(vec![1.0]).build(&grids).is_err());
        assert!(InitialMass::PointMass { q_m: 5, b: 0 }
            .build(&grids)
            .is_err());
    }

    #[test]
    fn refuses_unstable_policy() {
        let p = MarketParams::table1();
        let grids = small_grids(&p, 10);
        let pol = TakerQuotePolicy::myopic(&p, &grids);
        let p0 = InitialMass::default().build(&grids).unwrap();
        assert!(matches!(
            solve_fp(&p0, &pol, &p, &grids),
            Err(ModelError::Stability { .. })
        ));
    }

    #[test]
    fn conditionals_normalise() {
        let p = MarketParams::table1();
        let grids = small_grids(&p, 1);
        let p0 = InitialMass::Uniform.build(&grids).unwrap();
        let flow = MassField {
            mass: {
                let mut f = TimeField::zeros(2, grids.taker_nodes());
                f.slice_mut(0).copy_from_slice(&p0);
                f.slice_mut(1).copy_from_slice(&p0);
                f
            },
        };
        let c = flow.conditional_inventory(&grids, 1, -2).unwrap();
        assert!((c.iter().sum::<f64>() - 1.0).abs() < 1e-14);
        let c = flow.conditional_signal(&grids, 1, 0).unwrap();
        assert!((c[4] - 1.0 / 9.0).abs() < 1e-14);
    }

    proptest! {
        #[test]
        fn rhs_conserves_mass(
            raw in proptest::collection::vec(0.0f64..1.0, 225),
            bids in proptest::collection::vec(-2.0f64..2.0, 225),
            asks in proptest::collection::vec(-2.0f64..2.0, 225),
        ) {
            let p = MarketParams::table1();
            let grids = small_grids(&p, 1);
            let total: f64 = raw.iter().sum::<f64>() + 1e-12;
            let mass: Vec<f64> = raw.iter().map(|v| v / total).collect();
            let mut out = vec![0.0; 225];
            fp_rhs(&mass, &bids, &asks, &p, &grids, &mut out);
            let s: f64 = out.iter().sum();
            let scale: f64 = out.iter().map(|v| v.abs()).sum::<f64>() + 1.0;
            prop_assert!(s.abs() <= 1e-14 * scale);
        }

        #[test]
        fn point_mass_rhs_is_mirror_symmetric(d in -1.0f64..2.0) {
            let p = MarketParams::table1();
            let grids = small_grids(&p, 1);
            let n = grids.taker_nodes();
            let mut mass = vec![0.0; n];
            mass[grids.taker_node_of(0, 0).unwrap()] = 1.0;
            let mut out = vec![0.0; n];
            fp_rhs(&mass, &vec![d; n], &vec![d; n], &p, &grids, &mut out);
            for k in 0..n {
                prop_assert_eq!(out[k], out[grids.mirror_node(k)]);
            }
        }
    }
}
