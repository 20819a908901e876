//! Market-maker: backward explicit Euler on
//! `0 = dW/dt - phi sigma^2 q^2 + q * impact + H(q, quotes, mean taker quotes)`
//! given the equilibrium aggregates. Nothing here feeds back into the mean field.

use crate::error::{ModelError, Result};
use crate::field::TimeField;
use crate::fokker_planck::{MeanFieldAggregates, SliceAggregates};
use crate::model::{check_stability, dbar_maker, lambda_maker, MarketParams, StateGrids};

/// `W(t_i, q)` on the maker inventory grid.
#[derive(Debug, Clone, PartialEq)]
pub struct MakerValueField {
    pub values: TimeField,
}

impl MakerValueField {
    pub fn at(&self, grids: &StateGrids, t: usize, q: i64) -> Result<f64> {
        Ok(self.values.get(t, grids.maker.index_of(q)?))
    }
}

/// Maker feedback quotes per time slice and inventory.
///
/// The bid at `q_tilde` and the ask at `-q_tilde` are inert and stored at `sigma / k`.
#[derive(Debug, Clone, PartialEq)]
pub struct MakerQuotePolicy {
    pub bid: TimeField,
    pub ask: TimeField,
    pub clamped_anywhere: bool,
}

impl MakerQuotePolicy {
    pub fn myopic(params: &MarketParams, grids: &StateGrids) -> Self {
        let d = dbar_maker(0.0, params).value;
        Self {
            bid: TimeField::filled(grids.n_times(), grids.maker.len(), d),
            ask: TimeField::filled(grids.n_times(), grids.maker.len(), d),
            clamped_anywhere: false,
        }
    }

    pub fn bid_inert(grids: &StateGrids, iq: usize) -> bool {
        !grids.maker.can_buy(iq)
    }

    pub fn ask_inert(grids: &StateGrids, iq: usize) -> bool {
        !grids.maker.can_sell(iq)
    }

    /// Copy with `offset` added to every quote, re-clamped to `delta_inf`.
    pub fn shifted(&self, offset: f64, params: &MarketParams) -> Self {
        let bound = params.delta_inf;
        let mut out = self.clone();
        let mut clamped = false;
        for f in [&mut out.bid, &mut out.ask] {
            let n = f.n_nodes();
            for t in 0..f.n_times() {
                for k in 0..n {
                    let raw = f.get(t, k) + offset;
                    let v = raw.clamp(-bound, bound);
                    clamped |= v != raw;
                    f.set(t, k, v);
                }
            }
        }
        out.clamped_anywhere = self.clamped_anywhere || clamped;
        out
    }
}

/// Maker Hamiltonian
/// `1{q < q_tilde} Lambda(meanAsk, d1)(d1 + z1 - z) + 1{q > -q_tilde} Lambda(meanBid, d2)(d2 + z2 - z)`.
///
/// The maker's bid is hit by takers selling, so it faces their mean ask, and vice versa.
#[allow(clippy::too_many_arguments)]
pub fn maker_hamiltonian(
    q: i64,
    d1: f64,
    d2: f64,
    z: f64,
    z1: f64,
    z2: f64,
    agg: &SliceAggregates,
    p: &MarketParams,
) -> Result<f64> {
    if q.abs() > p.q_tilde {
        return Err(ModelError::Domain {
            what: "maker inventory",
            value: q,
            min: -p.q_tilde,
            max: p.q_tilde,
        });
    }
    let mut h = 0.0;
    if q < p.q_tilde {
        h += lambda_maker(agg.mean_ask, d1, p) * (d1 + z1 - z);
    }
    if q > -p.q_tilde {
        h += lambda_maker(agg.mean_bid, d2, p) * (d2 + z2 - z);
    }
    Ok(h)
}

fn quotes_slice(
    w: &[f64],
    grids: &StateGrids,
    p: &MarketParams,
    bid: &mut [f64],
    ask: &mut [f64],
) -> bool {
    let nq = grids.maker.len();
    let myopic = dbar_maker(0.0, p).value;
    let mut clamped = false;
    for i in 0..nq {
        bid[i] = if i + 1 < nq {
            let d = dbar_maker(w[i] - w[i + 1], p);
            clamped |= d.clamped;
            d.value
        } else {
            myopic
        };
        ask[i] = if i > 0 {
            let d = dbar_maker(w[i] - w[i - 1], p);
            clamped |= d.clamped;
            d.value
        } else {
            myopic
        };
    }
    clamped
}

/// Right-hand side `F` with `dW/dt = -F` at quotes `bid`, `ask`. Returns the
/// largest total fill rate.
pub(crate) fn rhs_with_quotes(
    w: &[f64],
    bid: &[f64],
    ask: &[f64],
    agg: &SliceAggregates,
    grids: &StateGrids,
    p: &MarketParams,
    out: &mut [f64],
) -> f64 {
    let nq = grids.maker.len();
    let risk = p.phi * p.sigma * p.sigma;
    let mut max_rate: f64 = 0.0;
    for i in 0..nq {
        let q = grids.maker.value(i) as f64;
        let z = w[i];
        let mut f = -risk * q * q + q * agg.impact_drift;
        let mut rate = 0.0;
        if i + 1 < nq {
            let l = lambda_maker(agg.mean_ask, bid[i], p);
            f += l * (bid[i] + w[i + 1] - z);
            rate += l;
        }
        if i > 0 {
            let l = lambda_maker(agg.mean_bid, ask[i], p);
            f += l * (ask[i] + w[i - 1] - z);
            rate += l;
        }
        out[i] = f;
        max_rate = max_rate.max(rate);
    }
    max_rate
}

/// Backward explicit Euler from `W(T) = 0`. The step toward `t_{i-1}` reads
/// the aggregates at `t_i`, matching the taker scheme.
pub fn solve_maker_hjb(
    agg: &MeanFieldAggregates,
    p: &MarketParams,
    grids: &StateGrids,
) -> Result<MakerValueField> {
    if agg.len() != grids.n_times() {
        return Err(ModelError::Shape(format!(
            "aggregates cover {} slices, grid has {}",
            agg.len(),
            grids.n_times()
        )));
    }
    let nq = grids.maker.len();
    let mut values = TimeField::zeros(grids.n_times(), nq);
    let mut bid = vec![0.0; nq];
    let mut ask = vec![0.0; nq];
    let mut rhs = vec![0.0; nq];
    for i in (1..grids.n_times()).rev() {
        let (prev, next) = values.pair_mut(i - 1, i);
        quotes_slice(next, grids, p, &mut bid, &mut ask);
        let rate = rhs_with_quotes(next, &bid, &ask, &agg.at(i), grids, p, &mut rhs);
        check_stability("maker HJB", rate, grids.dt)?;
        for ((w, &z), &f) in prev.iter_mut().zip(next.iter()).zip(&rhs) {
            *w = z + grids.dt * f;
        }
    }
    Ok(MakerValueField { values })
}

/// `sigma / k + W(t, q) - W(t, q +- lot)` on every slice.
pub fn maker_policy(w: &MakerValueField, p: &MarketParams, grids: &StateGrids) -> MakerQuotePolicy {
    let nt = w.values.n_times();
    let nq = w.values.n_nodes();
    let mut bid = TimeField::zeros(nt, nq);
    let mut ask = TimeField::zeros(nt, nq);
    let mut clamped = false;
    let mut b = vec![0.0; nq];
    let mut a = vec![0.0; nq];
    for i in 0..nt {
        clamped |= quotes_slice(w.values.slice(i), grids, p, &mut b, &mut a);
        bid.slice_mut(i).copy_from_slice(&b);
        ask.slice_mut(i).copy_from_slice(&a);
    }
    MakerQuotePolicy {
        bid,
        ask,
        clamped_anywhere: clamped,
    }
}

/// Largest centred-difference residual of the continuous maker HJB at interior times.
pub fn maker_hjb_residual(
    w: &MakerValueField,
    agg: &MeanFieldAggregates,
    p: &MarketParams,
    grids: &StateGrids,
) -> f64 {
    let nq = grids.maker.len();
    let mut bid = vec![0.0; nq];
    let mut ask = vec![0.0; nq];
    let mut rhs = vec![0.0; nq];
    let mut worst: f64 = 0.0;
    for i in 1..grids.n_times() - 1 {
        let z = w.values.slice(i);
        quotes_slice(z, grids, p, &mut bid, &mut ask);
        rhs_with_quotes(z, &bid, &ask, &agg.at(i), grids, p, &mut rhs);
        let up = w.values.slice(i + 1);
        let dn = w.values.slice(i - 1);
        for k in 0..nq {
            let dwdt = (up[k] - dn[k]) / (2.0 * grids.dt);
            worst = worst.max((dwdt + rhs[k]).abs());
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn flat(grids: &StateGrids, mean: f64, drift: f64) -> MeanFieldAggregates {
        let n = grids.n_times();
        MeanFieldAggregates {
            mean_bid: vec![mean; n],
            mean_ask: vec![mean; n],
            impact_drift: vec![drift; n],
        }
    }

    #[test]
    fn hamiltonian_values() {
        let p = MarketParams::table1();
        let agg = SliceAggregates {
            mean_bid: 0.0,
            mean_ask: 0.1,
            impact_drift: 0.0,
        };
        // ask side switched off at the floor
        let h = maker_hamiltonian(-p.q_tilde, 0.3, 0.7, 0.0, 0.0, 0.0, &agg, &p).unwrap();
        assert!((h - 11.602_231).abs() < 1e-5, "{h}");
        let h = maker_hamiltonian(p.q_tilde, 0.3, 0.2, 0.0, 0.0, 0.0, &agg, &p).unwrap();
        assert!((h - lambda_maker(0.0, 0.2, &p) * 0.2).abs() < 1e-12);
        let zero = SliceAggregates {
            mean_bid: 0.0,
            mean_ask: 0.0,
            impact_drift: 0.0,
        };
        let d = 0.25;
        let h = maker_hamiltonian(0, d, d, 1.0, 1.0, 1.0, &zero, &p).unwrap();
        assert!((h - 2.0 * p.a * (-p.k * d / p.sigma).exp() * d).abs() < 1e-12);
        assert!(maker_hamiltonian(130, 0.0, 0.0, 0.0, 0.0, 0.0, &zero, &p).is_err());
    }

    #[test]
    fn penalty_only_is_quadratic_in_time() {
        let mut p = MarketParams::table1();
        p.a = 0.0;
        let grids = StateGrids::new(&p, 50).unwrap();
        let w = solve_maker_hjb(&flat(&grids, 0.0, 0.0), &p, &grids).unwrap();
        for i in 0..grids.n_times() {
            for q in [-120, -10, 0, 50] {
                let expected =
                    -p.phi * p.sigma * p.sigma * (q * q) as f64 * (p.horizon - grids.time(i));
                assert!((w.at(&grids, i, q).unwrap() - expected).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn symmetric_inputs_give_even_value() {
        let mut p = MarketParams::table1();
        p.horizon = 1.0;
        let grids = StateGrids::new(&p, 4000).unwrap();
        let w = solve_maker_hjb(&flat(&grids, 0.42, 0.0), &p, &grids).unwrap();
        let nq = grids.maker.len();
        for i in [0, 1000, 4000] {
            for k in 0..nq {
                assert!((w.values.get(i, k) - w.values.get(i, nq - 1 - k)).abs() < 1e-9);
            }
        }
        let pol = maker_policy(&w, &p, &grids);
        for k in 0..nq {
            assert!((pol.bid.get(0, k) - pol.ask.get(0, nq - 1 - k)).abs() < 1e-9);
        }
        assert!(w.values.slice(grids.n_steps).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn constant_field_gives_myopic_quotes() {
        let p = MarketParams::table1();
        let grids = StateGrids::new(&p, 3).unwrap();
        let w = MakerValueField {
            values: TimeField::filled(grids.n_times(), grids.maker.len(), -2.0),
        };
        let pol = maker_policy(&w, &p, &grids);
        assert!(pol.bid.as_slice().iter().all(|&d| d == p.sigma / p.k));
        assert!(!pol.clamped_anywhere);
    }

    #[test]
    fn shifted_policy_reclamps() {
        let p = MarketParams::table1();
        let grids = StateGrids::new(&p, 1).unwrap();
        let pol = MakerQuotePolicy::myopic(&p, &grids).shifted(1e3, &p);
        assert!(pol.bid.as_slice().iter().all(|&d| d == p.delta_inf));
        assert!(pol.clamped_anywhere);
    }

    #[test]
    fn refuses_unstable_step() {
        let p = MarketParams::table1();
        let grids = StateGrids::new(&p, 5).unwrap();
        let err = solve_maker_hjb(&flat(&grids, 0.0, 0.0), &p, &grids).unwrap_err();
        assert!(matches!(err, ModelError::Stability { .. }));
    }

    proptest! {
        #[test]
        fn closed_form_quote_maximises_bid_term(diff in -1.0f64..1.0) {
            let p = MarketParams::table1();
            let agg = SliceAggregates { mean_bid: 0.3, mean_ask: 0.3, impact_drift: 0.0 };
            let d_star = dbar_maker(diff, &p).value;
            let h = |d: f64| maker_hamiltonian(-p.q_tilde, d, 0.0, diff, 0.0, 0.0, &agg, &p).unwrap();
            let best = h(d_star);
            let n = 1000;
            for j in 0..=n {
                let d = -p.delta_inf + 2.0 * p.delta_inf * j as f64 / n as f64;
                prop_assert!(h(d) <= best + 1e-9 * best.abs().max(1.0));
            }
        }
    }
}
