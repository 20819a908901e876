//! Representative market-taker: backward explicit Euler on
//! `0 = dW^m/dt - gamma sigma^2 q^2 + b q + K + q * impact + H^m`
//! and extraction of the closed-form feedback quotes.

use crate::error::{ModelError, Result};
use crate::field::TimeField;
use crate::fokker_planck::{impact_aggregate, MassField};
use crate::model::{check_stability, dbar_taker, lambda_taker, MarketParams, StateGrids};

/// `W^m(t_i, q^m, b^m)` on the taker node layout of [`StateGrids`].
#[derive(Debug, Clone, PartialEq)]
pub struct TakerValueField {
    pub values: TimeField,
}

impl TakerValueField {
    pub fn at(&self, grids: &StateGrids, t: usize, q_m: i64, b: i64) -> Result<f64> {
        Ok(self.values.get(t, grids.taker_node_of(q_m, b)?))
    }
}

/// Taker feedback quotes `delta^{m,*,b/a}` per time slice and node.
///
/// The bid at `q^m = q_tilde_m` and the ask at `q^m = -q_tilde_m` are stored
/// (at the myopic value `sigma / k_m`) but inert: their intensity is gated off.
#[derive(Debug, Clone, PartialEq)]
pub struct TakerQuotePolicy {
    pub bid: TimeField,
    pub ask: TimeField,
    /// Whether any active quote hit the `delta_inf` clamp.
    pub clamped_anywhere: bool,
}

impl TakerQuotePolicy {
    /// Every quote at `sigma / k_m`.
    pub fn myopic(params: &MarketParams, grids: &StateGrids) -> Self {
        let d = dbar_taker(0.0, params).value;
        Self {
            bid: TimeField::filled(grids.n_times(), grids.taker_nodes(), d),
            ask: TimeField::filled(grids.n_times(), grids.taker_nodes(), d),
            clamped_anywhere: false,
        }
    }

    pub fn bid_inert(grids: &StateGrids, node: usize) -> bool {
        !grids.taker.can_buy(grids.split_node(node).0)
    }

    pub fn ask_inert(grids: &StateGrids, node: usize) -> bool {
        !grids.taker.can_sell(grids.split_node(node).0)
    }

    pub fn n_times(&self) -> usize {
        self.bid.n_times()
    }
}

/// Generator of the signal chain applied to a value slice:
/// `1{b < b_tilde} lambda^+ (z_up - z) + 1{b > -b_tilde} lambda^- (z_dn - z)`.
pub fn signal_generator(b: i64, z: f64, z_up: f64, z_dn: f64, p: &MarketParams) -> Result<f64> {
    if b.abs() > p.b_tilde {
        return Err(ModelError::Domain {
            what: "signal",
            value: b,
            min: -p.b_tilde,
            max: p.b_tilde,
        });
    }
    let mut v = 0.0;
    if b < p.b_tilde {
        v += p.lambda_plus * (z_up - z);
    }
    if b > -p.b_tilde {
        v += p.lambda_minus * (z_dn - z);
    }
    Ok(v)
}

/// Taker Hamiltonian
/// `1{q < q_tilde_m} Lambda^m(d1)(d1 + z1 - z) + 1{q > -q_tilde_m} Lambda^m(d2)(d2 + z2 - z)`.
#[allow(clippy::too_many_arguments)]
pub fn taker_hamiltonian(
    q_m: i64,
    d1: f64,
    d2: f64,
    z: f64,
    z1: f64,
    z2: f64,
    p: &MarketParams,
) -> Result<f64> {
    if q_m.abs() > p.q_tilde_m {
        return Err(ModelError::Domain {
            what: "taker inventory",
            value: q_m,
            min: -p.q_tilde_m,
            max: p.q_tilde_m,
        });
    }
    let mut h = 0.0;
    if q_m < p.q_tilde_m {
        h += lambda_taker(d1, p) * (d1 + z1 - z);
    }
    if q_m > -p.q_tilde_m {
        h += lambda_taker(d2, p) * (d2 + z2 - z);
    }
    Ok(h)
}

/// Closed-form quotes on one slice. Returns whether an active quote was clamped.
pub(crate) fn quotes_slice(
    w: &[f64],
    grids: &StateGrids,
    p: &MarketParams,
    bid: &mut [f64],
    ask: &mut [f64],
) -> bool {
    let nb = grids.signal.len();
    let nq = grids.taker.len();
    let mut clamped = false;
    let myopic = dbar_taker(0.0, p).value;
    for iq in 0..nq {
        for ib in 0..nb {
            let n = iq * nb + ib;
            bid[n] = if iq + 1 < nq {
                let d = dbar_taker(w[n] - w[n + nb], p);
                clamped |= d.clamped;
                d.value
            } else {
                myopic
            };
            ask[n] = if iq > 0 {
                let d = dbar_taker(w[n] - w[n - nb], p);
                clamped |= d.clamped;
                d.value
            } else {
                myopic
            };
        }
    }
    clamped
}

/// Scratch buffers for one right-hand-side evaluation.
pub(crate) struct RhsWork {
    pub bid: Vec<f64>,
    pub ask: Vec<f64>,
}

impl RhsWork {
    pub fn new(n: usize) -> Self {
        Self {
            bid: vec![0.0; n],
            ask: vec![0.0; n],
        }
    }
}

/// Discrete HJB right-hand side `F` with `dW^m/dt = -F` at one time slice.
///
/// Returns the largest total exit rate over the nodes (fills plus signal jumps).
pub(crate) fn rhs_slice(
    w: &[f64],
    mass: &[f64],
    grids: &StateGrids,
    p: &MarketParams,
    work: &mut RhsWork,
    out: &mut [f64],
) -> f64 {
    let nb = grids.signal.len();
    let nq = grids.taker.len();
    quotes_slice(w, grids, p, &mut work.bid, &mut work.ask);
    let drift = impact_aggregate(mass, &work.bid, &work.ask, p, grids).impact_drift;
    let risk = p.gamma * p.sigma * p.sigma;
    let mut max_rate: f64 = 0.0;
    for iq in 0..nq {
        let q = grids.taker.value(iq) as f64;
        for ib in 0..nb {
            let n = iq * nb + ib;
            let b = grids.signal.value(ib) as f64;
            let z = w[n];
            let mut rate = 0.0;
            let mut f = -risk * q * q + b * q + q * drift;
            if ib + 1 < nb {
                f += p.lambda_plus * (w[n + 1] - z);
                rate += p.lambda_plus;
            }
            if ib > 0 {
                f += p.lambda_minus * (w[n - 1] - z);
                rate += p.lambda_minus;
            }
            if iq + 1 < nq {
                let d = work.bid[n];
                let l = lambda_taker(d, p);
                f += l * (d + w[n + nb] - z);
                rate += l;
            }
            if iq > 0 {
                let d = work.ask[n];
                let l = lambda_taker(d, p);
                f += l * (d + w[n - nb] - z);
                rate += l;
            }
            out[n] = f;
            max_rate = max_rate.max(rate);
        }
    }
    max_rate
}

/// Backward explicit Euler from `W^m(T) = 0` given the mass flow.
///
/// The impact term at each slice uses the takers' quotes implied by the current
/// slice of `W^m` itself, i.e. the mean field plays the representative policy.
/// Fails with a stability error as soon as a slice has `exit rate * dt > 1/2`.
pub fn solve_taker_hjb(
    flow: &MassField,
    p: &MarketParams,
    grids: &StateGrids,
) -> Result<TakerValueField> {
    let n = grids.taker_nodes();
    if flow.mass.n_times() != grids.n_times() || flow.mass.n_nodes() != n {
        return Err(ModelError::Shape(format!(
            "mass flow is {}x{}, grid needs {}x{}",
            flow.mass.n_times(),
            flow.mass.n_nodes(),
            grids.n_times(),
            n
        )));
    }
    let mut values = TimeField::zeros(grids.n_times(), n);
    let mut work = RhsWork::new(n);
    let mut rhs = vec![0.0; n];
    for i in (1..grids.n_times()).rev() {
        let (prev, next) = values.pair_mut(i - 1, i);
        let rate = rhs_slice(next, flow.mass.slice(i), grids, p, &mut work, &mut rhs);
        check_stability("taker HJB", rate, grids.dt)?;
        for ((w, &z), &f) in prev.iter_mut().zip(next.iter()).zip(&rhs) {
            *w = z + grids.dt * f;
        }
    }
    Ok(TakerValueField { values })
}

/// Feedback quotes `sigma / k_m + W^m(q) - W^m(q +- lot)` on every slice.
pub fn taker_policy(w: &TakerValueField, p: &MarketParams, grids: &StateGrids) -> TakerQuotePolicy {
    let nt = w.values.n_times();
    let n = w.values.n_nodes();
    let mut bid = TimeField::zeros(nt, n);
    let mut ask = TimeField::zeros(nt, n);
    let mut clamped = false;
    let mut b = vec![0.0; n];
    let mut a = vec![0.0; n];
    for i in 0..nt {
        clamped |= quotes_slice(w.values.slice(i), grids, p, &mut b, &mut a);
        bid.slice_mut(i).copy_from_slice(&b);
        ask.slice_mut(i).copy_from_slice(&a);
    }
    TakerQuotePolicy {
        bid,
        ask,
        clamped_anywhere: clamped,
    }
}

/// Largest residual of the continuous-time taker HJB at interior time nodes,
/// with the time derivative taken as a centred difference of the stored field.
pub fn taker_hjb_residual(
    w: &TakerValueField,
    flow: &MassField,
    p: &MarketParams,
    grids: &StateGrids,
) -> f64 {
    let n = grids.taker_nodes();
    let mut work = RhsWork::new(n);
    let mut rhs = vec![0.0; n];
    let mut worst: f64 = 0.0;
    for i in 1..grids.n_times() - 1 {
        rhs_slice(
            w.values.slice(i),
            flow.mass.slice(i),
            grids,
            p,
            &mut work,
            &mut rhs,
        );
        let up = w.values.slice(i + 1);
        let dn = w.values.slice(i - 1);
        for k in 0..n {
            let dwdt = (up[k] - dn[k]) / (2.0 * grids.dt);
            worst = worst.max((dwdt + rhs[k]).abs());
        }
    }
    worst
}
