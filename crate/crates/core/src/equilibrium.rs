//! Damped Picard iteration on the mass flow:
//! `p -> W^m[p] -> policy[W^m] -> FP(P0, policy)`, then one maker solve.

use crate::error::{ModelError, Result};
use crate::fokker_planck::{aggregates, solve_fp, InitialMass, MassField, MeanFieldAggregates};
use crate::maker::{
    maker_hjb_residual, maker_policy, solve_maker_hjb, MakerQuotePolicy, MakerValueField,
};
use crate::model::{lambda_maker, lambda_taker, MarketParams, StateGrids};
use crate::taker::{
    solve_taker_hjb, taker_hjb_residual, taker_policy, TakerQuotePolicy, TakerValueField,
};

/// Controls of the fixed-point loop.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub damping: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 200,
            damping: 1.0,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0 && self.tol.is_finite()) {
            return Err(ModelError::InvalidParameter {
                field: "tol",
                reason: format!("must be positive and finite, got {}", self.tol),
            });
        }
        if self.max_iter == 0 {
            return Err(ModelError::InvalidParameter {
                field: "max_iter",
                reason: "must be at least 1".into(),
            });
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(ModelError::InvalidParameter {
                field: "damping",
                reason: format!("must lie in (0, 1], got {}", self.damping),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostics {
    pub iterations: usize,
    /// `sup_t ||phi(p^k) - p^k||_inf` for each iteration.
    pub trace: Vec<f64>,
    /// Damping in force at each iteration.
    pub damping_trace: Vec<f64>,
    pub taker_clamped: bool,
    pub maker_clamped: bool,
    pub taker_residual: f64,
    pub maker_residual: f64,
    /// Largest realised exit rate over both HJB schemes and the FP scheme.
    pub max_rate: f64,
}

/// Converged equilibrium bundle.
#[derive(Debug, Clone, PartialEq)]
pub struct EquilibriumSolution {
    pub params: MarketParams,
    pub grids: StateGrids,
    pub taker_value: TakerValueField,
    pub mass: MassField,
    pub taker_policy: TakerQuotePolicy,
    pub aggregates: MeanFieldAggregates,
    pub maker_value: MakerValueField,
    pub maker_policy: MakerQuotePolicy,
    pub diagnostics: Diagnostics,
}

impl EquilibriumSolution {
    pub fn initial_mass(&self) -> &[f64] {
        self.mass.mass.slice(0)
    }
}

/// One application of the fixed-point map. Returns the taker value, its policy and the new flow.
pub fn fixed_point_map(
    flow: &MassField,
    p0: &[f64],
    p: &MarketParams,
    grids: &StateGrids,
) -> Result<(TakerValueField, TakerQuotePolicy, MassField)> {
    let w = solve_taker_hjb(flow, p, grids)?;
    let policy = taker_policy(&w, p, grids);
    let next = solve_fp(p0, &policy, p, grids)?;
    Ok((w, policy, next))
}

/// Solves the equilibrium on a fixed grid.
///
/// The stored policy is the argmax policy of the stored taker value and the
/// stored mass is exactly the forward solve under that policy.
pub fn solve_mfg(
    p: &MarketParams,
    grids: &StateGrids,
    p0: &[f64],
    options: &SolverOptions,
) -> Result<EquilibriumSolution> {
    options.validate()?;
    let mut flow = solve_fp(p0, &TakerQuotePolicy::myopic(p, grids), p, grids)?;
    let mut damping = options.damping;
    let mut trace = Vec::new();
    let mut damping_trace = Vec::new();
    let mut rises = 0;
    for _ in 0..options.max_iter {
        let (w, policy, next) = fixed_point_map(&flow, p0, p, grids)?;
        let dist = next.mass.sup_distance(&flow.mass);
        if let Some(&last) = trace.last() {
            rises = if dist > last { rises + 1 } else { 0 };
        }
        trace.push(dist);
        damping_trace.push(damping);
        if dist <= options.tol {
            return finish(p, grids, w, policy, next, trace, damping_trace);
        }
        if rises >= 2 && damping > 0.5 {
            damping = 0.5;
            rises = 0;
        }
        if damping >= 1.0 {
            flow = next;
        } else {
            flow.mass.blend(&next.mass, damping);
        }
    }
    Err(ModelError::NonConvergence {
        iterations: options.max_iter,
        last: trace.last().copied().unwrap_or(f64::NAN),
        trace,
    })
}

fn finish(
    p: &MarketParams,
    grids: &StateGrids,
    taker_value: TakerValueField,
    taker_pol: TakerQuotePolicy,
    mass: MassField,
    trace: Vec<f64>,
    damping_trace: Vec<f64>,
) -> Result<EquilibriumSolution> {
    let agg = aggregates(&mass, &taker_pol, p, grids);
    let maker_value = solve_maker_hjb(&agg, p, grids)?;
    let maker_pol = maker_policy(&maker_value, p, grids);
    let taker_residual = taker_hjb_residual(&taker_value, &mass, p, grids);
    let maker_residual = maker_hjb_residual(&maker_value, &agg, p, grids);
    let max_rate = realised_max_rate(p, grids, &taker_pol, &maker_pol, &agg);
    Ok(EquilibriumSolution {
        params: p.clone(),
        grids: *grids,
        diagnostics: Diagnostics {
            iterations: trace.len(),
            trace,
            damping_trace,
            taker_clamped: taker_pol.clamped_anywhere,
            maker_clamped: maker_pol.clamped_anywhere,
            taker_residual,
            maker_residual,
            max_rate,
        },
        taker_value,
        mass,
        taker_policy: taker_pol,
        aggregates: agg,
        maker_value,
        maker_policy: maker_pol,
    })
}

fn realised_max_rate(
    p: &MarketParams,
    grids: &StateGrids,
    taker: &TakerQuotePolicy,
    maker: &MakerQuotePolicy,
    agg: &MeanFieldAggregates,
) -> f64 {
    let mut worst: f64 = 0.0;
    let nb = grids.signal.len();
    let nq = grids.taker.len();
    let nqm = grids.maker.len();
    for t in 0..grids.n_times() {
        for iq in 0..nq {
            for ib in 0..nb {
                let n = iq * nb + ib;
                let mut r = 0.0;
                if grids.taker.can_buy(iq) {
                    r += lambda_taker(taker.bid.get(t, n), p);
                }
                if grids.taker.can_sell(iq) {
                    r += lambda_taker(taker.ask.get(t, n), p);
                }
                if grids.signal.can_rise(ib) {
                    r += p.lambda_plus;
                }
                if grids.signal.can_fall(ib) {
                    r += p.lambda_minus;
                }
                worst = worst.max(r);
            }
        }
        for i in 0..nqm {
            let mut r = 0.0;
            if grids.maker.can_buy(i) {
                r += lambda_maker(agg.mean_ask[t], maker.bid.get(t, i), p);
            }
            if grids.maker.can_sell(i) {
                r += lambda_maker(agg.mean_bid[t], maker.ask.get(t, i), p);
            }
            worst = worst.max(r);
        }
    }
    worst
}

/// `sup_t ||phi(p) - p||_inf` at the stored mass.
pub fn fixed_point_residual(sol: &EquilibriumSolution) -> Result<f64> {
    let (_, _, next) = fixed_point_map(&sol.mass, sol.initial_mass(), &sol.params, &sol.grids)?;
    Ok(next.mass.sup_distance(&sol.mass.mass))
}

/// Safety factor applied to a rate that tripped the stability check.
const REFINE_MARGIN: f64 = 1.15;
const MAX_REFINEMENTS: usize = 12;

/// Solves on the coarsest time grid the realised rates allow.
///
/// Starts from `initial_steps` (or the myopic rates) and, whenever any scheme
/// reports `rate * dt > 1/2`, restarts with at least twice the steps. Rates
/// grow as the backward solve moves away from the horizon, so the rate that
/// tripped the check underestimates the one the final grid must carry.
pub fn solve_mfg_auto(
    p: &MarketParams,
    p0: &InitialMass,
    options: &SolverOptions,
    initial_steps: Option<usize>,
) -> Result<EquilibriumSolution> {
    p.validate()?;
    let mut steps = initial_steps.unwrap_or_else(|| {
        let myopic = 2.0 * lambda_taker(p.taker_myopic_quote(), p) + p.lambda_plus + p.lambda_minus;
        let maker = 2.0 * lambda_maker(p.taker_myopic_quote(), p.maker_myopic_quote(), p);
        StateGrids::steps_for_rate(p.horizon, REFINE_MARGIN * myopic.max(maker))
    });
    for _ in 0..MAX_REFINEMENTS {
        let grids = StateGrids::new(p, steps)?;
        let v0 = p0.build(&grids)?;
        match solve_mfg(p, &grids, &v0, options) {
            Err(ModelError::Stability { rate, .. }) if rate.is_finite() => {
                let needed = StateGrids::steps_for_rate(p.horizon, REFINE_MARGIN * rate);
                steps = needed.max(2 * steps);
            }
            other => return other,
        }
    }
    Err(ModelError::InvalidParameter {
        field: "time_steps",
        reason: format!("no stable time grid found up to {steps} steps"),
    })
}
