//! Model constants, state grids, fill intensities and the closed-form quote maps.
//!
//! Inventories move by `lot` assets per fill, so the inventory grids are
//! `{-q_tilde, -q_tilde + lot, ..., q_tilde}`. Every running-reward term uses
//! the physical inventory (in assets). The signal grid has unit step.

use serde::{Deserialize, Serialize};

use crate::error::{ModelError, Result};

/// Largest admissible `total exit rate * dt` for the explicit schemes.
pub const STABILITY_BOUND: f64 = 0.5;

/// Scalar constants of the model. Units: dollars, days, assets.
///
/// Missing fields in a serialized document take their baseline values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MarketParams {
    /// Volatility, $ day^-1/2.
    pub sigma: f64,
    /// Permanent impact, $ per unit of net taker flow.
    pub kappa: f64,
    /// Maker intensity scale, day^-1.
    #[serde(rename = "A")]
    pub a: f64,
    /// Maker intensity decay, day^-1/2.
    pub k: f64,
    /// Taker intensity scale, day^-1.
    #[serde(rename = "A_m")]
    pub a_m: f64,
    /// Taker intensity decay, day^-1/2.
    pub k_m: f64,
    /// Signal up-jump rate, day^-1.
    pub lambda_plus: f64,
    /// Signal down-jump rate, day^-1.
    pub lambda_minus: f64,
    /// Taker risk aversion, $^-1.
    pub gamma: f64,
    /// Maker risk aversion, $^-1.
    pub phi: f64,
    /// Horizon, days.
    #[serde(rename = "T")]
    pub horizon: f64,
    /// Maker inventory limit, assets.
    pub q_tilde: i64,
    /// Taker inventory limit, assets.
    pub q_tilde_m: i64,
    /// Signal grid half-width.
    pub b_tilde: i64,
    /// Bound on admissible quotes, $.
    pub delta_inf: f64,
    /// Trade size per fill, assets.
    pub lot: i64,
}

impl MarketParams {
    /// Baseline parameter set of the numerical study (trade size 10).
    pub fn table1() -> Self {
        let sigma = 8.0;
        let k_m = 19.0;
        Self {
            sigma,
            kappa: 5e-5,
            a: 100.0,
            k: 19.0,
            a_m: 70.0,
            k_m,
            lambda_plus: 1.5,
            lambda_minus: 1.5,
            gamma: 1e-4,
            phi: 5e-4,
            horizon: 5.0,
            q_tilde: 120,
            q_tilde_m: 120,
            b_tilde: 4,
            delta_inf: default_delta_inf(sigma, k_m),
            lot: 10,
        }
    }

    /// Checks the parameter invariants.
    ///
    /// Intensity scales, jump rates, risk aversions and impact may be zero, which
    /// the degenerate test problems rely on. Grid limits may be zero (a
    /// single-point grid).
    pub fn validate(&self) -> Result<()> {
        fn positive(field: &'static str, v: f64) -> Result<()> {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(ModelError::InvalidParameter {
                    field,
                    reason: format!("must be finite and > 0, got {v}"),
                })
            }
        }
        fn non_negative(field: &'static str, v: f64) -> Result<()> {
            if v.is_finite() && v >= 0.0 {
                Ok(())
            } else {
                Err(ModelError::InvalidParameter {
                    field,
                    reason: format!("must be finite and >= 0, got {v}"),
                })
            }
        }
        positive("sigma", self.sigma)?;
        positive("k", self.k)?;
        positive("k_m", self.k_m)?;
        positive("T", self.horizon)?;
        positive("delta_inf", self.delta_inf)?;
        non_negative("kappa", self.kappa)?;
        non_negative("A", self.a)?;
        non_negative("A_m", self.a_m)?;
        non_negative("lambda_plus", self.lambda_plus)?;
        non_negative("lambda_minus", self.lambda_minus)?;
        non_negative("gamma", self.gamma)?;
        non_negative("phi", self.phi)?;
        if self.lot <= 0 {
            return Err(ModelError::InvalidParameter {
                field: "lot",
                reason: format!("must be a positive integer, got {}", self.lot),
            });
        }
        for (field, limit) in [("q_tilde", self.q_tilde), ("q_tilde_m", self.q_tilde_m)] {
            if limit < 0 || limit % self.lot != 0 {
                return Err(ModelError::InvalidParameter {
                    field,
                    reason: format!(
                        "must be a non-negative multiple of lot = {}, got {limit}",
                        self.lot
                    ),
                });
            }
        }
        if self.b_tilde < 0 {
            return Err(ModelError::InvalidParameter {
                field: "b_tilde",
                reason: format!("must be a non-negative integer, got {}", self.b_tilde),
            });
        }
        Ok(())
    }

    /// `sigma / k`, the maker's myopic quote.
    pub fn maker_myopic_quote(&self) -> f64 {
        self.sigma / self.k
    }

    /// `sigma / k_m`, the taker's myopic quote.
    pub fn taker_myopic_quote(&self) -> f64 {
        self.sigma / self.k_m
    }

    /// Lipschitz constant of admissible mass flows, `4 (Lambda^m(-delta_inf) + max lambda)`.
    pub fn mass_lipschitz_constant(&self) -> f64 {
        4.0 * (lambda_taker(-self.delta_inf, self) + self.lambda_plus.max(self.lambda_minus))
    }
}

impl Default for MarketParams {
    fn default() -> Self {
        Self::table1()
    }
}

/// Default quote bound: ten myopic taker quotes.
pub fn default_delta_inf(sigma: f64, k_m: f64) -> f64 {
    10.0 * sigma / k_m
}

/// Symmetric inventory grid with step `lot`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InventoryGrid {
    limit: i64,
    lot: i64,
}

impl InventoryGrid {
    pub fn new(limit: i64, lot: i64) -> Self {
        debug_assert!(lot > 0 && limit >= 0 && limit % lot == 0);
        Self { limit, lot }
    }

    pub fn len(&self) -> usize {
        (2 * self.limit / self.lot + 1) as usize
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn limit(&self) -> i64 {
        self.limit
    }

    pub fn lot(&self) -> i64 {
        self.lot
    }

    /// Inventory in assets at grid index `i`.
    pub fn value(&self, i: usize) -> i64 {
        -self.limit + i as i64 * self.lot
    }

    pub fn index_of(&self, q: i64) -> Result<usize> {
        if q < -self.limit || q > self.limit || (q + self.limit) % self.lot != 0 {
            return Err(ModelError::Domain {
                what: "inventory",
                value: q,
                min: -self.limit,
                max: self.limit,
            });
        }
        Ok(((q + self.limit) / self.lot) as usize)
    }

    /// Index of the zero inventory.
    pub fn center(&self) -> usize {
        (self.limit / self.lot) as usize
    }

    /// Whether a buy (inventory up) is allowed from index `i`.
    pub fn can_buy(&self, i: usize) -> bool {
        i + 1 < self.len()
    }

    /// Whether a sell (inventory down) is allowed from index `i`.
    pub fn can_sell(&self, i: usize) -> bool {
        i > 0
    }

    pub fn values(&self) -> impl Iterator<Item = i64> + '_ {
        (0..self.len()).map(|i| self.value(i))
    }

    pub fn contains(&self, q: i64) -> bool {
        self.index_of(q).is_ok()
    }
}

/// Symmetric signal grid `{-b_tilde, ..., b_tilde}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SignalGrid {
    limit: i64,
}

impl SignalGrid {
    pub fn new(limit: i64) -> Self {
        Self { limit }
    }

    pub fn len(&self) -> usize {
        (2 * self.limit + 1) as usize
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn limit(&self) -> i64 {
        self.limit
    }

    pub fn value(&self, i: usize) -> i64 {
        -self.limit + i as i64
    }

    pub fn index_of(&self, b: i64) -> Result<usize> {
        if b < -self.limit || b > self.limit {
            return Err(ModelError::Domain {
                what: "signal",
                value: b,
                min: -self.limit,
                max: self.limit,
            });
        }
        Ok((b + self.limit) as usize)
    }

    pub fn center(&self) -> usize {
        self.limit as usize
    }

    pub fn can_rise(&self, i: usize) -> bool {
        i + 1 < self.len()
    }

    pub fn can_fall(&self, i: usize) -> bool {
        i > 0
    }

    pub fn values(&self) -> impl Iterator<Item = i64> + '_ {
        (0..self.len()).map(|i| self.value(i))
    }
}

/// The three state grids plus the time grid.
///
/// Taker nodes `(q^m, b^m)` are flattened inventory-major: `node = iq * nb + ib`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateGrids {
    pub maker: InventoryGrid,
    pub taker: InventoryGrid,
    pub signal: SignalGrid,
    pub n_steps: usize,
    pub dt: f64,
}

impl StateGrids {
    pub fn new(params: &MarketParams, n_steps: usize) -> Result<Self> {
        params.validate()?;
        if n_steps == 0 {
            return Err(ModelError::InvalidParameter {
                field: "time_steps",
                reason: "must be at least 1".into(),
            });
        }
        Ok(Self {
            maker: InventoryGrid::new(params.q_tilde, params.lot),
            taker: InventoryGrid::new(params.q_tilde_m, params.lot),
            signal: SignalGrid::new(params.b_tilde),
            n_steps,
            dt: params.horizon / n_steps as f64,
        })
    }

    /// Number of stored time slices (`n_steps + 1`).
    pub fn n_times(&self) -> usize {
        self.n_steps + 1
    }

    pub fn time(&self, i: usize) -> f64 {
        i as f64 * self.dt
    }

    pub fn taker_nodes(&self) -> usize {
        self.taker.len() * self.signal.len()
    }

    pub fn node(&self, iq: usize, ib: usize) -> usize {
        iq * self.signal.len() + ib
    }

    /// Inverse of [`StateGrids::node`].
    pub fn split_node(&self, node: usize) -> (usize, usize) {
        let nb = self.signal.len();
        (node / nb, node % nb)
    }

    /// Node of the mirror state `(-q^m, -b^m)`.
    pub fn mirror_node(&self, node: usize) -> usize {
        let (iq, ib) = self.split_node(node);
        self.node(self.taker.len() - 1 - iq, self.signal.len() - 1 - ib)
    }

    pub fn taker_node_of(&self, q_m: i64, b: i64) -> Result<usize> {
        Ok(self.node(self.taker.index_of(q_m)?, self.signal.index_of(b)?))
    }

    /// Smallest step count for which `rate * horizon / n <= STABILITY_BOUND`.
    pub fn steps_for_rate(horizon: f64, rate: f64) -> usize {
        ((rate * horizon / STABILITY_BOUND).ceil() as usize).max(1)
    }
}

/// Fails with [`ModelError::Stability`] when `rate * dt` exceeds the bound.
pub fn check_stability(scheme: &'static str, rate: f64, dt: f64) -> Result<()> {
    let product = rate * dt;
    if product.is_finite() && product <= STABILITY_BOUND {
        Ok(())
    } else {
        Err(ModelError::Stability {
            scheme,
            rate,
            dt,
            product,
            bound: STABILITY_BOUND,
        })
    }
}

/// Taker fill intensity `A_m exp(-(k_m / sigma) x)`.
#[inline]
pub fn lambda_taker(x: f64, p: &MarketParams) -> f64 {
    p.a_m * (-(p.k_m / p.sigma) * x).exp()
}

/// Maker fill intensity `A exp(-(k / sigma)(x + y))`, where `x` is the mean
/// opposing taker quote and `y` the maker's own quote.
#[inline]
pub fn lambda_maker(x: f64, y: f64, p: &MarketParams) -> f64 {
    p.a * (-(p.k / p.sigma) * (x + y)).exp()
}

/// Impact functional `1{y > -q_tilde_m} Lambda^m(xb) - 1{y < q_tilde_m} Lambda^m(xa)`.
pub fn impact_l(y: i64, xb: f64, xa: f64, p: &MarketParams) -> Result<f64> {
    let grid = InventoryGrid::new(p.q_tilde_m, p.lot);
    grid.index_of(y)?;
    Ok(impact_l_gated(y > -p.q_tilde_m, y < p.q_tilde_m, xb, xa, p))
}

/// [`impact_l`] with the two indicators already evaluated.
#[inline]
pub(crate) fn impact_l_gated(
    above_floor: bool,
    below_cap: bool,
    xb: f64,
    xa: f64,
    p: &MarketParams,
) -> f64 {
    let mut v = 0.0;
    if above_floor {
        v += lambda_taker(xb, p);
    }
    if below_cap {
        v -= lambda_taker(xa, p);
    }
    v
}

/// A quote after clamping to `[-delta_inf, delta_inf]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quote {
    pub value: f64,
    pub clamped: bool,
}

#[inline]
fn clamp_quote(raw: f64, bound: f64) -> Quote {
    if raw > bound {
        Quote {
            value: bound,
            clamped: true,
        }
    } else if raw < -bound {
        Quote {
            value: -bound,
            clamped: true,
        }
    } else {
        Quote {
            value: raw,
            clamped: false,
        }
    }
}

/// Maker's optimal quote `sigma / k + diff`, clamped.
#[inline]
pub fn dbar_maker(diff: f64, p: &MarketParams) -> Quote {
    clamp_quote(p.sigma / p.k + diff, p.delta_inf)
}

/// Taker's optimal quote `sigma / k_m + diff`, clamped.
#[inline]
pub fn dbar_taker(diff: f64, p: &MarketParams) -> Quote {
    clamp_quote(p.sigma / p.k_m + diff, p.delta_inf)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn taker_intensity_values() {
        let p = MarketParams::table1();
        assert_relative_eq!(lambda_taker(0.0, &p), 70.0);
        assert_relative_eq!(
            lambda_taker(p.sigma / p.k_m, &p),
            70.0 / std::f64::consts::E,
            max_relative = 1e-14
        );
        // 70 exp(-19 * 0.05 / 8) = 62.16208...
        assert!((lambda_taker(0.05, &p) - 62.162_085).abs() < 1e-5);
    }

    #[test]
    fn maker_intensity_values() {
        let p = MarketParams::table1();
        assert_relative_eq!(lambda_maker(0.0, 0.0, &p), 100.0);
        // 100 exp(-19 * 0.05 / 8) = 88.80298...
        assert!((lambda_maker(0.02, 0.03, &p) - 88.802_978).abs() < 1e-5);
        for (x, y) in [(0.1, -0.3), (1.5, 0.25), (-2.0, 3.0)] {
            assert_eq!(lambda_maker(x, y, &p), lambda_maker(y, x, &p));
        }
    }

    #[test]
    fn impact_functional_boundaries() {
        let p = MarketParams::table1();
        assert_eq!(impact_l(0, 0.3, 0.3, &p).unwrap(), 0.0);
        assert_eq!(impact_l(120, 0.1, 0.7, &p).unwrap(), lambda_taker(0.1, &p));
        assert_eq!(
            impact_l(-120, 0.1, 0.7, &p).unwrap(),
            -lambda_taker(0.7, &p)
        );
        // 70 exp(-19*0.02/8) - 70 exp(-19*0.04/8) = 66.7528 - 63.6561
        let v = impact_l(0, 0.02, 0.04, &p).unwrap();
        assert!((v - 3.096_628).abs() < 1e-5, "{v}");
        assert!(matches!(
            impact_l(130, 0.0, 0.0, &p),
            Err(ModelError::Domain { .. })
        ));
        assert!(matches!(
            impact_l(5, 0.0, 0.0, &p),
            Err(ModelError::Domain { .. })
        ));
    }

    #[test]
    fn quote_maps() {
        let p = MarketParams::table1();
        let q = dbar_taker(0.0, &p);
        assert_relative_eq!(q.value, 8.0 / 19.0);
        assert!(!q.clamped);
        assert_eq!(dbar_maker(-p.sigma / p.k, &p).value, 0.0);
        let c = dbar_taker(1e6, &p);
        assert_eq!(c.value, p.delta_inf);
        assert!(c.clamped);
        let c = dbar_maker(-1e6, &p);
        assert_eq!(c.value, -p.delta_inf);
        assert!(c.clamped);
    }

    #[test]
    fn grids() {
        let p = MarketParams::table1();
        let g = StateGrids::new(&p, 100).unwrap();
        assert_eq!(g.maker.len(), 25);
        assert_eq!(g.taker.len(), 25);
        assert_eq!(g.signal.len(), 9);
        assert_eq!(g.taker.value(g.taker.center()), 0);
        assert_eq!(g.taker.index_of(-80).unwrap(), 4);
        assert!(g.taker.index_of(-85).is_err());
        assert_eq!(g.signal.index_of(-2).unwrap(), 2);
        assert!(g.signal.index_of(5).is_err());
        let n = g.taker_node_of(-80, 3).unwrap();
        assert_eq!(g.mirror_node(n), g.taker_node_of(80, -3).unwrap());
        assert_eq!(g.dt, 0.05);
    }

    #[test]
    fn validation_rejects_bad_values() {
        let mut p = MarketParams::table1();
        p.q_tilde = 125;
        let err = p.validate().unwrap_err();
        assert!(matches!(
            err,
            ModelError::InvalidParameter {
                field: "q_tilde",
                ..
            }
        ));
        let mut p = MarketParams::table1();
        p.sigma = 0.0;
        assert!(matches!(
            p.validate(),
            Err(ModelError::InvalidParameter { field: "sigma", .. })
        ));
        let mut p = MarketParams::table1();
        p.lambda_plus = -1.0;
        assert!(p.validate().is_err());
    }

    #[test]
    fn stability_check() {
        assert!(check_stability("x", 100.0, 0.005).is_ok());
        assert!(check_stability("x", 100.0, 0.0051).is_err());
        assert!(check_stability("x", f64::NAN, 0.001).is_err());
        assert_eq!(StateGrids::steps_for_rate(5.0, 100.0), 1000);
    }

    /// Scanning the single-side Hamiltonian over a fine grid of admissible quotes
    /// lands within one scan step of the closed-form maximiser.
    fn scan_argmax(f: impl Fn(f64) -> f64, bound: f64, n: usize) -> (f64, f64) {
        let step = 2.0 * bound / (n - 1) as f64;
        let mut best = (f64::NEG_INFINITY, 0.0);
        for i in 0..n {
            let d = -bound + i as f64 * step;
            let v = f(d);
            if v > best.0 {
                best = (v, d);
            }
        }
        (best.1, step)
    }

    proptest! {
        #[test]
        fn intensities_decrease(x1 in -4.0f64..4.0, gap in 1e-6f64..2.0, y in -4.0f64..4.0) {
            let p = MarketParams::table1();
            let x2 = x1 + gap;
            prop_assert!(lambda_taker(x1, &p) > lambda_taker(x2, &p));
            prop_assert!(lambda_maker(x1, y, &p) > lambda_maker(x2, y, &p));
            prop_assert!(lambda_maker(y, x1, &p) > lambda_maker(y, x2, &p));
        }

        #[test]
        fn impact_mirror_antisymmetry(iy in 0usize..25, xb in -3.0f64..3.0, xa in -3.0f64..3.0) {
            let p = MarketParams::table1();
            let y = -120 + 10 * iy as i64;
            let lhs = impact_l(-y, xa, xb, &p).unwrap();
            let rhs = -impact_l(y, xb, xa, &p).unwrap();
            prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + lhs.abs()));
        }

        #[test]
        fn maker_quote_is_scan_argmax(diff in -3.0f64..3.0, mean in -1.0f64..1.0) {
            let p = MarketParams::table1();
            // diff = z - z_tilde
            let f = |d: f64| lambda_maker(mean, d, &p) * (d - diff);
            let (best, step) = scan_argmax(f, p.delta_inf, 10_000);
            prop_assert!((best - dbar_maker(diff, &p).value).abs() <= step);
        }

        #[test]
        fn taker_quote_is_scan_argmax(diff in -3.0f64..3.0) {
            let p = MarketParams::table1();
            let f = |d: f64| lambda_taker(d, &p) * (d - diff);
            let (best, step) = scan_argmax(f, p.delta_inf, 10_000);
            prop_assert!((best - dbar_taker(diff, &p).value).abs() <= step);
        }
    }
}
