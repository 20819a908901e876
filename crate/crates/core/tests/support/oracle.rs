//! Exact solution `p(T) = exp(T G^t) p0` of the taker chain on a 3 x 3 state
//! space, with the generator assembled densely.

use mfmm_core::fokker_planck::solve_fp;
use mfmm_core::model::lambda_taker;
use mfmm_core::{InitialMass, MarketParams, StateGrids, TakerQuotePolicy, TimeField};

pub type Mat = Vec<Vec<f64>>;

fn matmul(a: &Mat, b: &Mat) -> Mat {
    let n = a.len();
    let mut c = vec![vec![0.0; n]; n];
    for i in 0..n {
        for k in 0..n {
            for j in 0..n {
                c[i][j] += a[i][k] * b[k][j];
            }
        }
    }
    c
}

/// Scaling and squaring with a 30-term Taylor series.
pub fn expm(a: &Mat) -> Mat {
    let n = a.len();
    let norm = a
        .iter()
        .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    let squarings = (norm.max(1.0).log2().ceil() as i32 + 4).max(0);
    let scale = 0.5f64.powi(squarings);
    let a: Mat = a
        .iter()
        .map(|r| r.iter().map(|v| v * scale).collect())
        .collect();
    let mut result: Mat = (0..n)
        .map(|i| (0..n).map(|j| (i == j) as u8 as f64).collect())
        .collect();
    let mut term = result.clone();
    for k in 1..30 {
        term = matmul(&term, &a);
        for r in term.iter_mut() {
            for v in r.iter_mut() {
                *v /= k as f64;
            }
        }
        for i in 0..n {
            for j in 0..n {
                result[i][j] += term[i][j];
            }
        }
    }
    for _ in 0..squarings {
        result = matmul(&result, &result);
    }
    result
}

pub fn setup() -> (MarketParams, [f64; 9], [f64; 9]) {
    let mut p = MarketParams::table1();
    p.q_tilde_m = 10;
    p.b_tilde = 1;
    p.horizon = 1.0;
    p.lambda_plus = 1.0;
    p.lambda_minus = 2.5;
    // asymmetric quotes so every channel has its own rate
    let bid = [0.1, 0.3, 0.5, 0.2, 0.4, 0.6, 0.3, 0.5, 0.7];
    let ask = [0.6, 0.4, 0.2, 0.5, 0.3, 0.1, 0.7, 0.5, 0.3];
    (p, bid, ask)
}

/// `dp/dt = G^t p` with `G[from][to]` the jump rates.
pub fn generator(p: &MarketParams, bid: &[f64; 9], ask: &[f64; 9]) -> Mat {
    let mut g = vec![vec![0.0; 9]; 9];
    for iq in 0..3usize {
        for ib in 0..3usize {
            let from = iq * 3 + ib;
            let mut add = |to: usize, rate: f64| {
                g[from][to] += rate;
                g[from][from] -= rate;
            };
            if iq < 2 {
                add(from + 3, lambda_taker(bid[from], p));
            }
            if iq > 0 {
                add(from - 3, lambda_taker(ask[from], p));
            }
            if ib < 2 {
                add(from + 1, p.lambda_plus);
            }
            if ib > 0 {
                add(from - 1, p.lambda_minus);
            }
        }
    }
    g
}

pub fn euler_error(steps: usize) -> f64 {
    let (p, bid, ask) = setup();
    let grids = StateGrids::new(&p, steps).unwrap();
    let mut policy = TakerQuotePolicy::myopic(&p, &grids);
    policy.bid = TimeField::zeros(grids.n_times(), 9);
    policy.ask = TimeField::zeros(grids.n_times(), 9);
    for t in 0..grids.n_times() {
        policy.bid.slice_mut(t).copy_from_slice(&bid);
        policy.ask.slice_mut(t).copy_from_slice(&ask);
    }
    let p0 = InitialMass::PointMass { q_m: 0, b: 0 }
        .build(&grids)
        .unwrap();
    let flow = solve_fp(&p0, &policy, &p, &grids).unwrap();

    let g = generator(&p, &bid, &ask);
    let gt: Mat = (0..9)
        .map(|i| (0..9).map(|j| g[j][i] * p.horizon).collect())
        .collect();
    let e = expm(&gt);
    let exact: Vec<f64> = (0..9)
        .map(|i| (0..9).map(|j| e[i][j] * p0[j]).sum())
        .collect();
    let last = flow.mass.slice(grids.n_steps);
    last.iter()
        .zip(&exact)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
}
