use mfmm_core::fokker_planck::{solve_fp, MassField};
use mfmm_core::taker::{solve_taker_hjb, taker_policy};
use mfmm_core::{
    fixed_point_residual, solve_mfg, solve_mfg_auto, EquilibriumSolution, InitialMass,
    MarketParams, SolverOptions, StateGrids,
};

fn short(horizon: f64) -> MarketParams {
    let mut p = MarketParams::table1();
    p.horizon = horizon;
    p
}

fn auto(p: &MarketParams, p0: &InitialMass, damping: f64) -> EquilibriumSolution {
    let opts = SolverOptions {
        damping,
        ..Default::default()
    };
    solve_mfg_auto(p, p0, &opts, None).unwrap()
}

fn mirror_gap(sol: &EquilibriumSolution) -> f64 {
    let g = &sol.grids;
    let mut worst: f64 = 0.0;
    for t in [0, g.n_steps / 2, g.n_steps] {
        for n in 0..g.taker_nodes() {
            let m = g.mirror_node(n);
            worst = worst
                .max((sol.mass.mass.get(t, n) - sol.mass.mass.get(t, m)).abs())
                .max((sol.taker_value.values.get(t, n) - sol.taker_value.values.get(t, m)).abs());
        }
        let nq = g.maker.len();
        for i in 0..nq {
            worst = worst.max(
                (sol.maker_value.values.get(t, i) - sol.maker_value.values.get(t, nq - 1 - i))
                    .abs(),
            );
        }
    }
    worst
}

#[test]
fn asymmetric_signal_needs_real_iterations() {
    let mut p = short(1.0);
    p.lambda_plus = 2.5;
    p.lambda_minus = 1.0;
    let sol = auto(&p, &InitialMass::default(), 1.0);
    let d = &sol.diagnostics;
    assert!(d.iterations > 2, "{:?}", d.trace);
    assert!(*d.trace.last().unwrap() <= 1e-8);
    assert!(sol.aggregates.impact_drift.iter().any(|v| v.abs() > 1e-6));
    assert!(fixed_point_residual(&sol).unwrap() <= 2e-8);

    // the stored bundle is exactly one turn of the map
    let g = sol.grids;
    assert_eq!(taker_policy(&sol.taker_value, &p, &g), sol.taker_policy);
    assert_eq!(
        solve_fp(sol.initial_mass(), &sol.taker_policy, &p, &g).unwrap(),
        sol.mass
    );

    let half = auto(&p, &InitialMass::default(), 0.5);
    assert_eq!(half.grids, sol.grids);
    assert!(half.mass.mass.sup_distance(&sol.mass.mass) <= 1e-7);
    assert!(
        half.taker_value
            .values
            .sup_distance(&sol.taker_value.values)
            <= 1e-5
    );
}

#[test]
fn perturbed_mass_is_not_a_fixed_point() {
    let mut p = short(1.0);
    p.lambda_plus = 2.5;
    p.lambda_minus = 1.0;
    let sol = auto(&p, &InitialMass::default(), 1.0);
    let base = fixed_point_residual(&sol).unwrap();
    let mut shifted = sol.clone();
    let g = sol.grids;
    let from = g.taker_node_of(0, 0).unwrap();
    let to = g.taker_node_of(10, 0).unwrap();
    for t in 1..g.n_times() {
        let m = shifted.mass.mass.get(t, from).min(0.01);
        shifted
            .mass
            .mass
            .set(t, from, shifted.mass.mass.get(t, from) - m);
        shifted
            .mass
            .mass
            .set(t, to, shifted.mass.mass.get(t, to) + m);
    }
    let moved = fixed_point_residual(&shifted).unwrap();
    assert!(moved > base + 1e-3, "{base} -> {moved}");
}

#[test]
fn symmetric_data_give_symmetric_equilibrium() {
    let p = short(1.0);
    for p0 in [InitialMass::default(), InitialMass::Uniform] {
        let sol = auto(&p, &p0, 1.0);
        assert!(mirror_gap(&sol) <= 1e-9, "{}", mirror_gap(&sol));
        assert!(sol.aggregates.impact_drift.iter().all(|v| v.abs() <= 1e-9));
    }
}

#[test]
fn mass_flow_respects_lipschitz_constant() {
    let mut p = short(1.0);
    p.lambda_plus = 2.5;
    p.lambda_minus = 1.0;
    let sol = auto(&p, &InitialMass::Uniform, 1.0);
    assert!(sol.mass.time_lipschitz(sol.grids.dt) <= p.mass_lipschitz_constant());
    sol.mass.check_invariants().unwrap();
}

#[test]
fn fixed_grid_refuses_unstable_step() {
    let p = short(1.0);
    let grids = StateGrids::new(&p, 20).unwrap();
    let p0 = InitialMass::default().build(&grids).unwrap();
    assert!(matches!(
        solve_mfg(&p, &grids, &p0, &SolverOptions::default()),
        Err(mfmm_core::ModelError::Stability { .. })
    ));
}

#[test]
fn taker_hjb_rejects_mismatched_flow() {
    let p = short(1.0);
    let grids = StateGrids::new(&p, 20).unwrap();
    let flow = MassField {
        mass: mfmm_core::TimeField::zeros(3, grids.taker_nodes()),
    };
    assert!(matches!(
        solve_taker_hjb(&flow, &p, &grids),
        Err(mfmm_core::ModelError::Shape(_))
    ));
}
