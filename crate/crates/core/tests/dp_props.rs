mod common;

use cvar_safety::dp::{value_iteration, DpSolver};
use cvar_safety::grid::{Axis, RectGrid};
use cvar_safety::oracle::{generate_corpus, random_instance, verify_instance, GeneratorLimits, TinyInstance};
use cvar_safety::solver::{extract_safe_set, risk_value, sweep, DualSweep, SafeSetMask};
use cvar_safety::stormwater::{smoke_runoff, Design, Stormwater, StormwaterParams};
use cvar_safety::{AugmentedGrid, ControlSystem, RiskLevel};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const ALPHAS: [f64; 5] = [0.005, 0.05, 0.5, 0.99, 1.0];

fn lvl(a: f64) -> RiskLevel {
    RiskLevel::new(a).unwrap()
}

/// Boundary and slope properties every sweep must satisfy.
fn check_sweep(sw: &DualSweep, c_bar: f64) -> Result<(), String> {
    let tol = 1e-12;
    for (k, row) in sw.v0.iter().enumerate() {
        let s = sw.s_values[k];
        for (x, &v) in row.iter().enumerate() {
            if v < -tol || v > (c_bar - s).max(0.0) + tol {
                return Err(format!("v0[{k}][{x}] = {v} outside [0, c̄ − s]"));
            }
        }
    }
    if *sw.s_values.last().unwrap() == c_bar && sw.v0.last().unwrap().iter().any(|&v| v != 0.0) {
        return Err("v0 at s = c̄ is not identically zero".into());
    }
    for k in 1..sw.s_values.len() {
        let ds = sw.s_values[k] - sw.s_values[k - 1];
        for x in 0..sw.n_states() {
            let dv = sw.v0[k][x] - sw.v0[k - 1][x];
            if dv > tol || -dv > ds + tol {
                return Err(format!("column {x}: Δv0 = {dv} for Δs = {ds}"));
            }
        }
        for a in ALPHAS {
            let o = |kk: usize, x: usize| sw.s_values[kk] + sw.v0[kk][x] / a;
            for x in 0..sw.n_states() {
                let dl = (o(k, x) - o(k - 1, x)).abs();
                if dl > ds * (1.0 + a) / a + 1e-9 {
                    return Err(format!("L jumps by {dl} over Δs = {ds} at α = {a}"));
                }
            }
        }
    }
    Ok(())
}

fn check_surfaces(sw: &DualSweep, c_bar: f64, rs: &[f64]) -> Result<(), String> {
    let mut prev: Option<Vec<SafeSetMask>> = None;
    for a in ALPHAS {
        let surf = risk_value(sw, lvl(a));
        for i in 0..surf.v_star.len() {
            if surf.w_star[i] != surf.v_star[i] + sw.g_lower {
                return Err("w_star ≠ v_star + g̲".into());
            }
            if !(0.0..=c_bar).contains(&surf.s_star[i]) {
                return Err(format!("s_star {} outside [0, c̄]", surf.s_star[i]));
            }
            if surf.w_star[i] > sw.g_lower + c_bar + 1e-12 || surf.w_star[i] < sw.g_lower - 1e-12 {
                return Err(format!("w_star {} outside [g̲, ḡ]", surf.w_star[i]));
            }
        }
        let masks: Vec<_> = rs.iter().map(|&r| extract_safe_set(&surf, r)).collect();
        for w in masks.windows(2) {
            if !w[0].is_subset_of(&w[1]) {
                return Err(format!("r-nesting fails at α = {a}"));
            }
        }
        if let Some(p) = &prev {
            for (small, large) in p.iter().zip(&masks) {
                if !small.is_subset_of(large) {
                    return Err(format!("α-nesting fails going to α = {a}"));
                }
            }
        }
        prev = Some(masks);
        if extract_safe_set(&surf, sw.g_lower + c_bar).count() != surf.v_star.len() {
            return Err("r = ḡ is not the full grid".into());
        }
    }
    Ok(())
}

fn tiny_uniform_grid(inst: &TinyInstance, nz: usize, ns: usize) -> AugmentedGrid {
    let states = Axis::from_nodes((0..inst.n_states).map(|i| i as f64).collect()).unwrap();
    AugmentedGrid::new(
        inst,
        RectGrid::new(vec![states]),
        Axis::uniform(0.0, inst.c_bar, nz).unwrap(),
        Axis::from_nodes((0..inst.n_actions).map(|a| a as f64).collect()).unwrap(),
        Axis::uniform(0.0, inst.c_bar, ns).unwrap(),
    )
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn random_instances_match_the_oracle(seed in any::<u64>()) {
        let inst = random_instance(&mut ChaCha8Rng::seed_from_u64(seed), "prop", GeneratorLimits::default());
        let report = verify_instance(&inst).unwrap();
        prop_assert!(report.passed, "{report:?}");
    }

    #[test]
    fn sweeps_obey_dual_bounds(seed in any::<u64>(), nz in 2usize..7, ns in 2usize..9) {
        let inst = random_instance(&mut ChaCha8Rng::seed_from_u64(seed), "prop", GeneratorLimits::default());
        let grid = tiny_uniform_grid(&inst, nz, ns);
        let sw = sweep(&inst, &grid).unwrap();
        prop_assert_eq!(check_sweep(&sw, inst.c_bar), Ok(()));
        prop_assert_eq!(check_surfaces(&sw, inst.c_bar, &[0.0, 0.3, 0.6, 1.0]), Ok(()));
    }

    #[test]
    fn tables_are_monotone_in_z(seed in any::<u64>(), s in 0.0f64..1.0) {
        let inst = random_instance(&mut ChaCha8Rng::seed_from_u64(seed), "prop", GeneratorLimits::default());
        let grid = tiny_uniform_grid(&inst, 5, 3);
        let (vt, _) = value_iteration(&inst, &grid, s).unwrap();
        for t in 0..=inst.horizon {
            for x in 0..inst.n_states {
                for z in 1..grid.z.len() {
                    prop_assert!(vt.at(t, x, z) >= vt.at(t, x, z - 1) - 1e-12);
                }
            }
        }
    }
}

fn coarse_storm(design: Design) -> (Stormwater, AugmentedGrid) {
    let m = Stormwater::new(StormwaterParams::for_design(design), design, smoke_runoff()).unwrap();
    let g = AugmentedGrid::uniform(&m, &[9, 9], 5, 5, 9).unwrap();
    (m, g)
}

#[test]
fn stormwater_sweeps_obey_dual_bounds() {
    for d in Design::ALL {
        let (m, g) = coarse_storm(d);
        let sw = sweep(&m, &g).unwrap();
        check_sweep(&sw, m.c_bar()).unwrap();
        check_surfaces(&sw, m.c_bar(), &[0.2, 1.0, 1.8]).unwrap();
    }
}

#[test]
fn stormwater_tables_are_monotone_and_bounded() {
    let (m, g) = coarse_storm(Design::A);
    let s = 0.5;
    let (vt, pt) = value_iteration(&m, &g, s).unwrap();
    assert_eq!(vt.horizon(), m.horizon());
    for t in 0..=m.horizon() {
        for x in 0..g.x.len() {
            for z in 0..g.z.len() {
                let v = vt.at(t, x, z);
                assert!((0.0..=m.c_bar() - s + 1e-12).contains(&v));
                if z > 0 {
                    assert!(v >= vt.at(t, x, z - 1) - 1e-12);
                }
                if t < m.horizon() {
                    assert!(g.actions.nodes().contains(&pt.at(t, x, z)));
                }
            }
        }
    }
}

#[test]
fn s_zero_is_the_expectation_problem() {
    let (m, g) = coarse_storm(Design::A);
    let solver = DpSolver::new(&m, &g).unwrap();
    let v0 = solver.solve_v0(0.0).unwrap();
    let axes: Vec<Vec<f64>> = g.x.axes().iter().map(|a| a.nodes().to_vec()).collect();
    let e = common::expectation_dp(&m, &axes, g.z.nodes(), g.actions.nodes());
    for (a, b) in v0.iter().zip(&e) {
        assert!((a - b).abs() < 1e-9, "{a} vs {b}");
    }
}

#[test]
fn shipped_generator_limits_hold() {
    for inst in generate_corpus(99, 30, GeneratorLimits::default()) {
        assert!(inst.n_states <= 3 && inst.n_actions <= 3 && inst.horizon <= 3);
        for x0 in 0..inst.n_states {
            assert!(inst.policy_count(x0) <= 1e6);
        }
    }
}
