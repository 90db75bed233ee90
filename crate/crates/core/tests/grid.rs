use std::collections::HashMap;

use loadshed::grid::*;
use num_complex::Complex64;

const FIXTURE: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/mini-south.json");

fn fixture() -> PowerFlowCase {
    load_case(FIXTURE).unwrap()
}

/// Bus injections summed branch by branch, without an admittance matrix.
fn branch_flow_injections(case: &PowerFlowCase, sol: &PowerFlowSolution) -> (Vec<Complex64>, f64) {
    let idx: HashMap<BusId, usize> = case.buses.iter().enumerate().map(|(i, b)| (b.id, i)).collect();
    let v: Vec<Complex64> = (0..case.buses.len()).map(|i| sol.voltage(i)).collect();
    let mut s = vec![Complex64::new(0.0, 0.0); v.len()];
    let mut losses = 0.0;
    for (i, b) in case.buses.iter().enumerate() {
        let ysh = Complex64::new(b.shunt_g, b.shunt_b);
        s[i] += v[i] * (ysh * v[i]).conj();
        losses += b.shunt_g * v[i].norm_sqr();
    }
    for br in case.branches.iter().filter(|b| b.status) {
        let (f, t) = (idx[&br.from], idx[&br.to]);
        let ys = Complex64::new(1.0, 0.0) / Complex64::new(br.r, br.x);
        let yc = Complex64::new(0.0, br.b_charging / 2.0);
        // ideal transformer on the from side: the series element sees vf/tap
        let vf = v[f] / br.tap;
        let i_series = ys * (vf - v[t]);
        let i_f = (i_series + yc * vf) / br.tap;
        let i_t = -i_series + yc * v[t];
        s[f] += v[f] * i_f.conj();
        s[t] += v[t] * i_t.conj();
        losses += br.r * i_series.norm_sqr();
    }
    (s, losses)
}

fn scheduled(case: &PowerFlowCase, sol: &PowerFlowSolution) -> Vec<Complex64> {
    let idx = case.bus_index();
    let mut s = vec![Complex64::new(0.0, 0.0); case.buses.len()];
    for (k, m) in case.machines.iter().enumerate() {
        if m.in_service {
            s[idx[&m.bus]] += Complex64::new(sol.gen_p[k], sol.gen_q[k]);
        }
    }
    for l in &case.loads {
        s[idx[&l.bus]] -= Complex64::new(l.p0, l.q0);
    }
    s
}

fn check_residuals(case: &PowerFlowCase, tol: f64) {
    let sol = solve_power_flow(case, DEFAULT_TOL, DEFAULT_MAX_ITER);
    assert!(sol.converged, "{} did not converge", case.case_id);
    assert!(sol.max_mismatch <= DEFAULT_TOL);
    let (inj, losses) = branch_flow_injections(case, &sol);
    let sched = scheduled(case, &sol);
    for (i, b) in case.buses.iter().enumerate() {
        let d = inj[i] - sched[i];
        assert!(d.re.abs() <= tol, "bus {} P residual {:e}", b.id, d.re);
        assert!(d.im.abs() <= tol, "bus {} Q residual {:e}", b.id, d.im);
    }
    let gen: f64 = case
        .machines
        .iter()
        .enumerate()
        .filter(|(_, m)| m.in_service)
        .map(|(k, _)| sol.gen_p[k])
        .sum();
    let balance = gen - case.total_load_p() - losses;
    assert!(balance.abs() <= 10.0 * tol, "power balance error {balance:e}");
}

#[test]
fn fixture_residuals_from_branch_flows() {
    check_residuals(&fixture(), 1e-8);
}

#[test]
fn scaled_fixture_residuals_from_branch_flows() {
    let base = fixture();
    for s in [0.7, 0.85, 1.05] {
        let mut sc = CaseScaling::identity(&base);
        sc.zone_load_scale = vec![s; base.zones.len()];
        sc.other_load_scale = s;
        sc.dispatch = sc.dispatch.iter().map(|d| d * s).collect();
        check_residuals(&scale_case(&base, &sc, "scaled").unwrap(), 1e-8);
    }
}

#[test]
fn identity_scaling_returns_the_input() {
    let base = fixture();
    let out = scale_case(&base, &CaseScaling::identity(&base), &base.case_id).unwrap();
    assert_eq!(out, base);
}

#[test]
fn half_scale_halves_every_load() {
    let base = fixture();
    let mut sc = CaseScaling::identity(&base);
    sc.zone_load_scale = vec![0.5; base.zones.len()];
    sc.other_load_scale = 0.5;
    let out = scale_case(&base, &sc, "half").unwrap();
    for (a, b) in base.loads.iter().zip(&out.loads) {
        assert_eq!(b.p0, a.p0 * 0.5);
        assert_eq!(b.q0, a.q0 * 0.5);
        assert!((b.initial_mw - b.p0 * base.system_mva_base).abs() < 1e-9);
    }
}

#[test]
fn decommit_removes_output_and_redispatches_the_rest() {
    let base = fixture();
    let mut sc = CaseScaling::identity(&base);
    let off = base.machines.iter().position(|m| m.bus != base.slack_bus().id).unwrap();
    sc.commitment[off] = false;
    for (k, d) in sc.dispatch.iter_mut().enumerate() {
        if k != off {
            *d = 0.8;
        }
    }
    let out = scale_case(&base, &sc, "decommit").unwrap();
    assert!(!out.machines[off].in_service);
    assert_eq!(out.machines[off].p_gen, 0.0);
    let expected: f64 = base
        .machines
        .iter()
        .enumerate()
        .filter(|(k, _)| *k != off)
        .map(|(_, m)| 0.8 * m.p_max)
        .sum();
    let got: f64 = out.machines.iter().map(|m| m.p_gen).sum();
    assert!((got - expected).abs() < 1e-12);

    // the slack absorbs whatever the scheduled units do not cover
    let sol = solve_power_flow(&out, DEFAULT_TOL, DEFAULT_MAX_ITER);
    assert!(sol.converged);
    assert_eq!(sol.gen_p[off], 0.0);
    let (_, losses) = branch_flow_injections(&out, &sol);
    let total: f64 = sol.gen_p.iter().sum();
    assert!((total - out.total_load_p() - losses).abs() < 1e-7);
}

#[test]
fn out_of_range_scale_is_infeasible() {
    let base = fixture();
    let mut sc = CaseScaling::identity(&base);
    sc.other_load_scale = 1.3;
    assert!(matches!(scale_case(&base, &sc, "x"), Err(loadshed::Error::Infeasible(_))));
}

#[test]
fn insufficient_capacity_fails_before_power_flow() {
    let base = fixture();
    let mut sc = CaseScaling::identity(&base);
    for (k, m) in base.machines.iter().enumerate() {
        if m.bus != base.slack_bus().id {
            sc.commitment[k] = false;
        }
    }
    assert!(matches!(scale_case(&base, &sc, "x"), Err(loadshed::Error::Infeasible(_))));
}

#[test]
fn fixture_round_trips_bit_identically() {
    let text = std::fs::read_to_string(FIXTURE).unwrap();
    let case = PowerFlowCase::from_json(&text).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("case.json");
    case.write(&path).unwrap();
    let back = load_case(&path).unwrap();
    assert_eq!(back, case);
    assert_eq!(back.to_json(), case.to_json());
    for (a, b) in case.loads.iter().zip(&back.loads) {
        assert_eq!(a.p0.to_bits(), b.p0.to_bits());
    }
}

#[test]
fn fixture_meets_desk_requirements() {
    let case = fixture();
    assert!(case.buses.len() >= 20);
    assert!(case.zones.len() >= 2);
    let motor_buses = case.loads.iter().filter(|l| l.motor.is_some() && l.motor_fraction > 0.0).count();
    assert!(motor_buses >= 6);
}
