//! Newton-Raphson AC power flow in polar coordinates.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::case::{BusKind, PowerFlowCase};
use super::ybus::build_ybus;

pub const DEFAULT_TOL: f64 = 1e-8;
pub const DEFAULT_MAX_ITER: usize = 20;
/// Iteration after which PV buses are checked against reactive limits.
const Q_LIMIT_START: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerFlowSolution {
    pub v_mag: Vec<f64>,
    pub v_ang: Vec<f64>,
    pub gen_p: Vec<f64>,
    pub gen_q: Vec<f64>,
    pub converged: bool,
    pub max_mismatch: f64,
    pub iterations: usize,
}

impl PowerFlowSolution {
    pub fn voltage(&self, i: usize) -> Complex64 {
        Complex64::from_polar(self.v_mag[i], self.v_ang[i])
    }
}

#[derive(Clone, Copy, PartialEq)]
enum Role {
    Slack,
    Pv,
    Pq,
}

/// Complex power injections `V .* conj(Y V)`.
pub fn injections(y: &DMatrix<Complex64>, v: &[Complex64]) -> Vec<Complex64> {
    let n = v.len();
    (0..n)
        .map(|i| {
            let mut cur = Complex64::new(0.0, 0.0);
            for j in 0..n {
                cur += y[(i, j)] * v[j];
            }
            v[i] * cur.conj()
        })
        .collect()
}

pub fn solve_power_flow(case: &PowerFlowCase, tol: f64, max_iter: usize) -> PowerFlowSolution {
    assert!(tol > 0.0, "tolerance must be positive");
    let n = case.buses.len();
    let idx = case.bus_index();
    let y = build_ybus(case);

    let mut p_spec = vec![0.0; n];
    let mut q_spec = vec![0.0; n];
    let mut q_load = vec![0.0; n];
    let mut q_lo = vec![0.0; n];
    let mut q_hi = vec![0.0; n];
    let mut has_gen = vec![false; n];
    for m in case.machines.iter().filter(|m| m.in_service) {
        let i = idx[&m.bus];
        p_spec[i] += m.p_gen;
        q_lo[i] += m.q_min;
        q_hi[i] += m.q_max;
        has_gen[i] = true;
    }
    for l in &case.loads {
        let i = idx[&l.bus];
        p_spec[i] -= l.p0;
        q_spec[i] -= l.q0;
        q_load[i] += l.q0;
    }

    let mut role: Vec<Role> = case
        .buses
        .iter()
        .enumerate()
        .map(|(i, b)| match b.kind {
            BusKind::Slack => Role::Slack,
            BusKind::Pv if has_gen[i] => Role::Pv,
            _ => Role::Pq,
        })
        .collect();

    let mut vm: Vec<f64> = case
        .buses
        .iter()
        .enumerate()
        .map(|(i, b)| match role[i] {
            Role::Pq => 1.0,
            _ => b.v_set.unwrap_or(1.0),
        })
        .collect();
    let mut va = vec![0.0; n];

    let mut iterations = 0;
    let mut converged = false;
    let mut max_mismatch;
    loop {
        let v: Vec<Complex64> = (0..n).map(|i| Complex64::from_polar(vm[i], va[i])).collect();
        let s = injections(&y, &v);

        if iterations >= Q_LIMIT_START {
            for i in 0..n {
                if role[i] != Role::Pv {
                    continue;
                }
                let q_gen = s[i].im + q_load[i];
                if q_gen > q_hi[i] {
                    role[i] = Role::Pq;
                    q_spec[i] = q_hi[i] - q_load[i];
                } else if q_gen < q_lo[i] {
                    role[i] = Role::Pq;
                    q_spec[i] = q_lo[i] - q_load[i];
                }
            }
        }

        let pvar: Vec<usize> = (0..n).filter(|&i| role[i] != Role::Slack).collect();
        let qvar: Vec<usize> = (0..n).filter(|&i| role[i] == Role::Pq).collect();
        let np = pvar.len();
        let m = np + qvar.len();
        let mut f = DVector::zeros(m);
        for (k, &i) in pvar.iter().enumerate() {
            f[k] = p_spec[i] - s[i].re;
        }
        for (k, &i) in qvar.iter().enumerate() {
            f[np + k] = q_spec[i] - s[i].im;
        }
        max_mismatch = f.iter().fold(0.0f64, |a, x| a.max(x.abs()));
        if max_mismatch <= tol {
            converged = true;
            break;
        }
        if iterations >= max_iter || !max_mismatch.is_finite() {
            break;
        }

        let jac = jacobian(&y, &vm, &va, &s, &pvar, &qvar);
        let Some(dx) = jac.lu().solve(&f) else {
            break;
        };
        for (k, &i) in pvar.iter().enumerate() {
            va[i] += dx[k];
        }
        for (k, &i) in qvar.iter().enumerate() {
            vm[i] += dx[np + k];
        }
        iterations += 1;
    }

    let v: Vec<Complex64> = (0..n).map(|i| Complex64::from_polar(vm[i], va[i])).collect();
    let s = injections(&y, &v);
    let (gen_p, gen_q) = machine_outputs(case, &s, &role);
    PowerFlowSolution {
        v_mag: vm,
        v_ang: va,
        gen_p,
        gen_q,
        converged,
        max_mismatch,
        iterations,
    }
}

fn jacobian(
    y: &DMatrix<Complex64>,
    vm: &[f64],
    va: &[f64],
    s: &[Complex64],
    pvar: &[usize],
    qvar: &[usize],
) -> DMatrix<f64> {
    let np = pvar.len();
    let m = np + qvar.len();
    let mut jac = DMatrix::zeros(m, m);
    // d(P,Q)_i / d(theta, V)_j in polar form
    let d_p_dth = |i: usize, j: usize| {
        if i == j {
            -s[i].im - y[(i, i)].im * vm[i] * vm[i]
        } else {
            let t = va[i] - va[j];
            vm[i] * vm[j] * (y[(i, j)].re * t.sin() - y[(i, j)].im * t.cos())
        }
    };
    let d_p_dv = |i: usize, j: usize| {
        if i == j {
            s[i].re / vm[i] + y[(i, i)].re * vm[i]
        } else {
            let t = va[i] - va[j];
            vm[i] * (y[(i, j)].re * t.cos() + y[(i, j)].im * t.sin())
        }
    };
    let d_q_dth = |i: usize, j: usize| {
        if i == j {
            s[i].re - y[(i, i)].re * vm[i] * vm[i]
        } else {
            let t = va[i] - va[j];
            -vm[i] * vm[j] * (y[(i, j)].re * t.cos() + y[(i, j)].im * t.sin())
        }
    };
    let d_q_dv = |i: usize, j: usize| {
        if i == j {
            s[i].im / vm[i] - y[(i, i)].im * vm[i]
        } else {
            let t = va[i] - va[j];
            vm[i] * (y[(i, j)].re * t.sin() - y[(i, j)].im * t.cos())
        }
    };
    for (r, &i) in pvar.iter().enumerate() {
        for (c, &j) in pvar.iter().enumerate() {
            jac[(r, c)] = d_p_dth(i, j);
        }
        for (c, &j) in qvar.iter().enumerate() {
            jac[(r, np + c)] = d_p_dv(i, j);
        }
    }
    for (r, &i) in qvar.iter().enumerate() {
        for (c, &j) in pvar.iter().enumerate() {
            jac[(np + r, c)] = d_q_dth(i, j);
        }
        for (c, &j) in qvar.iter().enumerate() {
            jac[(np + r, np + c)] = d_q_dv(i, j);
        }
    }
    jac
}

/// Splits bus-level generation back onto machines. Slack P is shared by
/// `p_max`; reactive output by reactive range.
fn machine_outputs(case: &PowerFlowCase, s: &[Complex64], role: &[Role]) -> (Vec<f64>, Vec<f64>) {
    let idx = case.bus_index();
    let n = case.buses.len();
    let mut p_load = vec![0.0; n];
    let mut q_load = vec![0.0; n];
    for l in &case.loads {
        let i = idx[&l.bus];
        p_load[i] += l.p0;
        q_load[i] += l.q0;
    }
    let mut pmax_sum = vec![0.0; n];
    let mut qrange_sum = vec![0.0; n];
    let mut count = vec![0usize; n];
    for m in case.machines.iter().filter(|m| m.in_service) {
        let i = idx[&m.bus];
        pmax_sum[i] += m.p_max;
        qrange_sum[i] += m.q_max - m.q_min;
        count[i] += 1;
    }
    let mut gp = vec![0.0; case.machines.len()];
    let mut gq = vec![0.0; case.machines.len()];
    for (k, m) in case.machines.iter().enumerate() {
        if !m.in_service {
            continue;
        }
        let i = idx[&m.bus];
        let share = |w: f64, total: f64| {
            if total > 0.0 {
                w / total
            } else {
                1.0 / count[i] as f64
            }
        };
        gp[k] = if role[i] == Role::Slack {
            (s[i].re + p_load[i]) * share(m.p_max, pmax_sum[i])
        } else {
            m.p_gen
        };
        gq[k] = (s[i].im + q_load[i]) * share(m.q_max - m.q_min, qrange_sum[i]);
    }
    (gp, gq)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::case::tests::two_bus;

    #[test]
    fn flat_network_stays_flat() {
        let case = two_bus(0.0, 0.0, 0.1);
        let sol = solve_power_flow(&case, DEFAULT_TOL, DEFAULT_MAX_ITER);
        assert!(sol.converged);
        for i in 0..2 {
            assert!((sol.v_mag[i] - 1.0).abs() < 1e-12);
            assert!(sol.v_ang[i].abs() < 1e-12);
        }
    }

    #[test]
    fn two_bus_closed_form() {
        // |V2|^2 = (1 + sqrt(1 - 4 x^2 P^2)) / 2 for a lossless line, Q = 0
        let case = two_bus(1.0, 0.0, 0.1);
        let sol = solve_power_flow(&case, DEFAULT_TOL, DEFAULT_MAX_ITER);
        assert!(sol.converged);
        let v2 = ((1.0 + (1.0f64 - 0.04).sqrt()) / 2.0).sqrt();
        assert!((sol.v_mag[1] - v2).abs() < 1e-9);
        // the commonly quoted 0.99499 is a rounding of the same expression
        assert!((sol.v_mag[1] - 0.99499).abs() < 1e-4);
        assert!((sol.v_ang[1].to_degrees() + 5.77).abs() < 5e-3);
        assert!(sol.v_ang[0].abs() < 1e-15);
    }

    #[test]
    fn nonconvergence_is_reported() {
        // far beyond the nose of the PV curve
        let case = two_bus(20.0, 0.0, 0.1);
        let sol = solve_power_flow(&case, DEFAULT_TOL, DEFAULT_MAX_ITER);
        assert!(!sol.converged);
        assert!(sol.max_mismatch > DEFAULT_TOL);
    }
}
