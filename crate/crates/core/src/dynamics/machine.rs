//! Two-axis synchronous machine with a first-order exciter.

use std::f64::consts::FRAC_PI_2;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::grid::MachineSpec;

pub const OMEGA_S: f64 = 2.0 * std::f64::consts::PI * 60.0;
pub const N_STATES: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MachineState {
    pub delta: f64,
    /// Speed deviation, pu.
    pub omega: f64,
    pub eq_p: f64,
    pub ed_p: f64,
    pub efd: f64,
}

impl MachineState {
    pub fn from_slice(x: &[f64]) -> Self {
        MachineState {
            delta: x[0],
            omega: x[1],
            eq_p: x[2],
            ed_p: x[3],
            efd: x[4],
        }
    }

    pub fn write(&self, x: &mut [f64]) {
        x[0] = self.delta;
        x[1] = self.omega;
        x[2] = self.eq_p;
        x[3] = self.ed_p;
        x[4] = self.efd;
    }
}

/// Setpoints fixed at initialization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MachineSetpoints {
    pub pm: f64,
    pub vref: f64,
}

fn to_dq(delta: f64) -> Complex64 {
    Complex64::from_polar(1.0, -(delta - FRAC_PI_2))
}

fn from_dq(delta: f64) -> Complex64 {
    Complex64::from_polar(1.0, delta - FRAC_PI_2)
}

/// Norton admittance used in the network matrix.
pub fn norton_admittance(spec: &MachineSpec) -> Complex64 {
    Complex64::new(0.0, spec.xd_p).inv()
}

/// Norton source current plus the saliency correction at terminal voltage `v`.
pub fn injected_current(spec: &MachineSpec, st: &MachineState, v: Complex64) -> Complex64 {
    let rot = from_dq(st.delta);
    let e = Complex64::new(st.ed_p, st.eq_p) * rot;
    let mut i = e * norton_admittance(spec);
    if spec.xq_p != spec.xd_p {
        let vd = (v * to_dq(st.delta)).re;
        let d_iq = (vd - st.ed_p) * (1.0 / spec.xq_p - 1.0 / spec.xd_p);
        i += Complex64::new(0.0, d_iq) * rot;
    }
    i
}

/// Stator currents (d, q) at terminal voltage `v`.
pub fn stator_currents(spec: &MachineSpec, st: &MachineState, v: Complex64) -> (f64, f64, f64, f64) {
    let vdq = v * to_dq(st.delta);
    let id = (st.eq_p - vdq.im) / spec.xd_p;
    let iq = (vdq.re - st.ed_p) / spec.xq_p;
    (id, iq, vdq.re, vdq.im)
}

/// Unlimited right-hand side; see [`limit_rates`].
pub fn derivatives(
    spec: &MachineSpec,
    sp: &MachineSetpoints,
    st: &MachineState,
    v: Complex64,
    out: &mut [f64],
) {
    let (id, iq, vd, vq) = stator_currents(spec, st, v);
    let pe = vd * id + vq * iq;
    out[0] = OMEGA_S * st.omega;
    out[1] = (sp.pm - pe - spec.d * st.omega) / (2.0 * spec.h);
    out[2] = (st.efd - st.eq_p - (spec.xd - spec.xd_p) * id) / spec.td0_p;
    out[3] = (-st.ed_p + (spec.xq - spec.xq_p) * iq) / spec.tq0_p;
    let ex = &spec.exciter;
    out[4] = (ex.ka * (sp.vref - v.norm_sqr().sqrt()) - st.efd) / ex.ta;
}

/// Zeroes the field-voltage rate when the exciter sits on a limit and is
/// driven further into it (non-windup limiter).
pub fn limit_rates(spec: &MachineSpec, x: &[f64], out: &mut [f64]) {
    let ex = &spec.exciter;
    if (x[4] >= ex.efd_max && out[4] > 0.0) || (x[4] <= ex.efd_min && out[4] < 0.0) {
        out[4] = 0.0;
    }
}

pub fn clamp_limits(spec: &MachineSpec, x: &mut [f64]) {
    x[4] = x[4].clamp(spec.exciter.efd_min, spec.exciter.efd_max);
}

/// Steady state consistent with terminal voltage `v` and output `s`.
pub fn initialize(spec: &MachineSpec, v: Complex64, s: Complex64) -> Result<(MachineState, MachineSetpoints), String> {
    let i = (s / v).conj();
    let eq_axis = v + Complex64::new(0.0, spec.xq) * i;
    let delta = eq_axis.arg();
    let idq = i * to_dq(delta);
    let vdq = v * to_dq(delta);
    let (id, iq) = (idq.re, idq.im);
    let ed_p = (spec.xq - spec.xq_p) * iq;
    let eq_p = vdq.im + spec.xd_p * id;
    let efd = eq_p + (spec.xd - spec.xd_p) * id;
    let ex = &spec.exciter;
    if efd < ex.efd_min || efd > ex.efd_max {
        return Err(format!(
            "field voltage {efd:.3} outside exciter limits [{}, {}]",
            ex.efd_min, ex.efd_max
        ));
    }
    let st = MachineState {
        delta,
        omega: 0.0,
        eq_p,
        ed_p,
        efd,
    };
    let sp = MachineSetpoints {
        pm: s.re,
        vref: v.norm() + efd / ex.ka,
    };
    Ok((st, sp))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::ExciterSpec;

    fn spec(xq_p: f64) -> MachineSpec {
        MachineSpec {
            id: 1,
            bus: 1,
            in_service: true,
            p_gen: 1.0,
            p_min: 0.0,
            p_max: 2.0,
            q_min: -1.0,
            q_max: 1.0,
            h: 4.0,
            d: 2.0,
            xd: 1.2,
            xq: 0.9,
            xd_p: 0.25,
            xq_p,
            td0_p: 6.0,
            tq0_p: 0.6,
            exciter: ExciterSpec {
                ka: 50.0,
                ta: 0.05,
                efd_min: -3.0,
                efd_max: 5.0,
            },
        }
    }

    #[test]
    fn initialization_is_an_equilibrium() {
        for xq_p in [0.25, 0.4] {
            let m = spec(xq_p);
            let v = Complex64::from_polar(1.02, 0.1);
            let s = Complex64::new(1.2, 0.3);
            let (st, sp) = initialize(&m, v, s).unwrap();
            let mut f = [0.0; N_STATES];
            derivatives(&m, &sp, &st, v, &mut f);
            assert!(f.iter().all(|d| d.abs() < 1e-12), "{f:?}");
            // network-side current reproduces the power-flow injection
            let i_net = injected_current(&m, &st, v) - norton_admittance(&m) * v;
            assert!((v * i_net.conj() - s).norm() < 1e-12);
        }
    }
}
