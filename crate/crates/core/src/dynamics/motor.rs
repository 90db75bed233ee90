//! Single-cage induction motor on its steady-state equivalent circuit.
//!
//! Quantities are per-unit on the motor rating; synchronous speed is 1 so
//! air-gap power equals electrical torque.

use num_complex::Complex64;

use crate::grid::MotorSpec;

/// Input admittance at `slip`. Well defined at zero slip (open rotor).
pub fn admittance(m: &MotorSpec, slip: f64) -> Complex64 {
    // j xm (rr + j xr s) / (rr + j (xr + xm) s): magnetizing branch parallel to rotor, scaled by s
    let num = Complex64::new(0.0, m.xm) * Complex64::new(m.rr, m.xr * slip);
    let den = Complex64::new(m.rr, (m.xr + m.xm) * slip);
    (Complex64::new(m.rs, m.xs) + num / den).inv()
}

/// Electrical torque at terminal voltage magnitude `v`.
pub fn electrical_torque(m: &MotorSpec, slip: f64, v: f64) -> f64 {
    let i_s2 = (admittance(m, slip) * v).norm_sqr();
    let den = Complex64::new(m.rr, (m.xr + m.xm) * slip).norm_sqr();
    i_s2 * m.xm * m.xm * slip * m.rr / den
}

pub fn mechanical_torque(m: &MotorSpec, slip: f64) -> f64 {
    let speed = (1.0 - slip).max(0.0);
    if m.torque_exponent == 0.0 {
        m.load_torque
    } else {
        m.load_torque * speed.powf(m.torque_exponent)
    }
}

/// Unlimited `ds/dt`.
pub fn slip_rate(m: &MotorSpec, slip: f64, v: f64) -> f64 {
    (mechanical_torque(m, slip) - electrical_torque(m, slip, v)) / (2.0 * m.h_m)
}

/// `ds/dt`; slip is held at standstill when the load would drive it past 1.
pub fn slip_derivative(m: &MotorSpec, slip: f64, v: f64) -> f64 {
    let ds = slip_rate(m, slip, v);
    if slip >= 1.0 && ds > 0.0 {
        0.0
    } else {
        ds
    }
}

/// Operating slip on the stable side of the torque-slip curve at terminal
/// voltage `v`. Fails when load torque exceeds the breakdown torque.
pub fn solve_operating_slip(m: &MotorSpec, v: f64) -> Result<f64, String> {
    let f = |s: f64| electrical_torque(m, s, v) - mechanical_torque(m, s);
    // geometric scan for the first sign change
    let mut lo = 0.0;
    let mut f_lo = f(lo);
    if f_lo >= 0.0 {
        return Err("load torque is not positive".into());
    }
    let mut hi = None;
    let mut s = 1e-6;
    while s <= 1.0 {
        let fs = f(s);
        if fs > 0.0 {
            hi = Some((s, fs));
            break;
        }
        lo = s;
        f_lo = fs;
        s *= 1.05;
    }
    let (mut hi, mut f_hi) = hi.ok_or_else(|| {
        format!("load torque {:.3} exceeds breakdown torque at {:.3} pu", m.load_torque, v)
    })?;

    // Illinois-modified regula falsi
    let mut side = 0i8;
    for _ in 0..200 {
        let s = (lo * f_hi - hi * f_lo) / (f_hi - f_lo);
        let fs = f(s);
        if fs.abs() < 1e-15 || (hi - lo) < 1e-15 {
            return Ok(s);
        }
        if fs < 0.0 {
            lo = s;
            f_lo = fs;
            if side == -1 {
                f_hi *= 0.5;
            }
            side = -1;
        } else {
            hi = s;
            f_hi = fs;
            if side == 1 {
                f_lo *= 0.5;
            }
            side = 1;
        }
    }
    Ok(0.5 * (lo + hi))
}
