//! Network reduced onto the buses that carry machines or loads.
//!
//! Passive buses are eliminated by Kron reduction once per fault
//! configuration; their voltages are recovered linearly from the retained
//! ones.

use nalgebra::DMatrix;
use num_complex::Complex64;

/// Near-bolted three-phase fault admittance.
pub const FAULT_ADMITTANCE: Complex64 = Complex64::new(1e4, -1e4);

#[derive(Debug, Clone)]
pub struct Reduction {
    /// Reduced admittance over retained buses.
    pub y: DMatrix<Complex64>,
    /// `V_eliminated = recovery * V_retained`.
    pub recovery: DMatrix<Complex64>,
}

#[derive(Debug, Clone)]
pub struct ReducedNetwork {
    pub n_bus: usize,
    pub retained: Vec<usize>,
    pub eliminated: Vec<usize>,
    /// Position of each bus in `retained`, if retained.
    pub retained_pos: Vec<Option<usize>>,
}

impl ReducedNetwork {
    pub fn new(n_bus: usize, mut retained: Vec<usize>) -> Self {
        retained.sort_unstable();
        retained.dedup();
        let mut retained_pos = vec![None; n_bus];
        for (k, &b) in retained.iter().enumerate() {
            retained_pos[b] = Some(k);
        }
        let eliminated = (0..n_bus).filter(|b| retained_pos[*b].is_none()).collect();
        ReducedNetwork {
            n_bus,
            retained,
            eliminated,
            retained_pos,
        }
    }

    pub fn reduce(&self, ybus: &DMatrix<Complex64>, fault_bus: Option<usize>) -> Reduction {
        let mut y = ybus.clone();
        if let Some(f) = fault_bus {
            y[(f, f)] += FAULT_ADMITTANCE;
        }
        let r = &self.retained;
        let e = &self.eliminated;
        let pick = |rows: &[usize], cols: &[usize]| {
            DMatrix::from_fn(rows.len(), cols.len(), |i, j| y[(rows[i], cols[j])])
        };
        let y_rr = pick(r, r);
        if e.is_empty() {
            return Reduction {
                y: y_rr,
                recovery: DMatrix::zeros(0, r.len()),
            };
        }
        let y_re = pick(r, e);
        let y_ee = pick(e, e);
        let y_er = pick(e, r);
        let x = y_ee
            .lu()
            .solve(&y_er)
            .expect("passive subnetwork admittance is nonsingular");
        Reduction {
            y: y_rr - &y_re * &x,
            recovery: -x,
        }
    }

    /// Full bus voltage vector from the retained voltages.
    pub fn expand(&self, red: &Reduction, v_ret: &[Complex64], out: &mut [Complex64]) {
        for (k, &b) in self.retained.iter().enumerate() {
            out[b] = v_ret[k];
        }
        for (row, &b) in self.eliminated.iter().enumerate() {
            let mut acc = Complex64::new(0.0, 0.0);
            for (k, v) in v_ret.iter().enumerate() {
                acc += red.recovery[(row, k)] * v;
            }
            out[b] = acc;
        }
    }
}
