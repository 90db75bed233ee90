use nalgebra::DMatrix;
use num_complex::Complex64;

use super::case::PowerFlowCase;

/// Dense bus admittance matrix in case bus order.
pub fn build_ybus(case: &PowerFlowCase) -> DMatrix<Complex64> {
    let n = case.buses.len();
    let idx = case.bus_index();
    let mut y = DMatrix::from_element(n, n, Complex64::new(0.0, 0.0));
    for (i, b) in case.buses.iter().enumerate() {
        y[(i, i)] += Complex64::new(b.shunt_g, b.shunt_b);
    }
    for br in case.branches.iter().filter(|b| b.status) {
        let (f, t) = (idx[&br.from], idx[&br.to]);
        let ys = Complex64::new(br.r, br.x).inv();
        let half_b = Complex64::new(0.0, br.b_charging / 2.0);
        let tap = br.tap;
        y[(f, f)] += (ys + half_b) / (tap * tap);
        y[(t, t)] += ys + half_b;
        y[(f, t)] -= ys / tap;
        y[(t, f)] -= ys / tap;
    }
    y
}
