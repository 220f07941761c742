//! Dormand–Prince 5(4) with a post-step projection hook.

use nalgebra::DVector;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Tolerances {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_step: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            abs_tol: 1e-10,
            rel_tol: 1e-10,
            max_step: 0.5,
        }
    }
}

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
// fifth-order minus embedded fourth-order weights
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

/// Integrates the autonomous field `f` over a signed `duration`, calling
/// `project` after every accepted step. `h` carries the step magnitude
/// between calls so consecutive segments reuse the last good step.
pub fn integrate<F, P>(
    f: F,
    y: &mut DVector<f64>,
    duration: f64,
    tol: &Tolerances,
    h: &mut f64,
    mut project: P,
) -> Result<()>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
    P: FnMut(&mut DVector<f64>),
{
    if duration == 0.0 {
        return Ok(());
    }
    let dir = duration.signum();
    let total = duration.abs();
    let mut done = 0.0;
    if !(*h > 0.0) {
        *h = 0.01f64.min(tol.max_step);
    }
    let mut k1 = f(y);
    let mut rejects = 0usize;
    while done < total {
        let mut step = h.min(tol.max_step);
        let last = total - done <= step * (1.0 + 1e-12);
        if last {
            step = total - done;
        }
        let dt = dir * step;
        let k2 = f(&(&*y + &k1 * (dt * A21)));
        let k3 = f(&(&*y + (&k1 * A31 + &k2 * A32) * dt));
        let k4 = f(&(&*y + (&k1 * A41 + &k2 * A42 + &k3 * A43) * dt));
        let k5 = f(&(&*y + (&k1 * A51 + &k2 * A52 + &k3 * A53 + &k4 * A54) * dt));
        let k6 = f(&(&*y + (&k1 * A61 + &k2 * A62 + &k3 * A63 + &k4 * A64 + &k5 * A65) * dt));
        let y_new = &*y + (&k1 * B1 + &k3 * B3 + &k4 * B4 + &k5 * B5 + &k6 * B6) * dt;
        let k7 = f(&y_new);
        let err = (&k1 * E1 + &k3 * E3 + &k4 * E4 + &k5 * E5 + &k6 * E6 + &k7 * E7) * dt;
        let mut err_norm: f64 = 0.0;
        for i in 0..y.len() {
            let sc = tol.abs_tol + tol.rel_tol * y[i].abs().max(y_new[i].abs());
            err_norm = err_norm.max(err[i].abs() / sc);
        }
        if !err_norm.is_finite() {
            return Err(Error::Range {
                what: "integration produced non-finite values".into(),
                time: dir * done,
            });
        }
        if err_norm <= 1.0 {
            *y = y_new;
            project(y);
            done = if last { total } else { done + step };
            k1 = f(y);
            rejects = 0;
            let factor = if err_norm == 0.0 { 5.0 } else { (0.9 * err_norm.powf(-0.2)).clamp(0.2, 5.0) };
            // keep the carried step unaffected by a short final step
            if !last || factor < 1.0 {
                *h = (step * factor).min(tol.max_step);
            }
        } else {
            rejects += 1;
            *h = step * (0.9 * err_norm.powf(-0.2)).clamp(0.1, 0.9);
            if *h < 1e-14 * total.max(1.0) || rejects > 200 {
                return Err(Error::Range {
                    what: "step size underflow".into(),
                    time: dir * done,
                });
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exponential_growth_and_decay() {
        let tol = Tolerances::default();
        for dur in [3.0, -3.0] {
            let mut y = DVector::from_vec(vec![1.0]);
            let mut h = 0.0;
            integrate(|y| y.clone(), &mut y, dur, &tol, &mut h, |_| {}).unwrap();
            assert!((y[0] - f64::exp(dur)).abs() < 1e-8 * f64::exp(dur).max(1.0));
        }
    }

    #[test]
    fn harmonic_oscillator_period() {
        let tol = Tolerances::default();
        let mut y = DVector::from_vec(vec![0.0, 1.0]);
        let mut h = 0.0;
        let f = |y: &DVector<f64>| DVector::from_vec(vec![y[1], -y[0]]);
        integrate(f, &mut y, std::f64::consts::TAU, &tol, &mut h, |_| {}).unwrap();
        assert!((y[0]).abs() < 1e-8 && (y[1] - 1.0).abs() < 1e-8);
    }
}
