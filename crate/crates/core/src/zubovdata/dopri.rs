//! Dormand-Prince 5(4) embedded Runge-Kutta pair for autonomous systems.
//! The stage abscissae are not needed since the right-hand side has no time
//! dependence.

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

// 5th-order weights (also the last stage row, FSAL).
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;

// Difference between 5th- and 4th-order weights.
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

/// Working storage for one integration.
pub struct Dopri5 {
    n: usize,
    k: [Vec<f64>; 7],
    tmp: Vec<f64>,
    y_new: Vec<f64>,
    err: Vec<f64>,
    pub rtol: f64,
    pub atol: f64,
}

/// Result of an attempted step.
pub enum StepOutcome {
    Accepted { h_used: f64, h_next: f64 },
    Rejected { h_next: f64 },
}

impl Dopri5 {
    pub fn new(n: usize, rtol: f64, atol: f64) -> Self {
        Dopri5 {
            n,
            k: std::array::from_fn(|_| vec![0.0; n]),
            tmp: vec![0.0; n],
            y_new: vec![0.0; n],
            err: vec![0.0; n],
            rtol,
            atol,
        }
    }

    /// Evaluates the first stage at `y`; call once before stepping.
    pub fn prime<E>(
        &mut self,
        y: &[f64],
        f: &mut impl FnMut(&[f64], &mut [f64]) -> Result<(), E>,
    ) -> Result<(), E> {
        f(y, &mut self.k[0])
    }

    fn stage<E>(
        &mut self,
        y: &[f64],
        h: f64,
        coeffs: &[f64],
        out: usize,
        f: &mut impl FnMut(&[f64], &mut [f64]) -> Result<(), E>,
    ) -> Result<(), E> {
        for i in 0..self.n {
            let mut s = 0.0;
            for (j, a) in coeffs.iter().enumerate() {
                s += a * self.k[j][i];
            }
            self.tmp[i] = y[i] + h * s;
        }
        let (tmp, k) = (&self.tmp, &mut self.k[out]);
        f(tmp, k)
    }

    /// One fixed step of size `h`, writing the 5th-order solution into `y`.
    /// Returns the scaled error norm of the embedded estimate.
    pub fn step<E>(
        &mut self,
        y: &mut [f64],
        h: f64,
        f: &mut impl FnMut(&[f64], &mut [f64]) -> Result<(), E>,
    ) -> Result<f64, E> {
        let err = self.trial(y, h, f)?;
        self.commit(y);
        Ok(err)
    }

    fn trial<E>(
        &mut self,
        y: &[f64],
        h: f64,
        f: &mut impl FnMut(&[f64], &mut [f64]) -> Result<(), E>,
    ) -> Result<f64, E> {
        self.stage(y, h, &[A21], 1, f)?;
        self.stage(y, h, &[A31, A32], 2, f)?;
        self.stage(y, h, &[A41, A42, A43], 3, f)?;
        self.stage(y, h, &[A51, A52, A53, A54], 4, f)?;
        self.stage(y, h, &[A61, A62, A63, A64, A65], 5, f)?;
        for i in 0..self.n {
            let k = &self.k;
            self.y_new[i] =
                y[i] + h * (B1 * k[0][i] + B3 * k[2][i] + B4 * k[3][i] + B5 * k[4][i] + B6 * k[5][i]);
        }
        let (y_new, k6) = (&self.y_new, &mut self.k[6]);
        f(y_new, k6)?;
        let mut sum = 0.0;
        for i in 0..self.n {
            let k = &self.k;
            self.err[i] = h
                * (E1 * k[0][i]
                    + E3 * k[2][i]
                    + E4 * k[3][i]
                    + E5 * k[4][i]
                    + E6 * k[5][i]
                    + E7 * k[6][i]);
            let scale = self.atol + self.rtol * y[i].abs().max(self.y_new[i].abs());
            sum += (self.err[i] / scale).powi(2);
        }
        Ok((sum / self.n as f64).sqrt())
    }

    fn commit(&mut self, y: &mut [f64]) {
        y.copy_from_slice(&self.y_new);
        // First-same-as-last: the final stage is the next first stage.
        self.k.swap(0, 6);
    }

    /// Attempts an adaptive step of size `h`; on acceptance `y` advances.
    pub fn adaptive_step<E>(
        &mut self,
        y: &mut [f64],
        h: f64,
        f: &mut impl FnMut(&[f64], &mut [f64]) -> Result<(), E>,
    ) -> Result<StepOutcome, E> {
        let err = self.trial(y, h, f)?;
        if err.is_finite() && err <= 1.0 {
            self.commit(y);
            let factor = if err == 0.0 {
                5.0
            } else {
                (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
            };
            Ok(StepOutcome::Accepted {
                h_used: h,
                h_next: h * factor,
            })
        } else {
            let factor = if err.is_finite() {
                (0.9 * err.powf(-0.2)).clamp(0.1, 0.9)
            } else {
                0.1
            };
            Ok(StepOutcome::Rejected { h_next: h * factor })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::convert::Infallible;

    fn decay(y: &[f64], dy: &mut [f64]) -> Result<(), Infallible> {
        dy[0] = -y[0];
        Ok(())
    }

    fn fixed(h: f64, steps: usize) -> f64 {
        let mut d = Dopri5::new(1, 1e-8, 1e-10);
        let mut y = [1.0];
        d.prime(&y, &mut decay).unwrap();
        for _ in 0..steps {
            d.step(&mut y, h, &mut decay).unwrap();
        }
        y[0]
    }

    #[test]
    fn fifth_order_convergence() {
        let exact = (-2.0f64).exp();
        let e1 = (fixed(0.2, 10) - exact).abs();
        let e2 = (fixed(0.1, 20) - exact).abs();
        let ratio = e1 / e2;
        assert!(ratio > 25.0 && ratio < 40.0, "ratio {ratio}");
    }

    #[test]
    fn harmonic_oscillator_adaptive() {
        let mut rhs = |y: &[f64], dy: &mut [f64]| -> Result<(), Infallible> {
            dy[0] = y[1];
            dy[1] = -y[0];
            Ok(())
        };
        let mut d = Dopri5::new(2, 1e-10, 1e-12);
        let mut y = [1.0, 0.0];
        d.prime(&y, &mut rhs).unwrap();
        let (mut t, mut h) = (0.0, 0.01f64);
        let end = 10.0;
        while t < end {
            let step = h.min(end - t);
            match d.adaptive_step(&mut y, step, &mut rhs).unwrap() {
                StepOutcome::Accepted { h_used, h_next } => {
                    t += h_used;
                    h = h_next;
                }
                StepOutcome::Rejected { h_next } => h = h_next,
            }
        }
        assert!((y[0] - end.cos()).abs() < 1e-8);
        assert!((y[1] + end.sin()).abs() < 1e-8);
    }
}
