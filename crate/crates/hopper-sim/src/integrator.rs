//! Adaptive Dormand-Prince 5(4) integration with a fifth-order continuous
//! extension, plus Brent root finding for event localization on that dense
//! output.
//!
//! The simulator drives this one accepted step at a time: each call to
//! [`Dopri5::step`] advances to `t + h` for an error-controlled `h` capped
//! by the caller (who never lets a step cross a control tick) and returns a
//! [`DenseOutput`] that interpolates the state across the step, so guard
//! functions can be root-solved without re-integration.

use nalgebra::SVector;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum IntegratorError {
    #[error("step size underflow at t = {t} (h = {h:.3e})")]
    StepUnderflow { t: f64, h: f64 },
}

/// Dormand-Prince coefficients.
mod tableau {
    pub const C: [f64; 7] = [0.0, 0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];
    pub const A: [[f64; 6]; 7] = [
        [0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
        [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
        [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
        [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
        [
            19372.0 / 6561.0,
            -25360.0 / 2187.0,
            64448.0 / 6561.0,
            -212.0 / 729.0,
            0.0,
            0.0,
        ],
        [
            9017.0 / 3168.0,
            -355.0 / 33.0,
            46732.0 / 5247.0,
            49.0 / 176.0,
            -5103.0 / 18656.0,
            0.0,
        ],
        [
            35.0 / 384.0,
            0.0,
            500.0 / 1113.0,
            125.0 / 192.0,
            -2187.0 / 6784.0,
            11.0 / 84.0,
        ],
    ];
    /// Fifth-order weights (row 7 of A; the method is FSAL).
    pub const B: [f64; 7] = [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
        0.0,
    ];
    /// `B - B_hat`: weights of the embedded error estimate.
    pub const E: [f64; 7] = [
        71.0 / 57600.0,
        0.0,
        -71.0 / 16695.0,
        71.0 / 1920.0,
        -17253.0 / 339200.0,
        22.0 / 525.0,
        -1.0 / 40.0,
    ];
    /// Weights of the fifth-order interpolant's leading polynomial term.
    pub const D: [f64; 7] = [
        -12715105075.0 / 11282082432.0,
        0.0,
        87487479700.0 / 32700410799.0,
        -10690763975.0 / 1880347072.0,
        701980252875.0 / 199316789632.0,
        -1453857185.0 / 822651844.0,
        69997945.0 / 29380423.0,
    ];
}

/// Continuous extension over one accepted step `[t0, t0 + h]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseOutput<const N: usize> {
    pub t0: f64,
    pub h: f64,
    cont: [SVector<f64, N>; 5],
}

impl<const N: usize> DenseOutput<N> {
    pub fn t_end(&self) -> f64 {
        self.t0 + self.h
    }

    /// Interpolated state at `t` inside the step (clamped to the step).
    pub fn eval(&self, t: f64) -> SVector<f64, N> {
        let theta = if self.h == 0.0 {
            0.0
        } else {
            ((t - self.t0) / self.h).clamp(0.0, 1.0)
        };
        let theta1 = 1.0 - theta;
        self.cont[0]
            + theta
                * (self.cont[1]
                    + theta1 * (self.cont[2] + theta * (self.cont[3] + theta1 * self.cont[4])))
    }
}

/// One accepted adaptive step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepResult<const N: usize> {
    pub t: f64,
    pub y: SVector<f64, N>,
    /// Derivative at the new state, reusable as the next step's first stage.
    pub f: SVector<f64, N>,
    pub dense: DenseOutput<N>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dopri5 {
    pub rel_tol: f64,
    pub abs_tol: f64,
    /// Step-size suggestion carried between calls.
    h: f64,
}

/// Smallest step this integrator will attempt relative to |t|.
const H_FLOOR: f64 = 1e-14;

impl Dopri5 {
    pub fn new(rel_tol: f64, abs_tol: f64) -> Self {
        Self {
            rel_tol,
            abs_tol,
            h: 0.0,
        }
    }

    /// Resets the step-size memory (call when the state jumps, e.g. across
    /// an impact).
    pub fn reset(&mut self) {
        self.h = 0.0;
    }

    /// Takes one error-controlled step of at most `h_max` from `(t, y)`.
    /// `f0` must be the derivative at `(t, y)`; pass the previous step's
    /// `f` for the FSAL saving. The RHS may fail; its error is propagated.
    pub fn step<const N: usize, E>(
        &mut self,
        rhs: &mut dyn FnMut(f64, &SVector<f64, N>) -> Result<SVector<f64, N>, E>,
        t: f64,
        y: &SVector<f64, N>,
        f0: &SVector<f64, N>,
        h_max: f64,
    ) -> Result<StepResult<N>, StepError<E>> {
        assert!(h_max > 0.0, "h_max must be positive");
        if self.h <= 0.0 {
            self.h = h_max;
        }
        let mut h = self.h.min(h_max);

        loop {
            if h < H_FLOOR * t.abs().max(1.0) {
                return Err(StepError::Integrator(IntegratorError::StepUnderflow {
                    t,
                    h,
                }));
            }

            let mut k = [SVector::<f64, N>::zeros(); 7];
            k[0] = *f0;
            for stage in 1..7 {
                let mut arg = *y;
                for (j, kj) in k.iter().enumerate().take(stage) {
                    let a = tableau::A[stage][j];
                    if a != 0.0 {
                        arg += h * a * kj;
                    }
                }
                k[stage] = rhs(t + tableau::C[stage] * h, &arg).map_err(StepError::Rhs)?;
            }

            let mut y_new = *y;
            let mut err_vec = SVector::<f64, N>::zeros();
            for (j, kj) in k.iter().enumerate() {
                if tableau::B[j] != 0.0 {
                    y_new += h * tableau::B[j] * kj;
                }
                if tableau::E[j] != 0.0 {
                    err_vec += h * tableau::E[j] * kj;
                }
            }

            let mut err_sq = 0.0;
            for i in 0..N {
                let scale = self.abs_tol + self.rel_tol * y[i].abs().max(y_new[i].abs());
                let e = err_vec[i] / scale;
                err_sq += e * e;
            }
            let err = (err_sq / N as f64).sqrt();

            let factor = if err == 0.0 {
                5.0
            } else {
                (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
            };

            if err <= 1.0 {
                // k[6] is the derivative at (t + h, y_new): FSAL
                let f_new = k[6];
                let ydiff = y_new - y;
                let bspl = h * k[0] - ydiff;
                let mut d_term = SVector::<f64, N>::zeros();
                for (j, kj) in k.iter().enumerate() {
                    if tableau::D[j] != 0.0 {
                        d_term += tableau::D[j] * kj;
                    }
                }
                let dense = DenseOutput {
                    t0: t,
                    h,
                    cont: [
                        *y,
                        ydiff,
                        bspl,
                        ydiff - h * f_new - bspl,
                        h * d_term,
                    ],
                };
                self.h = h * factor;
                return Ok(StepResult {
                    t: t + h,
                    y: y_new,
                    f: f_new,
                    dense,
                });
            }
            h *= factor;
        }
    }
}

/// Either the integrator gave up or the caller's RHS failed.
#[derive(Debug, Clone, PartialEq)]
pub enum StepError<E> {
    Integrator(IntegratorError),
    Rhs(E),
}

/// Brent's method on `f` over `[a, b]`, which must bracket a sign change.
/// Returns the abscissa where `|f|` crosses zero within `tol` on `x`.
pub fn brent_root(f: &mut dyn FnMut(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    let (mut a, mut b) = (a, b);
    let (mut fa, mut fb) = (f(a), f(b));
    assert!(
        fa * fb <= 0.0,
        "brent_root needs a bracket: f({a}) = {fa}, f({b}) = {fb}"
    );
    if fa.abs() < fb.abs() {
        std::mem::swap(&mut a, &mut b);
        std::mem::swap(&mut fa, &mut fb);
    }
    let (mut c, mut fc) = (a, fa);
    let mut d = b - a;
    let mut mflag = true;

    for _ in 0..200 {
        if fb == 0.0 || (b - a).abs() < tol {
            return b;
        }
        let s = if fa != fc && fb != fc {
            // inverse quadratic interpolation
            a * fb * fc / ((fa - fb) * (fa - fc))
                + b * fa * fc / ((fb - fa) * (fb - fc))
                + c * fa * fb / ((fc - fa) * (fc - fb))
        } else {
            b - fb * (b - a) / (fb - fa)
        };

        let between = {
            let lo = (3.0 * a + b) / 4.0;
            let (lo, hi) = if lo < b { (lo, b) } else { (b, lo) };
            s > lo && s < hi
        };
        let s = if !between
            || (mflag && (s - b).abs() >= (b - c).abs() / 2.0)
            || (!mflag && (s - b).abs() >= d.abs() / 2.0)
            || (mflag && (b - c).abs() < tol)
            || (!mflag && d.abs() < tol)
        {
            mflag = true;
            0.5 * (a + b)
        } else {
            mflag = false;
            s
        };

        let fs = f(s);
        d = c - b;
        c = b;
        fc = fb;
        if fa * fs < 0.0 {
            b = s;
            fb = fs;
        } else {
            a = s;
            fa = fs;
        }
        if fa.abs() < fb.abs() {
            std::mem::swap(&mut a, &mut b);
            std::mem::swap(&mut fa, &mut fb);
        }
    }
    b
}
