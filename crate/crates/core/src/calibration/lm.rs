//! Damped least squares over the four real parameters
//! `[re c_los, im c_los, re c_mp, im c_mp]`.

use nalgebra::{DMatrix, DVector, Matrix4, Vector4};
use num_complex::Complex64;

use super::{prepare, residual_rms, CalibrationProfile, CalibrationSample};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LmOptions {
    /// Relative step tolerance: stop when `|step| <= tol * (|p| + tol)`.
    pub tol: f64,
    pub max_iters: usize,
    /// Initial damping relative to the largest diagonal entry of `J^T J`.
    pub tau: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        Self {
            tol: 1e-12,
            max_iters: 200,
            tau: 1e-3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LmFit {
    pub profile: CalibrationProfile,
    /// Number of damped steps solved before the step test passed.
    pub iterations: usize,
}

fn pack(cl: Complex64, cm: Complex64) -> Vector4<f64> {
    Vector4::new(cl.re, cl.im, cm.re, cm.im)
}

fn unpack(p: &Vector4<f64>) -> (Complex64, Complex64) {
    (Complex64::new(p[0], p[1]), Complex64::new(p[2], p[3]))
}

/// Stacked real residuals `measured - model`, interleaved re/im.
fn residual_vector(
    p: &Vector4<f64>,
    t: &[Complex64],
    samples: &[CalibrationSample],
) -> DVector<f64> {
    let (cl, cm) = unpack(p);
    let mut r = DVector::zeros(2 * t.len());
    for (i, (ti, s)) in t.iter().zip(samples).enumerate() {
        let e = s.measured - (cl * ti + cm);
        r[2 * i] = e.re;
        r[2 * i + 1] = e.im;
    }
    r
}

/// Jacobian of the residual vector. Constant because the model is linear.
fn jacobian(t: &[Complex64]) -> DMatrix<f64> {
    let mut j = DMatrix::zeros(2 * t.len(), 4);
    for (i, ti) in t.iter().enumerate() {
        // d(c_l T)/d re c_l = T, d/d im c_l = jT
        j[(2 * i, 0)] = -ti.re;
        j[(2 * i + 1, 0)] = -ti.im;
        j[(2 * i, 1)] = ti.im;
        j[(2 * i + 1, 1)] = -ti.re;
        j[(2 * i, 2)] = -1.0;
        j[(2 * i + 1, 3)] = -1.0;
    }
    j
}

/// Levenberg-Marquardt fit of the calibration model with Nielsen damping updates.
pub fn fit_coefficients_lm(
    samples: &[CalibrationSample],
    initial_guess: (Complex64, Complex64),
    options: LmOptions,
) -> Result<LmFit> {
    if !(options.tol > 0.0) {
        return Err(Error::InvalidOption(format!(
            "tol must be > 0 (got {})",
            options.tol
        )));
    }
    let (freq_hz, d_m, t) = prepare(samples)?;

    let jac = jacobian(&t);
    let jtj: Matrix4<f64> = (jac.transpose() * &jac)
        .fixed_view::<4, 4>(0, 0)
        .into_owned();
    let diag = Matrix4::from_diagonal(&jtj.diagonal().map(|d| d.max(f64::MIN_POSITIVE)));
    let mut p = pack(initial_guess.0, initial_guess.1);
    let mut r = residual_vector(&p, &t, samples);
    let mut cost = 0.5 * r.norm_squared();
    let mut lambda = options.tau * jtj.diagonal().max();
    let mut nu = 2.0;

    for iter in 1..=options.max_iters {
        let g: Vector4<f64> = (jac.transpose() * &r).fixed_rows::<4>(0).into_owned();
        let step = (jtj + diag * lambda)
            .cholesky()
            .map(|c| c.solve(&(-g)))
            .ok_or(Error::RankDeficient)?;

        if step.norm() <= options.tol * (p.norm() + options.tol) {
            let (coeff_los, coeff_multipath) = unpack(&p);
            if coeff_los.norm() == 0.0 {
                return Err(Error::RankDeficient);
            }
            let mut profile = CalibrationProfile {
                freq_hz,
                d_m,
                subcarrier_position: None,
                coeff_los,
                coeff_multipath,
                residual_rms: 0.0,
                n_samples: samples.len(),
            };
            profile.residual_rms = residual_rms(&profile, samples);
            return Ok(LmFit {
                profile,
                iterations: iter,
            });
        }

        let candidate = p + step;
        let r_new = residual_vector(&candidate, &t, samples);
        let cost_new = 0.5 * r_new.norm_squared();
        let predicted = 0.5 * step.dot(&(diag * step * lambda - g));
        let rho = if predicted > 0.0 {
            (cost - cost_new) / predicted
        } else {
            -1.0
        };
        if rho > 0.0 {
            p = candidate;
            r = r_new;
            cost = cost_new;
            lambda *= (1.0 - (2.0 * rho - 1.0).powi(3)).max(1.0 / 3.0);
            nu = 2.0;
        } else {
            lambda *= nu;
            nu *= 2.0;
        }
    }
    Err(Error::NonConvergence(options.max_iters))
}
