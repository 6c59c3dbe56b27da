//! Calibration stage: fit the line-of-sight and multipath coefficients of
//!
//! ```text
//! measured_i = coeff_los * T_i + coeff_multipath
//! ```
//!
//! where `T_i` is the slab transmission factor of a material with known dielectric
//! properties. The model is linear in the two complex unknowns, so the primary solver is
//! a closed-form least-squares fit; [`fit_coefficients_lm`] solves the same problem
//! iteratively and serves as a cross-check.

mod lm;

use std::io::{Read, Write};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::complex_pair;
use crate::em::{transmission_factor, wavenumbers};
use crate::error::{Error, Result};
use crate::preprocess::{select_subcarrier, AveragedResponse};
use crate::trace_model::{DielectricProperties, SubcarrierPosition};

pub use lm::{fit_coefficients_lm, LmFit, LmOptions};

/// Pairwise `|T_i - T_j|` below which a calibration set is considered poorly conditioned.
pub const CONDITIONING_SEPARATION: f64 = 0.05;

const REL_GEOMETRY_TOL: f64 = 1e-12;

/// One known material measured at one subcarrier.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationSample {
    /// Phase-adjusted channel value in volts.
    pub measured: Complex64,
    pub known: DielectricProperties,
    pub freq_hz: f64,
    pub d_m: f64,
}

impl CalibrationSample {
    pub fn transmission(&self) -> Complex64 {
        transmission_factor(wavenumbers(self.known, self.freq_hz), self.d_m)
    }
}

/// Fitted system coefficients for one subcarrier. Persisted as JSON.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationProfile {
    pub freq_hz: f64,
    pub d_m: f64,
    pub subcarrier_position: Option<SubcarrierPosition>,
    #[serde(with = "complex_pair")]
    pub coeff_los: Complex64,
    #[serde(with = "complex_pair")]
    pub coeff_multipath: Complex64,
    pub residual_rms: f64,
    pub n_samples: usize,
}

impl CalibrationProfile {
    /// Model prediction `coeff_los * t + coeff_multipath`.
    pub fn predict(&self, t: Complex64) -> Complex64 {
        self.coeff_los * t + self.coeff_multipath
    }

    pub fn with_position(mut self, position: SubcarrierPosition) -> Self {
        self.subcarrier_position = Some(position);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.coeff_los.norm() == 0.0 || !self.coeff_los.norm().is_finite() {
            return Err(Error::InvalidOption("coeff_los must be non-zero".into()));
        }
        if !self.coeff_multipath.norm().is_finite() {
            return Err(Error::NonFinite("coeff_multipath".into()));
        }
        if self.n_samples < 2 {
            return Err(Error::InsufficientCalibration(format!(
                "profile built from {} samples",
                self.n_samples
            )));
        }
        if !(self.residual_rms >= 0.0) {
            return Err(Error::InvalidOption("residual_rms must be >= 0".into()));
        }
        if !(self.d_m > 0.0) {
            return Err(Error::InvalidThickness(self.d_m));
        }
        if !(self.freq_hz > 0.0) {
            return Err(Error::InvalidFrequency(self.freq_hz));
        }
        Ok(())
    }

    pub fn to_json_writer<W: Write>(&self, w: W) -> Result<()> {
        serde_json::to_writer_pretty(w, self)?;
        Ok(())
    }

    pub fn from_json_reader<R: Read>(r: R) -> Result<Self> {
        let p: Self = serde_json::from_reader(r)?;
        p.validate()?;
        Ok(p)
    }
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= REL_GEOMETRY_TOL * a.abs().max(b.abs())
}

/// Checks that all samples share frequency and thickness; returns them.
fn shared_geometry(samples: &[CalibrationSample]) -> Result<(f64, f64)> {
    let first = samples
        .first()
        .ok_or_else(|| Error::InsufficientCalibration("no samples".into()))?;
    for (i, s) in samples.iter().enumerate() {
        if !close(s.freq_hz, first.freq_hz) {
            return Err(Error::GeometryMismatch(format!(
                "sample {i} at {} Hz, expected {} Hz",
                s.freq_hz, first.freq_hz
            )));
        }
        if !close(s.d_m, first.d_m) {
            return Err(Error::GeometryMismatch(format!(
                "sample {i} has d = {} m, expected {} m",
                s.d_m, first.d_m
            )));
        }
        if !(s.measured.re.is_finite() && s.measured.im.is_finite()) || s.measured.norm() == 0.0 {
            return Err(Error::NonFinite(format!(
                "sample {i} measured value must be finite and non-zero"
            )));
        }
        s.known.validate()?;
    }
    if !(first.d_m > 0.0) {
        return Err(Error::InvalidThickness(first.d_m));
    }
    if !(first.freq_hz > 0.0) {
        return Err(Error::InvalidFrequency(first.freq_hz));
    }
    Ok((first.freq_hz, first.d_m))
}

pub(crate) fn prepare(samples: &[CalibrationSample]) -> Result<(f64, f64, Vec<Complex64>)> {
    if samples.len() < 2 {
        return Err(Error::InsufficientCalibration(format!(
            "{} sample(s); at least 2 materials are required",
            samples.len()
        )));
    }
    let (freq_hz, d_m) = shared_geometry(samples)?;
    let t: Vec<Complex64> = samples
        .iter()
        .map(CalibrationSample::transmission)
        .collect();
    warn_if_poorly_conditioned(&t);
    Ok((freq_hz, d_m, t))
}

fn warn_if_poorly_conditioned(t: &[Complex64]) {
    let mut seps: Vec<f64> = t
        .iter()
        .enumerate()
        .flat_map(|(i, a)| t[i + 1..].iter().map(move |b| (a - b).norm()))
        .collect();
    seps.sort_by(|a, b| b.total_cmp(a));
    let second = seps.get(1).or(seps.first()).copied().unwrap_or(0.0);
    if second < CONDITIONING_SEPARATION {
        log::warn!(
            "calibration materials are poorly separated (|T_i - T_j| <= {second:.4}); estimates will be noise sensitive"
        );
    }
}

fn rms(residuals: &[Complex64]) -> f64 {
    if residuals.is_empty() {
        return 0.0;
    }
    (residuals.iter().map(|r| r.norm_sqr()).sum::<f64>() / residuals.len() as f64).sqrt()
}

/// Closed-form complex least squares for `measured_i ~ coeff_los * T_i + coeff_multipath`.
///
/// Centering both sides removes the constant column, leaving one complex regression
/// `coeff_los = sum (m_i - m_mean) conj(T_i - T_mean) / sum |T_i - T_mean|^2`.
pub fn fit_coefficients(samples: &[CalibrationSample]) -> Result<CalibrationProfile> {
    let (freq_hz, d_m, t) = prepare(samples)?;
    let n = samples.len() as f64;
    let t_mean: Complex64 = t.iter().sum::<Complex64>() / n;
    let m_mean: Complex64 = samples.iter().map(|s| s.measured).sum::<Complex64>() / n;

    let mut sxx = 0.0;
    let mut sxy = Complex64::new(0.0, 0.0);
    let mut t_scale: f64 = 0.0;
    for (ti, s) in t.iter().zip(samples) {
        let dt = ti - t_mean;
        sxx += dt.norm_sqr();
        sxy += (s.measured - m_mean) * dt.conj();
        t_scale = t_scale.max(ti.norm());
    }
    if sxx.sqrt() <= 1e-12 * t_scale.max(f64::MIN_POSITIVE) * n.sqrt() {
        return Err(Error::RankDeficient);
    }
    let coeff_los = sxy / sxx;
    let coeff_multipath = m_mean - coeff_los * t_mean;
    if coeff_los.norm() == 0.0 {
        return Err(Error::RankDeficient);
    }
    let res: Vec<Complex64> = t
        .iter()
        .zip(samples)
        .map(|(ti, s)| s.measured - (coeff_los * ti + coeff_multipath))
        .collect();
    Ok(CalibrationProfile {
        freq_hz,
        d_m,
        subcarrier_position: None,
        coeff_los,
        coeff_multipath,
        residual_rms: rms(&res),
        n_samples: samples.len(),
    })
}

/// `measured_i - (coeff_los * T_i + coeff_multipath)` for each sample.
pub fn residuals(profile: &CalibrationProfile, samples: &[CalibrationSample]) -> Vec<Complex64> {
    samples
        .iter()
        .map(|s| s.measured - profile.predict(s.transmission()))
        .collect()
}

pub(crate) fn residual_rms(profile: &CalibrationProfile, samples: &[CalibrationSample]) -> f64 {
    rms(&residuals(profile, samples))
}

/// A calibration measurement: averaged response of a material with known properties.
#[derive(Debug, Clone, Copy)]
pub struct KnownResponse<'a> {
    pub response: &'a AveragedResponse,
    pub known: DielectricProperties,
    pub d_m: f64,
}

/// Fits one profile per requested position from a set of known-material responses.
pub fn fit_per_subcarrier(
    references: &[KnownResponse<'_>],
    positions: &[SubcarrierPosition],
) -> Result<Vec<CalibrationProfile>> {
    if references.len() < 2 {
        return Err(Error::InsufficientCalibration(format!(
            "{} material(s); at least 2 are required",
            references.len()
        )));
    }
    let first = references[0].response;
    for (i, r) in references.iter().enumerate() {
        if r.response.grid != first.grid {
            return Err(Error::GeometryMismatch(format!(
                "reference {i} uses a different subcarrier grid"
            )));
        }
        if !close(r.d_m, references[0].d_m) {
            return Err(Error::GeometryMismatch(format!(
                "reference {i} has d = {} m, expected {} m",
                r.d_m, references[0].d_m
            )));
        }
    }
    positions
        .iter()
        .map(|&pos| {
            let samples = references
                .iter()
                .map(|r| {
                    let (measured, freq_hz) = select_subcarrier(r.response, pos)?;
                    Ok(CalibrationSample {
                        measured,
                        known: r.known,
                        freq_hz,
                        d_m: r.d_m,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(fit_coefficients(&samples)?.with_position(pos))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::materials::ETHANOL_WATER;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    const F: f64 = 5.32e9 + 312.5e3;
    const D: f64 = 0.002;

    fn synth(
        cl: Complex64,
        cm: Complex64,
        materials: &[DielectricProperties],
    ) -> Vec<CalibrationSample> {
        materials
            .iter()
            .map(|&known| {
                let t = transmission_factor(wavenumbers(known, F), D);
                CalibrationSample {
                    measured: cl * t + cm,
                    known,
                    freq_hz: F,
                    d_m: D,
                }
            })
            .collect()
    }

    fn table_i() -> Vec<DielectricProperties> {
        ETHANOL_WATER.iter().map(|m| m.props()).collect()
    }

    fn crel(a: Complex64, b: Complex64) -> f64 {
        (a - b).norm() / b.norm()
    }

    #[test]
    fn noiseless_recovery() {
        let cl = Complex64::new(0.031, -0.012);
        let cm = Complex64::new(-0.004, 0.009);
        let samples = synth(cl, cm, &table_i());
        let p = fit_coefficients(&samples).unwrap();
        assert!(crel(p.coeff_los, cl) < 1e-10);
        assert!(crel(p.coeff_multipath, cm) < 1e-10);
        assert!(p.residual_rms < 1e-15);
        assert_eq!(p.n_samples, 10);
        assert!(residuals(&p, &samples).iter().all(|r| r.norm() < 1e-15));
    }

    #[test]
    fn two_samples_interpolate() {
        let mats = table_i();
        let samples = vec![
            CalibrationSample {
                measured: Complex64::new(0.02, 0.01),
                known: mats[0],
                freq_hz: F,
                d_m: D,
            },
            CalibrationSample {
                measured: Complex64::new(-0.01, 0.03),
                known: mats[9],
                freq_hz: F,
                d_m: D,
            },
        ];
        let p = fit_coefficients(&samples).unwrap();
        assert!(p.residual_rms <= 1e-17, "{}", p.residual_rms);
    }

    #[test]
    fn degenerate_sets_rejected() {
        let mats = table_i();
        let cl = Complex64::new(0.03, 0.0);
        let same = synth(cl, Complex64::new(0.0, 0.0), &[mats[3]; 4]);
        assert_eq!(fit_coefficients(&same), Err(Error::RankDeficient));
        let one = synth(cl, Complex64::new(0.0, 0.0), &mats[..1]);
        assert!(matches!(
            fit_coefficients(&one),
            Err(Error::InsufficientCalibration(_))
        ));
        let mut mixed = synth(cl, Complex64::new(0.0, 0.0), &mats);
        mixed[4].d_m = 0.003;
        assert!(matches!(
            fit_coefficients(&mixed),
            Err(Error::GeometryMismatch(_))
        ));
        let mut mixed = synth(cl, Complex64::new(0.0, 0.0), &mats);
        mixed[4].freq_hz = 5.33e9;
        assert!(matches!(
            fit_coefficients(&mixed),
            Err(Error::GeometryMismatch(_))
        ));
        assert_eq!(
            residuals(&fit_coefficients(&synth(cl, cl, &mats)).unwrap(), &[]),
            vec![]
        );
    }

    #[test]
    fn corrupted_sample_stands_out() {
        let cl = Complex64::new(0.031, -0.012);
        let cm = Complex64::new(-0.004, 0.009);
        let mut samples = synth(cl, cm, &table_i());
        samples[6].measured += Complex64::new(0.01, -0.01);
        let p = fit_coefficients(&samples).unwrap();
        let r = residuals(&p, &samples);
        let worst = (0..r.len())
            .max_by(|&a, &b| r[a].norm().total_cmp(&r[b].norm()))
            .unwrap();
        assert_eq!(worst, 6);
        let runner_up = r
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != 6)
            .map(|(_, z)| z.norm())
            .fold(0.0, f64::max);
        assert!(r[6].norm() > 3.0 * runner_up);
    }

    #[test]
    fn residuals_orthogonal_to_design() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let cl = Complex64::new(rng.random_range(-0.05..0.05), rng.random_range(-0.05..0.05));
            let cm = Complex64::new(rng.random_range(-0.02..0.02), rng.random_range(-0.02..0.02));
            let mut samples = synth(cl, cm, &table_i());
            for s in &mut samples {
                let nr: f64 = rng.sample(StandardNormal);
                let ni: f64 = rng.sample(StandardNormal);
                s.measured += Complex64::new(nr, ni) * 1e-3;
            }
            let p = fit_coefficients(&samples).unwrap();
            let r = residuals(&p, &samples);
            let scale = samples
                .iter()
                .map(|s| s.measured.norm_sqr())
                .sum::<f64>()
                .sqrt();
            let along_t: Complex64 = r
                .iter()
                .zip(&samples)
                .map(|(ri, s)| ri * s.transmission().conj())
                .sum();
            let along_one: Complex64 = r.iter().sum();
            assert!(along_t.norm() <= 1e-9 * scale && along_one.norm() <= 1e-9 * scale);
        }
    }

    #[test]
    fn amplitude_scaling_scales_coefficients() {
        let cl = Complex64::new(0.031, -0.012);
        let cm = Complex64::new(-0.004, 0.009);
        let samples = synth(cl, cm, &table_i());
        let g = 7.25;
        let scaled: Vec<_> = samples
            .iter()
            .map(|s| CalibrationSample {
                measured: s.measured * g,
                ..*s
            })
            .collect();
        let p = fit_coefficients(&samples).unwrap();
        let q = fit_coefficients(&scaled).unwrap();
        assert!(crel(q.coeff_los, p.coeff_los * g) < 1e-13);
        assert!(crel(q.coeff_multipath, p.coeff_multipath * g) < 1e-12);
    }

    #[test]
    fn profile_json_layout() {
        let p = fit_coefficients(&synth(
            Complex64::new(0.03, 0.01),
            Complex64::new(0.0, 0.002),
            &table_i(),
        ))
        .unwrap()
        .with_position(SubcarrierPosition::CENTER_ADJACENT);
        let mut buf = Vec::new();
        p.to_json_writer(&mut buf).unwrap();
        let v: serde_json::Value = serde_json::from_slice(&buf).unwrap();
        for key in [
            "freq_hz",
            "d_m",
            "subcarrier_position",
            "coeff_los",
            "coeff_multipath",
            "residual_rms",
            "n_samples",
        ] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
        assert_eq!(v["subcarrier_position"], 16);
        assert_eq!(v["coeff_los"].as_array().unwrap().len(), 2);
        let back = CalibrationProfile::from_json_reader(buf.as_slice()).unwrap();
        assert_eq!(back, p);
    }
}
