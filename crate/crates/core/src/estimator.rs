//! Estimation stage: averaged channel value -> transmission factor -> (eps_r, sigma).

use std::io::{Read, Write};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::calibration::CalibrationProfile;
use crate::em::{factors_from_polar, invert_to_dielectric, polar_transmission};
use crate::error::{Error, Result};
use crate::preprocess::{select_subcarrier, AveragedResponse};
use crate::trace_model::{DielectricProperties, SubcarrierPosition};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DielectricEstimate {
    pub est: DielectricProperties,
    /// Transmission magnitude, in (0, 1].
    pub b: f64,
    /// Transmission phase in radians, in (-2pi, 0] before any wrap hint.
    pub theta_b: f64,
    pub subcarrier_position: Option<SubcarrierPosition>,
    pub freq_hz: f64,
}

/// Relative errors as fractions. `delta_sigma` is `None` when the true conductivity is zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorReport {
    pub delta_eps: f64,
    pub delta_sigma: Option<f64>,
}

/// Inverts one phase-adjusted channel value through a calibration profile.
pub fn estimate(
    measured: Complex64,
    profile: &CalibrationProfile,
    wrap_hint: u32,
) -> Result<DielectricEstimate> {
    if !(measured.re.is_finite() && measured.im.is_finite()) {
        return Err(Error::NonFinite("measured channel value".into()));
    }
    if profile.coeff_los.norm() == 0.0 {
        return Err(Error::InvalidOption("coeff_los must be non-zero".into()));
    }
    let numerator = measured - profile.coeff_multipath;
    if numerator.norm() == 0.0 {
        return Err(Error::ZeroNumerator);
    }
    let t = numerator / profile.coeff_los;
    let tf = polar_transmission(t, wrap_hint)?;
    let pf = factors_from_polar(tf, profile.d_m)?;
    let est = invert_to_dielectric(pf, profile.freq_hz)?;
    Ok(DielectricEstimate {
        est,
        b: tf.b,
        theta_b: tf.theta_b,
        subcarrier_position: profile.subcarrier_position,
        freq_hz: profile.freq_hz,
    })
}

/// `|x - x_hat| / x` for permittivity and conductivity.
pub fn relative_errors(
    est: DielectricProperties,
    truth: DielectricProperties,
) -> Result<ErrorReport> {
    if !(truth.eps_r.is_finite() && truth.eps_r > 0.0) {
        return Err(Error::InvalidTruth(format!(
            "eps_r must be > 0 (got {})",
            truth.eps_r
        )));
    }
    if !(truth.sigma.is_finite() && truth.sigma >= 0.0) {
        return Err(Error::InvalidTruth(format!(
            "sigma must be >= 0 (got {})",
            truth.sigma
        )));
    }
    let delta_eps = (truth.eps_r - est.eps_r).abs() / truth.eps_r;
    let delta_sigma = (truth.sigma > 0.0).then(|| (truth.sigma - est.sigma).abs() / truth.sigma);
    Ok(ErrorReport {
        delta_eps,
        delta_sigma,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubcarrierEstimate {
    pub position: SubcarrierPosition,
    pub result: Result<DielectricEstimate>,
}

/// Independent estimate at each profile's subcarrier. Failures stay in the table.
pub fn estimate_per_subcarrier(
    avg: &AveragedResponse,
    profiles: &[CalibrationProfile],
    wrap_hint: u32,
) -> Vec<SubcarrierEstimate> {
    profiles
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let position = p
                .subcarrier_position
                .or_else(|| SubcarrierPosition::new(i + 1))
                .expect("i + 1 >= 1");
            let result = select_subcarrier(avg, position).and_then(|(h, f)| {
                if (f - p.freq_hz).abs() > 1e-9 * f {
                    return Err(Error::GeometryMismatch(format!(
                        "profile for position {position} is at {} Hz, trace carrier is at {f} Hz",
                        p.freq_hz
                    )));
                }
                estimate(h, p, wrap_hint)
            });
            SubcarrierEstimate { position, result }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepSummary {
    pub n_ok: usize,
    pub n_failed: usize,
    pub median: Option<DielectricProperties>,
}

fn median(mut v: Vec<f64>) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}

pub fn summarize(sweep: &[SubcarrierEstimate]) -> SweepSummary {
    let ok: Vec<&DielectricEstimate> = sweep
        .iter()
        .filter_map(|s| s.result.as_ref().ok())
        .collect();
    let median = median(ok.iter().map(|e| e.est.eps_r).collect())
        .zip(median(ok.iter().map(|e| e.est.sigma).collect()))
        .map(|(eps_r, sigma)| DielectricProperties { eps_r, sigma });
    SweepSummary {
        n_ok: ok.len(),
        n_failed: sweep.len() - ok.len(),
        median,
    }
}

/// One row of the estimate CSV report. Empty cells are `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimateRow {
    pub material_label: String,
    pub subcarrier_position: usize,
    pub eps_hat: Option<f64>,
    pub sigma_hat: Option<f64>,
    pub eps_truth: Option<f64>,
    pub sigma_truth: Option<f64>,
    pub delta_eps_pct: Option<f64>,
    /// `Some(None)` marks an undefined error (zero true conductivity).
    pub delta_sigma_pct: Option<Option<f64>>,
    pub b: Option<f64>,
    pub theta_b: Option<f64>,
}

pub const REPORT_COLUMNS: [&str; 10] = [
    "material_label",
    "subcarrier_position",
    "eps_hat",
    "sigma_hat",
    "eps_truth",
    "sigma_truth",
    "delta_eps_pct",
    "delta_sigma_pct",
    "b",
    "theta_b",
];

pub const UNDEFINED_CELL: &str = "undef";

impl EstimateRow {
    pub fn new(
        material_label: &str,
        position: SubcarrierPosition,
        result: Option<&DielectricEstimate>,
        truth: Option<DielectricProperties>,
    ) -> Result<Self> {
        let errors = match (result, truth) {
            (Some(e), Some(t)) => Some(relative_errors(e.est, t)?),
            _ => None,
        };
        Ok(Self {
            material_label: material_label.to_string(),
            subcarrier_position: position.get(),
            eps_hat: result.map(|e| e.est.eps_r),
            sigma_hat: result.map(|e| e.est.sigma),
            eps_truth: truth.map(|t| t.eps_r),
            sigma_truth: truth.map(|t| t.sigma),
            delta_eps_pct: errors.map(|r| 100.0 * r.delta_eps),
            delta_sigma_pct: errors.map(|r| r.delta_sigma.map(|d| 100.0 * d)),
            b: result.map(|e| e.b),
            theta_b: result.map(|e| e.theta_b),
        })
    }

    fn cells(&self) -> Vec<String> {
        let num = |v: Option<f64>| v.map_or_else(String::new, |x| format!("{x:?}"));
        vec![
            self.material_label.clone(),
            self.subcarrier_position.to_string(),
            num(self.eps_hat),
            num(self.sigma_hat),
            num(self.eps_truth),
            num(self.sigma_truth),
            num(self.delta_eps_pct),
            match self.delta_sigma_pct {
                None => String::new(),
                Some(None) => UNDEFINED_CELL.to_string(),
                Some(Some(x)) => format!("{x:?}"),
            },
            num(self.b),
            num(self.theta_b),
        ]
    }
}

pub fn write_report_csv<W: Write>(rows: &[EstimateRow], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(REPORT_COLUMNS)?;
    for row in rows {
        out.write_record(row.cells())?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_report_csv<R: Read>(r: R) -> Result<Vec<EstimateRow>> {
    let mut rdr = csv::Reader::from_reader(r);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Csv(format!("missing column {name}")))
    };
    let idx: Vec<usize> = REPORT_COLUMNS
        .iter()
        .map(|c| col(c))
        .collect::<Result<_>>()?;
    let mut rows = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let cell = |i: usize| rec.get(idx[i]).unwrap_or("").trim();
        let num = |i: usize| -> Result<Option<f64>> {
            let s = cell(i);
            if s.is_empty() {
                return Ok(None);
            }
            s.parse::<f64>().map(Some).map_err(|e| {
                Error::Csv(format!(
                    "row {}: column {}: {e}",
                    line + 1,
                    REPORT_COLUMNS[i]
                ))
            })
        };
        let delta_sigma_pct = match cell(7) {
            "" => None,
            s if s.eq_ignore_ascii_case(UNDEFINED_CELL) || s.eq_ignore_ascii_case("inf") => {
                Some(None)
            }
            _ => Some(num(7)?),
        };
        rows.push(EstimateRow {
            material_label: cell(0).to_string(),
            subcarrier_position: cell(1)
                .parse()
                .map_err(|e| Error::Csv(format!("row {}: subcarrier_position: {e}", line + 1)))?,
            eps_hat: num(2)?,
            sigma_hat: num(3)?,
            eps_truth: num(4)?,
            sigma_truth: num(5)?,
            delta_eps_pct: num(6)?,
            delta_sigma_pct,
            b: num(8)?,
            theta_b: num(9)?,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::em::{transmission_factor, wavenumbers};
    use crate::materials::BAIJIU_46;

    const F: f64 = 5.32e9 + 312.5e3;

    fn profile() -> CalibrationProfile {
        CalibrationProfile {
            freq_hz: F,
            d_m: 0.002,
            subcarrier_position: SubcarrierPosition::new(16),
            coeff_los: Complex64::new(0.028, -0.017),
            coeff_multipath: Complex64::new(-0.006, 0.011),
            residual_rms: 0.0,
            n_samples: 10,
        }
    }

    fn synth(p: &CalibrationProfile, props: DielectricProperties) -> Complex64 {
        p.predict(transmission_factor(wavenumbers(props, p.freq_hz), p.d_m))
    }

    fn rel(a: f64, b: f64) -> f64 {
        ((a - b) / b).abs()
    }

    #[test]
    fn closed_loop_baijiu() {
        let p = profile();
        let e = estimate(synth(&p, BAIJIU_46.props()), &p, 0).unwrap();
        assert!(
            rel(e.est.eps_r, 27.76) < 1e-6 && rel(e.est.sigma, 7.29) < 1e-6,
            "{e:?}"
        );
        assert!(e.b > 0.0 && e.b <= 1.0);
        assert!(e.theta_b <= 0.0);
    }

    #[test]
    fn degenerate_measurements() {
        let p = profile();
        let empty_cell = p.coeff_los + p.coeff_multipath;
        assert!(matches!(
            estimate(empty_cell, &p, 0),
            Err(Error::NonPositivePhaseConstant(_))
        ));
        let gain = p.predict(Complex64::new(1.2, 0.0) * Complex64::from_polar(1.0, -0.4));
        assert!(matches!(
            estimate(gain, &p, 0),
            Err(Error::NonPhysicalGain(_))
        ));
        assert_eq!(
            estimate(p.coeff_multipath, &p, 0),
            Err(Error::ZeroNumerator)
        );
        assert!(estimate(Complex64::new(f64::NAN, 0.0), &p, 0).is_err());
    }

    #[test]
    fn joint_gain_invariance() {
        let p = profile();
        let h = synth(&p, BAIJIU_46.props());
        let base = estimate(h, &p, 0).unwrap();
        for g in [
            Complex64::new(3.0, -2.0),
            Complex64::from_polar(1e-3, 2.2),
            Complex64::new(-1.0, 0.0),
        ] {
            let q = CalibrationProfile {
                coeff_los: p.coeff_los * g,
                coeff_multipath: p.coeff_multipath * g,
                ..p
            };
            let e = estimate(h * g, &q, 0).unwrap();
            assert!(
                rel(e.est.eps_r, base.est.eps_r) < 1e-12
                    && rel(e.est.sigma, base.est.sigma) < 1e-12
            );
        }
        assert_eq!(estimate(h, &p, 0).unwrap(), base);
    }

    #[test]
    fn hand_computed_error_examples() {
        let r = relative_errors(
            DielectricProperties {
                eps_r: 28.52,
                sigma: 7.37,
            },
            DielectricProperties {
                eps_r: 27.76,
                sigma: 7.29,
            },
        )
        .unwrap();
        assert!((100.0 * r.delta_eps - 2.7).abs() < 0.1);
        assert!((100.0 * r.delta_sigma.unwrap() - 1.0).abs() < 0.1);
        let r = relative_errors(
            DielectricProperties {
                eps_r: 77.92,
                sigma: 7.05,
            },
            DielectricProperties {
                eps_r: 73.38,
                sigma: 6.41,
            },
        )
        .unwrap();
        assert!((100.0 * r.delta_eps - 6.2).abs() < 0.1);
        assert!((100.0 * r.delta_sigma.unwrap() - 9.9).abs() < 0.1);
        let t = DielectricProperties {
            eps_r: 5.0,
            sigma: 1.0,
        };
        assert_eq!(
            relative_errors(t, t).unwrap(),
            ErrorReport {
                delta_eps: 0.0,
                delta_sigma: Some(0.0)
            }
        );
    }

    #[test]
    fn zero_conductivity_truth_is_undefined() {
        let r = relative_errors(
            DielectricProperties {
                eps_r: 1.38,
                sigma: 0.39,
            },
            DielectricProperties::vacuum(),
        )
        .unwrap();
        assert!((r.delta_eps - 0.38).abs() < 1e-12);
        assert_eq!(r.delta_sigma, None);
        assert!(relative_errors(
            DielectricProperties::vacuum(),
            DielectricProperties {
                eps_r: 0.0,
                sigma: 1.0
            }
        )
        .is_err());
    }

    #[test]
    fn sweep_reports_failures_in_place() {
        let grid = crate::SubcarrierGrid::default();
        let base = profile();
        let profiles: Vec<CalibrationProfile> = grid
            .positions()
            .map(|pos| CalibrationProfile {
                freq_hz: grid.freq_at(pos).unwrap(),
                subcarrier_position: Some(pos),
                ..base
            })
            .collect();
        let mut h: Vec<Complex64> = profiles
            .iter()
            .map(|p| synth(p, BAIJIU_46.props()))
            .collect();
        h[4] = profiles[4].coeff_multipath + profiles[4].coeff_los * 1.5;
        let avg = AveragedResponse {
            grid,
            h_r2_adj: h,
            n_frames_used: 1,
            window_s: (10.0, 20.0),
        };
        let sweep = estimate_per_subcarrier(&avg, &profiles, 0);
        assert_eq!(sweep.len(), 30);
        assert_eq!(sweep.iter().filter(|s| s.result.is_err()).count(), 1);
        assert!(sweep[4].result.is_err());
        for s in sweep.iter().filter(|s| s.result.is_ok()) {
            let e = s.result.as_ref().unwrap();
            assert!(rel(e.est.eps_r, 27.76) < 1e-6 && rel(e.est.sigma, 7.29) < 1e-6);
        }
        let summary = summarize(&sweep);
        assert_eq!((summary.n_ok, summary.n_failed), (29, 1));
        assert!(rel(summary.median.unwrap().eps_r, 27.76) < 1e-6);
        assert!(estimate_per_subcarrier(&avg, &[], 0).is_empty());
    }

    #[test]
    fn csv_report_roundtrip() {
        let p = profile();
        let e = estimate(synth(&p, BAIJIU_46.props()), &p, 0).unwrap();
        let pos = SubcarrierPosition::CENTER_ADJACENT;
        let rows = vec![
            EstimateRow::new("baijiu, 46%", pos, Some(&e), Some(BAIJIU_46.props())).unwrap(),
            EstimateRow::new("air", pos, Some(&e), Some(DielectricProperties::vacuum())).unwrap(),
            EstimateRow::new("unknown \"x\"", pos, None, None).unwrap(),
        ];
        let mut buf = Vec::new();
        write_report_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("material_label,subcarrier_position,eps_hat,sigma_hat,eps_truth,sigma_truth,delta_eps_pct,delta_sigma_pct,b,theta_b\n"));
        assert!(text.contains("\"baijiu, 46%\""));
        assert!(text.contains(",undef,"));
        assert_eq!(read_report_csv(buf.as_slice()).unwrap(), rows);
    }
}
