//! Plane-wave propagation through a lossy, non-magnetic slab and its inverse.
//!
//! Forward: `(eps_r, sigma, f) -> (k_r, k_i) -> t = exp(-k_i d) exp(-j k_r d)`.
//! Inverse: `t -> (k_r, k_i) -> (eps_r, sigma)` in closed form.

use std::f64::consts::{PI, TAU};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trace_model::DielectricProperties;

/// Vacuum permittivity, F/m.
pub const EPS0: f64 = 8.8541878128e-12;
/// Vacuum permeability, H/m.
pub const MU0: f64 = 1.25663706212e-6;

/// Below this `k_i / k_r` the medium is treated as lossless.
pub const LOSSLESS_RATIO: f64 = 1e-9;

/// Slack for `|t| = 1` and `arg t = 0` when a measured ratio lands a few ulp off.
const UNIT_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhysicalConstants {
    pub eps0: f64,
    pub mu0: f64,
}

impl PhysicalConstants {
    pub const SI: PhysicalConstants = PhysicalConstants {
        eps0: EPS0,
        mu0: MU0,
    };

    pub fn speed_of_light(&self) -> f64 {
        1.0 / (self.mu0 * self.eps0).sqrt()
    }
}

/// Phase constant `k_r` (rad/m) and attenuation constant `k_i` (Np/m).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PropagationFactors {
    pub k_r: f64,
    pub k_i: f64,
}

/// Polar form `b * exp(j theta_b)` of a slab transmission factor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransmissionFactor {
    pub b: f64,
    pub theta_b: f64,
}

impl TransmissionFactor {
    pub fn to_complex(self) -> Complex64 {
        Complex64::from_polar(self.b, self.theta_b)
    }
}

fn angular(freq_hz: f64) -> f64 {
    TAU * freq_hz
}

/// Wavenumber components of a plane wave at `freq_hz` in the given medium.
///
/// `k_i` is evaluated through `sqrt(1+L^2) - 1 = L^2 / (sqrt(1+L^2) + 1)` so that
/// weakly lossy media keep full relative precision.
pub fn wavenumbers(props: DielectricProperties, freq_hz: f64) -> PropagationFactors {
    let omega = angular(freq_hz);
    let k0 = omega * (MU0 * EPS0 * props.eps_r).sqrt();
    let loss = props.sigma / (EPS0 * props.eps_r * omega);
    let s = loss.hypot(1.0);
    let k_r = k0 * ((s + 1.0) / 2.0).sqrt();
    let k_i = k0 * loss / (2.0 * (s + 1.0)).sqrt();
    PropagationFactors { k_r, k_i }
}

/// `exp(-k_i d) * exp(-j k_r d)`.
pub fn transmission_factor(pf: PropagationFactors, d_m: f64) -> Complex64 {
    Complex64::from_polar((-pf.k_i * d_m).exp(), -pf.k_r * d_m)
}

/// Splits a measured transmission ratio into `(b, theta_b)` with `theta_b` in `(-2pi, 0]`
/// shifted by `-2pi * wrap_hint`.
pub fn polar_transmission(t: Complex64, wrap_hint: u32) -> Result<TransmissionFactor> {
    if !(t.re.is_finite() && t.im.is_finite()) {
        return Err(Error::NonFinite("transmission factor".into()));
    }
    let mut b = t.norm();
    if b == 0.0 {
        return Err(Error::ZeroTransmission);
    }
    if b > 1.0 + UNIT_SLACK {
        return Err(Error::NonPhysicalGain(b));
    }
    b = b.min(1.0);
    let mut theta = t.arg();
    if theta.abs() <= UNIT_SLACK {
        theta = 0.0;
    } else if theta > 0.0 {
        theta -= TAU;
    }
    // atan2 can return exactly pi; keep the branch half-open at -2pi.
    if theta <= -TAU {
        theta += TAU;
    }
    theta -= TAU * f64::from(wrap_hint);
    Ok(TransmissionFactor { b, theta_b: theta })
}

/// Recovers `(k_r, k_i)` from a transmission ratio through a slab of thickness `d_m`.
pub fn factors_from_transmission(
    t: Complex64,
    d_m: f64,
    wrap_hint: u32,
) -> Result<PropagationFactors> {
    if !(d_m.is_finite() && d_m > 0.0) {
        return Err(Error::InvalidThickness(d_m));
    }
    let tf = polar_transmission(t, wrap_hint)?;
    factors_from_polar(tf, d_m)
}

pub fn factors_from_polar(tf: TransmissionFactor, d_m: f64) -> Result<PropagationFactors> {
    let k_i = -tf.b.ln() / d_m;
    // b == 1 gives -0.0
    let k_i = k_i.max(0.0);
    let k_r = -tf.theta_b / d_m;
    if k_r <= 0.0 {
        return Err(Error::NonPositivePhaseConstant(k_r));
    }
    if k_r < k_i {
        return Err(Error::NonPhysicalMedium { k_r, k_i });
    }
    Ok(PropagationFactors { k_r, k_i })
}

/// Closed-form inverse of [`wavenumbers`].
///
/// With `r = k_r / k_i` the loss ratio `n = sigma / eps_r` follows from
/// `(r^2 - 1) sqrt(1 + n^2/(eps0 omega)^2) = 1 + r^2`; the square root term
/// `sqrt(((1+r^2)/(r^2-1))^2 - 1)` is evaluated as `2r / ((r-1)(r+1))`, which is the
/// same quantity without the cancellation at large `r`.
pub fn invert_to_dielectric(pf: PropagationFactors, freq_hz: f64) -> Result<DielectricProperties> {
    if !(freq_hz.is_finite() && freq_hz > 0.0) {
        return Err(Error::InvalidFrequency(freq_hz));
    }
    let PropagationFactors { k_r, k_i } = pf;
    if !(k_r.is_finite() && k_i.is_finite()) {
        return Err(Error::NonFinite("propagation factors".into()));
    }
    if k_r <= 0.0 {
        return Err(Error::NonPositivePhaseConstant(k_r));
    }
    if k_i < 0.0 {
        return Err(Error::NonPhysicalMedium { k_r, k_i });
    }
    let omega = angular(freq_hz);
    if k_i / k_r < LOSSLESS_RATIO {
        let c = PhysicalConstants::SI.speed_of_light();
        let eps_r = (k_r * c / omega).powi(2);
        return Ok(DielectricProperties { eps_r, sigma: 0.0 });
    }
    if k_r <= k_i {
        return Err(Error::SingularRatio { k_r, k_i });
    }
    let r = k_r / k_i;
    let x = 2.0 * r / ((r - 1.0) * (r + 1.0));
    let n = EPS0 * omega * x;
    let root = (n / (omega * EPS0)).hypot(1.0);
    let eps_r = 2.0 * k_r * k_r / (omega * omega * MU0 * EPS0 * (root + 1.0));
    let sigma = n * eps_r;
    if !(eps_r.is_finite() && sigma.is_finite()) {
        return Err(Error::NonFinite("inverted dielectric properties".into()));
    }
    Ok(DielectricProperties { eps_r, sigma })
}

/// Phase delay of a vacuum-filled slab, `k_vac * d`, in radians.
pub fn vacuum_phase(freq_hz: f64, d_m: f64) -> f64 {
    angular(freq_hz) * (MU0 * EPS0).sqrt() * d_m
}

/// Largest thickness for which `k_r d` stays inside one phase branch.
pub fn unwrapped_thickness_limit(pf: PropagationFactors) -> f64 {
    2.0 * PI / pf.k_r
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const F: f64 = 5.32e9;

    fn water() -> DielectricProperties {
        DielectricProperties {
            eps_r: 73.38,
            sigma: 6.41,
        }
    }

    /// Independent route: k = k_r - j k_i = omega sqrt(mu0 eps0 (eps_r - j sigma/(omega eps0))).
    fn complex_wavenumber_oracle(p: DielectricProperties, f: f64) -> (f64, f64) {
        let omega = TAU * f;
        let eps_c = Complex64::new(p.eps_r, -p.sigma / (omega * EPS0));
        let k = (eps_c * MU0 * EPS0).sqrt() * omega;
        (k.re, -k.im)
    }

    fn rel(a: f64, b: f64) -> f64 {
        ((a - b) / b).abs()
    }

    #[test]
    fn vacuum_wavenumber() {
        let pf = wavenumbers(DielectricProperties::vacuum(), F);
        assert_eq!(pf.k_i, 0.0);
        // 40-digit evaluation: 111.49895516782704836...
        assert!(rel(pf.k_r, 111.498_955_167_827_05) < 1e-14);
    }

    #[test]
    fn water_wavenumbers_pinned() {
        let pf = wavenumbers(water(), F);
        // 40-digit evaluation of the closed forms
        assert!(rel(pf.k_r, 965.253_304_895_233_1) < 1e-13, "{pf:?}");
        assert!(rel(pf.k_i, 139.472_344_545_736_3) < 1e-13, "{pf:?}");
        let (kr, ki) = complex_wavenumber_oracle(water(), F);
        assert!(rel(pf.k_r, kr) < 1e-13 && rel(pf.k_i, ki) < 1e-13);
    }

    #[test]
    fn lossless_scaling() {
        let vac = wavenumbers(DielectricProperties::vacuum(), F);
        let four = wavenumbers(
            DielectricProperties {
                eps_r: 4.0,
                sigma: 0.0,
            },
            F,
        );
        assert_eq!(four.k_r, 2.0 * vac.k_r);
        assert_eq!(four.k_i, 0.0);
    }

    #[test]
    fn transmission_examples() {
        let vac = wavenumbers(DielectricProperties::vacuum(), F);
        for d in [1e-4, 0.002, 0.05] {
            assert_eq!(transmission_factor(vac, d).norm(), 1.0);
        }
        let t = transmission_factor(wavenumbers(water(), F), 0.002);
        assert!(rel(t.norm(), 0.756_581_749_281_692_8) < 1e-13);
        assert!(rel(t.arg(), -1.930_506_609_790_466_2) < 1e-13);
        let tiny = transmission_factor(wavenumbers(water(), F), 1e-15);
        assert!((tiny - Complex64::new(1.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn transmission_inverse_errors() {
        assert!(matches!(
            factors_from_transmission(Complex64::new(1.0, 0.0), 0.002, 0),
            Err(Error::NonPositivePhaseConstant(_))
        ));
        assert!(matches!(
            factors_from_transmission(Complex64::new(1.05, 0.0), 0.002, 0),
            Err(Error::NonPhysicalGain(_))
        ));
        assert_eq!(
            factors_from_transmission(Complex64::new(0.0, 0.0), 0.002, 0),
            Err(Error::ZeroTransmission)
        );
        // strong attenuation with little phase: k_i > k_r
        let t = Complex64::from_polar(0.1, -0.1);
        assert!(matches!(
            factors_from_transmission(t, 0.002, 0),
            Err(Error::NonPhysicalMedium { .. })
        ));
        // the same ratio with one extra wrap is physical
        assert!(factors_from_transmission(t, 0.002, 1).is_ok());
        assert!(factors_from_transmission(t, 0.0, 0).is_err());
    }

    #[test]
    fn positive_phase_maps_below_zero() {
        let t = Complex64::from_polar(0.5, 0.3);
        let tf = polar_transmission(t, 0).unwrap();
        assert!((tf.theta_b - (0.3 - TAU)).abs() < 1e-15);
        let tf2 = polar_transmission(t, 2).unwrap();
        assert!((tf2.theta_b - (0.3 - 3.0 * TAU)).abs() < 1e-14);
        let neg_pi = polar_transmission(Complex64::new(-0.5, 0.0), 0).unwrap();
        assert!(neg_pi.theta_b <= 0.0 && neg_pi.theta_b > -TAU);
    }

    #[test]
    fn inversion_examples() {
        let p = invert_to_dielectric(wavenumbers(water(), F), F).unwrap();
        assert!(
            rel(p.eps_r, 73.38) < 1e-9 && rel(p.sigma, 6.41) < 1e-9,
            "{p:?}"
        );

        let vac = wavenumbers(DielectricProperties::vacuum(), F);
        let lossless = PropagationFactors {
            k_r: 2.0 * vac.k_r,
            k_i: 0.0,
        };
        let p = invert_to_dielectric(lossless, F).unwrap();
        assert_eq!(p.sigma, 0.0);
        assert!(rel(p.eps_r, 4.0) < 1e-12);

        let err = invert_to_dielectric(
            PropagationFactors {
                k_r: 500.0,
                k_i: 500.0,
            },
            F,
        );
        assert!(matches!(err, Err(Error::SingularRatio { .. })));
        assert!(invert_to_dielectric(
            PropagationFactors {
                k_r: 400.0,
                k_i: 500.0
            },
            F
        )
        .is_err());
    }

    #[test]
    fn thickness_budget_covers_default_geometry() {
        let pf = wavenumbers(
            DielectricProperties {
                eps_r: 100.0,
                sigma: 20.0,
            },
            5.33e9,
        );
        assert!(pf.k_r * 0.002 < 2.0 * PI);
        assert!(unwrapped_thickness_limit(pf) > 0.002);
        assert!((vacuum_phase(F, 0.002) - 111.498_955_167_827_05 * 0.002).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn forward_inverse_roundtrip(eps in 1.5f64..100.0, sigma in 0.01f64..20.0, f in 5.31e9f64..5.33e9) {
            let p = DielectricProperties { eps_r: eps, sigma };
            let back = invert_to_dielectric(wavenumbers(p, f), f).unwrap();
            prop_assert!(rel(back.eps_r, eps) < 1e-9);
            prop_assert!(rel(back.sigma, sigma) < 1e-9);
        }

        #[test]
        fn matches_complex_route(eps in 1.0f64..100.0, sigma in 0.0f64..20.0) {
            let p = DielectricProperties { eps_r: eps, sigma };
            let pf = wavenumbers(p, F);
            let (kr, ki) = complex_wavenumber_oracle(p, F);
            prop_assert!(rel(pf.k_r, kr) < 1e-12);
            prop_assert!((pf.k_i - ki).abs() <= 1e-12 * kr);
        }

        #[test]
        fn transmission_roundtrip(k_r in 1.0f64..3000.0, frac in 0.0f64..1.0, d in 1e-4f64..0.002) {
            let k_i = k_r * frac;
            prop_assume!(k_r * d < 2.0 * PI);
            let pf = PropagationFactors { k_r, k_i };
            let back = factors_from_transmission(transmission_factor(pf, d), d, 0).unwrap();
            prop_assert!(rel(back.k_r, k_r) < 1e-12);
            // |t| carries k_i*d only to about one ulp of 1.0
            prop_assert!((back.k_i - k_i).abs() <= 1e-12 * k_i + 1e-15 / d);
        }

        #[test]
        fn monotone_and_passive(eps in 1.0f64..100.0, sigma in 0.0f64..20.0, de in 0.01f64..5.0, ds in 0.01f64..5.0) {
            let base = wavenumbers(DielectricProperties { eps_r: eps, sigma }, F);
            let more_loss = wavenumbers(DielectricProperties { eps_r: eps, sigma: sigma + ds }, F);
            let more_eps = wavenumbers(DielectricProperties { eps_r: eps + de, sigma }, F);
            prop_assert!(more_loss.k_i > base.k_i);
            prop_assert!(more_eps.k_r > base.k_r);
            prop_assert!(base.k_r > base.k_i);
        }
    }
}
