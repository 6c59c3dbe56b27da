//! Contactless dielectric property estimation from WiFi channel state information.
//!
//! A material slab of thickness `d` sits on the line of sight between a transmitter and
//! one receive antenna (port B); a second receive antenna (port A) sees an unobstructed
//! reference channel sharing the receiver clock. The crate covers the whole chain:
//!
//! * [`trace_model`]: CSI trace types and the JSONL on-disk format.
//! * [`preprocess`]: RSSI/AGC volt rescaling, phase synchronisation against the
//!   reference port and windowed time averaging.
//! * [`em`]: plane-wave propagation in a lossy medium and its analytic inverse.
//! * [`calibration`]: fitting the two complex system coefficients from known materials.
//! * [`estimator`]: turning an averaged channel value into `(eps_r, sigma)`.
//! * [`simulator`]: a seeded forward model that synthesizes traces.
//! * [`materials`]: reference dielectric data for ethanol/water mixtures and other liquids
//!   at 5.32 GHz.
//!
//! Subcarrier positions are 1-based throughout ([`SubcarrierPosition`]); position 16 on
//! the default grid is the carrier just above the channel centre.

// `!(x > 0.0)` also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod calibration;
pub mod em;
mod error;
pub mod estimator;
pub mod materials;
pub mod preprocess;
pub mod simulator;
pub mod trace_model;

pub use error::{Error, Result};
pub use trace_model::{CsiFrame, DielectricProperties, SubcarrierGrid, SubcarrierPosition, Trace};

/// Serde adapters for complex values stored as `[re, im]` pairs.
pub mod complex_pair {
    use num_complex::Complex64;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(z: &Complex64, s: S) -> std::result::Result<S::Ok, S::Error> {
        [z.re, z.im].serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(
        d: D,
    ) -> std::result::Result<Complex64, D::Error> {
        let [re, im] = <[f64; 2]>::deserialize(d)?;
        Ok(Complex64::new(re, im))
    }

    pub mod vec {
        use num_complex::Complex64;
        use serde::ser::SerializeSeq;
        use serde::{Deserialize, Deserializer, Serializer};

        pub fn serialize<S: Serializer>(
            v: &[Complex64],
            s: S,
        ) -> std::result::Result<S::Ok, S::Error> {
            let mut seq = s.serialize_seq(Some(v.len()))?;
            for z in v {
                seq.serialize_element(&[z.re, z.im])?;
            }
            seq.end()
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(
            d: D,
        ) -> std::result::Result<Vec<Complex64>, D::Error> {
            let pairs = Vec::<[f64; 2]>::deserialize(d)?;
            Ok(pairs
                .into_iter()
                .map(|[re, im]| Complex64::new(re, im))
                .collect())
        }
    }
}
