//! Forward-model trace synthesizer.
//!
//! The material port sees `c_los * T + multipath_scale * c_mp` per subcarrier, the
//! reference port sees a fixed channel, and every packet is rotated by a random global
//! phase before receiver noise is added. Raw CSI is the volt-scale CSI times a power of
//! two, and the RSSI/AGC fields are chosen so that rescaling recovers the volts.
//!
//! RNG stream order for a trace: transient parameters, then per frame the global phase
//! followed by the noise of port A and port B (re, im per subcarrier).

use std::f64::consts::TAU;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::em::{transmission_factor, wavenumbers};
use crate::error::{Error, Result};
use crate::preprocess::{csi_power_per_subcarrier, total_power, DEFAULT_C_DB};
use crate::trace_model::{
    CsiFrame, DielectricProperties, SubcarrierGrid, SubcarrierPosition, Trace,
};

/// Raw CSI = volts * 2^RAW_GAIN_LOG2. A power of two keeps the scaling exact.
pub const RAW_GAIN_LOG2: i32 = 10;
/// AGC the RSSI values are synthesized against, in dB.
pub const NOMINAL_AGC_DB: f64 = 30.0;
pub const DEFAULT_RSSI_STEP_DB: f64 = 0.5;

/// Everything needed to generate traces. Coefficient lists hold one value per subcarrier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimScenario {
    pub grid: SubcarrierGrid,
    pub d_m: f64,
    #[serde(with = "crate::complex_pair::vec")]
    pub coeff_los_per_sc: Vec<Complex64>,
    #[serde(with = "crate::complex_pair::vec")]
    pub coeff_multipath_per_sc: Vec<Complex64>,
    #[serde(with = "crate::complex_pair::vec")]
    pub reference_channel_per_sc: Vec<Complex64>,
    /// `None` disables noise.
    pub snr_db: Option<f64>,
    pub n_packets: usize,
    pub packet_interval_s: f64,
    pub c_db: f64,
    pub seed: u64,
    pub transient_s: f64,
    pub multipath_scale: f64,
    /// RSSI quantization step in dB; `None` reports exact RSSI.
    pub rssi_step_db: Option<f64>,
}

/// Scenario file contents. Missing coefficient lists are drawn from the seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub grid: SubcarrierGrid,
    pub d_m: f64,
    #[serde(with = "opt_complex_vec", skip_serializing_if = "Option::is_none")]
    pub coeff_los_per_sc: Option<Vec<Complex64>>,
    #[serde(with = "opt_complex_vec", skip_serializing_if = "Option::is_none")]
    pub coeff_multipath_per_sc: Option<Vec<Complex64>>,
    #[serde(with = "opt_complex_vec", skip_serializing_if = "Option::is_none")]
    pub reference_channel_per_sc: Option<Vec<Complex64>>,
    pub snr_db: Option<f64>,
    pub n_packets: usize,
    pub packet_interval_s: f64,
    pub c_db: f64,
    pub seed: u64,
    pub transient_s: f64,
    pub multipath_scale: f64,
    pub rssi_step_db: Option<f64>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            grid: SubcarrierGrid::default(),
            d_m: 0.002,
            coeff_los_per_sc: None,
            coeff_multipath_per_sc: None,
            reference_channel_per_sc: None,
            snr_db: None,
            n_packets: 200,
            packet_interval_s: 0.05,
            c_db: DEFAULT_C_DB,
            seed: 0,
            transient_s: 10.0,
            multipath_scale: 1.0,
            rssi_step_db: Some(DEFAULT_RSSI_STEP_DB),
        }
    }
}

mod opt_complex_vec {
    use num_complex::Complex64;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &Option<Vec<Complex64>>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            Some(v) => crate::complex_pair::vec::serialize(v, s),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(
        d: D,
    ) -> Result<Option<Vec<Complex64>>, D::Error> {
        let raw: Option<Vec<[f64; 2]>> = Option::deserialize(d)?;
        Ok(raw.map(|v| {
            v.into_iter()
                .map(|[re, im]| Complex64::new(re, im))
                .collect()
        }))
    }
}

/// Smooth per-subcarrier profile `m * (1 + ripple) * exp(j (phi0 + slope * k))`.
fn smooth_profile(rng: &mut ChaCha8Rng, n: usize, mag: (f64, f64), ripple: f64) -> Vec<Complex64> {
    let m = rng.random_range(mag.0..mag.1);
    let phi0 = rng.random_range(0.0..TAU);
    let slope = rng.random_range(-0.15..0.15);
    let period = rng.random_range(20.0..60.0);
    let psi = rng.random_range(0.0..TAU);
    (0..n)
        .map(|k| {
            let k = k as f64;
            let a = m * (1.0 + ripple * (TAU * k / period + psi).sin());
            Complex64::from_polar(a, phi0 + slope * k)
        })
        .collect()
}

impl ScenarioConfig {
    pub fn from_json_str(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    /// Fills missing coefficient lists from the seed and validates the result.
    pub fn resolve(&self) -> Result<SimScenario> {
        let n = self.grid.len();
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(1);
        let los = smooth_profile(&mut rng, n, (0.02, 0.06), 0.15);
        let mp = smooth_profile(&mut rng, n, (0.004, 0.015), 0.3);
        let reference = smooth_profile(&mut rng, n, (0.03, 0.08), 0.15);
        let scn = SimScenario {
            grid: self.grid.clone(),
            d_m: self.d_m,
            coeff_los_per_sc: self.coeff_los_per_sc.clone().unwrap_or(los),
            coeff_multipath_per_sc: self.coeff_multipath_per_sc.clone().unwrap_or(mp),
            reference_channel_per_sc: self.reference_channel_per_sc.clone().unwrap_or(reference),
            snr_db: self.snr_db,
            n_packets: self.n_packets,
            packet_interval_s: self.packet_interval_s,
            c_db: self.c_db,
            seed: self.seed,
            transient_s: self.transient_s,
            multipath_scale: self.multipath_scale,
            rssi_step_db: self.rssi_step_db,
        };
        scn.validate()?;
        Ok(scn)
    }
}

impl SimScenario {
    /// Scenario with seeded default coefficients.
    pub fn default_for(seed: u64) -> Self {
        ScenarioConfig {
            seed,
            ..ScenarioConfig::default()
        }
        .resolve()
        .expect("default scenario is valid")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidScenario(m));
        let v = self.grid.violations();
        if !v.is_empty() {
            return bad(v.join("; "));
        }
        if !(self.d_m.is_finite() && self.d_m > 0.0) {
            return bad(format!("d_m must be > 0 (got {})", self.d_m));
        }
        let n = self.grid.len();
        for (name, list) in [
            ("coeff_los_per_sc", &self.coeff_los_per_sc),
            ("coeff_multipath_per_sc", &self.coeff_multipath_per_sc),
            ("reference_channel_per_sc", &self.reference_channel_per_sc),
        ] {
            if list.len() != n {
                return bad(format!("{name} has {} values, grid has {n}", list.len()));
            }
            if list.iter().any(|z| !(z.re.is_finite() && z.im.is_finite())) {
                return bad(format!("{name} has a non-finite value"));
            }
        }
        if self
            .reference_channel_per_sc
            .iter()
            .any(|z| z.norm() == 0.0)
        {
            return bad("reference_channel_per_sc must be non-zero".into());
        }
        if self
            .snr_db
            .is_some_and(|s| s.is_nan() || s == f64::NEG_INFINITY)
        {
            return bad("snr_db must be finite or +inf".into());
        }
        if self.n_packets == 0 {
            return bad("n_packets must be >= 1".into());
        }
        if !(self.packet_interval_s.is_finite() && self.packet_interval_s > 0.0) {
            return bad("packet_interval_s must be > 0".into());
        }
        if !self.c_db.is_finite() {
            return bad("c_db must be finite".into());
        }
        if !(self.transient_s.is_finite() && self.transient_s >= 0.0) {
            return bad("transient_s must be >= 0".into());
        }
        if !(self.multipath_scale.is_finite() && self.multipath_scale >= 0.0) {
            return bad("multipath_scale must be >= 0".into());
        }
        if self
            .rssi_step_db
            .is_some_and(|s| !(s.is_finite() && s > 0.0))
        {
            return bad("rssi_step_db must be > 0".into());
        }
        Ok(())
    }

    fn noiseless(&self) -> bool {
        self.snr_db.is_none_or(|s| s == f64::INFINITY)
    }

    pub fn n_transient_frames(&self) -> usize {
        (self.transient_s / self.packet_interval_s).ceil() as usize
    }

    /// Copy with a different trace seed, coefficients unchanged.
    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            seed,
            ..self.clone()
        }
    }
}

/// Noiseless material-port response at one subcarrier.
pub fn synth_channel(
    scn: &SimScenario,
    props: DielectricProperties,
    position: SubcarrierPosition,
) -> Result<Complex64> {
    let k = scn.grid.check_position(position)?;
    let f = scn.grid.freq_at(position)?;
    let t = transmission_factor(wavenumbers(props, f), scn.d_m);
    Ok(scn.coeff_los_per_sc[k] * t + scn.coeff_multipath_per_sc[k] * scn.multipath_scale)
}

/// The value per-subcarrier phase adjustment recovers from a noiseless trace:
/// `synth_channel * conj(ref) / |ref|`.
pub fn adjusted_channel(
    scn: &SimScenario,
    props: DielectricProperties,
    position: SubcarrierPosition,
) -> Result<Complex64> {
    let h = synth_channel(scn, props, position)?;
    let r = scn.reference_channel_per_sc[position.zero_based()];
    Ok(h * r.conj() / r.norm())
}

/// Independent trace seed for the `index`-th material of a run.
pub fn material_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Volt-scale CSI the generator used for one frame, before the raw gain.
#[derive(Debug, Clone, PartialEq)]
pub struct VoltFrame {
    pub csi_a: Vec<Complex64>,
    pub csi_b: Vec<Complex64>,
}

fn quantize(x: f64, step: Option<f64>) -> f64 {
    match step {
        Some(s) => (x / s).round() * s,
        None => x,
    }
}

/// Chooses RSSI and AGC values whose derived total power equals `target` as closely as
/// the arithmetic allows.
fn rssi_and_agc(volt: &VoltFrame, target: f64, scn: &SimScenario) -> ([Option<f64>; 3], f64) {
    let n = volt.csi_a.len() as f64;
    let port_db = |csi: &[Complex64]| {
        let p: f64 = csi.iter().map(|z| z.norm_sqr()).sum::<f64>() / n;
        quantize(
            10.0 * p.log10() + NOMINAL_AGC_DB + scn.c_db,
            scn.rssi_step_db,
        )
    };
    let rssi = [Some(port_db(&volt.csi_a)), Some(port_db(&volt.csi_b)), None];
    let linear: f64 = rssi.iter().flatten().map(|r| 10f64.powf(r / 10.0)).sum();
    let mut agc = 10.0 * linear.log10() - scn.c_db - 10.0 * target.log10();
    let power = |agc: f64| total_power(rssi, agc, scn.c_db).unwrap_or(f64::NAN);
    let mut best = (agc, (power(agc) - target).abs());
    for _ in 0..64 {
        let p = power(agc);
        if p == target {
            return (rssi, agc);
        }
        // Larger AGC lowers the derived power.
        agc = if p > target {
            agc.next_up()
        } else {
            agc.next_down()
        };
        let gap = (power(agc) - target).abs();
        if gap < best.1 {
            best = (agc, gap);
        }
    }
    (rssi, best.0)
}

/// Moves the largest volt component by a few ulp so that the CSI power equals the power
/// derived from RSSI/AGC, which makes the rescale factor an exact power of two.
fn match_power(volt: &mut VoltFrame, p: f64) {
    let power = |v: &VoltFrame| csi_power_per_subcarrier(&[&v.csi_a, &v.csi_b]);
    let n = volt.csi_a.len().max(volt.csi_b.len()) as f64;
    let Some((port, k, is_re)) = (0..2)
        .flat_map(|port| {
            (0..volt.csi_a.len()).flat_map(move |k| [(port, k, true), (port, k, false)])
        })
        .max_by(|a, b| {
            component(volt, *a)
                .abs()
                .total_cmp(&component(volt, *b).abs())
        })
    else {
        return;
    };
    let set = |v: &mut VoltFrame, x: f64| {
        let z = if port == 0 {
            &mut v.csi_a[k]
        } else {
            &mut v.csi_b[k]
        };
        if is_re {
            z.re = x
        } else {
            z.im = x
        }
    };
    for _ in 0..4 {
        let (q, x) = (power(volt), component(volt, (port, k, is_re)));
        if q == p || x == 0.0 {
            return;
        }
        set(volt, x + (p - q) * n / (2.0 * x));
    }
    for _ in 0..256 {
        let (q, x) = (power(volt), component(volt, (port, k, is_re)));
        if q == p {
            return;
        }
        let grow = (q < p) == (x > 0.0);
        set(volt, if grow { x.next_up() } else { x.next_down() });
    }
}

fn component(v: &VoltFrame, (port, k, is_re): (usize, usize, bool)) -> f64 {
    let z = if port == 0 { v.csi_a[k] } else { v.csi_b[k] };
    if is_re {
        z.re
    } else {
        z.im
    }
}

fn circular_noise(rng: &mut ChaCha8Rng, n: usize, sd: f64) -> Vec<Complex64> {
    (0..n)
        .map(|_| {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            Complex64::new(re * sd, im * sd)
        })
        .collect()
}

/// Slowly varying complex disturbance for one port during the transient.
#[derive(Debug, Clone, Copy)]
struct Wobble {
    depth: f64,
    swing: f64,
    period_s: f64,
    psi: f64,
}

impl Wobble {
    fn draw(rng: &mut ChaCha8Rng) -> Self {
        Self {
            depth: rng.random_range(0.2..0.6),
            swing: rng.random_range(0.5..1.5),
            period_s: rng.random_range(2.0..6.0),
            psi: rng.random_range(0.0..TAU),
        }
    }

    fn at(&self, t: f64) -> Complex64 {
        let u = TAU * t / self.period_s + self.psi;
        Complex64::from_polar(1.0 + self.depth * u.sin(), self.swing * (0.7 * u).cos())
    }
}

/// Generates a trace and the volt-scale CSI behind every frame.
pub fn synth_trace_with_truth(
    scn: &SimScenario,
    props: DielectricProperties,
) -> Result<(Trace, Vec<VoltFrame>)> {
    scn.validate()?;
    props.validate()?;
    let n = scn.grid.len();
    let h_b: Vec<Complex64> = scn
        .grid
        .positions()
        .map(|p| synth_channel(scn, props, p))
        .collect::<Result<_>>()?;
    let h_a = &scn.reference_channel_per_sc;
    let mean_power = |h: &[Complex64]| h.iter().map(|z| z.norm_sqr()).sum::<f64>() / n as f64;
    let noise_sd = |h: &[Complex64]| match scn.snr_db {
        Some(snr) if !scn.noiseless() => (mean_power(h) / 10f64.powf(snr / 10.0) / 2.0).sqrt(),
        _ => 0.0,
    };
    let (sd_a, sd_b) = (noise_sd(h_a), noise_sd(&h_b));
    if mean_power(&h_b) == 0.0 {
        return Err(Error::InvalidScenario(
            "material port receives no power".into(),
        ));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(scn.seed);
    let wobble = [Wobble::draw(&mut rng), Wobble::draw(&mut rng)];
    let n_transient = scn.n_transient_frames();
    let gain = 2f64.powi(RAW_GAIN_LOG2);
    let mut frames = Vec::with_capacity(n_transient + scn.n_packets);
    let mut volts = Vec::with_capacity(n_transient + scn.n_packets);

    for i in 0..n_transient + scn.n_packets {
        let t = i as f64 * scn.packet_interval_s;
        let rot = Complex64::from_polar(1.0, rng.random_range(0.0..TAU));
        let (wa, wb) = if i < n_transient {
            (wobble[0].at(t), wobble[1].at(t))
        } else {
            (Complex64::new(1.0, 0.0), Complex64::new(1.0, 0.0))
        };
        let noise_a = circular_noise(&mut rng, n, sd_a);
        let noise_b = circular_noise(&mut rng, n, sd_b);
        let mut volt = VoltFrame {
            csi_a: h_a
                .iter()
                .zip(&noise_a)
                .map(|(h, e)| rot * wa * h + e)
                .collect(),
            csi_b: h_b
                .iter()
                .zip(&noise_b)
                .map(|(h, e)| rot * wb * h + e)
                .collect(),
        };
        let target = csi_power_per_subcarrier(&[&volt.csi_a, &volt.csi_b]);
        let (rssi, agc) = rssi_and_agc(&volt, target, scn);
        match_power(&mut volt, total_power(rssi, agc, scn.c_db)?);
        frames.push(CsiFrame {
            t,
            rssi_a: rssi[0],
            rssi_b: rssi[1],
            rssi_c: rssi[2],
            agc,
            csi_a: volt.csi_a.iter().map(|z| z * gain).collect(),
            csi_b: volt.csi_b.iter().map(|z| z * gain).collect(),
        });
        volts.push(volt);
    }

    let trace = Trace {
        grid: scn.grid.clone(),
        d_m: scn.d_m,
        material_label: format!("eps_r={} sigma={}", props.eps_r, props.sigma),
        frames,
        packet_interval_s: scn.packet_interval_s,
    };
    Ok((trace, volts))
}

pub fn synth_trace(scn: &SimScenario, props: DielectricProperties) -> Result<Trace> {
    synth_trace_with_truth(scn, props).map(|(t, _)| t)
}
