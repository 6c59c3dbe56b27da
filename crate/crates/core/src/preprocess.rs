//! Raw frames to one averaged, phase-synchronised channel value per subcarrier.
//!
//! 1. Volt rescaling: RSSI and AGC give the total received power, which fixes the
//!    scale `alpha` of the relative CSI units.
//! 2. Phase adjustment: transmitter and receiver clocks are not locked, so every packet
//!    carries a random common phase. Both receive ports share the clock, so rotating
//!    each frame by `exp(-j arg H_ref)` leaves the differential phase of the material
//!    port.
//! 3. Time averaging over a window that skips the start-up transient.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trace_model::{CsiFrame, SubcarrierGrid, SubcarrierPosition, Trace};

pub const DEFAULT_C_DB: f64 = 44.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Port {
    A,
    B,
}

impl Port {
    pub fn other(self) -> Port {
        match self {
            Port::A => Port::B,
            Port::B => Port::A,
        }
    }

    pub fn of(self, frame: &CsiFrame) -> &[Complex64] {
        match self {
            Port::A => &frame.csi_a,
            Port::B => &frame.csi_b,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RescaleConfig {
    /// Internal reference constant in dB.
    pub c_db: f64,
    /// Port whose channel anchors the phase; the other port carries the material.
    pub reference_port: Port,
}

impl Default for RescaleConfig {
    fn default() -> Self {
        Self {
            c_db: DEFAULT_C_DB,
            reference_port: Port::A,
        }
    }
}

/// Which reference sample a subcarrier is rotated against.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum PhaseAnchor {
    /// Each subcarrier uses the reference port's phase at the same subcarrier.
    #[default]
    PerSubcarrier,
    /// Every subcarrier uses the reference phase at one position.
    Single(SubcarrierPosition),
}

/// Closed time window `[start, end]` in seconds from trace start.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub start: f64,
    pub end: f64,
}

impl Window {
    pub fn new(start: f64, end: f64) -> Result<Self> {
        if !(start.is_finite() && end.is_finite() && start < end) {
            return Err(Error::InvalidWindow { start, end });
        }
        Ok(Self { start, end })
    }

    pub fn contains(&self, t: f64) -> bool {
        self.start <= t && t <= self.end
    }
}

impl Default for Window {
    fn default() -> Self {
        Self {
            start: 10.0,
            end: 20.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PreprocessConfig {
    pub rescale: RescaleConfig,
    pub anchor: PhaseAnchor,
    pub window: Window,
}

/// Time-averaged, phase-adjusted material-port response in volts.
#[derive(Debug, Clone, PartialEq)]
pub struct AveragedResponse {
    pub grid: SubcarrierGrid,
    pub h_r2_adj: Vec<Complex64>,
    pub n_frames_used: usize,
    pub window_s: (f64, f64),
}

/// Total received power in linear units from per-port RSSI, AGC and the reference constant.
/// Missing ports contribute zero linear power.
pub fn total_power(rssi: [Option<f64>; 3], agc: f64, c_db: f64) -> Result<f64> {
    let present: Vec<f64> = rssi.into_iter().flatten().collect();
    if present.is_empty() {
        return Err(Error::NoRssi);
    }
    if present
        .iter()
        .chain([agc, c_db].iter())
        .any(|v| !v.is_finite())
    {
        return Err(Error::NonFinite("rssi/agc".into()));
    }
    let linear_sum: f64 = present.iter().map(|r| 10f64.powf(r / 10.0)).sum();
    let db = 10.0 * linear_sum.log10() - agc - c_db;
    Ok(10f64.powf(db / 10.0))
}

/// Sum of `|z|^2` over one port.
pub fn port_power_sum(csi: &[Complex64]) -> f64 {
    csi.iter().map(|z| z.norm_sqr()).sum()
}

/// Mean per-subcarrier power of all ports, the denominator of the rescale factor.
pub fn csi_power_per_subcarrier(ports: &[&[Complex64]]) -> f64 {
    let n = ports.iter().map(|p| p.len()).max().unwrap_or(0);
    if n == 0 {
        return 0.0;
    }
    let total: f64 = ports.iter().map(|p| port_power_sum(p)).sum();
    total / n as f64
}

/// `alpha = p_total / (sum over ports of sum |csi|^2 / n_subcarriers)`.
pub fn rescale_factor(p_total: f64, ports: &[&[Complex64]]) -> Result<f64> {
    let denom = csi_power_per_subcarrier(ports);
    if !denom.is_finite() {
        return Err(Error::NonFinite("csi".into()));
    }
    if denom <= 0.0 {
        return Err(Error::ZeroCsiPower);
    }
    Ok(p_total / denom)
}

/// Multiplies both ports by `sqrt(alpha)` so the CSI is in volts.
pub fn rescale_frame(frame: &CsiFrame, cfg: &RescaleConfig) -> Result<CsiFrame> {
    let p = total_power(frame.rssi(), frame.agc, cfg.c_db)?;
    let alpha = rescale_factor(p, &[&frame.csi_a, &frame.csi_b])?;
    let g = alpha.sqrt();
    let mut out = frame.clone();
    out.csi_a
        .iter_mut()
        .chain(out.csi_b.iter_mut())
        .for_each(|z| *z *= g);
    Ok(out)
}

fn unit_conj(z: Complex64) -> (Complex64, f64) {
    let m = z.norm();
    (Complex64::new(z.re / m, -(z.im / m)), m)
}

fn ref_and_material(
    frame: &mut CsiFrame,
    reference: Port,
) -> (&mut Vec<Complex64>, &mut Vec<Complex64>) {
    match reference {
        Port::A => (&mut frame.csi_a, &mut frame.csi_b),
        Port::B => (&mut frame.csi_b, &mut frame.csi_a),
    }
}

/// Rotates both ports by `exp(-j theta_ref)`, with `theta_ref` the reference-port phase at
/// `position`. Afterwards the reference sample at `position` is real and non-negative.
pub fn phase_adjust(
    frame: &CsiFrame,
    position: SubcarrierPosition,
    cfg: &RescaleConfig,
) -> Result<CsiFrame> {
    let k = position.zero_based();
    let reference = cfg.reference_port.of(frame);
    let &z_ref = reference.get(k).ok_or(Error::PositionOutOfRange {
        position: position.get(),
        len: reference.len(),
    })?;
    if z_ref.norm() == 0.0 {
        return Err(Error::ZeroReference(position.get()));
    }
    let (rot, m) = unit_conj(z_ref);
    let mut out = frame.clone();
    {
        let (ref_port, mat_port) = ref_and_material(&mut out, cfg.reference_port);
        ref_port
            .iter_mut()
            .chain(mat_port.iter_mut())
            .for_each(|z| *z *= rot);
        ref_port[k] = Complex64::new(m, 0.0);
    }
    Ok(out)
}

/// Rotates every subcarrier by the reference phase at the same subcarrier.
pub fn phase_adjust_per_subcarrier(frame: &CsiFrame, cfg: &RescaleConfig) -> Result<CsiFrame> {
    let mut out = frame.clone();
    let (ref_port, mat_port) = ref_and_material(&mut out, cfg.reference_port);
    if ref_port.len() != mat_port.len() {
        return Err(Error::CsiLengthMismatch {
            frame: 0,
            port: "material",
            expected: ref_port.len(),
            got: mat_port.len(),
        });
    }
    for (k, (r, z)) in ref_port.iter_mut().zip(mat_port.iter_mut()).enumerate() {
        if r.norm() == 0.0 {
            return Err(Error::ZeroReference(k + 1));
        }
        let (rot, m) = unit_conj(*r);
        *z *= rot;
        *r = Complex64::new(m, 0.0);
    }
    Ok(out)
}

pub fn adjust_frame(frame: &CsiFrame, cfg: &PreprocessConfig) -> Result<CsiFrame> {
    match cfg.anchor {
        PhaseAnchor::PerSubcarrier => phase_adjust_per_subcarrier(frame, &cfg.rescale),
        PhaseAnchor::Single(pos) => phase_adjust(frame, pos, &cfg.rescale),
    }
}

/// Compensated running sum of deviations from a pivot. Averaging a constant sequence
/// returns the constant exactly.
#[derive(Debug, Clone, Copy)]
struct ShiftedMean {
    pivot: f64,
    sum: f64,
    comp: f64,
    n: usize,
}

impl ShiftedMean {
    fn new(pivot: f64) -> Self {
        Self {
            pivot,
            sum: 0.0,
            comp: 0.0,
            n: 0,
        }
    }

    fn push(&mut self, x: f64) {
        let v = x - self.pivot;
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.comp += (self.sum - t) + v;
        } else {
            self.comp += (v - t) + self.sum;
        }
        self.sum = t;
        self.n += 1;
    }

    fn mean(&self) -> f64 {
        self.pivot + (self.sum + self.comp) / self.n as f64
    }
}

/// Complex mean of one port over the frames whose timestamp lies in the window.
/// Frames must already be rescaled and phase-adjusted.
pub fn average_port(
    frames: &[CsiFrame],
    grid: &SubcarrierGrid,
    window: Window,
    port: Port,
) -> Result<AveragedResponse> {
    let mut selected = frames.iter().filter(|f| window.contains(f.t)).peekable();
    let first = match selected.peek() {
        Some(f) => port.of(f),
        None => {
            return Err(Error::EmptyWindow {
                start: window.start,
                end: window.end,
            })
        }
    };
    let n = grid.len();
    if first.len() != n {
        return Err(Error::CsiLengthMismatch {
            frame: 0,
            port: "material",
            expected: n,
            got: first.len(),
        });
    }
    let mut acc: Vec<(ShiftedMean, ShiftedMean)> = first
        .iter()
        .map(|z| (ShiftedMean::new(z.re), ShiftedMean::new(z.im)))
        .collect();
    let mut used = 0;
    for (i, f) in selected.enumerate() {
        let values = port.of(f);
        if values.len() != n {
            return Err(Error::CsiLengthMismatch {
                frame: i,
                port: "material",
                expected: n,
                got: values.len(),
            });
        }
        for ((re, im), z) in acc.iter_mut().zip(values) {
            re.push(z.re);
            im.push(z.im);
        }
        used += 1;
    }
    let h: Vec<Complex64> = acc
        .iter()
        .map(|(re, im)| Complex64::new(re.mean(), im.mean()))
        .collect();
    if h.iter().any(|z| !(z.re.is_finite() && z.im.is_finite())) {
        return Err(Error::NonFinite("averaged response".into()));
    }
    Ok(AveragedResponse {
        grid: grid.clone(),
        h_r2_adj: h,
        n_frames_used: used,
        window_s: (window.start, window.end),
    })
}

/// Complex mean of `csi_b` over the window.
pub fn trim_and_average(
    frames: &[CsiFrame],
    grid: &SubcarrierGrid,
    window: Window,
) -> Result<AveragedResponse> {
    average_port(frames, grid, window, Port::B)
}

/// Channel value and frequency at a 1-based position.
pub fn select_subcarrier(
    avg: &AveragedResponse,
    position: SubcarrierPosition,
) -> Result<(Complex64, f64)> {
    let k = avg.grid.check_position(position)?;
    Ok((avg.h_r2_adj[k], avg.grid.freq_at(position)?))
}

/// Full preprocessing of a trace: window selection, rescale, phase adjustment, averaging.
pub fn preprocess_trace(trace: &Trace, cfg: &PreprocessConfig) -> Result<AveragedResponse> {
    let adjusted = trace
        .frames
        .iter()
        .filter(|f| cfg.window.contains(f.t))
        .map(|f| rescale_frame(f, &cfg.rescale).and_then(|f| adjust_frame(&f, cfg)))
        .collect::<Result<Vec<_>>>()?;
    average_port(
        &adjusted,
        &trace.grid,
        cfg.window,
        cfg.rescale.reference_port.other(),
    )
}
