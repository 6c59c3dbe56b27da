//! Trace data model and the JSONL trace format.
//!
//! A trace file is line oriented. Line 1 is a header object describing the subcarrier
//! grid and the measurement geometry; every further line is one packet:
//!
//! ```text
//! {"version":1,"center_freq_hz":5.32e9,"bandwidth_hz":2e7,"spacing_hz":312500.0,"subcarrier_indices":[-28,...],"d_m":0.002,"material_label":"water","packet_interval_s":0.05}
//! {"t":0.0,"rssi_a":41.5,"rssi_b":40.0,"agc":27.3,"csi_a":[[re,im],...],"csi_b":[[re,im],...]}
//! ```
//!
//! Absent RSSI ports are omitted on write and may be omitted or `null` on read.

use std::fmt;
use std::io::{BufRead, Write};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::complex_pair;
use crate::error::{Error, Result};

pub const TRACE_FORMAT_VERSION: u32 = 1;

/// 1-based position of a subcarrier in a grid's index list.
///
/// Position 16 on the default grid is index +1, the carrier adjacent to the centre.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "usize", into = "usize")]
pub struct SubcarrierPosition(usize);

impl SubcarrierPosition {
    pub const CENTER_ADJACENT: SubcarrierPosition = SubcarrierPosition(16);

    pub fn new(position: usize) -> Option<Self> {
        (position >= 1).then_some(Self(position))
    }

    pub fn get(self) -> usize {
        self.0
    }

    pub fn zero_based(self) -> usize {
        self.0 - 1
    }

    /// All positions of a grid with `len` subcarriers.
    pub fn all(len: usize) -> impl Iterator<Item = SubcarrierPosition> {
        (1..=len).map(SubcarrierPosition)
    }
}

impl TryFrom<usize> for SubcarrierPosition {
    type Error = String;

    fn try_from(value: usize) -> std::result::Result<Self, Self::Error> {
        Self::new(value).ok_or_else(|| "subcarrier positions are 1-based".to_string())
    }
}

impl From<SubcarrierPosition> for usize {
    fn from(p: SubcarrierPosition) -> usize {
        p.0
    }
}

impl fmt::Display for SubcarrierPosition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// OFDM subcarrier layout reported by the receiver.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubcarrierGrid {
    pub center_freq_hz: f64,
    pub bandwidth_hz: f64,
    pub subcarrier_indices: Vec<i32>,
    pub spacing_hz: f64,
}

impl Default for SubcarrierGrid {
    fn default() -> Self {
        Self::wifi_20mhz_30(5.32e9)
    }
}

impl SubcarrierGrid {
    /// 20 MHz channel with the usual 30-tone reporting subgroup
    /// `{-28,-26,...,-2,-1,1,3,...,27,28}` at 312.5 kHz spacing.
    pub fn wifi_20mhz_30(center_freq_hz: f64) -> Self {
        let mut indices: Vec<i32> = (-28..=-2).step_by(2).collect();
        indices.push(-1);
        indices.extend((1..=27).step_by(2));
        indices.push(28);
        Self {
            center_freq_hz,
            bandwidth_hz: 20e6,
            subcarrier_indices: indices,
            spacing_hz: 312.5e3,
        }
    }

    pub fn len(&self) -> usize {
        self.subcarrier_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subcarrier_indices.is_empty()
    }

    pub fn check_position(&self, position: SubcarrierPosition) -> Result<usize> {
        if position.get() > self.len() {
            return Err(Error::PositionOutOfRange {
                position: position.get(),
                len: self.len(),
            });
        }
        Ok(position.zero_based())
    }

    /// Frequency of the subcarrier at a 1-based position.
    pub fn freq_at(&self, position: SubcarrierPosition) -> Result<f64> {
        let i = self.check_position(position)?;
        Ok(self.freq_of_index(self.subcarrier_indices[i]))
    }

    pub fn freq_of_index(&self, index: i32) -> f64 {
        self.center_freq_hz + f64::from(index) * self.spacing_hz
    }

    pub fn positions(&self) -> impl Iterator<Item = SubcarrierPosition> {
        SubcarrierPosition::all(self.len())
    }

    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !(self.center_freq_hz.is_finite() && self.center_freq_hz > 0.0) {
            out.push("grid.center_freq_hz must be finite and > 0".to_string());
        }
        if !(self.bandwidth_hz.is_finite() && self.bandwidth_hz > 0.0) {
            out.push("grid.bandwidth_hz must be finite and > 0".to_string());
        }
        if !(self.spacing_hz.is_finite() && self.spacing_hz > 0.0) {
            out.push("grid.spacing_hz must be > 0".to_string());
        }
        if self.subcarrier_indices.is_empty() {
            out.push("grid.subcarrier_indices must be non-empty".to_string());
        }
        for (i, w) in self.subcarrier_indices.windows(2).enumerate() {
            if w[1] <= w[0] {
                out.push(format!(
                    "grid.subcarrier_indices[{}] not strictly increasing",
                    i + 1
                ));
            }
        }
        if out.is_empty() {
            let half = self.bandwidth_hz / 2.0;
            for (i, &idx) in self.subcarrier_indices.iter().enumerate() {
                let f = self.freq_of_index(idx);
                if (f - self.center_freq_hz).abs() > half {
                    out.push(format!(
                        "grid.subcarrier_indices[{i}] lies outside the channel"
                    ));
                }
            }
        }
        out
    }
}

/// Relative permittivity and conductivity of a medium.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DielectricProperties {
    pub eps_r: f64,
    /// S/m
    pub sigma: f64,
}

impl DielectricProperties {
    /// Checked constructor. `eps_r` in (0, 1) is accepted but logged as unphysical.
    pub fn new(eps_r: f64, sigma: f64) -> Result<Self> {
        let p = Self { eps_r, sigma };
        p.validate()?;
        Ok(p)
    }

    pub const fn vacuum() -> Self {
        Self {
            eps_r: 1.0,
            sigma: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eps_r.is_finite() && self.eps_r > 0.0) {
            return Err(Error::InvalidDielectric(format!(
                "eps_r must be > 0 (got {})",
                self.eps_r
            )));
        }
        if !(self.sigma.is_finite() && self.sigma >= 0.0) {
            return Err(Error::InvalidDielectric(format!(
                "sigma must be >= 0 (got {})",
                self.sigma
            )));
        }
        if self.eps_r < 1.0 {
            log::warn!(
                "eps_r = {} is below 1 and not physical for passive media",
                self.eps_r
            );
        }
        Ok(())
    }
}

/// One received packet: per-port channel responses and power bookkeeping.
///
/// `csi_a` is the reference path (Tx to Rx1), `csi_b` the path through the material.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsiFrame {
    pub t: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rssi_a: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rssi_b: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rssi_c: Option<f64>,
    pub agc: f64,
    #[serde(with = "complex_pair::vec")]
    pub csi_a: Vec<Complex64>,
    #[serde(with = "complex_pair::vec")]
    pub csi_b: Vec<Complex64>,
}

impl CsiFrame {
    pub fn rssi(&self) -> [Option<f64>; 3] {
        [self.rssi_a, self.rssi_b, self.rssi_c]
    }

    fn first_non_finite(&self) -> Option<String> {
        if !self.t.is_finite() {
            return Some("t".into());
        }
        if !self.agc.is_finite() {
            return Some("agc".into());
        }
        for (name, r) in [
            ("rssi_a", self.rssi_a),
            ("rssi_b", self.rssi_b),
            ("rssi_c", self.rssi_c),
        ] {
            if r.is_some_and(|v| !v.is_finite()) {
                return Some(name.into());
            }
        }
        for (name, port) in [("csi_a", &self.csi_a), ("csi_b", &self.csi_b)] {
            if let Some(k) = port
                .iter()
                .position(|z| !(z.re.is_finite() && z.im.is_finite()))
            {
                return Some(format!("{name}[{k}]"));
            }
        }
        None
    }
}

/// A recorded measurement of one material.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub grid: SubcarrierGrid,
    /// Material thickness in metres.
    pub d_m: f64,
    pub material_label: String,
    pub frames: Vec<CsiFrame>,
    pub packet_interval_s: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    version: u32,
    center_freq_hz: f64,
    bandwidth_hz: f64,
    spacing_hz: f64,
    subcarrier_indices: Vec<i32>,
    d_m: f64,
    material_label: String,
    packet_interval_s: f64,
}

/// Lists every invariant violation of a trace, naming the field and frame index.
/// An empty list means the trace is valid.
pub fn validate_trace(trace: &Trace) -> Vec<String> {
    let mut out = trace.grid.violations();
    if !(trace.d_m.is_finite() && trace.d_m > 0.0) {
        out.push("d_m must be > 0".to_string());
    }
    if !(trace.packet_interval_s.is_finite() && trace.packet_interval_s > 0.0) {
        out.push("packet_interval_s must be > 0".to_string());
    }
    if trace.frames.is_empty() {
        out.push("frames must be non-empty".to_string());
    }
    let n = trace.grid.len();
    let mut prev_t: Option<f64> = None;
    for (i, f) in trace.frames.iter().enumerate() {
        if f.csi_a.len() != n {
            out.push(format!(
                "frames[{i}].csi_a length {} != grid length {n}",
                f.csi_a.len()
            ));
        }
        if f.csi_b.len() != n {
            out.push(format!(
                "frames[{i}].csi_b length {} != grid length {n}",
                f.csi_b.len()
            ));
        }
        if let Some(field) = f.first_non_finite() {
            out.push(format!("frames[{i}].{field} is not finite"));
        }
        if f.t < 0.0 {
            out.push(format!("frames[{i}].t is negative"));
        }
        if let Some(p) = prev_t {
            if f.t < p {
                out.push(format!("frames[{i}].t decreases"));
            }
        }
        prev_t = Some(f.t);
        if f.rssi().iter().all(Option::is_none) {
            out.push(format!("frames[{i}] has no rssi"));
        }
    }
    out
}

/// Reads a JSONL trace and validates it.
pub fn parse_trace<R: BufRead>(reader: R) -> Result<Trace> {
    let mut lines = reader
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l))
        .filter(|(_, l)| l.as_ref().map_or(true, |s| !s.trim().is_empty()));

    let (line_no, header_line) = lines.next().ok_or(Error::MissingHeader)?;
    let header_line = header_line?;
    let value: serde_json::Value =
        serde_json::from_str(&header_line).map_err(|e| Error::MalformedLine {
            line: line_no,
            msg: e.to_string(),
        })?;
    if value.get("version").is_none() || value.get("subcarrier_indices").is_none() {
        return Err(Error::MissingHeader);
    }
    let header: Header = serde_json::from_value(value).map_err(|e| Error::MalformedLine {
        line: line_no,
        msg: e.to_string(),
    })?;
    if header.version != TRACE_FORMAT_VERSION {
        return Err(Error::UnsupportedVersion(header.version));
    }
    let grid = SubcarrierGrid {
        center_freq_hz: header.center_freq_hz,
        bandwidth_hz: header.bandwidth_hz,
        subcarrier_indices: header.subcarrier_indices,
        spacing_hz: header.spacing_hz,
    };
    let n = grid.len();

    let mut frames = Vec::new();
    for (line_no, line) in lines {
        let line = line?;
        let frame: CsiFrame = serde_json::from_str(&line).map_err(|e| Error::MalformedLine {
            line: line_no,
            msg: e.to_string(),
        })?;
        for (port, got) in [("csi_a", frame.csi_a.len()), ("csi_b", frame.csi_b.len())] {
            if got != n {
                return Err(Error::CsiLengthMismatch {
                    frame: frames.len(),
                    port,
                    expected: n,
                    got,
                });
            }
        }
        frames.push(frame);
    }

    let trace = Trace {
        grid,
        d_m: header.d_m,
        material_label: header.material_label,
        frames,
        packet_interval_s: header.packet_interval_s,
    };
    let violations = validate_trace(&trace);
    if !violations.is_empty() {
        return Err(Error::InvalidTrace(violations));
    }
    Ok(trace)
}

pub fn parse_trace_str(s: &str) -> Result<Trace> {
    parse_trace(s.as_bytes())
}

/// Writes a trace as JSONL. Output is deterministic; non-finite samples are refused.
pub fn write_trace<W: Write>(trace: &Trace, mut w: W) -> Result<()> {
    for (i, f) in trace.frames.iter().enumerate() {
        if let Some(field) = f.first_non_finite() {
            return Err(Error::NonFinite(format!("frames[{i}].{field}")));
        }
    }
    let violations = validate_trace(trace);
    if !violations.is_empty() {
        return Err(Error::InvalidTrace(violations));
    }
    let header = Header {
        version: TRACE_FORMAT_VERSION,
        center_freq_hz: trace.grid.center_freq_hz,
        bandwidth_hz: trace.grid.bandwidth_hz,
        spacing_hz: trace.grid.spacing_hz,
        subcarrier_indices: trace.grid.subcarrier_indices.clone(),
        d_m: trace.d_m,
        material_label: trace.material_label.clone(),
        packet_interval_s: trace.packet_interval_s,
    };
    serde_json::to_writer(&mut w, &header)?;
    w.write_all(b"\n")?;
    for f in &trace.frames {
        serde_json::to_writer(&mut w, f)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_trace_string(trace: &Trace) -> Result<String> {
    let mut buf = Vec::new();
    write_trace(trace, &mut buf)?;
    Ok(String::from_utf8(buf).expect("serde_json emits utf-8"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame(t: f64, n: usize) -> CsiFrame {
        CsiFrame {
            t,
            rssi_a: Some(40.0),
            rssi_b: Some(38.5),
            rssi_c: None,
            agc: 30.0,
            csi_a: (0..n).map(|k| Complex64::new(k as f64, 1.0)).collect(),
            csi_b: (0..n)
                .map(|k| Complex64::new(-1.0, k as f64 * 0.5))
                .collect(),
        }
    }

    fn trace(frames: Vec<CsiFrame>) -> Trace {
        Trace {
            grid: SubcarrierGrid::default(),
            d_m: 0.002,
            material_label: "water".into(),
            frames,
            packet_interval_s: 0.05,
        }
    }

    #[test]
    fn default_grid_layout() {
        let g = SubcarrierGrid::default();
        assert_eq!(g.len(), 30);
        assert!(g.violations().is_empty());
        assert_eq!(g.subcarrier_indices[14], -1);
        assert_eq!(g.subcarrier_indices[15], 1);
        assert_eq!(
            g.freq_at(SubcarrierPosition::CENTER_ADJACENT).unwrap(),
            5.32e9 + 312.5e3
        );
        assert_eq!(
            g.freq_at(SubcarrierPosition::new(1).unwrap()).unwrap(),
            5.32e9 - 8.75e6
        );
        assert!(g.freq_at(SubcarrierPosition::new(31).unwrap()).is_err());
    }

    #[test]
    fn positions_are_one_based() {
        assert!(SubcarrierPosition::new(0).is_none());
        assert_eq!(SubcarrierPosition::new(1).unwrap().zero_based(), 0);
        assert!(serde_json::from_str::<SubcarrierPosition>("0").is_err());
    }

    #[test]
    fn minimal_trace_parses() {
        let t = trace(vec![frame(0.0, 30)]);
        let s = write_trace_string(&t).unwrap();
        assert_eq!(s.lines().count(), 2);
        let back = parse_trace_str(&s).unwrap();
        assert_eq!(back.frames.len(), 1);
        assert_eq!(back, t);
    }

    #[test]
    fn short_csi_is_rejected() {
        let good = write_trace_string(&trace(vec![frame(0.0, 30)])).unwrap();
        let header = good.lines().next().unwrap();
        let bad = serde_json::to_string(&frame(0.0, 29)).unwrap();
        let err = parse_trace_str(&format!("{header}\n{bad}\n")).unwrap_err();
        assert!(err.to_string().contains("csi length mismatch"), "{err}");
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let good = write_trace_string(&trace(vec![frame(0.0, 30)])).unwrap();
        let header = good.lines().next().unwrap();
        let err = parse_trace_str(&format!("{header}\n{{\"t\": oops}}\n")).unwrap_err();
        assert!(matches!(err, Error::MalformedLine { line: 2, .. }), "{err}");
    }

    #[test]
    fn missing_header_is_rejected() {
        assert_eq!(parse_trace_str("").unwrap_err(), Error::MissingHeader);
        let f = serde_json::to_string(&frame(0.0, 30)).unwrap();
        assert_eq!(parse_trace_str(&f).unwrap_err(), Error::MissingHeader);
    }

    #[test]
    fn absent_rssi_may_be_null() {
        let good = write_trace_string(&trace(vec![frame(0.0, 30)])).unwrap();
        assert!(!good.contains("rssi_c"));
        let patched = good.replace("\"rssi_b\":38.5", "\"rssi_b\":null");
        let t = parse_trace_str(&patched).unwrap();
        assert_eq!(t.frames[0].rssi_b, None);
    }

    #[test]
    fn nan_is_refused_on_write() {
        let mut t = trace(vec![frame(0.0, 30)]);
        t.frames[0].csi_b[3].im = f64::NAN;
        let err = write_trace_string(&t).unwrap_err();
        assert!(err.to_string().contains("non-finite sample"), "{err}");
    }

    #[test]
    fn empty_frames_rejected() {
        let t = trace(vec![]);
        assert!(validate_trace(&t).contains(&"frames must be non-empty".to_string()));
        assert!(write_trace_string(&t).is_err());
    }

    #[test]
    fn validation_messages() {
        let valid = trace((0..8).map(|i| frame(i as f64 * 0.05, 30)).collect());
        assert!(validate_trace(&valid).is_empty());

        let mut t = valid.clone();
        t.frames[5].t = 0.0;
        assert_eq!(
            validate_trace(&t),
            vec!["frames[5].t decreases".to_string()]
        );

        let mut t = valid.clone();
        t.d_m = 0.0;
        assert_eq!(validate_trace(&t), vec!["d_m must be > 0".to_string()]);

        let mut t = valid.clone();
        t.frames[2].rssi_a = None;
        t.frames[2].rssi_b = None;
        assert_eq!(
            validate_trace(&t),
            vec!["frames[2] has no rssi".to_string()]
        );

        let mut t = valid;
        t.grid.subcarrier_indices.swap(0, 1);
        assert!(validate_trace(&t)[0].contains("not strictly increasing"));
    }

    #[test]
    fn dielectric_checks() {
        assert!(DielectricProperties::new(73.38, 6.41).is_ok());
        assert!(DielectricProperties::new(0.5, 0.0).is_ok());
        assert!(DielectricProperties::new(0.0, 1.0).is_err());
        assert!(DielectricProperties::new(2.0, -0.1).is_err());
        assert!(DielectricProperties::new(f64::NAN, 0.0).is_err());
    }
}
