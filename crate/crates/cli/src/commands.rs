use std::fmt;
use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use csi_dielectric::calibration::{fit_per_subcarrier, CalibrationProfile, KnownResponse};
use csi_dielectric::estimator::{
    estimate_per_subcarrier, read_report_csv, relative_errors, write_report_csv, EstimateRow,
    UNDEFINED_CELL,
};
use csi_dielectric::materials::{self, Material, ETHANOL_WATER};
use csi_dielectric::preprocess::{
    preprocess_trace, AveragedResponse, PreprocessConfig, RescaleConfig,
};
use csi_dielectric::simulator::{material_seed, synth_trace, ScenarioConfig};
use csi_dielectric::trace_model::{parse_trace, write_trace};
use csi_dielectric::{DielectricProperties, SubcarrierGrid, SubcarrierPosition, Trace};

use crate::manifest::{Manifest, ManifestEntry, Role};
use crate::{CalibrateArgs, EstimateArgs, EvaluateArgs, MaterialSet, Processing, SimulateArgs};

/// A required input is missing. Exits with status 2.
#[derive(Debug)]
pub struct NotFound(pub String);

impl fmt::Display for NotFound {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for NotFound {}

fn require_file(path: &Path, what: &str) -> Result<()> {
    if !path.is_file() {
        return Err(NotFound(format!("{what} not found: {}", path.display())).into());
    }
    Ok(())
}

/// File stem for a material label, e.g. `baijiu 46%` -> `baijiu-46pct`.
fn slug(label: &str) -> String {
    let mut out = String::new();
    for c in label.to_lowercase().replace('%', "pct").chars() {
        if c.is_ascii_alphanumeric() || c == '.' {
            out.push(c);
        } else if !out.ends_with('-') {
            out.push('-');
        }
    }
    out.trim_matches('-').to_string()
}

fn material_roles(set: MaterialSet) -> Vec<(Material, Role)> {
    let cal = ETHANOL_WATER.iter().map(|m| (*m, Role::Calibration));
    match set {
        MaterialSet::Mixtures => cal.collect(),
        MaterialSet::Ethanol => cal
            .chain([materials::BAIJIU_46, materials::BAIJIU_56].map(|m| (m, Role::Test)))
            .collect(),
        MaterialSet::Validation => cal
            .chain(
                [materials::BAIJIU_46, materials::BAIJIU_56]
                    .into_iter()
                    .chain(materials::OTHER_LIQUIDS)
                    .map(|m| (m, Role::Test)),
            )
            .collect(),
    }
}

pub fn simulate(args: &SimulateArgs) -> Result<()> {
    require_file(&args.scenario, "scenario")?;
    let text = fs::read_to_string(&args.scenario)
        .with_context(|| format!("reading {}", args.scenario.display()))?;
    let mut cfg = ScenarioConfig::from_json_str(&text)
        .with_context(|| format!("parsing {}", args.scenario.display()))?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let scn = cfg.resolve()?;
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;

    let mut entries = Vec::new();
    for (i, (m, role)) in material_roles(args.material_set).into_iter().enumerate() {
        let mut trace = synth_trace(&scn.with_seed(material_seed(scn.seed, i as u64)), m.props())?;
        trace.material_label = m.label.to_string();
        let file = PathBuf::from(format!("{}.jsonl", slug(m.label)));
        let path = args.out.join(&file);
        let w = BufWriter::new(
            File::create(&path).with_context(|| format!("creating {}", path.display()))?,
        );
        write_trace(&trace, w).with_context(|| format!("writing {}", path.display()))?;
        entries.push(ManifestEntry {
            label: m.label.to_string(),
            file: Some(file),
            eps_r: m.eps_r,
            sigma: m.sigma,
            role,
        });
    }
    let manifest = Manifest::new(Some(scn.seed), entries);
    let path = args.out.join("manifest.json");
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
    println!(
        "wrote {} traces and {}",
        manifest.materials.len(),
        path.display()
    );
    Ok(())
}

/// Expands directories into their `*.jsonl` files, sorted by name.
fn expand_trace_paths(paths: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for p in paths {
        if p.is_dir() {
            let mut files: Vec<PathBuf> = fs::read_dir(p)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| f.extension().is_some_and(|x| x == "jsonl"))
                .collect();
            files.sort();
            out.extend(files);
        } else {
            require_file(p, "trace")?;
            out.push(p.clone());
        }
    }
    Ok(out)
}

fn load_trace(path: &Path) -> Result<Trace> {
    require_file(path, "trace")?;
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    parse_trace(BufReader::new(f)).with_context(|| format!("reading trace {}", path.display()))
}

fn preprocess_config(p: &Processing) -> PreprocessConfig {
    PreprocessConfig {
        rescale: RescaleConfig {
            c_db: p.c_db,
            ..RescaleConfig::default()
        },
        window: p.window,
        ..PreprocessConfig::default()
    }
}

fn positions(p: &Processing, grid: &SubcarrierGrid) -> Result<Vec<SubcarrierPosition>> {
    if p.all_subcarriers {
        return Ok(grid.positions().collect());
    }
    let pos = SubcarrierPosition::new(p.subcarrier)
        .context("--subcarrier is 1-based and must be >= 1")?;
    grid.check_position(pos)?;
    Ok(vec![pos])
}

fn profile_path(dir: &Path, pos: SubcarrierPosition) -> PathBuf {
    dir.join(format!("profile_sc{pos}.json"))
}

pub fn calibrate(args: &CalibrateArgs) -> Result<()> {
    require_file(&args.manifest, "manifest")?;
    let manifest = Manifest::load(&args.manifest)?;
    let files = if args.traces.is_empty() {
        manifest.files(Role::Calibration)
    } else {
        expand_trace_paths(&args.traces)?
    };
    let cfg = preprocess_config(&args.processing);
    let mut labelled: Vec<(Trace, AveragedResponse, DielectricProperties)> = Vec::new();
    for f in &files {
        let trace = load_trace(f)?;
        let truth = manifest.truth(&trace.material_label).with_context(|| {
            format!(
                "no truth value for material {:?} in the manifest",
                trace.material_label
            )
        })?;
        let avg = preprocess_trace(&trace, &cfg)
            .with_context(|| format!("preprocessing {}", f.display()))?;
        labelled.push((trace, avg, truth));
    }
    let known: Vec<KnownResponse> = labelled
        .iter()
        .map(|(t, avg, truth)| KnownResponse {
            response: avg,
            known: *truth,
            d_m: t.d_m,
        })
        .collect();
    let grid = labelled
        .first()
        .map(|(t, _, _)| t.grid.clone())
        .unwrap_or_default();
    let profiles = fit_per_subcarrier(&known, &positions(&args.processing, &grid)?)?;

    fs::create_dir_all(&args.profile_dir)
        .with_context(|| format!("creating {}", args.profile_dir.display()))?;
    for p in &profiles {
        let pos = p
            .subcarrier_position
            .expect("fitted profiles carry their position");
        let path = profile_path(&args.profile_dir, pos);
        let w = BufWriter::new(
            File::create(&path).with_context(|| format!("creating {}", path.display()))?,
        );
        p.to_json_writer(w)?;
        println!(
            "subcarrier {pos:>2}: residual_rms {:.3e} V over {} materials",
            p.residual_rms, p.n_samples
        );
    }
    log::info!(
        "wrote {} profiles to {}",
        profiles.len(),
        args.profile_dir.display()
    );
    Ok(())
}

fn load_profile(dir: &Path, pos: SubcarrierPosition) -> Result<CalibrationProfile> {
    let path = profile_path(dir, pos);
    require_file(&path, "profile")?;
    let f = File::open(&path)?;
    let p = CalibrationProfile::from_json_reader(BufReader::new(f))
        .with_context(|| format!("reading {}", path.display()))?;
    Ok(p.with_position(pos))
}

pub fn estimate(args: &EstimateArgs) -> Result<()> {
    let manifest = match &args.manifest {
        Some(path) => {
            require_file(path, "manifest")?;
            Some(Manifest::load(path)?)
        }
        None => None,
    };
    let files = match (&manifest, args.traces.is_empty()) {
        (_, false) => expand_trace_paths(&args.traces)?,
        (Some(m), true) => m.files(Role::Test),
        (None, true) => bail!("either --traces or --manifest is required"),
    };
    if files.is_empty() {
        bail!("no traces to estimate");
    }
    let cfg = preprocess_config(&args.processing);
    let mut rows = Vec::new();
    let mut failures = 0;
    for f in &files {
        let trace = load_trace(f)?;
        let profiles = positions(&args.processing, &trace.grid)?
            .into_iter()
            .map(|pos| load_profile(&args.profile_dir, pos))
            .collect::<Result<Vec<_>>>()?;
        let avg = preprocess_trace(&trace, &cfg)
            .with_context(|| format!("preprocessing {}", f.display()))?;
        let truth = manifest
            .as_ref()
            .and_then(|m| m.truth(&trace.material_label));
        for s in estimate_per_subcarrier(&avg, &profiles, args.wrap_hint) {
            if let Err(e) = &s.result {
                failures += 1;
                eprintln!(
                    "warning: {} at subcarrier {}: {e}",
                    trace.material_label, s.position
                );
            }
            rows.push(EstimateRow::new(
                &trace.material_label,
                s.position,
                s.result.as_ref().ok(),
                truth,
            )?);
        }
    }
    match &args.out {
        Some(path) => {
            let w = BufWriter::new(
                File::create(path).with_context(|| format!("creating {}", path.display()))?,
            );
            write_report_csv(&rows, w)?;
        }
        None => write_report_csv(&rows, io::stdout().lock())?,
    }
    if failures > 0 {
        eprintln!(
            "{failures} of {} estimates failed; their cells are empty",
            rows.len()
        );
    }
    Ok(())
}

struct SummaryLine {
    label: String,
    position: usize,
    est: Option<DielectricProperties>,
    truth: Option<DielectricProperties>,
    delta_eps_pct: Option<f64>,
    /// `Some(None)` is an undefined conductivity error.
    delta_sigma_pct: Option<Option<f64>>,
}

fn fmt_opt(v: Option<f64>, prec: usize) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.prec$}"))
}

fn fmt_delta_sigma(v: Option<Option<f64>>) -> String {
    match v {
        None => "-".into(),
        Some(None) => UNDEFINED_CELL.into(),
        Some(Some(x)) => format!("{x:.1}"),
    }
}

fn mean(v: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

pub fn evaluate(args: &EvaluateArgs) -> Result<()> {
    require_file(&args.estimates, "estimate report")?;
    let manifest = match &args.manifest {
        Some(path) => {
            require_file(path, "manifest")?;
            Some(Manifest::load(path)?)
        }
        None => None,
    };
    let rows = read_report_csv(BufReader::new(File::open(&args.estimates)?))
        .with_context(|| format!("reading {}", args.estimates.display()))?;
    if rows.is_empty() {
        bail!("estimate report {} has no rows", args.estimates.display());
    }

    let mut lines = Vec::new();
    for r in &rows {
        let truth = manifest
            .as_ref()
            .and_then(|m| m.truth(&r.material_label))
            .or(match (r.eps_truth, r.sigma_truth) {
                (Some(eps_r), Some(sigma)) => Some(DielectricProperties { eps_r, sigma }),
                _ => None,
            });
        let est = match (r.eps_hat, r.sigma_hat) {
            (Some(eps_r), Some(sigma)) => Some(DielectricProperties { eps_r, sigma }),
            _ => None,
        };
        let errors = match (est, truth) {
            (Some(e), Some(t)) => Some(
                relative_errors(e, t).with_context(|| format!("truth of {}", r.material_label))?,
            ),
            _ => None,
        };
        lines.push(SummaryLine {
            label: r.material_label.clone(),
            position: r.subcarrier_position,
            est,
            truth,
            delta_eps_pct: errors.map(|e| 100.0 * e.delta_eps),
            delta_sigma_pct: errors.map(|e| e.delta_sigma.map(|d| 100.0 * d)),
        });
    }

    let avg_eps = mean(lines.iter().filter_map(|l| l.delta_eps_pct));
    let avg_sigma = mean(lines.iter().filter_map(|l| l.delta_sigma_pct.flatten()));
    let header = [
        "material",
        "subcarrier",
        "eps_hat",
        "eps_r",
        "delta_eps_pct",
        "sigma_hat",
        "sigma",
        "delta_sigma_pct",
    ];
    let mut table: Vec<[String; 8]> = lines
        .iter()
        .map(|l| {
            [
                l.label.clone(),
                l.position.to_string(),
                fmt_opt(l.est.map(|e| e.eps_r), 2),
                fmt_opt(l.truth.map(|t| t.eps_r), 2),
                fmt_opt(l.delta_eps_pct, 1),
                fmt_opt(l.est.map(|e| e.sigma), 2),
                fmt_opt(l.truth.map(|t| t.sigma), 2),
                fmt_delta_sigma(l.delta_sigma_pct),
            ]
        })
        .collect();
    table.push([
        "average".into(),
        String::new(),
        String::new(),
        String::new(),
        fmt_opt(avg_eps, 1),
        String::new(),
        String::new(),
        fmt_opt(avg_sigma, 1),
    ]);

    let widths: Vec<usize> = (0..8)
        .map(|c| {
            table
                .iter()
                .map(|r| r[c].len())
                .chain([header[c].len()])
                .max()
                .unwrap_or(0)
        })
        .collect();
    let mut out = io::stdout().lock();
    let print_row = |out: &mut dyn Write, cells: &[&str]| -> io::Result<()> {
        let mut line = format!("{:<w$}", cells[0], w = widths[0]);
        for (c, cell) in cells.iter().enumerate().skip(1) {
            line.push_str(&format!("  {:>w$}", cell, w = widths[c]));
        }
        writeln!(out, "{}", line.trim_end())
    };
    print_row(&mut out, &header)?;
    for r in &table {
        print_row(&mut out, &r.iter().map(String::as_str).collect::<Vec<_>>())?;
    }

    if let Some(path) = &args.out {
        let mut w =
            csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
        w.write_record(header)?;
        for r in &table {
            w.write_record(r)?;
        }
        w.flush()?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slugs() {
        assert_eq!(slug("baijiu 46%"), "baijiu-46pct");
        assert_eq!(slug("ethanol-water 0%"), "ethanol-water-0pct");
        assert_eq!(slug("saline 0.9%"), "saline-0.9pct");
        assert_eq!(slug("air"), "air");
    }

    #[test]
    fn material_sets() {
        assert_eq!(material_roles(MaterialSet::Mixtures).len(), 10);
        assert_eq!(material_roles(MaterialSet::Ethanol).len(), 12);
        let v = material_roles(MaterialSet::Validation);
        assert_eq!(v.len(), 21);
        assert_eq!(
            v.iter().filter(|(_, r)| *r == Role::Calibration).count(),
            10
        );
    }
}
