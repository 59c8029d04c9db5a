//! Output sinks: the diagnostics stream, field dumps, error records and the
//! run summary.

use std::fmt::Write as _;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::diagnostics::DiagnosticsRecord;
use crate::error::{Error, Result};
use crate::grid::Grid;

use super::checkpoint::checksum_f64;

pub const STREAM_FORMAT: &str = "electrodiff-diagnostics";
pub const STREAM_VERSION: u32 = 1;

/// Seventeen significant digits, `null` for non-finite values.
pub fn format_number(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        "null".into()
    }
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "null".into(), format_number)
}

/// Keys of a record in stream order for `m` species.
pub fn record_keys(m: usize, mixed: bool, shadow: bool) -> Vec<String> {
    let mut keys = vec!["t".to_string(), "step".to_string()];
    for prefix in ["mass", "l2", "linf"] {
        keys.extend((0..m).map(|i| format!("{prefix}.{i}")));
    }
    keys.extend(
        ["V", "Diss", "grad_u_sq", "u_sq", "U_T", "budget_residual"]
            .iter()
            .map(|s| s.to_string()),
    );
    keys.extend((0..m).map(|i| format!("mu_var.{i}")));
    keys.extend(["Q", "phi_h1", "dt", "min_c", "div_max"].iter().map(|s| s.to_string()));
    keys.extend((0..m).map(|i| format!("mu_partial.{i}")));
    if mixed {
        keys.extend(["q1_l2", "c2_l1", "c2_l2", "rho_sq_int"].iter().map(|s| s.to_string()));
    }
    if shadow {
        keys.push("shadow_dev".into());
    }
    keys
}

/// One flat JSON object per record, keys in [`record_keys`] order.
pub fn record_line(r: &DiagnosticsRecord) -> String {
    let mut s = String::with_capacity(1024);
    s.push('{');
    let mut first = true;
    let mut put = |k: &str, v: String| {
        if !first {
            s.push(',');
        }
        first = false;
        let _ = write!(s, "\"{k}\":{v}");
    };
    put("t", format_number(r.t));
    put("step", r.step.to_string());
    for (prefix, vals) in [("mass", &r.mass), ("l2", &r.l2), ("linf", &r.linf)] {
        for (i, v) in vals.iter().enumerate() {
            put(&format!("{prefix}.{i}"), format_number(*v));
        }
    }
    put("V", format_number(r.v));
    put("Diss", format_number(r.diss));
    put("grad_u_sq", format_number(r.grad_u_sq));
    put("u_sq", format_number(r.u_sq));
    put("U_T", format_number(r.u_t));
    put("budget_residual", opt(r.budget_residual));
    for (i, m) in r.mu_var.iter().enumerate() {
        put(&format!("mu_var.{i}"), opt(m.value));
    }
    put("Q", opt(r.q));
    put("phi_h1", format_number(r.phi_h1));
    put("dt", opt(r.dt));
    put("min_c", format_number(r.min_concentration));
    put("div_max", format_number(r.div_max));
    for (i, m) in r.mu_var.iter().enumerate() {
        put(&format!("mu_partial.{i}"), m.partial.to_string());
    }
    if let Some(m) = r.mixed {
        put("q1_l2", format_number(m.q1_l2));
        put("c2_l1", format_number(m.c2_l1));
        put("c2_l2", format_number(m.c2_l2));
        put("rho_sq_int", format_number(m.rho_sq_integral));
    }
    if let Some(d) = r.shadow_dev {
        put("shadow_dev", format_number(d));
    }
    s.push('}');
    s
}

pub fn header_line(config_toml: &str, keys: &[String]) -> String {
    json!({
        "type": "header",
        "format": STREAM_FORMAT,
        "version": STREAM_VERSION,
        "keys": keys,
        "config": config_toml,
    })
    .to_string()
}

/// Append-only writer of the diagnostics stream.
pub struct DiagnosticsWriter {
    out: BufWriter<File>,
}

impl DiagnosticsWriter {
    /// Start a fresh stream with its header.
    pub fn create(path: &Path, header: &str) -> Result<Self> {
        let mut out = BufWriter::new(File::create(path)?);
        writeln!(out, "{header}")?;
        out.flush()?;
        Ok(Self { out })
    }

    /// Reopen an existing stream for resumption, keeping the header and the
    /// records accepted by `keep(step)`.
    pub fn reopen(path: &Path, keep: impl Fn(u64) -> bool) -> Result<Self> {
        let reader = BufReader::new(File::open(path)?);
        let mut kept = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            if i == 0 {
                kept.push(line);
                continue;
            }
            let v: serde_json::Value = serde_json::from_str(&line)?;
            let step = v
                .get("step")
                .and_then(|s| s.as_u64())
                .ok_or_else(|| Error::Checkpoint(format!("stream line {} has no step", i + 1)))?;
            if keep(step) {
                kept.push(line);
            }
        }
        let mut out = BufWriter::new(OpenOptions::new().write(true).truncate(true).open(path)?);
        for l in &kept {
            writeln!(out, "{l}")?;
        }
        out.flush()?;
        Ok(Self { out })
    }

    pub fn write(&mut self, r: &DiagnosticsRecord) -> Result<()> {
        writeln!(self.out, "{}", record_line(r))?;
        self.out.flush()?;
        Ok(())
    }
}

/// Parse a diagnostics stream into its header and records.
pub fn read_stream(path: &Path) -> Result<(serde_json::Value, Vec<serde_json::Value>)> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = serde_json::from_str(lines.next().unwrap_or("{}"))?;
    let records = lines.map(serde_json::from_str).collect::<std::result::Result<_, _>>()?;
    Ok((header, records))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FieldSidecar {
    pub field: String,
    pub step: u64,
    pub t: f64,
    pub dtype: String,
    pub shape: Vec<usize>,
    pub grid: Grid,
    pub checksum_fnv1a64: String,
}

/// Write `values` as little-endian f64 plus a JSON sidecar; returns the
/// binary path.
pub fn write_field_dump(
    dir: &Path,
    field: &str,
    step: u64,
    t: f64,
    grid: &Grid,
    shape: Vec<usize>,
    values: &[f64],
) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let stem = format!("{field}_{step:08}");
    let bin = dir.join(format!("{stem}.bin"));
    let mut bytes = Vec::with_capacity(values.len() * 8);
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    std::fs::write(&bin, bytes)?;
    let side = FieldSidecar {
        field: field.into(),
        step,
        t,
        dtype: "f64le".into(),
        shape,
        grid: *grid,
        checksum_fnv1a64: format!("{:016x}", checksum_f64(values)),
    };
    std::fs::write(dir.join(format!("{stem}.json")), serde_json::to_string_pretty(&side)?)?;
    Ok(bin)
}

/// Machine-readable abort record.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ErrorRecord {
    pub step: u64,
    pub t: f64,
    pub module: String,
    pub reason: String,
    pub exit_code: i32,
    pub checkpoint: Option<PathBuf>,
}

impl ErrorRecord {
    pub fn new(step: u64, t: f64, e: &Error, checkpoint: Option<PathBuf>) -> Self {
        Self {
            step,
            t,
            module: e.module().into(),
            reason: e.to_string(),
            exit_code: e.exit_code(),
            checkpoint,
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

/// End-of-run summary.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct RunSummary {
    pub steps: u64,
    pub t: f64,
    pub max_abs_budget_residual: f64,
    pub max_relative_mass_drift: Vec<f64>,
    pub min_concentration: f64,
    pub u_t: f64,
    pub shadow_max_deviation: Option<f64>,
    pub wall_seconds: f64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diagnostics::{MixedMonitors, MuVariance};

    fn record() -> DiagnosticsRecord {
        DiagnosticsRecord {
            t: 0.5,
            step: 7,
            mass: vec![1.0, 2.0],
            l2: vec![1.0, 2.0],
            linf: vec![1.0, 2.0],
            v: -0.25,
            diss: 0.0,
            grad_u_sq: 0.0,
            u_sq: 0.0,
            u_t: 0.0,
            budget_residual: None,
            mu_var: vec![
                MuVariance {
                    value: Some(1e-9),
                    partial: false,
                },
                MuVariance {
                    value: None,
                    partial: true,
                },
            ],
            q: Some(0.1),
            phi_h1: 0.3,
            min_concentration: 0.5,
            div_max: 0.0,
            dt: Some(1e-3),
            mixed: Some(MixedMonitors {
                q1_l2: 0.0,
                c2_l1: 1e-3,
                c2_l2: 1e-3,
                rho_sq_integral: 0.0,
            }),
            shadow_dev: None,
        }
    }

    #[test]
    fn numbers_have_seventeen_digits() {
        assert_eq!(format_number(0.1), "1.0000000000000001e-1");
        assert_eq!(format_number(f64::NAN), "null");
        assert_eq!(format_number(f64::INFINITY), "null");
        let x = 0.1 + 0.2;
        assert_eq!(format_number(x).parse::<f64>().unwrap().to_bits(), x.to_bits());
    }

    #[test]
    fn record_line_is_json_with_ordered_keys() {
        let r = record();
        let line = record_line(&r);
        let v: serde_json::Value = serde_json::from_str(&line).unwrap();
        assert_eq!(v["step"], 7);
        assert_eq!(v["mass.1"].as_f64(), Some(2.0));
        assert!(v["budget_residual"].is_null());
        assert!(v["mu_var.1"].is_null());
        assert_eq!(v["mu_partial.1"], true);
        let keys = record_keys(2, true, false);
        let mut last = 0;
        for k in &keys {
            let pos = line.find(&format!("\"{k}\":")).unwrap_or_else(|| panic!("{k}"));
            assert!(pos >= last);
            last = pos;
        }
        assert_eq!(v.as_object().unwrap().len(), keys.len());
    }

    #[test]
    fn stream_roundtrip_and_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.ndjson");
        let mut w = DiagnosticsWriter::create(&p, &header_line("x = 1", &record_keys(2, true, false))).unwrap();
        let mut r = record();
        for s in 0..5 {
            r.step = s;
            w.write(&r).unwrap();
        }
        drop(w);
        let mut w = DiagnosticsWriter::reopen(&p, |s| s <= 2).unwrap();
        r.step = 9;
        w.write(&r).unwrap();
        drop(w);
        let (h, recs) = read_stream(&p).unwrap();
        assert_eq!(h["format"], STREAM_FORMAT);
        let steps: Vec<u64> = recs.iter().map(|r| r["step"].as_u64().unwrap()).collect();
        assert_eq!(steps, vec![0, 1, 2, 9]);
    }

    #[test]
    fn field_dump_files() {
        let dir = tempfile::tempdir().unwrap();
        let g = Grid::new(2, &[2, 3], &[1.0, 1.0]).unwrap();
        let vals: Vec<f64> = (0..6).map(f64::from).collect();
        let bin = write_field_dump(dir.path(), "phi", 3, 0.5, &g, vec![2, 3], &vals).unwrap();
        let bytes = std::fs::read(&bin).unwrap();
        assert_eq!(bytes.len(), 48);
        assert_eq!(f64::from_le_bytes(bytes[40..48].try_into().unwrap()), 5.0);
        let side: FieldSidecar =
            serde_json::from_str(&std::fs::read_to_string(bin.with_extension("json")).unwrap()).unwrap();
        assert_eq!(side.checksum_fnv1a64, format!("{:016x}", checksum_f64(&vals)));
        assert_eq!(side.step, 3);
    }
}
