//! Deterministic report emission: one JSON document per probe, a summary in
//! JSON and CSV, the estimate rows and the (δ, R, resolution) scan matrix.
//!
//! Keys are emitted in sorted order and every float is written with 17
//! significant digits, so identical runs give identical bytes.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::verify::ProbeReport;
use crate::wspace::ConstantEstimate;
use crate::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

/// One cell of a parameter scan.
#[derive(Clone, Debug, PartialEq)]
pub struct ScanRow {
    pub probe: String,
    pub quantity: String,
    pub delta: f64,
    pub big_r: f64,
    pub resolution: usize,
    pub value: f64,
}

#[derive(Clone, Debug, Default)]
pub struct RunResults {
    pub reports: Vec<ProbeReport>,
    /// (resolution, estimate).
    pub estimates: Vec<(usize, ConstantEstimate)>,
    pub scan: Vec<ScanRow>,
}

impl RunResults {
    pub fn all_pass(&self) -> bool {
        self.reports.iter().all(|r| r.pass)
    }

    pub fn extend(&mut self, other: RunResults) {
        self.reports.extend(other.reports);
        self.estimates.extend(other.estimates);
        self.scan.extend(other.scan);
    }
}

/// `{:.16e}`; non-finite values become the strings "NaN", "Infinity", "-Infinity".
pub fn fmt_f64(v: f64) -> String {
    if v.is_nan() {
        "\"NaN\"".into()
    } else if v.is_infinite() {
        if v > 0.0 { "\"Infinity\"".into() } else { "\"-Infinity\"".into() }
    } else {
        format!("{v:.16e}")
    }
}

fn csv_f64(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        format!("{v}")
    }
}

fn quote(s: &str) -> String {
    serde_json::to_string(s).expect("strings always serialise")
}

fn num_map<'a>(out: &mut String, pad: &str, it: impl Iterator<Item = (&'a String, &'a f64)>) {
    let rows: Vec<String> = it.map(|(k, v)| format!("{pad}  {}: {}", quote(k), fmt_f64(*v))).collect();
    write_block(out, pad, &rows, '{', '}');
}

fn write_block(out: &mut String, pad: &str, rows: &[String], open: char, close: char) {
    if rows.is_empty() {
        let _ = write!(out, "{open}{close}");
    } else {
        let _ = write!(out, "{open}\n{}\n{pad}{close}", rows.join(",\n"));
    }
}

pub fn probe_json(r: &ProbeReport) -> String {
    let mut s = String::new();
    let _ = write!(s, "{{\n  \"schema_version\": {SCHEMA_VERSION},\n  \"probe\": {},\n  \"pass\": {},\n", quote(&r.probe), r.pass);
    s.push_str("  \"labels\": ");
    let labels: Vec<String> = r.labels.iter().map(|(k, v)| format!("    {}: {}", quote(k), quote(v))).collect();
    write_block(&mut s, "  ", &labels, '{', '}');
    s.push_str(",\n  \"params\": ");
    num_map(&mut s, "  ", r.params.iter());
    s.push_str(",\n  \"outcomes\": ");
    num_map(&mut s, "  ", r.outcomes.iter());
    s.push_str(",\n  \"series\": ");
    let series: Vec<String> = r
        .series
        .iter()
        .map(|(k, v)| format!("    {}: [{}]", quote(k), v.iter().map(|x| fmt_f64(*x)).collect::<Vec<_>>().join(", ")))
        .collect();
    write_block(&mut s, "  ", &series, '{', '}');
    s.push_str(",\n  \"warnings\": ");
    let warns: Vec<String> = r.warnings.iter().map(|w| format!("    {}", quote(w))).collect();
    write_block(&mut s, "  ", &warns, '[', ']');
    s.push_str("\n}\n");
    s
}

pub fn summary_json(res: &RunResults) -> String {
    let rows: Vec<String> = res
        .reports
        .iter()
        .map(|r| {
            let status = r.labels.get("status").map(String::as_str).unwrap_or("consistent-with");
            format!(
                "    {{\"probe\": {}, \"pass\": {}, \"status\": {}, \"warnings\": {}}}",
                quote(&r.probe),
                r.pass,
                quote(status),
                r.warnings.len()
            )
        })
        .collect();
    let mut s = String::new();
    let _ = write!(
        s,
        "{{\n  \"schema_version\": {SCHEMA_VERSION},\n  \"pass\": {},\n  \"estimates\": {},\n  \"scan_rows\": {},\n  \"probes\": ",
        res.all_pass(),
        res.estimates.len(),
        res.scan.len()
    );
    write_block(&mut s, "  ", &rows, '[', ']');
    s.push_str("\n}\n");
    s
}

fn to_csv(header: &[&str], rows: impl Iterator<Item = Vec<String>>) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).map_err(csv_err)?;
    for r in rows {
        w.write_record(&r).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e.to_string()))
}

pub fn summary_csv(res: &RunResults) -> Result<String> {
    to_csv(
        &["probe", "pass", "status", "warnings"],
        res.reports.iter().map(|r| {
            vec![
                r.probe.clone(),
                r.pass.to_string(),
                r.labels.get("status").cloned().unwrap_or_else(|| "consistent-with".into()),
                r.warnings.len().to_string(),
            ]
        }),
    )
}

pub fn estimates_csv(res: &RunResults) -> Result<String> {
    to_csv(
        &["id", "deltas", "family_size", "value", "big_r", "resolution"],
        res.estimates.iter().map(|(n, e)| {
            let mut row = e.csv_row();
            row.push(n.to_string());
            row
        }),
    )
}

pub fn scan_csv(res: &RunResults) -> Result<String> {
    to_csv(
        &["probe", "quantity", "delta", "big_r", "resolution", "value"],
        res.scan.iter().map(|r| {
            vec![
                r.probe.clone(),
                r.quantity.clone(),
                csv_f64(r.delta),
                csv_f64(r.big_r),
                r.resolution.to_string(),
                csv_f64(r.value),
            ]
        }),
    )
}

/// Writes `<probe>.json` per report plus summary.json, summary.csv,
/// estimates.csv and scan.csv. Returns the paths in write order.
pub fn emit_report(dir: &Path, res: &RunResults) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut files: Vec<(String, String)> = Vec::new();
    for r in &res.reports {
        files.push((format!("{}.json", r.probe), probe_json(r)));
    }
    files.push(("summary.json".into(), summary_json(res)));
    files.push(("summary.csv".into(), summary_csv(res)?));
    files.push(("estimates.csv".into(), estimates_csv(res)?));
    files.push(("scan.csv".into(), scan_csv(res)?));
    let mut out = Vec::with_capacity(files.len());
    for (name, body) in files {
        let p = dir.join(name);
        fs::write(&p, body)?;
        out.push(p);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> ProbeReport {
        let mut r = ProbeReport::new("kernel");
        r.params.insert("delta".into(), -1.5);
        r.outcomes.insert("sigma_min".into(), 0.895);
        r.outcomes.insert("bad".into(), f64::INFINITY);
        r.series.insert("sigma".into(), vec![1.0, 0.5]);
        r.labels.insert("status".into(), "consistent-with".into());
        r.warnings.push("δ \"quoted\"".into());
        r.pass = true;
        r
    }

    #[test]
    fn probe_json_parses_and_keeps_seventeen_digits() {
        let s = probe_json(&sample());
        let v: serde_json::Value = serde_json::from_str(&s).unwrap();
        assert_eq!(v["schema_version"], 1);
        assert_eq!(v["outcomes"]["bad"], "Infinity");
        assert_eq!(v["warnings"][0], "δ \"quoted\"");
        assert!(s.contains("8.9500000000000002e-1"));
        let keys: Vec<&String> = v["outcomes"].as_object().unwrap().keys().collect();
        assert_eq!(keys, ["bad", "sigma_min"]);
    }

    #[test]
    fn empty_run_gives_an_empty_valid_summary() {
        let res = RunResults::default();
        let v: serde_json::Value = serde_json::from_str(&summary_json(&res)).unwrap();
        assert_eq!(v["probes"].as_array().unwrap().len(), 0);
        assert_eq!(v["pass"], true);
        assert_eq!(summary_csv(&res).unwrap(), "probe,pass,status,warnings\n");
    }

    #[test]
    fn five_point_delta_scan_gives_five_rows() {
        let mut res = RunResults::default();
        for d in [-1.9, -1.7, -1.5, -1.3, -1.1] {
            res.scan.push(ScanRow { probe: "inequalities".into(), quantity: "KORN_S".into(), delta: d, big_r: 1.0, resolution: 16, value: 2.0 });
        }
        let csv = scan_csv(&res).unwrap();
        assert_eq!(csv.lines().count(), 6);
    }

    #[test]
    fn emission_is_byte_stable() {
        let mut res = RunResults::default();
        res.reports.push(sample());
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let pa = emit_report(a.path(), &res).unwrap();
        let pb = emit_report(b.path(), &res).unwrap();
        assert_eq!(pa.len(), 5);
        for (x, y) in pa.iter().zip(&pb) {
            assert_eq!(fs::read(x).unwrap(), fs::read(y).unwrap());
        }
    }
}
