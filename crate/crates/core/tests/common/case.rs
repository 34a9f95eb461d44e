//! Checks on the case-study capture shared with the acceptance suite.

use dsan::introspect::{capture, export, matrix_csv, ExportFormat};
use dsan::masks::Direction;
use dsan::DsanModel;

use super::CASE_SENTENCE;

pub const CASE_TOKENS: usize = 9;

/// Captures the case sentence, exports it to a scratch directory and
/// returns every broken expectation.
pub fn check(model: &DsanModel) -> Vec<String> {
    let report = match capture(model, CASE_SENTENCE) {
        Ok(r) => r,
        Err(e) => return vec![format!("capture failed: {e}")],
    };
    let mut bad = report.violations();
    let n = report.len();
    if n != CASE_TOKENS {
        bad.push(format!("{n} tokens, expected {CASE_TOKENS}"));
    }
    for d in Direction::BOTH {
        let r = report.direction(d);
        if r.attn_per_head.len() != model.config.heads {
            bad.push(format!("{}: {} heads captured", d.as_str(), r.attn_per_head.len()));
        }
        let k = r.attn_per_head.len() as f64;
        for i in 0..n {
            for j in 0..n {
                let mean = r.attn_per_head.iter().map(|h| h.get(i, j)).sum::<f64>() / k;
                if (mean - r.attn_avg.get(i, j)).abs() > 1e-15 {
                    bad.push(format!("{}: average differs from head mean at ({i},{j})", d.as_str()));
                }
            }
        }
        let silent_row = match d {
            Direction::Forward => 0,
            Direction::Backward => n - 1,
        };
        if r.attn_avg.row(silent_row).iter().any(|v| *v != 0.0) {
            bad.push(format!("{}: row {silent_row} has weight but no admissible key", d.as_str()));
        }
        let text = matrix_csv(&report.tokens, &r.attn_avg);
        let mut reader = csv::ReaderBuilder::new().has_headers(false).from_reader(text.as_bytes());
        let rows: Vec<_> = reader.records().map(|r| r.map(|r| r.len())).collect();
        if rows.len() != n + 1 || rows.iter().any(|r| r.as_ref().ok() != Some(&(n + 1))) {
            bad.push(format!("{}: CSV is not {}x{}", d.as_str(), n + 1, n + 1));
        }
    }
    let dir = match tempfile::tempdir() {
        Ok(d) => d,
        Err(e) => return vec![format!("tempdir: {e}")],
    };
    match export(&report, dir.path(), &[ExportFormat::Csv, ExportFormat::Svg]) {
        Ok(paths) => {
            for p in paths.iter().filter(|p| p.extension().is_some_and(|e| e == "svg")) {
                let text = std::fs::read_to_string(p).unwrap_or_default();
                if let Err(e) = roxmltree::Document::parse(&text) {
                    bad.push(format!("{}: {e}", p.display()));
                }
            }
        }
        Err(e) => bad.push(format!("export failed: {e}")),
    }
    bad
}
