use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::masks::Direction;
use crate::tensor::Tensor;

use super::{CaseStudyReport, IntrospectError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ExportFormat {
    Csv,
    Svg,
}

/// Token-labelled matrix: a header row of tokens, then one row per token.
pub fn matrix_csv(tokens: &[String], m: &Tensor) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    let header = std::iter::once(String::new()).chain(tokens.iter().cloned());
    w.write_record(header).expect("in-memory write");
    for (i, tok) in tokens.iter().enumerate() {
        let row = std::iter::once(tok.clone()).chain(m.row(i).iter().map(|v| v.to_string()));
        w.write_record(row).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv is utf-8")
}

/// One `token,<column>` row per word.
pub fn vector_csv(tokens: &[String], column: &str, values: &[f64]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["token", column]).expect("in-memory write");
    for (tok, v) in tokens.iter().zip(values) {
        w.write_record([tok.clone(), v.to_string()]).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv is utf-8")
}

const CELL: usize = 28;
const MARGIN: usize = 110;

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            _ => out.push(c),
        }
    }
    out
}

/// Standalone SVG heatmap of an `r×c` matrix. Colour runs from white at 0 to
/// dark blue at the matrix maximum. `row_labels` go down the left edge,
/// `col_labels` along the top.
pub fn heatmap_svg(title: &str, row_labels: &[String], col_labels: &[String], m: &Tensor) -> String {
    let rows = row_labels.len();
    let cols = col_labels.len();
    let max = m.data().iter().copied().fold(0.0, f64::max);
    let width = MARGIN + cols * CELL + 10;
    let height = MARGIN + rows * CELL + 10;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, "<title>{}</title>", escape(title));
    let _ = writeln!(s, r#"<rect width="{width}" height="{height}" fill="white"/>"#);
    for (j, label) in col_labels.iter().enumerate() {
        let x = MARGIN + j * CELL + CELL / 2;
        let y = MARGIN - 6;
        let _ = writeln!(
            s,
            r#"<text x="{x}" y="{y}" transform="rotate(-60 {x} {y})">{}</text>"#,
            escape(label)
        );
    }
    for (i, label) in row_labels.iter().enumerate() {
        let y = MARGIN + i * CELL + CELL / 2 + 4;
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{y}" text-anchor="end">{}</text>"#,
            MARGIN - 6,
            escape(label)
        );
        for j in 0..cols {
            let v = m.get(i, j);
            let t = if max > 0.0 { (v / max).clamp(0.0, 1.0) } else { 0.0 };
            let r = (255.0 - t * 247.0).round() as u8;
            let g = (255.0 - t * 207.0).round() as u8;
            let b = (255.0 - t * 148.0).round() as u8;
            let _ = writeln!(
                s,
                r##"<rect x="{}" y="{}" width="{CELL}" height="{CELL}" fill="#{r:02x}{g:02x}{b:02x}"><title>{:.6}</title></rect>"##,
                MARGIN + j * CELL,
                MARGIN + i * CELL,
                v
            );
        }
    }
    s.push_str("</svg>\n");
    s
}

fn write(path: PathBuf, contents: &str, written: &mut Vec<PathBuf>) -> Result<(), IntrospectError> {
    fs::write(&path, contents).map_err(|source| IntrospectError::Io { path: path.clone(), source })?;
    written.push(path);
    Ok(())
}

/// Writes `out_dir/{forward,backward,pooling}/<artifact>.<ext>` and returns
/// the paths in the order they were written.
pub fn export(report: &CaseStudyReport, out_dir: &Path, formats: &[ExportFormat]) -> Result<Vec<PathBuf>, IntrospectError> {
    let csv = formats.contains(&ExportFormat::Csv);
    let svg = formats.contains(&ExportFormat::Svg);
    let tokens = &report.tokens;
    let mut written = Vec::new();
    let mkdir = |dir: &Path| fs::create_dir_all(dir).map_err(|source| IntrospectError::Io { path: dir.to_path_buf(), source });

    for d in Direction::BOTH {
        let r = report.direction(d);
        let dir = out_dir.join(d.as_str());
        mkdir(&dir)?;
        let mut matrices = vec![("attn_avg".to_string(), &r.attn_avg)];
        for (h, m) in r.attn_per_head.iter().enumerate() {
            matrices.push((format!("attn_head{}", h + 1), m));
        }
        for (name, m) in matrices {
            if csv {
                write(dir.join(format!("{name}.csv")), &matrix_csv(tokens, m), &mut written)?;
            }
            if svg {
                let title = format!("{} {name}", d.as_str());
                write(dir.join(format!("{name}.svg")), &heatmap_svg(&title, tokens, tokens, m), &mut written)?;
            }
        }
        for (name, v) in [
            ("gate_avg", &r.gate_avg),
            ("ffn_deact_ratio", &r.ffn_deact_ratio),
            ("ffn_out_max", &r.ffn_out_max),
        ] {
            write_vector(&dir, name, tokens, v, csv, svg, &mut written)?;
        }
    }

    let dir = out_dir.join("pooling");
    mkdir(&dir)?;
    write_vector(&dir, "multidim_avg_weight", tokens, &report.multidim_avg_weight, csv, svg, &mut written)?;
    write_vector(&dir, "maxpool_ratio", tokens, &report.maxpool_ratio, csv, svg, &mut written)?;
    Ok(written)
}

fn write_vector(
    dir: &Path,
    name: &str,
    tokens: &[String],
    values: &[f64],
    csv: bool,
    svg: bool,
    written: &mut Vec<PathBuf>,
) -> Result<(), IntrospectError> {
    if csv {
        write(dir.join(format!("{name}.csv")), &vector_csv(tokens, name, values), written)?;
    }
    if svg {
        let m = Tensor::new(vec![1, values.len()], values.to_vec())?;
        write(
            dir.join(format!("{name}.svg")),
            &heatmap_svg(name, &[name.to_string()], tokens, &m),
            written,
        )?;
    }
    Ok(())
}
