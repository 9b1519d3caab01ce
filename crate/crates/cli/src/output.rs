use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use nlmv_core::FrontierPoint;

pub const SIGNIFICANT_DIGITS: usize = 12;

/// Plain decimal with `digits` significant digits and trailing zeros removed.
pub fn format_significant(x: f64, digits: usize) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let exponent = x.abs().log10().floor() as i32;
    let decimals = digits as i32 - 1 - exponent;
    let mut s = if decimals >= 0 {
        format!("{x:.*}", decimals as usize)
    } else {
        let scale = 10f64.powi(-decimals);
        format!("{:.0}", (x / scale).round() * scale)
    };
    if s.contains('.') {
        s.truncate(s.trim_end_matches('0').trim_end_matches('.').len());
    }
    if s == "-0" {
        s = "0".into();
    }
    s
}

fn csv_writer(path: &Path) -> io::Result<csv::Writer<BufWriter<File>>> {
    let file = BufWriter::new(File::create(path)?);
    Ok(csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(file))
}

/// Writes numeric rows under `header`, every value at twelve significant digits.
pub fn write_table<R: AsRef<[f64]>>(path: &Path, header: &[&str], rows: &[R]) -> io::Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(header)?;
    for row in rows {
        w.write_record(row.as_ref().iter().map(|&v| format_significant(v, SIGNIFICANT_DIGITS)))?;
    }
    w.flush()
}

pub fn emit_frontier_csv(path: &Path, points: &[FrontierPoint]) -> io::Result<()> {
    if points.is_empty() {
        return Err(io::Error::new(io::ErrorKind::InvalidInput, "no frontier points to write"));
    }
    let rows: Vec<[f64; 4]> = points.iter().map(|p| [p.target, p.d_star, p.variance, p.std_dev]).collect();
    write_table(path, &["K", "d_star", "variance", "std_dev"], &rows)
}

/// `K,path_id,X_T` rows, one per target and simulated path.
pub fn emit_terminal_csv(path: &Path, rows: &[(f64, usize, f64)]) -> io::Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["K", "path_id", "X_T"])?;
    for &(k, i, x) in rows {
        let k = format_significant(k, SIGNIFICANT_DIGITS);
        w.write_record([k, i.to_string(), format_significant(x, SIGNIFICANT_DIGITS)])?;
    }
    w.flush()
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()
}
