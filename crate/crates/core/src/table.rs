//! Plain CSV tables: a header row of column names, then numeric rows.

use crate::error::{Result, SirError};
use std::fmt::Write as _;
use std::path::Path;

/// Formats one value with 17 significant digits.
pub fn format_value(v: f64) -> String {
    format!("{v:.16e}")
}

/// Renders named columns as CSV text with `\n` line endings.
pub fn render(header: &[&str], columns: &[&[f64]]) -> Result<String> {
    if header.len() != columns.len() {
        return Err(SirError::invalid("header and column counts differ"));
    }
    let rows = columns.first().map_or(0, |c| c.len());
    if columns.iter().any(|c| c.len() != rows) {
        return Err(SirError::invalid("CSV columns differ in length"));
    }
    let mut out = String::with_capacity(rows * columns.len() * 24 + 32);
    out.push_str(&header.join(","));
    out.push('\n');
    for r in 0..rows {
        for (k, col) in columns.iter().enumerate() {
            if k > 0 {
                out.push(',');
            }
            let _ = write!(out, "{}", format_value(col[r]));
        }
        out.push('\n');
    }
    Ok(out)
}

pub fn write(path: &Path, header: &[&str], columns: &[&[f64]]) -> Result<()> {
    let text = render(header, columns)?;
    std::fs::write(path, text).map_err(|source| SirError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Parses CSV text and returns the requested columns, in order.
pub fn parse(text: &str, wanted: &[&str]) -> Result<Vec<Vec<f64>>> {
    let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
    let header: Vec<&str> = lines
        .next()
        .ok_or_else(|| SirError::Parse("empty CSV".into()))?
        .split(',')
        .map(str::trim)
        .collect();
    let index: Vec<usize> = wanted
        .iter()
        .map(|name| {
            header
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| SirError::Parse(format!("missing column `{name}`")))
        })
        .collect::<Result<_>>()?;
    let mut cols = vec![Vec::new(); wanted.len()];
    for (row, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != header.len() {
            return Err(SirError::Parse(format!("row {} has {} fields", row + 2, fields.len())));
        }
        for (c, &k) in index.iter().enumerate() {
            let v: f64 = fields[k]
                .parse()
                .map_err(|_| SirError::Parse(format!("bad number `{}` in row {}", fields[k], row + 2)))?;
            cols[c].push(v);
        }
    }
    Ok(cols)
}

pub fn read(path: &Path, wanted: &[&str]) -> Result<Vec<Vec<f64>>> {
    let text = std::fs::read_to_string(path).map_err(|source| SirError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse(&text, wanted)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn render_and_parse_round_trip() {
        let xs = [0.0, 0.1, 1.0 / 3.0];
        let ys = [1.0, -2.5e-300, 7.0];
        let text = render(&["s", "value"], &[&xs, &ys]).unwrap();
        assert!(text.starts_with("s,value\n"));
        assert!(text.lines().all(|l| !l.ends_with(' ')));
        assert!(!text.contains('\r'));
        let cols = parse(&text, &["value", "s"]).unwrap();
        assert_eq!(cols[0], ys);
        assert_eq!(cols[1], xs);
    }

    #[test]
    fn parse_errors() {
        assert!(parse("", &["s"]).is_err());
        assert!(parse("s,value\n1,2\n", &["t"]).is_err());
        assert!(parse("s,value\n1\n", &["s"]).is_err());
        assert!(parse("s,value\n1,x\n", &["value"]).is_err());
    }
}
