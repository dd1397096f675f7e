use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::report::format_f64;
use crate::model::PricePanel;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestOptions {
    /// Insert a constant-1 numéraire as the first column.
    pub add_numeraire: bool,
    /// Label of the inserted numéraire column.
    pub numeraire_id: String,
    /// Require numeric, evenly spaced time stamps.
    pub strict_spacing: bool,
}

impl Default for IngestOptions {
    fn default() -> Self {
        Self {
            add_numeraire: false,
            numeraire_id: "unit".to_string(),
            strict_spacing: false,
        }
    }
}

/// Read a `time,<asset_1>,...,<asset_N>` file into a panel.
///
/// Time stamps are mapped to steps `0..T` in file order. They must be
/// strictly increasing: numerically when every stamp parses as a number,
/// lexicographically otherwise (ISO-8601 dates sort correctly).
pub fn ingest_csv(path: impl AsRef<Path>, options: &IngestOptions) -> Result<PricePanel> {
    let file = std::fs::File::open(path.as_ref()).map_err(Error::input(path.as_ref()))?;
    read_panel(file, options)
}

pub fn read_panel<R: Read>(reader: R, options: &IngestOptions) -> Result<PricePanel> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers().map_err(csv_parse_error)?.clone();
    if headers.len() < 2 {
        return Err(Error::Parse {
            line: 1,
            column: headers.len().max(1),
            message: "header needs a time column and at least one asset".into(),
        });
    }
    let assets: Vec<String> = headers.iter().skip(1).map(str::to_string).collect();
    let n = assets.len();

    let mut stamps = Vec::new();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut rejected = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(csv_parse_error)?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.len() != n + 1 {
            return Err(Error::Parse {
                line,
                column: record.len(),
                message: format!("expected {} fields, found {}", n + 1, record.len()),
            });
        }
        let mut row = Vec::with_capacity(n);
        let mut ok = true;
        for (c, cell) in record.iter().enumerate().skip(1) {
            let asset = &assets[c - 1];
            if cell.is_empty() {
                rejected.push(format!("line {line}: missing price for `{asset}`"));
                ok = false;
                continue;
            }
            let value: f64 = cell.parse().map_err(|_| Error::Parse {
                line,
                column: c + 1,
                message: format!("`{cell}` is not a number"),
            })?;
            if !(value > 0.0 && value.is_finite()) {
                rejected.push(format!("line {line}: price of `{asset}` must be positive, got {cell}"));
                ok = false;
            }
            row.push(value);
        }
        if ok {
            stamps.push((line, record[0].to_string()));
            rows.push(row);
        }
    }
    if !rejected.is_empty() {
        return Err(Error::Rejected(rejected));
    }
    if rows.len() < 2 {
        return Err(Error::InsufficientData {
            what: "price file",
            required: 2,
            available: rows.len(),
        });
    }
    check_time_column(&stamps, options.strict_spacing)?;

    let offset = usize::from(options.add_numeraire);
    let mut ids = Vec::with_capacity(n + offset);
    if options.add_numeraire {
        if assets.contains(&options.numeraire_id) {
            return Err(Error::Config(vec![format!(
                "numeraire_id `{}` clashes with an asset column",
                options.numeraire_id
            )]));
        }
        ids.push(options.numeraire_id.clone());
    }
    ids.extend(assets);
    let prices = DMatrix::from_fn(rows.len(), n + offset, |r, c| if c < offset { 1.0 } else { rows[r][c - offset] });
    PricePanel::new(ids, (0..rows.len()).collect(), prices)
}

fn csv_parse_error(e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    Error::Parse {
        line,
        column: 0,
        message: e.to_string(),
    }
}

fn check_time_column(stamps: &[(usize, String)], strict_spacing: bool) -> Result<()> {
    let numeric: Option<Vec<f64>> = stamps.iter().map(|(_, s)| s.parse::<f64>().ok()).collect();
    let mut problems = Vec::new();
    match &numeric {
        Some(t) => {
            for (i, w) in t.windows(2).enumerate() {
                if !(w[1] > w[0]) {
                    problems.push(format!("line {}: time {} does not increase", stamps[i + 1].0, stamps[i + 1].1));
                }
            }
            if strict_spacing && problems.is_empty() {
                let step = t[1] - t[0];
                for (i, w) in t.windows(2).enumerate() {
                    if ((w[1] - w[0]) - step).abs() > 1e-9 * step.abs().max(1.0) {
                        problems.push(format!(
                            "line {}: spacing {} differs from {step}",
                            stamps[i + 1].0,
                            w[1] - w[0]
                        ));
                    }
                }
            }
        }
        None => {
            for w in stamps.windows(2) {
                if w[1].1 <= w[0].1 {
                    problems.push(format!("line {}: time `{}` does not increase", w[1].0, w[1].1));
                }
            }
            if strict_spacing {
                problems.push("strict_spacing needs numeric time stamps".into());
            }
        }
    }
    if problems.is_empty() {
        Ok(())
    } else {
        Err(Error::Rejected(problems))
    }
}

/// Write a panel as `time,<ids>` with shortest round-trip decimal prices.
pub fn emit_panel<W: Write>(panel: &PricePanel, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["time".to_string()];
    header.extend(panel.asset_ids().iter().cloned());
    w.write_record(&header)?;
    for (r, t) in panel.times().iter().enumerate() {
        let mut rec = vec![t.to_string()];
        rec.extend(panel.prices().row(r).iter().map(|x| format_f64(*x)));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_panel(panel: &PricePanel, path: impl AsRef<Path>) -> Result<()> {
    let mut buf = Vec::new();
    emit_panel(panel, &mut buf)?;
    super::report::write_atomic(path, &buf)
}
