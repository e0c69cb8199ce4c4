//! Cohort CSV files: header `S,A,Y,W1,...,Wd[,source]`, one row per unit.

use std::io::{Read, Write};

use crate::cohort::{validate_cohort, Cohort, Observation};
use crate::error::{Error, Result};

fn binary(field: &'static str, raw: &str, row: usize) -> Result<u8> {
    match raw.trim() {
        "0" => Ok(0),
        "1" => Ok(1),
        other => Err(Error::NonBinary {
            row,
            field,
            value: other.to_string(),
        }),
    }
}

fn real(field: &str, raw: &str, row: usize) -> Result<f64> {
    let v: f64 = raw.trim().parse().map_err(|_| Error::NonFinite {
        row,
        field: field.to_string(),
    })?;
    if !v.is_finite() {
        return Err(Error::NonFinite {
            row,
            field: field.to_string(),
        });
    }
    Ok(v)
}

/// Parse a cohort. Errors name the 1-based data row (the header is not
/// counted).
pub fn read_cohort_csv(reader: impl Read, r: f64) -> Result<Cohort> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let header = rdr.headers()?.clone();
    let names: Vec<&str> = header.iter().collect();
    let has_source = names.last() == Some(&"source");
    let cov_names = &names[3.min(names.len())..names.len() - has_source as usize];
    let expected_cov: Vec<String> = (1..=cov_names.len()).map(|j| format!("W{j}")).collect();
    if names.len() < 4 || names[..3] != ["S", "A", "Y"] || cov_names != expected_cov {
        return Err(Error::InvalidInput(format!(
            "cohort header must be S,A,Y,W1,...,Wd[,source], got {}",
            names.join(",")
        )));
    }
    let d = cov_names.len();
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 1;
        let rec = rec?;
        if rec.len() != names.len() {
            return Err(Error::DimensionMismatch {
                row,
                expected: names.len(),
                found: rec.len(),
            });
        }
        let s = binary("S", &rec[0], row)?;
        let a = binary("A", &rec[1], row)?;
        let y = real("Y", &rec[2], row)?;
        let w = (0..d)
            .map(|j| real(cov_names[j], &rec[3 + j], row))
            .collect::<Result<Vec<_>>>()?;
        let mut o = Observation::new(s, w, a, y);
        if has_source {
            let raw = rec[3 + d].trim();
            if !raw.is_empty() {
                let src = raw.parse().map_err(|_| Error::NonFinite {
                    row,
                    field: "source".into(),
                })?;
                o = o.with_source(src);
            }
        }
        rows.push(o);
    }
    validate_cohort(rows, r)
}

/// Write the given rows of a cohort (all when `rows` is `None`). Reals use
/// the shortest representation that reads back to the same value.
pub fn write_cohort_csv(writer: impl Write, cohort: &Cohort, rows: Option<&[usize]>) -> Result<()> {
    let d = cohort.dim();
    let has_source = cohort.rows().iter().any(|o| o.source.is_some());
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(writer);
    let mut header: Vec<String> = vec!["S".into(), "A".into(), "Y".into()];
    header.extend((1..=d).map(|j| format!("W{j}")));
    if has_source {
        header.push("source".into());
    }
    w.write_record(&header)?;
    let all: Vec<usize>;
    let rows = match rows {
        Some(r) => r,
        None => {
            all = (0..cohort.len()).collect();
            &all
        }
    };
    for &i in rows {
        let o = &cohort.rows()[i];
        let mut rec: Vec<String> = vec![o.s.to_string(), o.a.to_string(), o.y.to_string()];
        rec.extend(o.w.iter().map(|v| v.to_string()));
        if has_source {
            rec.push(o.source.map(|s| s.to_string()).unwrap_or_default());
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
