//! CSV export of curves and tables, with parsers that read them back exactly.
//!
//! Numbers are written in shortest round-trip form; empty cells stand for
//! undefined values.

use std::io::{Read, Write};

use crate::calibration::CalibrationBin;
use crate::dca::{Comparator, DecisionCurve};
use crate::error::{AuditError, Result};
use crate::explain::Attribution;
use crate::metrics::RocCurve;
use crate::scalar::Real;

fn cell<T: Real>(v: T) -> String {
    v.to_string()
}

fn opt_cell<T: Real>(v: Option<T>) -> String {
    v.map(cell).unwrap_or_default()
}

fn parse<T: Real>(s: &str, row: usize, column: &str) -> Result<T> {
    s.trim().parse::<T>().map_err(|_| AuditError::NonNumeric {
        row,
        column: column.into(),
        value: s.into(),
    })
}

fn parse_opt<T: Real>(s: &str, row: usize, column: &str) -> Result<Option<T>> {
    if s.trim().is_empty() {
        Ok(None)
    } else {
        parse(s, row, column).map(Some)
    }
}

fn expect_headers(found: &csv::StringRecord, expected: &[&str]) -> Result<()> {
    if found.len() < expected.len() || found.iter().zip(expected).any(|(a, b)| a != *b) {
        return Err(AuditError::Schema(format!(
            "expected columns {expected:?}, found {:?}",
            found.iter().collect::<Vec<_>>()
        )));
    }
    Ok(())
}

const DCA_COLUMNS: [&str; 4] = ["threshold", "nb_model", "nb_all", "nb_none"];

pub fn write_decision_curve<T: Real, W: Write>(curve: &DecisionCurve<T>, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = DCA_COLUMNS.iter().map(|s| s.to_string()).collect();
    header.extend(curve.comparators.iter().map(|c| c.name.clone()));
    w.write_record(&header)?;
    for i in 0..curve.thresholds.len() {
        let mut rec = vec![
            cell(curve.thresholds[i]),
            cell(curve.nb_model[i]),
            cell(curve.nb_treat_all[i]),
            cell(curve.nb_treat_none[i]),
        ];
        rec.extend(curve.comparators.iter().map(|c| cell(c.net_benefit[i])));
        w.write_record(&rec)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn read_decision_curve<T: Real, R: Read>(input: R) -> Result<DecisionCurve<T>> {
    let mut r = csv::Reader::from_reader(input);
    let headers = r.headers()?.clone();
    expect_headers(&headers, &DCA_COLUMNS)?;
    let mut curve = DecisionCurve {
        thresholds: Vec::new(),
        nb_model: Vec::new(),
        nb_treat_all: Vec::new(),
        nb_treat_none: Vec::new(),
        comparators: headers
            .iter()
            .skip(DCA_COLUMNS.len())
            .map(|name| Comparator {
                name: name.to_string(),
                net_benefit: Vec::new(),
            })
            .collect(),
    };
    for (row, rec) in r.records().enumerate() {
        let rec = rec?;
        curve.thresholds.push(parse(&rec[0], row, "threshold")?);
        curve.nb_model.push(parse(&rec[1], row, "nb_model")?);
        curve.nb_treat_all.push(parse(&rec[2], row, "nb_all")?);
        curve.nb_treat_none.push(parse(&rec[3], row, "nb_none")?);
        for (k, c) in curve.comparators.iter_mut().enumerate() {
            c.net_benefit
                .push(parse(&rec[DCA_COLUMNS.len() + k], row, &c.name)?);
        }
    }
    Ok(curve)
}

const CAL_COLUMNS: [&str; 5] = ["lower", "upper", "count", "mean_predicted", "observed_rate"];

pub fn write_calibration_curve<T: Real, W: Write>(
    bins: &[CalibrationBin<T>],
    out: W,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CAL_COLUMNS)?;
    for b in bins {
        w.write_record([
            cell(b.lower),
            cell(b.upper),
            b.count.to_string(),
            opt_cell(b.mean_predicted),
            opt_cell(b.observed_rate),
        ])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn read_calibration_curve<T: Real, R: Read>(input: R) -> Result<Vec<CalibrationBin<T>>> {
    let mut r = csv::Reader::from_reader(input);
    expect_headers(r.headers()?, &CAL_COLUMNS)?;
    r.records()
        .enumerate()
        .map(|(row, rec)| {
            let rec = rec?;
            Ok(CalibrationBin {
                lower: parse(&rec[0], row, "lower")?,
                upper: parse(&rec[1], row, "upper")?,
                count: rec[2].trim().parse().map_err(|_| AuditError::NonNumeric {
                    row,
                    column: "count".into(),
                    value: rec[2].into(),
                })?,
                mean_predicted: parse_opt(&rec[3], row, "mean_predicted")?,
                observed_rate: parse_opt(&rec[4], row, "observed_rate")?,
            })
        })
        .collect()
}

const ROC_COLUMNS: [&str; 3] = ["threshold", "fpr", "tpr"];

/// ROC points; the AUC is not part of the file.
pub fn write_roc_curve<T: Real, W: Write>(roc: &RocCurve<T>, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(ROC_COLUMNS)?;
    for i in 0..roc.thresholds.len() {
        w.write_record([cell(roc.thresholds[i]), cell(roc.fpr[i]), cell(roc.tpr[i])])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// `(thresholds, fpr, tpr)`.
pub fn read_roc_curve<T: Real, R: Read>(input: R) -> Result<(Vec<T>, Vec<T>, Vec<T>)> {
    let mut r = csv::Reader::from_reader(input);
    expect_headers(r.headers()?, &ROC_COLUMNS)?;
    let (mut t, mut f, mut p) = (Vec::new(), Vec::new(), Vec::new());
    for (row, rec) in r.records().enumerate() {
        let rec = rec?;
        t.push(parse(&rec[0], row, "threshold")?);
        f.push(parse(&rec[1], row, "fpr")?);
        p.push(parse(&rec[2], row, "tpr")?);
    }
    Ok((t, f, p))
}

pub fn write_attribution<W: Write>(a: &Attribution, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["feature", "value"])?;
    for (name, v) in a.feature_names.iter().zip(&a.values) {
        w.write_record([name.clone(), cell(*v)])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// `(feature, value)` pairs.
pub fn read_attribution<R: Read>(input: R) -> Result<Vec<(String, f64)>> {
    let mut r = csv::Reader::from_reader(input);
    expect_headers(r.headers()?, &["feature", "value"])?;
    r.records()
        .enumerate()
        .map(|(row, rec)| {
            let rec = rec?;
            Ok((rec[0].to_string(), parse(&rec[1], row, "value")?))
        })
        .collect()
}

/// One row per attacked instance: original index, label, flip flag, then the
/// adversarial features.
pub fn write_adversarial<W: Write>(
    feature_names: &[String],
    labels: &[u8],
    adversarial: &[Vec<f64>],
    flipped: &[bool],
    out: W,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["row".to_string(), "label".into(), "flipped".into()];
    header.extend(feature_names.iter().cloned());
    w.write_record(&header)?;
    for (i, x) in adversarial.iter().enumerate() {
        let mut rec = vec![
            i.to_string(),
            labels[i].to_string(),
            u8::from(flipped[i]).to_string(),
        ];
        rec.extend(x.iter().map(|&v| cell(v)));
        w.write_record(&rec)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}
