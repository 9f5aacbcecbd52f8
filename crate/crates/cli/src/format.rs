//! Report serialization: JSON with every float written to 17 significant
//! digits, and flat CSV tables.

use std::io;

use serde::Serialize;
use serde_json::ser::Formatter;

use qfb_core::protocol::ProtocolTrace;
use qfb_core::verify::CheckResult;
use qfb_core::BoundReport;

use crate::{CliError, CliResult};

/// Writes floats as `d.dddddddddddddddde±x`, enough to round-trip any
/// double.
struct SeventeenDigits;

impl Formatter for SeventeenDigits {
    fn write_f64<W: ?Sized + io::Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        write!(writer, "{value:.16e}")
    }

    fn write_f32<W: ?Sized + io::Write>(&mut self, writer: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(writer, value as f64)
    }
}

pub fn to_json<T: Serialize + ?Sized>(value: &T) -> serde_json::Result<String> {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, SeventeenDigits);
    value.serialize(&mut ser)?;
    buf.push(b'\n');
    Ok(String::from_utf8(buf).expect("JSON is UTF-8"))
}

fn table(header: &[&str], rows: Vec<Vec<String>>) -> CliResult<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| CliError { code: crate::EXIT_PARSE, message: e.to_string() };
    w.write_record(header).map_err(err)?;
    for r in rows {
        w.write_record(&r).map_err(err)?;
    }
    let bytes = w.into_inner().map_err(|e| CliError { code: crate::EXIT_PARSE, message: e.to_string() })?;
    Ok(String::from_utf8(bytes).expect("CSV is UTF-8"))
}

fn num(x: f64) -> String {
    format!("{x:.16e}")
}

fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

pub fn bound_csv(report: &BoundReport, rate: Option<f64>) -> CliResult<String> {
    table(
        &["value_bits", "iterations", "gap", "constraint_slack", "rate_bound_bits"],
        vec![vec![
            num(report.value),
            report.iterations.to_string(),
            num(report.duality_gap_estimate),
            opt(report.constraint_slack),
            opt(rate),
        ]],
    )
}

pub fn verify_csv(results: &[CheckResult]) -> CliResult<String> {
    let rows = results
        .iter()
        .map(|r| {
            vec![
                r.name.clone(),
                r.trials.to_string(),
                r.violations.to_string(),
                r.numerical_zeros.to_string(),
                num(r.worst_margin),
                r.seed.to_string(),
            ]
        })
        .collect();
    table(&["name", "trials", "violations", "numerical_zeros", "worst_margin", "seed"], rows)
}

/// One row per round; the conditional column is filled for mixture runs.
pub fn trace_csv(trace: &ProtocolTrace) -> CliResult<String> {
    let rows = trace
        .rounds
        .iter()
        .map(|r| {
            vec![
                r.round.to_string(),
                num(r.monotone_before),
                num(r.monotone_after),
                num(r.input_energy),
                num(r.channel_output_entropy),
                opt(r.conditional_output_entropy),
            ]
        })
        .collect();
    table(
        &["round", "monotone_before", "monotone_after", "input_energy", "output_entropy", "conditional_output_entropy"],
        rows,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_roundtrip_exactly() {
        let xs = vec![0.1, 1.0 / 3.0, 1e-300, -2.5e17, 0.0, 0.75];
        let text = to_json(&xs).unwrap();
        assert!(text.contains("1.0000000000000001e-1"));
        let back: Vec<f64> = serde_json::from_str(&text).unwrap();
        assert_eq!(back, xs);
    }

    #[test]
    fn strings_are_escaped() {
        let text = to_json(&serde_json::json!({"a\"b": "c\nd"})).unwrap();
        let back: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(back["a\"b"], "c\nd");
    }
}
