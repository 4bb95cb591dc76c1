//! CSV ingestion and emission.
//!
//! Floats are written with Rust's shortest round-trip formatting, so an
//! emitted file reads back bit-identically.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{EstimateRecord, SPACING_TOL};
use crate::model::{Sample, TruthPoint};

pub const SAMPLE_HEADER: [&str; 4] = ["t", "f_av", "p_pfc_tot", "p_e_pfc"];
pub const TRUTH_HEADER: [&str; 3] = ["t", "h_tot", "p_m_pfc"];
pub const ESTIMATE_HEADER: [&str; 6] = ["t", "eta1_hat", "eta2_hat", "h_tot_hat", "p_m_pfc_hat", "delta_l2"];

/// Unit of the `f_av` column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum FreqUnit {
    Pu,
    Hz,
}

fn csv_err(path: &Path, line: u64, msg: impl Into<String>) -> Error {
    Error::Csv { path: path.display().to_string(), line, msg: msg.into() }
}

fn reader(path: &Path) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(file))
}

fn check_header(path: &Path, rdr: &mut csv::Reader<File>, expected: &[&str]) -> Result<()> {
    let header = rdr.headers().map_err(|e| csv_err(path, 1, e.to_string()))?;
    if header.iter().ne(expected.iter().copied()) {
        return Err(csv_err(path, 1, format!("expected header `{}`, found `{}`", expected.join(","), header.iter().collect::<Vec<_>>().join(","))));
    }
    Ok(())
}

/// Rows of a file as floats with the raw cells; empty cells become `None`.
type RawRow = (u64, Vec<Option<f64>>, csv::StringRecord);

fn rows_raw(path: &Path, expected: &[&str]) -> Result<Vec<RawRow>> {
    let mut rdr = reader(path)?;
    check_header(path, &mut rdr, expected)?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            csv_err(path, line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != expected.len() {
            return Err(csv_err(path, line, format!("expected {} fields, found {}", expected.len(), rec.len())));
        }
        let mut vals = Vec::with_capacity(rec.len());
        for (name, cell) in expected.iter().zip(rec.iter()) {
            if cell.is_empty() {
                vals.push(None);
                continue;
            }
            let v: f64 = cell.parse().map_err(|_| csv_err(path, line, format!("column `{name}`: `{cell}` is not a number")))?;
            vals.push(Some(v));
        }
        out.push((line, vals, rec));
    }
    Ok(out)
}

fn rows(path: &Path, expected: &[&str]) -> Result<Vec<(u64, Vec<Option<f64>>)>> {
    Ok(rows_raw(path, expected)?.into_iter().map(|(l, v, _)| (l, v)).collect())
}

fn required(path: &Path, line: u64, v: Option<f64>, name: &str) -> Result<f64> {
    v.ok_or_else(|| csv_err(path, line, format!("column `{name}` is empty")))
}

/// Check strictly increasing, uniformly spaced time stamps; returns the spacing.
pub fn check_spacing(times: &[f64]) -> Result<Option<f64>> {
    if times.len() < 2 {
        return Ok(None);
    }
    let dt = times[1] - times[0];
    if !(dt > 0.0) {
        return Err(Error::SpacingMismatch { t: times[1], expected: f64::NAN, got: dt });
    }
    for w in times.windows(2) {
        let gap = w[1] - w[0];
        if !((gap - dt).abs() <= SPACING_TOL) {
            return Err(Error::SpacingMismatch { t: w[1], expected: dt, got: gap });
        }
    }
    Ok(Some(dt))
}

fn infer_unit(values: &[f64], f_nom: f64) -> Option<FreqUnit> {
    let all_near = |c: f64| values.iter().all(|v| (v / c - 1.0).abs() < 0.5);
    match (all_near(1.0), all_near(f_nom)) {
        (true, false) => Some(FreqUnit::Pu),
        (false, true) => Some(FreqUnit::Hz),
        _ => None,
    }
}

/// Read a measurement stream. Without `unit` the frequency unit is inferred
/// from the values and an error is raised when it is ambiguous.
pub fn ingest_csv(path: &Path, unit: Option<FreqUnit>, f_nom: f64) -> Result<Vec<Sample>> {
    let rows = rows_raw(path, &SAMPLE_HEADER)?;
    let mut samples = Vec::with_capacity(rows.len());
    for (line, v, _) in &rows {
        samples.push(Sample {
            t: required(path, *line, v[0], "t")?,
            omega_av: required(path, *line, v[1], "f_av")?,
            p_pfc_tot: required(path, *line, v[2], "p_pfc_tot")?,
            p_e_pfc: required(path, *line, v[3], "p_e_pfc")?,
        });
    }
    let freqs: Vec<f64> = samples.iter().map(|s| s.omega_av).collect();
    let unit = match unit.or_else(|| infer_unit(&freqs, f_nom)) {
        Some(u) => u,
        None if samples.is_empty() => FreqUnit::Pu,
        None => {
            return Err(csv_err(path, 0, format!("cannot tell whether f_av is in pu or Hz (f_nom = {f_nom}); pass the unit explicitly")))
        }
    };
    if unit == FreqUnit::Hz {
        for (s, (_, _, rec)) in samples.iter_mut().zip(&rows) {
            s.omega_av = hz_text_to_pu(&rec[1], f_nom).unwrap_or(s.omega_av / f_nom);
        }
    }
    let times: Vec<f64> = samples.iter().map(|s| s.t).collect();
    check_spacing(&times)?;
    Ok(samples)
}

/// Decimal text arithmetic for unit conversion by an integer nominal
/// frequency. Multiplying the shortest decimal of a pu value by `f_nom`
/// and dividing the text back is exact, so Hz files read back to the very
/// same pu values.
mod decimal {
    /// `(negative, digits, exp)` with value `digits * 10^exp`.
    pub(super) struct Dec {
        neg: bool,
        digits: Vec<u8>,
        exp: i32,
    }

    pub(super) fn parse(text: &str) -> Option<Dec> {
        let t = text.trim();
        let (neg, t) = match t.strip_prefix('-') {
            Some(rest) => (true, rest),
            None => (false, t.strip_prefix('+').unwrap_or(t)),
        };
        let (mant, exp) = match t.find(['e', 'E']) {
            Some(i) => (&t[..i], t[i + 1..].parse::<i32>().ok()?),
            None => (t, 0),
        };
        let (int, frac) = mant.split_once('.').unwrap_or((mant, ""));
        if int.is_empty() && frac.is_empty() {
            return None;
        }
        let mut digits = Vec::with_capacity(int.len() + frac.len());
        for c in int.bytes().chain(frac.bytes()) {
            if !c.is_ascii_digit() {
                return None;
            }
            digits.push(c - b'0');
        }
        Some(Dec { neg, digits, exp: exp - frac.len() as i32 })
    }

    pub(super) fn of_f64(x: f64) -> Dec {
        parse(&format!("{x:e}")).expect("float formatting is valid decimal")
    }

    pub(super) fn mul(mut d: Dec, f: u64) -> Dec {
        let mut carry = 0u64;
        for digit in d.digits.iter_mut().rev() {
            let v = *digit as u64 * f + carry;
            *digit = (v % 10) as u8;
            carry = v / 10;
        }
        while carry > 0 {
            d.digits.insert(0, (carry % 10) as u8);
            carry /= 10;
        }
        d
    }

    /// Long division, continued past the given digits until exact or 40
    /// significant digits.
    pub(super) fn div(d: Dec, f: u64) -> Dec {
        let mut out = Vec::with_capacity(d.digits.len() + 8);
        let mut rem = 0u64;
        let mut exp = d.exp;
        let mut it = d.digits.into_iter();
        loop {
            let next = match it.next() {
                Some(x) => x,
                None if rem == 0 => break,
                None if out.iter().skip_while(|&&x| x == 0).count() >= 40 => break,
                None => {
                    exp -= 1;
                    0
                }
            };
            let v = rem * 10 + next as u64;
            out.push((v / f) as u8);
            rem = v % f;
        }
        Dec { neg: d.neg, digits: out, exp }
    }

    pub(super) fn to_f64(d: &Dec) -> f64 {
        let text: String = d.digits.iter().map(|x| char::from(b'0' + x)).collect();
        let v: f64 = format!("{text}e{}", d.exp).parse().expect("digits and exponent form a float");
        if d.neg {
            -v
        } else {
            v
        }
    }

    /// Plain positional notation.
    pub(super) fn to_plain(d: &Dec) -> String {
        let digits: String = d.digits.iter().map(|x| char::from(b'0' + x)).collect();
        let digits = digits.trim_start_matches('0');
        let sign = if d.neg && !digits.is_empty() { "-" } else { "" };
        if digits.is_empty() {
            return "0".into();
        }
        let body = if d.exp >= 0 {
            format!("{digits}{}", "0".repeat(d.exp as usize))
        } else {
            let k = (-d.exp) as usize;
            let (int, frac) = if digits.len() > k {
                (digits[..digits.len() - k].to_string(), digits[digits.len() - k..].to_string())
            } else {
                ("0".to_string(), format!("{}{digits}", "0".repeat(k - digits.len())))
            };
            let frac = frac.trim_end_matches('0');
            if frac.is_empty() {
                int
            } else {
                format!("{int}.{frac}")
            }
        };
        format!("{sign}{body}")
    }
}

/// `f_nom` as a small integer when exact decimal conversion applies.
fn integer_f_nom(f_nom: f64) -> Option<u64> {
    (f_nom > 0.0 && f_nom.fract() == 0.0 && f_nom <= 1e6).then_some(f_nom as u64)
}

fn pu_to_hz_text(omega: f64, f_nom: f64) -> String {
    match integer_f_nom(f_nom) {
        Some(f) if omega.is_finite() => decimal::to_plain(&decimal::mul(decimal::of_f64(omega), f)),
        _ => (omega * f_nom).to_string(),
    }
}

fn hz_text_to_pu(text: &str, f_nom: f64) -> Option<f64> {
    match (integer_f_nom(f_nom), decimal::parse(text)) {
        (Some(f), Some(d)) => Some(decimal::to_f64(&decimal::div(d, f))),
        _ => text.trim().parse::<f64>().ok().map(|v| v / f_nom),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    Ok(BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?))
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Write a table of optional floats with the given header.
pub fn write_table<I>(path: &Path, header: &[&str], rows: I) -> Result<()>
where
    I: IntoIterator<Item = Vec<Option<f64>>>,
{
    let mut w = create(path)?;
    let io = |e| Error::io(path, e);
    writeln!(w, "{}", header.join(",")).map_err(io)?;
    let mut line = String::new();
    for row in rows {
        line.clear();
        for (i, v) in row.into_iter().enumerate() {
            if i > 0 {
                line.push(',');
            }
            line.push_str(&fmt_opt(v));
        }
        writeln!(w, "{line}").map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn emit_samples(path: &Path, samples: &[Sample], unit: FreqUnit, f_nom: f64) -> Result<()> {
    let mut w = create(path)?;
    let io = |e| Error::io(path, e);
    writeln!(w, "{}", SAMPLE_HEADER.join(",")).map_err(io)?;
    for s in samples {
        let f = match unit {
            FreqUnit::Pu => s.omega_av.to_string(),
            FreqUnit::Hz => pu_to_hz_text(s.omega_av, f_nom),
        };
        writeln!(w, "{},{f},{},{}", s.t, s.p_pfc_tot, s.p_e_pfc).map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn emit_truth(path: &Path, truth: &[TruthPoint]) -> Result<()> {
    write_table(path, &TRUTH_HEADER, truth.iter().map(|p| vec![Some(p.t), Some(p.h_tot), Some(p.p_m_pfc)]))
}

pub fn emit_estimates(path: &Path, records: &[EstimateRecord]) -> Result<()> {
    write_table(
        path,
        &ESTIMATE_HEADER,
        records.iter().map(|r| vec![Some(r.t), Some(r.eta1_hat), Some(r.eta2_hat), r.h_tot_hat, r.p_m_pfc_hat, Some(r.delta_l2)]),
    )
}

pub fn ingest_truth(path: &Path) -> Result<Vec<TruthPoint>> {
    rows(path, &TRUTH_HEADER)?
        .into_iter()
        .map(|(line, v)| {
            Ok(TruthPoint {
                t: required(path, line, v[0], "t")?,
                h_tot: required(path, line, v[1], "h_tot")?,
                p_m_pfc: required(path, line, v[2], "p_m_pfc")?,
            })
        })
        .collect()
}

pub fn ingest_estimates(path: &Path) -> Result<Vec<EstimateRecord>> {
    rows(path, &ESTIMATE_HEADER)?
        .into_iter()
        .map(|(line, v)| {
            Ok(EstimateRecord {
                t: required(path, line, v[0], "t")?,
                eta1_hat: required(path, line, v[1], "eta1_hat")?,
                eta2_hat: required(path, line, v[2], "eta2_hat")?,
                h_tot_hat: v[3],
                p_m_pfc_hat: v[4],
                delta_l2: required(path, line, v[5], "delta_l2")?,
            })
        })
        .collect()
}
