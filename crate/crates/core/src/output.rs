//! Flat result rows and their CSV / JSON-lines encodings.
//!
//! The CSV header is fixed by [`HEADER`] and versioned by
//! [`SCHEMA_VERSION`]. Floats are written with 17 significant digits so
//! every value parses back to the same `f64`; missing values are empty
//! cells. Free-text cells are sanitized so no field ever needs quoting.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

pub const SCHEMA_VERSION: u32 = 1;

pub const HEADER: [&str; 27] = [
    "schema_version",
    "run_id",
    "subcommand",
    "row_kind",
    "status",
    "noise_kind",
    "noise_params",
    "kappa",
    "tau",
    "n_grid",
    "scheme",
    "dt_max",
    "n_periods",
    "burn_in",
    "seed",
    "lambda_hat",
    "stderr",
    "value",
    "target",
    "extrapolated",
    "zeta_mean",
    "mu_mean",
    "slope",
    "mu_hat_birkhoff",
    "clamp_events",
    "wall_time_s",
    "detail",
];

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub schema_version: u32,
    pub run_id: String,
    pub subcommand: String,
    /// `estimate`, `point`, `fit`, `replica`, `summary`, `sample`, `scheme`,
    /// or `diagnostics` for a failed computation.
    pub row_kind: String,
    /// `ok`, `fail` (a checked property does not hold) or `error`.
    pub status: String,
    pub noise_kind: String,
    pub noise_params: String,
    pub kappa: Option<f64>,
    pub tau: Option<f64>,
    pub n_grid: Option<u64>,
    pub scheme: String,
    pub dt_max: Option<f64>,
    pub n_periods: Option<u64>,
    pub burn_in: Option<u64>,
    pub seed: Option<u64>,
    pub lambda_hat: Option<f64>,
    pub stderr: Option<f64>,
    /// Generic scalar result (constants, masses, deltas).
    pub value: Option<f64>,
    pub target: Option<f64>,
    pub extrapolated: Option<f64>,
    pub zeta_mean: Option<f64>,
    pub mu_mean: Option<f64>,
    pub slope: Option<f64>,
    pub mu_hat_birkhoff: Option<f64>,
    pub clamp_events: Option<u64>,
    pub wall_time_s: Option<f64>,
    /// `key=value` pairs separated by `;`.
    pub detail: String,
}

#[derive(Debug, thiserror::Error)]
pub enum OutputError {
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("schema: {0}")]
    Schema(String),
}

/// Makes free text safe for an unquoted CSV cell.
pub fn sanitize(text: &str) -> String {
    text.chars()
        .map(|c| match c {
            ',' | '\n' | '\r' => ' ',
            '"' => '\'',
            c => c,
        })
        .collect()
}

/// Formats a float with 17 significant digits.
pub fn format_f64(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        x.to_string()
    }
}

fn opt_f64(x: Option<f64>) -> String {
    x.map(format_f64).unwrap_or_default()
}

fn opt_u64(x: Option<u64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

fn parse_opt<T: std::str::FromStr>(cell: &str, name: &str) -> Result<Option<T>, OutputError> {
    if cell.is_empty() {
        return Ok(None);
    }
    cell.parse()
        .map(Some)
        .map_err(|_| OutputError::Schema(format!("column {name}: cannot parse `{cell}`")))
}

impl ResultRow {
    pub fn to_record(&self) -> Vec<String> {
        vec![
            self.schema_version.to_string(),
            sanitize(&self.run_id),
            sanitize(&self.subcommand),
            sanitize(&self.row_kind),
            sanitize(&self.status),
            sanitize(&self.noise_kind),
            sanitize(&self.noise_params),
            opt_f64(self.kappa),
            opt_f64(self.tau),
            opt_u64(self.n_grid),
            sanitize(&self.scheme),
            opt_f64(self.dt_max),
            opt_u64(self.n_periods),
            opt_u64(self.burn_in),
            opt_u64(self.seed),
            opt_f64(self.lambda_hat),
            opt_f64(self.stderr),
            opt_f64(self.value),
            opt_f64(self.target),
            opt_f64(self.extrapolated),
            opt_f64(self.zeta_mean),
            opt_f64(self.mu_mean),
            opt_f64(self.slope),
            opt_f64(self.mu_hat_birkhoff),
            opt_u64(self.clamp_events),
            opt_f64(self.wall_time_s),
            sanitize(&self.detail),
        ]
    }

    pub fn from_record(rec: &csv::StringRecord) -> Result<Self, OutputError> {
        if rec.len() != HEADER.len() {
            return Err(OutputError::Schema(format!(
                "expected {} columns, found {}",
                HEADER.len(),
                rec.len()
            )));
        }
        let s = |i: usize| rec[i].to_string();
        let f = |i: usize| parse_opt::<f64>(&rec[i], HEADER[i]);
        let u = |i: usize| parse_opt::<u64>(&rec[i], HEADER[i]);
        Ok(ResultRow {
            schema_version: parse_opt::<u32>(&rec[0], HEADER[0])?
                .ok_or_else(|| OutputError::Schema("missing schema_version".into()))?,
            run_id: s(1),
            subcommand: s(2),
            row_kind: s(3),
            status: s(4),
            noise_kind: s(5),
            noise_params: s(6),
            kappa: f(7)?,
            tau: f(8)?,
            n_grid: u(9)?,
            scheme: s(10),
            dt_max: f(11)?,
            n_periods: u(12)?,
            burn_in: u(13)?,
            seed: u(14)?,
            lambda_hat: f(15)?,
            stderr: f(16)?,
            value: f(17)?,
            target: f(18)?,
            extrapolated: f(19)?,
            zeta_mean: f(20)?,
            mu_mean: f(21)?,
            slope: f(22)?,
            mu_hat_birkhoff: f(23)?,
            clamp_events: u(24)?,
            wall_time_s: f(25)?,
            detail: s(26),
        })
    }

    /// Looks up `key` in the `detail` cell.
    pub fn detail_value(&self, key: &str) -> Option<&str> {
        self.detail.split(';').find_map(|kv| {
            let (k, v) = kv.split_once('=')?;
            (k == key).then_some(v)
        })
    }
}

/// Builds a `detail` cell from key/value pairs.
pub fn detail(pairs: &[(&str, String)]) -> String {
    pairs
        .iter()
        .map(|(k, v)| format!("{k}={}", sanitize(v).replace(';', " ")))
        .collect::<Vec<_>>()
        .join(";")
}

pub fn write_csv<W: Write>(out: W, rows: &[ResultRow]) -> Result<(), OutputError> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .quote_style(csv::QuoteStyle::Necessary)
        .from_writer(out);
    w.write_record(HEADER)?;
    for row in rows {
        w.write_record(row.to_record())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<R: Read>(input: R) -> Result<Vec<ResultRow>, OutputError> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let header = r.headers()?.clone();
    if header.iter().ne(HEADER.iter().copied()) {
        return Err(OutputError::Schema("header does not match the schema".into()));
    }
    r.records()
        .map(|rec| ResultRow::from_record(&rec?))
        .collect()
}

pub fn write_json_lines<W: Write>(mut out: W, rows: &[ResultRow]) -> Result<(), OutputError> {
    for row in rows {
        serde_json::to_writer(&mut out, row)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_json_lines<R: Read>(input: R) -> Result<Vec<ResultRow>, OutputError> {
    let mut text = String::new();
    let mut input = input;
    input.read_to_string(&mut text)?;
    text.lines()
        .filter(|l| !l.is_empty())
        .map(|l| serde_json::from_str(l).map_err(OutputError::from))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> ResultRow {
        ResultRow {
            schema_version: SCHEMA_VERSION,
            run_id: "00ff".into(),
            subcommand: "lyapunov".into(),
            row_kind: "estimate".into(),
            status: "ok".into(),
            noise_kind: "piecewise".into(),
            noise_params: "m=4;law=rademacher;sigma=1".into(),
            kappa: Some(1.0),
            tau: Some(0.1),
            n_grid: Some(256),
            scheme: "strang_split".into(),
            dt_max: Some(1e-3),
            n_periods: Some(1000),
            burn_in: Some(13),
            seed: Some(7),
            lambda_hat: Some(std::f64::consts::PI / 7.0),
            stderr: Some(1.0 / 3.0),
            clamp_events: Some(0),
            detail: detail(&[("note", "a, b".into())]),
            ..ResultRow::default()
        }
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let rows = vec![sample(), ResultRow::default()];
        let mut buf = Vec::new();
        write_csv(&mut buf, &rows).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(!text.contains('"'));
        assert!(!text.contains('\r'));
        assert!(text.starts_with("schema_version,run_id,"));
        let back = read_csv(buf.as_slice()).unwrap();
        assert_eq!(back, rows);
    }

    #[test]
    fn json_round_trip_is_exact() {
        let rows = vec![sample()];
        let mut buf = Vec::new();
        write_json_lines(&mut buf, &rows).unwrap();
        assert_eq!(read_json_lines(buf.as_slice()).unwrap(), rows);
    }

    #[test]
    fn floats_carry_seventeen_digits() {
        assert_eq!(format_f64(0.1), "1.0000000000000001e-1");
        assert_eq!(format_f64(0.1).parse::<f64>().unwrap(), 0.1);
        assert_eq!(format_f64(f64::NAN), "NaN");
    }

    #[test]
    fn detail_lookup() {
        let r = sample();
        assert_eq!(r.detail_value("note"), Some("a  b"));
        assert_eq!(r.detail_value("missing"), None);
    }
}
