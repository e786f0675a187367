use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{atomic_write, read_file};

pub const CSV_HEADER: &str = "experiment,checkpoint,condition,mode,ratio_or_count,language,ppl,tokens,seed";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub experiment: String,
    pub checkpoint: String,
    pub condition: String,
    pub mode: String,
    /// Ratio for scatter cells, dimension/sample count for others, empty for baselines.
    pub ratio_or_count: String,
    pub language: String,
    pub ppl: f64,
    pub tokens: usize,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub experiment: String,
    pub rows: Vec<EvalRow>,
    pub metadata: serde_json::Value,
}

fn check_field(s: &str) -> Result<&str> {
    if s.contains([',', '\n', '"']) {
        return Err(Error::Input(format!("CSV field '{s}' contains a separator")));
    }
    Ok(s)
}

impl EvalReport {
    pub fn new(experiment: &str) -> Self {
        Self { experiment: experiment.to_string(), rows: Vec::new(), metadata: serde_json::json!({}) }
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let seed = r.seed.map(|s| s.to_string()).unwrap_or_default();
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                check_field(&r.experiment)?,
                check_field(&r.checkpoint)?,
                check_field(&r.condition)?,
                check_field(&r.mode)?,
                check_field(&r.ratio_or_count)?,
                check_field(&r.language)?,
                r.ppl,
                r.tokens,
                seed
            )
            .expect("string write");
        }
        Ok(out)
    }

    pub fn from_csv(text: &str) -> Result<Vec<EvalRow>> {
        let mut lines = text.lines();
        if lines.next() != Some(CSV_HEADER) {
            return Err(Error::Input("report CSV has an unexpected header".into()));
        }
        lines
            .map(|line| {
                let f: Vec<&str> = line.split(',').collect();
                if f.len() != 9 {
                    return Err(Error::Input(format!("report row has {} fields: {line}", f.len())));
                }
                let num = |s: &str| s.parse::<f64>().map_err(|_| Error::Input(format!("bad number '{s}'")));
                Ok(EvalRow {
                    experiment: f[0].into(),
                    checkpoint: f[1].into(),
                    condition: f[2].into(),
                    mode: f[3].into(),
                    ratio_or_count: f[4].into(),
                    language: f[5].into(),
                    ppl: num(f[6])?,
                    tokens: f[7].parse().map_err(|_| Error::Input(format!("bad count '{}'", f[7])))?,
                    seed: if f[8].is_empty() {
                        None
                    } else {
                        Some(f[8].parse().map_err(|_| Error::Input(format!("bad seed '{}'", f[8])))?)
                    },
                })
            })
            .collect()
    }

    /// Path of the JSON sidecar for a CSV path.
    pub fn sidecar_path(csv: &Path) -> PathBuf {
        csv.with_extension("json")
    }

    /// Write the CSV and its JSON sidecar (full report including metadata).
    pub fn save(&self, csv: &Path) -> Result<()> {
        atomic_write(csv, self.to_csv()?.as_bytes())?;
        atomic_write(&Self::sidecar_path(csv), serde_json::to_string_pretty(self)?.as_bytes())
    }

    pub fn load(csv: &Path) -> Result<Self> {
        let text = read_file(&Self::sidecar_path(csv))?;
        Ok(serde_json::from_slice(&text)?)
    }

    pub fn rows_where<'a>(&'a self, condition: &'a str) -> impl Iterator<Item = &'a EvalRow> + 'a {
        self.rows.iter().filter(move |r| r.condition == condition)
    }
}

pub fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    Some(if n % 2 == 1 { values[n / 2] } else { 0.5 * (values[n / 2 - 1] + values[n / 2]) })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(ppl: f64, seed: Option<u64>) -> EvalRow {
        EvalRow {
            experiment: "scatter".into(),
            checkpoint: "base".into(),
            condition: "bottom".into(),
            mode: "gauss_reinit".into(),
            ratio_or_count: "0.01".into(),
            language: "3".into(),
            ppl,
            tokens: 120,
            seed,
        }
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let mut r = EvalReport::new("scatter");
        r.rows.push(row(1.0 / 3.0, Some(4)));
        r.rows.push(row(12345.678901234567, None));
        let text = r.to_csv().unwrap();
        assert!(text.starts_with(CSV_HEADER));
        assert_eq!(EvalReport::from_csv(&text).unwrap(), r.rows);
    }

    #[test]
    fn separators_rejected() {
        let mut r = EvalReport::new("x");
        let mut bad = row(1.0, None);
        bad.condition = "a,b".into();
        r.rows.push(bad);
        assert!(r.to_csv().is_err());
    }

    #[test]
    fn median_odd_even() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&mut [4.0, 1.0, 2.0, 3.0]), Some(2.5));
        assert_eq!(median(&mut []), None);
    }
}
