use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::io::atomic_write;
use crate::numkernel::Tensor2D;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum HeatmapFormat {
    Pgm,
    Csv,
}

fn check_range(m: &Tensor2D) -> Result<()> {
    if let Some(v) = m.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::Input(format!("density value {v} outside [0, 1]")));
    }
    Ok(())
}

/// Binary greymap (P5, maxval 255), `round(255·v)` with halves rounded up.
pub fn pgm_bytes(m: &Tensor2D) -> Result<Vec<u8>> {
    check_range(m)?;
    let mut out = format!("P5\n{} {}\n255\n", m.cols(), m.rows()).into_bytes();
    out.extend(m.data().iter().map(|v| (255.0 * v + 0.5).floor() as u8));
    Ok(out)
}

/// Comma-separated rows with six decimals.
pub fn csv_text(m: &Tensor2D) -> Result<String> {
    check_range(m)?;
    let mut out = String::new();
    for r in 0..m.rows() {
        let row: Vec<String> = m.row(r).iter().map(|v| format!("{v:.6}")).collect();
        writeln!(out, "{}", row.join(",")).expect("string write");
    }
    Ok(out)
}

pub fn parse_csv(text: &str) -> Result<Tensor2D> {
    let rows: Vec<Vec<f64>> = text
        .lines()
        .filter(|l| !l.is_empty())
        .map(|l| {
            l.split(',')
                .map(|x| x.trim().parse::<f64>().map_err(|_| Error::Input(format!("bad heatmap value '{x}'"))))
                .collect()
        })
        .collect::<Result<_>>()?;
    let refs: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
    Tensor2D::from_rows(&refs)
}

pub fn export_heatmap(m: &Tensor2D, path: &Path, format: HeatmapFormat) -> Result<()> {
    match format {
        HeatmapFormat::Pgm => atomic_write(path, &pgm_bytes(m)?),
        HeatmapFormat::Csv => atomic_write(path, csv_text(m)?.as_bytes()),
    }
}
