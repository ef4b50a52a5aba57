//! Evaluation records, their CSV form, and the final-window score.

use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// First line of every metrics file.
pub const CSV_VERSION_LINE: &str = "# tecrl-metrics v1";
pub const CSV_COLUMNS: [&str; 10] = [
    "iteration",
    "eval_mean_return",
    "eval_std_return",
    "alpha",
    "cumulative_entropy_estimate",
    "step_entropy",
    "pev_loss",
    "pis_loss",
    "pim_loss",
    "tup_loss",
];

/// One evaluation point. Entropy estimates and losses are averages over the
/// updates since the previous evaluation (NaN if there were none).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub iteration: u64,
    pub eval_mean_return: f64,
    pub eval_std_return: f64,
    pub alpha: f64,
    pub cumulative_entropy_estimate: f64,
    pub step_entropy: f64,
    pub pev_loss: f64,
    pub pis_loss: f64,
    pub pim_loss: f64,
    pub tup_loss: f64,
}

pub fn write_csv<W: Write>(out: W, rows: &[RunMetrics]) -> Result<()> {
    let mut out = out;
    writeln!(out, "{CSV_VERSION_LINE}").map_err(|e| Error::io("<metrics>", e))?;
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(CSV_COLUMNS)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io("<metrics>", e))?;
    Ok(())
}

pub fn write_csv_file(path: &Path, rows: &[RunMetrics]) -> Result<()> {
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_csv(std::io::BufWriter::new(f), rows)
}

pub fn read_csv<R: BufRead>(mut input: R) -> Result<Vec<RunMetrics>> {
    let mut first = String::new();
    input.read_line(&mut first).map_err(|e| Error::io("<metrics>", e))?;
    if first.trim_end() != CSV_VERSION_LINE {
        return Err(Error::Config(format!(
            "metrics file must start with `{CSV_VERSION_LINE}`, found `{}`",
            first.trim_end()
        )));
    }
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(input);
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != CSV_COLUMNS {
        return Err(Error::Config(format!("unexpected metrics columns {header:?}")));
    }
    let mut rows: Vec<RunMetrics> = Vec::new();
    for rec in r.deserialize() {
        let row: RunMetrics = rec?;
        if let Some(prev) = rows.last() {
            if row.iteration <= prev.iteration {
                return Err(Error::Config(format!(
                    "metrics iterations must increase ({} after {})",
                    row.iteration, prev.iteration
                )));
            }
        }
        rows.push(row);
    }
    Ok(rows)
}

pub fn read_csv_file(path: &Path) -> Result<Vec<RunMetrics>> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(std::io::BufReader::new(f))
}

/// Mean and population standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Per-run best evaluation in the last tenth of training, averaged over runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalScore {
    pub per_seed: Vec<f64>,
    pub mean: f64,
    /// Population standard deviation across runs.
    pub std: f64,
    pub window: (f64, f64),
}

/// Highest `eval_mean_return` with iteration in `[0.9 total, total]`.
pub fn window_max(series: &[RunMetrics], total_iterations: u64) -> Result<f64> {
    let (from, to) = (0.9 * total_iterations as f64, total_iterations as f64);
    series
        .iter()
        .filter(|m| (m.iteration as f64) >= from && (m.iteration as f64) <= to)
        .map(|m| m.eval_mean_return)
        .fold(None, |best: Option<f64>, x| Some(best.map_or(x, |b| b.max(x))))
        .ok_or(Error::EmptyWindow { from, to })
}

pub fn final_score(runs: &[Vec<RunMetrics>], total_iterations: u64) -> Result<FinalScore> {
    if runs.is_empty() {
        return Err(Error::InvalidArgument("final score needs at least one run".into()));
    }
    let per_seed = runs
        .iter()
        .map(|s| window_max(s, total_iterations))
        .collect::<Result<Vec<_>>>()?;
    let (mean, std) = mean_std(&per_seed);
    Ok(FinalScore {
        per_seed,
        mean,
        std,
        window: (0.9 * total_iterations as f64, total_iterations as f64),
    })
}
