//! Sample and distribution files. Every file starts with a
//! `# config_hash: <hex>` line followed by a CSV header; floats are written
//! with 17 significant digits so values round-trip exactly.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::targets::ExactDistribution;

const HASH_PREFIX: &str = "# config_hash:";

/// States of a sample file.
#[derive(Clone, Debug, PartialEq)]
pub enum States {
    Continuous(Vec<Vec<f64>>),
    Discrete(Vec<Vec<u8>>),
}

impl States {
    pub fn len(&self) -> usize {
        match self {
            States::Continuous(s) => s.len(),
            States::Discrete(s) => s.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> Option<usize> {
        match self {
            States::Continuous(s) => s.first().map(Vec::len),
            States::Discrete(s) => s.first().map(Vec::len),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SampleFile {
    pub config_hash: Option<String>,
    /// Column count of the state part, known even for empty files.
    pub dim: usize,
    pub states: States,
    /// Base log weights, when the file has a `log_w` column.
    pub log_w: Option<Vec<f64>>,
    /// Probabilities, when the file is an exact distribution.
    pub prob: Option<Vec<f64>>,
}

/// 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn header(dim: usize, extra: &[&str]) -> Vec<String> {
    (0..dim)
        .map(|i| format!("x_{i}"))
        .chain(extra.iter().map(|s| s.to_string()))
        .collect()
}

fn open_writer(path: &Path, hash: &str) -> Result<csv::Writer<BufWriter<File>>> {
    if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "{HASH_PREFIX} {hash}")?;
    Ok(csv::Writer::from_writer(out))
}

fn csv_err(e: csv::Error) -> Error {
    Error::Format(e.to_string())
}

/// Writes states with optional base log weights.
pub fn write_samples(path: &Path, hash: &str, dim: usize, states: &States, log_w: Option<&[f64]>) -> Result<()> {
    if let Some(w) = log_w {
        if w.len() != states.len() {
            return Err(Error::Shape("one log weight per sample required".into()));
        }
    }
    let mut wr = open_writer(path, hash)?;
    let extra: &[&str] = if log_w.is_some() { &["log_w"] } else { &[] };
    wr.write_record(header(dim, extra)).map_err(csv_err)?;
    for k in 0..states.len() {
        let mut row: Vec<String> = match states {
            States::Continuous(s) => s[k].iter().map(|&v| fmt_f64(v)).collect(),
            States::Discrete(s) => s[k].iter().map(|v| v.to_string()).collect(),
        };
        if row.len() != dim {
            return Err(Error::Shape(format!(
                "sample {k} has {} coordinates, expected {dim}",
                row.len()
            )));
        }
        if let Some(w) = log_w {
            row.push(fmt_f64(w[k]));
        }
        wr.write_record(&row).map_err(csv_err)?;
    }
    wr.flush()?;
    Ok(())
}

/// Writes an exact distribution: one row per state with its probability and
/// unnormalized log weight.
pub fn write_distribution(path: &Path, hash: &str, dist: &ExactDistribution) -> Result<()> {
    let mut wr = open_writer(path, hash)?;
    wr.write_record(header(dist.length, &["prob", "log_weight"]))
        .map_err(csv_err)?;
    for k in 0..dist.len() {
        let mut row: Vec<String> = dist.state(k).iter().map(|v| v.to_string()).collect();
        row.push(fmt_f64(dist.probs[k]));
        row.push(fmt_f64(dist.log_weights[k]));
        wr.write_record(&row).map_err(csv_err)?;
    }
    wr.flush()?;
    Ok(())
}

/// Reads a file written by [`write_samples`] or [`write_distribution`].
/// States are discrete when every state cell is a small integer.
pub fn read_samples(path: &Path) -> Result<SampleFile> {
    let mut reader = BufReader::new(File::open(path)?);
    let mut first = String::new();
    reader.read_line(&mut first)?;
    let (config_hash, rest): (Option<String>, Box<dyn Read>) = match first.strip_prefix(HASH_PREFIX) {
        Some(h) => (Some(h.trim().to_string()), Box::new(reader)),
        None => (None, Box::new(std::io::Cursor::new(first.into_bytes()).chain(reader))),
    };
    let mut rd = csv::Reader::from_reader(rest);
    let head: Vec<String> = rd.headers().map_err(csv_err)?.iter().map(str::to_string).collect();
    let dim = head.iter().take_while(|h| h.starts_with("x_")).count();
    for (i, h) in head[..dim].iter().enumerate() {
        if *h != format!("x_{i}") {
            return Err(Error::Format(format!("column {i} is `{h}`, expected `x_{i}`")));
        }
    }
    let col = |name: &str| head.iter().position(|h| h == name);
    let (lw_col, prob_col) = (col("log_w"), col("prob"));
    let mut cells: Vec<Vec<String>> = Vec::new();
    let mut log_w = lw_col.map(|_| Vec::new());
    let mut prob = prob_col.map(|_| Vec::new());
    for (r, rec) in rd.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let parse = |c: usize| -> Result<f64> {
            rec.get(c)
                .ok_or_else(|| Error::Format(format!("row {} is short", r + 1)))?
                .trim()
                .parse::<f64>()
                .map_err(|e| Error::Format(format!("row {}, column {c}: {e}", r + 1)))
        };
        if let (Some(c), Some(v)) = (lw_col, log_w.as_mut()) {
            v.push(parse(c)?);
        }
        if let (Some(c), Some(v)) = (prob_col, prob.as_mut()) {
            v.push(parse(c)?);
        }
        cells.push(rec.iter().take(dim).map(|s| s.trim().to_string()).collect());
    }
    let discrete = !cells.is_empty() && cells.iter().flatten().all(|c| c.parse::<u8>().is_ok());
    let states = if discrete {
        States::Discrete(
            cells
                .iter()
                .map(|row| row.iter().map(|c| c.parse().expect("checked")).collect())
                .collect(),
        )
    } else {
        let mut out = Vec::with_capacity(cells.len());
        for (r, row) in cells.iter().enumerate() {
            let v: std::result::Result<Vec<f64>, _> = row.iter().map(|c| c.parse::<f64>()).collect();
            out.push(v.map_err(|e| Error::Format(format!("row {}: {e}", r + 1)))?);
        }
        States::Continuous(out)
    };
    Ok(SampleFile {
        config_hash,
        dim,
        states,
        log_w,
        prob,
    })
}

/// Writes pretty JSON, creating parent directories.
pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Format(e.to_string()))?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}
