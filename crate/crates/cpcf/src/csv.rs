//! Run-log CSV files.
//!
//! Layout: a block of `# key=value` lines echoing the effective config,
//! then the fixed header, then one row per evaluation. Floats use C-style
//! `%.10g`. Base rows leave `a_prev`, `cpcf` and `q_alpha` empty.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use cpcf_core::continual::Method;
use cpcf_core::metrics::{CorrelationCell, OmegaReport, RunLog, RunRecord};

use crate::{CliError, Result};

pub const CSV_HEADER: &str = "run_id,seed,dataset,method,task_index,epoch,a_prev,a_new,cpcf,q_alpha,alpha,calib_ratio,lr,lambda";
pub const OMEGA_HEADER: &str = "run_id,a_ideal,omega_base,omega_new,omega_all,omega_prev";
pub const TABLE_DATASETS: [&str; 4] = ["mnist", "cifar10", "fashionmnist", "kmnist"];
pub const INSUFFICIENT: &str = "insufficient data";

/// `printf("%.10g", v)`.
pub fn fmt_g10(v: f64) -> String {
    if v == 0.0 {
        return if v.is_sign_negative() { "-0".into() } else { "0".into() };
    }
    if !v.is_finite() {
        return if v.is_nan() {
            "nan".into()
        } else if v > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        };
    }
    const P: i32 = 10;
    // the exponent after rounding to P significant digits decides the style
    let sci = format!("{:.*e}", (P - 1) as usize, v);
    let (mantissa, exp) = sci.split_once('e').expect("exponent");
    let exp: i32 = exp.parse().expect("exponent digits");
    if exp < -4 || exp >= P {
        let m = trim_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{m}e{sign}{:02}", exp.abs())
    } else {
        let decimals = (P - 1 - exp) as usize;
        trim_zeros(&format!("{v:.decimals$}")).to_string()
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(fmt_g10).unwrap_or_default()
}

pub fn format_record(r: &RunRecord) -> String {
    format!(
        "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
        r.run_id,
        r.seed,
        r.dataset,
        r.method.name(),
        r.task_index,
        r.epoch,
        opt(r.a_prev),
        fmt_g10(r.a_new),
        opt(r.cpcf),
        opt(r.q_alpha),
        fmt_g10(r.alpha),
        fmt_g10(r.calib_ratio),
        fmt_g10(r.lr),
        fmt_g10(r.lambda),
    )
}

pub fn format_echo(echo: &[(String, String)]) -> String {
    echo.iter().map(|(k, v)| format!("# {k}={v}\n")).collect()
}

/// Whole file as it would be written.
pub fn render_runlog(echo: &[(String, String)], log: &RunLog) -> String {
    let mut out = format_echo(echo);
    out.push_str(CSV_HEADER);
    out.push('\n');
    for r in &log.records {
        out.push_str(&format_record(r));
        out.push('\n');
    }
    out
}

/// Appends rows as they are produced so an aborted run leaves a valid prefix.
pub struct RunLogWriter {
    path: PathBuf,
    out: BufWriter<File>,
}

impl RunLogWriter {
    pub fn create(path: &Path, echo: &[(String, String)]) -> Result<Self> {
        let file = File::create(path).map_err(|e| CliError::io(path, e))?;
        let mut w = RunLogWriter {
            path: path.to_path_buf(),
            out: BufWriter::new(file),
        };
        let head = format!("{}{CSV_HEADER}\n", format_echo(echo));
        w.write(&head)?;
        Ok(w)
    }

    fn write(&mut self, s: &str) -> Result<()> {
        self.out
            .write_all(s.as_bytes())
            .and_then(|_| self.out.flush())
            .map_err(|e| CliError::io(&self.path, e))
    }

    pub fn append(&mut self, r: &RunRecord) -> Result<()> {
        let line = format!("{}\n", format_record(r));
        self.write(&line)
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParsedRunLog {
    pub echo: Vec<(String, String)>,
    pub log: RunLog,
}

impl ParsedRunLog {
    pub fn echo_value(&self, key: &str) -> Option<&str> {
        self.echo.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }
}

fn line_err(line: usize, msg: impl std::fmt::Display) -> CliError {
    CliError::Data(format!("line {line}: {msg}"))
}

fn parse_float(field: &str, name: &str, line: usize) -> Result<f64> {
    field.parse().map_err(|_| line_err(line, format!("{name} '{field}' is not a number")))
}

fn parse_opt(field: &str, name: &str, line: usize) -> Result<Option<f64>> {
    if field.is_empty() {
        Ok(None)
    } else {
        parse_float(field, name, line).map(Some)
    }
}

fn parse_int<T: std::str::FromStr>(field: &str, name: &str, line: usize) -> Result<T> {
    field.parse().map_err(|_| line_err(line, format!("{name} '{field}' is not an integer")))
}

/// Parses a run-log file. Errors carry 1-based line numbers.
pub fn parse_runlog(text: &str) -> Result<ParsedRunLog> {
    let mut echo = Vec::new();
    let mut records = Vec::new();
    let mut header_seen = false;
    for (i, raw) in text.lines().enumerate() {
        let n = i + 1;
        if !header_seen {
            if let Some(rest) = raw.strip_prefix('#') {
                let (k, v) = rest
                    .trim_start()
                    .split_once('=')
                    .ok_or_else(|| line_err(n, "echo line is not '# key=value'"))?;
                echo.push((k.to_string(), v.to_string()));
                continue;
            }
            if raw != CSV_HEADER {
                return Err(line_err(n, format!("expected header '{CSV_HEADER}'")));
            }
            header_seen = true;
            continue;
        }
        if raw.is_empty() {
            continue;
        }
        let f: Vec<&str> = raw.split(',').collect();
        if f.len() != 14 {
            return Err(line_err(n, format!("expected 14 fields, found {}", f.len())));
        }
        records.push(RunRecord {
            run_id: f[0].to_string(),
            seed: parse_int(f[1], "seed", n)?,
            dataset: f[2].to_string(),
            method: Method::parse(f[3]).ok_or_else(|| line_err(n, format!("unknown method '{}'", f[3])))?,
            task_index: parse_int(f[4], "task_index", n)?,
            epoch: parse_int(f[5], "epoch", n)?,
            a_prev: parse_opt(f[6], "a_prev", n)?,
            a_new: parse_float(f[7], "a_new", n)?,
            cpcf: parse_opt(f[8], "cpcf", n)?,
            q_alpha: parse_opt(f[9], "q_alpha", n)?,
            alpha: parse_float(f[10], "alpha", n)?,
            calib_ratio: parse_float(f[11], "calib_ratio", n)?,
            lr: parse_float(f[12], "lr", n)?,
            lambda: parse_float(f[13], "lambda", n)?,
            a_base: None,
            a_all: None,
            param_hash: None,
        });
    }
    if !header_seen {
        return Err(line_err(text.lines().count().max(1), "missing CSV header"));
    }
    Ok(ParsedRunLog {
        echo,
        log: RunLog::new(records),
    })
}

pub fn read_runlog(path: &Path) -> Result<ParsedRunLog> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    parse_runlog(&text).map_err(|e| match e {
        CliError::Data(m) => CliError::Data(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn render_omega(run_id: &str, o: &OmegaReport) -> String {
    format!(
        "{OMEGA_HEADER}\n{run_id},{},{},{},{},{}\n",
        fmt_g10(o.a_ideal),
        fmt_g10(o.omega_base),
        fmt_g10(o.omega_new),
        fmt_g10(o.omega_all),
        fmt_g10(o.omega_prev)
    )
}

/// Correlation table in the `group,method,<datasets...>` layout. Datasets
/// outside the four standard columns are appended in name order.
pub fn render_table(cells: &[CorrelationCell]) -> String {
    let extra: BTreeSet<&str> = cells
        .iter()
        .map(|c| c.dataset.as_str())
        .filter(|d| !TABLE_DATASETS.contains(d))
        .collect();
    let columns: Vec<&str> = TABLE_DATASETS.iter().copied().chain(extra).collect();
    let mut out = format!("group,method,{}\n", columns.join(","));
    let mut rows: Vec<(f64, Method)> = Vec::new();
    for c in cells {
        if !rows.iter().any(|(g, m)| g.to_bits() == c.group.to_bits() && *m == c.method) {
            rows.push((c.group, c.method));
        }
    }
    rows.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    for (g, m) in rows {
        let vals: Vec<String> = columns
            .iter()
            .map(|d| {
                cells
                    .iter()
                    .find(|c| c.group.to_bits() == g.to_bits() && c.method == m && c.dataset == *d)
                    .map(|c| c.dcor.map(fmt_g10).unwrap_or_else(|| INSUFFICIENT.to_string()))
                    .unwrap_or_default()
            })
            .collect();
        out.push_str(&format!("{},{},{}\n", fmt_g10(g), m.label(), vals.join(",")));
    }
    out
}
