//! `run`, `sweep`, `plot`, `synth` and `verify`.

use std::fs;
use std::path::{Path, PathBuf};

use cpcf_core::continual::{run_curriculum_alphas, Method};
use cpcf_core::metrics::{correlation_table, omega_metrics, GroupBy, OmegaReport, RunLog, RunRecord};

use crate::config::ExperimentConfig;
use crate::csv::{self, fmt_g10, RunLogWriter};
use crate::datasets::{self, Corpus};
use crate::{checkpoint, plot, CliError, Result};

/// Echo keys that describe the data rather than configure the run.
pub const META_KEYS: [&str; 2] = ["input_dim", "split_hash"];

/// One finished (or aborted) run at one alpha.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub run_id: String,
    pub echo: Vec<(String, String)>,
    pub log: RunLog,
    pub omega: OmegaReport,
    pub csv_path: Option<PathBuf>,
}

/// Rebuilds the configuration from a run log's echo block.
pub fn config_from_echo(echo: &[(String, String)]) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::default();
    for (k, v) in echo {
        if !META_KEYS.contains(&k.as_str()) {
            cfg.set(k, v)?;
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

/// Trains one (method, seed, calib_ratio, lr) cell and evaluates it at every
/// alpha. With `out_dir`, rows stream to `<run_id>.csv` as they are produced
/// and Ω goes to `<run_id>.omega.csv`.
#[allow(clippy::too_many_arguments)]
pub fn execute_cell(
    cfg: &ExperimentConfig,
    corpus: &Corpus,
    method: Method,
    seed: u64,
    calib_ratio: f64,
    lr: f64,
    alphas: &[f64],
    out_dir: Option<&Path>,
    progress: &mut dyn FnMut(&RunRecord),
) -> Result<(Vec<RunResult>, cpcf_core::mlp::MlpModel)> {
    let stream = datasets::task_stream(corpus, calib_ratio, seed)?;
    let base = cfg.cell(method, seed, alphas[0], calib_ratio, lr);
    let curriculum = base.curriculum();
    let echoes: Vec<Vec<(String, String)>> = alphas
        .iter()
        .map(|&a| {
            let mut e = cfg.cell(method, seed, a, calib_ratio, lr).echo();
            e.push(("input_dim".into(), stream.input_dim().to_string()));
            e.push(("split_hash".into(), format!("{:016x}", stream.split_hash())));
            e
        })
        .collect();
    let run_ids: Vec<String> = alphas.iter().map(|&a| curriculum.run_id(&stream.dataset, a)).collect();

    let mut writers = Vec::new();
    if let Some(dir) = out_dir {
        for (id, echo) in run_ids.iter().zip(&echoes) {
            writers.push(RunLogWriter::create(&dir.join(format!("{id}.csv")), echo)?);
        }
    }
    let mut write_err: Option<CliError> = None;
    let outcome = run_curriculum_alphas(&curriculum, alphas, &stream, &mut |r| {
        progress(r);
        if let Some(i) = alphas.iter().position(|a| a.to_bits() == r.alpha.to_bits()) {
            if let Some(w) = writers.get_mut(i) {
                if let Err(e) = w.append(r) {
                    write_err.get_or_insert(e);
                }
            }
        }
    });
    if let Some(e) = write_err {
        return Err(e);
    }
    let outcome = outcome?;

    let mut results = Vec::new();
    for ((log, run_id), echo) in outcome.logs.into_iter().zip(run_ids).zip(echoes) {
        let omega = omega_metrics(&log, outcome.a_ideal)?;
        let csv_path = match out_dir {
            Some(dir) => {
                let p = dir.join(format!("{run_id}.omega.csv"));
                fs::write(&p, csv::render_omega(&run_id, &omega)).map_err(|e| CliError::io(&p, e))?;
                Some(dir.join(format!("{run_id}.csv")))
            }
            None => None,
        };
        results.push(RunResult {
            run_id,
            echo,
            log,
            omega,
            csv_path,
        });
    }
    Ok((results, outcome.model))
}

fn single<T>(items: &[T], key: &str) -> Result<()> {
    if items.len() != 1 {
        return Err(CliError::Config(format!("run takes a single {key}; use sweep for grids")));
    }
    Ok(())
}

/// One curriculum run per seed. Returns the CSV paths written.
pub fn cmd_run(cfg: &ExperimentConfig, progress: &mut dyn FnMut(&RunRecord)) -> Result<Vec<RunResult>> {
    cfg.validate()?;
    single(&cfg.methods, "method")?;
    single(&cfg.alphas, "alpha")?;
    single(&cfg.calib_ratios, "calib_ratio")?;
    single(&cfg.lrs, "lr")?;
    let corpus = datasets::load_corpus(cfg)?;
    create_dir(&cfg.output_dir)?;
    let mut out = Vec::new();
    for &seed in &cfg.seeds {
        let (mut results, model) = execute_cell(
            cfg,
            &corpus,
            cfg.methods[0],
            seed,
            cfg.calib_ratios[0],
            cfg.lrs[0],
            &cfg.alphas,
            Some(&cfg.output_dir),
            progress,
        )?;
        if cfg.save_model {
            checkpoint::save(&model, &cfg.output_dir.join(format!("{}.ckpt", results[0].run_id)))?;
        }
        out.append(&mut results);
    }
    Ok(out)
}

#[derive(Debug)]
pub struct SweepSummary {
    pub results: Vec<RunResult>,
    /// `(cell description, error)` for every cell that failed.
    pub failed: Vec<(String, CliError)>,
    pub table2: PathBuf,
    pub table3: PathBuf,
}

fn fixed_value(values: &[f64], preferred: f64) -> f64 {
    values.iter().copied().find(|v| *v == preferred).unwrap_or(values[0])
}

/// Runs every (calib_ratio, lr, method, seed) cell, evaluating all alphas per
/// trained model, then writes `table2.csv` (grouped by calibration ratio at
/// fixed alpha) and `table3.csv` (grouped by alpha at fixed ratio).
pub fn cmd_sweep(cfg: &ExperimentConfig, progress: &mut dyn FnMut(&str)) -> Result<SweepSummary> {
    cfg.validate()?;
    let corpus = datasets::load_corpus(cfg)?;
    create_dir(&cfg.output_dir)?;
    let mut results = Vec::new();
    let mut failed = Vec::new();
    for &calib in &cfg.calib_ratios {
        for &lr in &cfg.lrs {
            for &method in &cfg.methods {
                for &seed in &cfg.seeds {
                    let cell = format!("method={} seed={seed} calib_ratio={calib} lr={lr}", method.name());
                    progress(&cell);
                    match execute_cell(cfg, &corpus, method, seed, calib, lr, &cfg.alphas, Some(&cfg.output_dir), &mut |_| {}) {
                        Ok((mut r, _)) => results.append(&mut r),
                        Err(e) => failed.push((cell, e)),
                    }
                }
            }
        }
    }
    results.sort_by(|a, b| a.run_id.cmp(&b.run_id));

    let fixed_alpha = fixed_value(&cfg.alphas, 0.1);
    let fixed_calib = fixed_value(&cfg.calib_ratios, 0.1);
    let lr0 = cfg.lrs[0];
    let pick = |keep: &dyn Fn(&RunRecord) -> bool| -> Vec<RunLog> {
        results
            .iter()
            .filter(|r| r.log.records.first().is_some_and(|f| f.lr == lr0 && keep(f)))
            .map(|r| r.log.clone())
            .collect()
    };
    let t2 = correlation_table(&pick(&|f| f.alpha == fixed_alpha), GroupBy::CalibRatio, cfg.pooling);
    let t3 = correlation_table(&pick(&|f| f.calib_ratio == fixed_calib), GroupBy::Alpha, cfg.pooling);
    let table2 = cfg.output_dir.join("table2.csv");
    let table3 = cfg.output_dir.join("table3.csv");
    fs::write(&table2, csv::render_table(&t2)).map_err(|e| CliError::io(&table2, e))?;
    fs::write(&table3, csv::render_table(&t3)).map_err(|e| CliError::io(&table3, e))?;
    Ok(SweepSummary {
        results,
        failed,
        table2,
        table3,
    })
}

/// Writes `accuracy.svg`, `lr.svg` and `cpcf.svg` into `out_dir`.
pub fn cmd_plot(paths: &[PathBuf], out_dir: &Path) -> Result<Vec<PathBuf>> {
    let logs = paths
        .iter()
        .map(|p| csv::read_runlog(p).map(|parsed| parsed.log))
        .collect::<Result<Vec<_>>>()?;
    create_dir(out_dir)?;
    let charts = [
        ("accuracy.svg", plot::accuracy_chart(&logs)),
        ("lr.svg", plot::lr_chart(&logs)),
        ("cpcf.svg", plot::cpcf_chart(&logs)),
    ];
    let mut written = Vec::new();
    for (name, chart) in charts {
        let p = out_dir.join(name);
        fs::write(&p, chart.render()).map_err(|e| CliError::io(&p, e))?;
        written.push(p);
    }
    Ok(written)
}

/// Dumps the synthetic corpus as `label,f0,...,f{d-1}`.
pub fn cmd_synth(cfg: &ExperimentConfig, out: &Path) -> Result<usize> {
    let corpus = datasets::blobs_corpus(&cfg.blobs)?;
    let mut text = String::from("label");
    for i in 0..corpus.dim() {
        text.push_str(&format!(",f{i}"));
    }
    text.push('\n');
    for (row, label) in corpus.x().iter_rows().zip(corpus.y()) {
        text.push_str(&label.to_string());
        for v in row {
            text.push(',');
            text.push_str(&fmt_g10(*v));
        }
        text.push('\n');
    }
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    fs::write(out, text).map_err(|e| CliError::io(out, e))?;
    Ok(corpus.len())
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyReport {
    pub rows: usize,
    pub problems: Vec<String>,
    /// `Some(true)` when a re-run reproduced every data row.
    pub rerun_matched: Option<bool>,
}

impl VerifyReport {
    pub fn ok(&self) -> bool {
        self.problems.is_empty() && self.rerun_matched != Some(false)
    }
}

fn check_invariants(cfg: &ExperimentConfig, log: &RunLog, first_line: usize, problems: &mut Vec<String>) {
    let mut prev_key = None;
    for (i, r) in log.records.iter().enumerate() {
        let at = format!("line {}", first_line + i);
        let key = (r.task_index, r.epoch);
        if prev_key.is_some_and(|p| p >= key) {
            problems.push(format!("{at}: rows not strictly ordered by (task_index, epoch)"));
        }
        prev_key = Some(key);
        let base = r.task_index == 0;
        if base != r.a_prev.is_none() || base != r.cpcf.is_none() || base != r.q_alpha.is_none() {
            problems.push(format!("{at}: a_prev/cpcf/q_alpha must be blank exactly on base rows"));
        }
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if !unit(r.a_new) || r.a_prev.is_some_and(|v| !unit(v)) || r.q_alpha.is_some_and(|v| !unit(v)) {
            problems.push(format!("{at}: accuracy or q_alpha outside [0, 1]"));
        }
        if r.cpcf.is_some_and(|v| !(1.0..=10.0).contains(&v)) {
            problems.push(format!("{at}: cpcf outside [1, 10]"));
        }
        let matches_cfg = r.seed == cfg.seeds[0]
            && r.dataset == cfg.dataset
            && r.method == cfg.methods[0]
            && fmt_g10(r.alpha) == fmt_g10(cfg.alphas[0])
            && fmt_g10(r.calib_ratio) == fmt_g10(cfg.calib_ratios[0])
            && fmt_g10(r.lr) == fmt_g10(cfg.lrs[0])
            && fmt_g10(r.lambda) == fmt_g10(cfg.lambda);
        if !matches_cfg {
            problems.push(format!("{at}: row disagrees with the echoed config"));
        }
    }
    let expected = 1 + 5 * cfg.incr_epochs;
    if log.len() != expected {
        problems.push(format!("{} data rows, a complete run has {expected}", log.len()));
    }
}

/// Checks a run log against the schema and invariants; with `rerun`, repeats
/// the run from the echoed config and compares every data row.
pub fn cmd_verify(path: &Path, rerun: bool) -> Result<VerifyReport> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let parsed = csv::parse_runlog(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let cfg = config_from_echo(&parsed.echo)?;
    let mut problems = Vec::new();
    if cfg.methods.len() != 1 || cfg.seeds.len() != 1 || cfg.alphas.len() != 1 || cfg.calib_ratios.len() != 1 || cfg.lrs.len() != 1 {
        problems.push("echo block does not describe a single run".to_string());
        return Ok(VerifyReport {
            rows: parsed.log.len(),
            problems,
            rerun_matched: None,
        });
    }
    check_invariants(&cfg, &parsed.log, parsed.echo.len() + 2, &mut problems);

    let mut rerun_matched = None;
    if rerun {
        let corpus = datasets::load_corpus(&cfg)?;
        let (results, _) = execute_cell(
            &cfg,
            &corpus,
            cfg.methods[0],
            cfg.seeds[0],
            cfg.calib_ratios[0],
            cfg.lrs[0],
            &cfg.alphas,
            None,
            &mut |_| {},
        )?;
        let fresh = csv::render_runlog(&results[0].echo, &results[0].log);
        let data = |t: &str| t.lines().skip_while(|l| l.starts_with('#')).map(str::to_string).collect::<Vec<_>>();
        let (old, new) = (data(&text), data(&fresh));
        let same = old == new;
        if !same {
            let first = old.iter().zip(&new).position(|(a, b)| a != b).unwrap_or(old.len().min(new.len()));
            problems.push(format!("re-run differs from the file at data line {} (counting the header)", first + 1));
        }
        rerun_matched = Some(same);
    }
    Ok(VerifyReport {
        rows: parsed.log.len(),
        problems,
        rerun_matched,
    })
}
