//! Class-incremental curriculum with optional elastic weight consolidation.
//!
//! A run trains the base task for `base_epochs`, then each remaining task for
//! `incr_epochs`. After every incremental epoch it records accuracy on the
//! previous tasks (`a_prev`), on the newest task (`a_new`) and the CPCF of the
//! previous tasks. EWC anchors are snapshotted when a task finishes:
//! `ewc_single` keeps only the latest one, `ewc_multi` keeps all of them and
//! halves the weight of each older anchor.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::conformal::cpcf_from_probs;
use crate::data::{LabeledSet, TaskStream};
use crate::error::{CoreError, Result};
use crate::math::Matrix;
use crate::metrics::{RunLog, RunRecord};
use crate::mlp::{count_correct, GradSet, MlpModel, MlpShape, ParamSet, Regularizer};
use crate::optim::{Optimizer, OptimizerKind};
use crate::rng::Rng;

pub const DEFAULT_LR: f64 = 2e-5;
pub const DEFAULT_BASE_EPOCHS: usize = 8;
pub const DEFAULT_INCR_EPOCHS: usize = 3;
pub const DEFAULT_LAMBDA: f64 = 100.0;
pub const DEFAULT_BATCH_SIZE: usize = 64;
pub const DEFAULT_FISHER_SAMPLES: usize = 2000;
pub const DEFAULT_ALPHA: f64 = 0.1;
pub const DEFAULT_CALIB_RATIO: f64 = 0.1;

// sub-stream keys derived from the run seed
const STREAM_INIT: u64 = 1;
const STREAM_TRAIN: u64 = 2;
const STREAM_FISHER: u64 = 3;
const STREAM_OFFLINE: u64 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Method {
    Plain,
    EwcSingle,
    EwcMulti,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Plain, Method::EwcSingle, Method::EwcMulti];

    pub fn name(self) -> &'static str {
        match self {
            Method::Plain => "plain",
            Method::EwcSingle => "ewc_single",
            Method::EwcMulti => "ewc_multi",
        }
    }

    /// Column label used in correlation tables.
    pub fn label(self) -> &'static str {
        match self {
            Method::Plain => "MLP",
            Method::EwcSingle => "EWC",
            Method::EwcMulti => "EWC-multi",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Method::ALL.into_iter().find(|m| m.name() == s)
    }

    pub fn uses_ewc(self) -> bool {
        self != Method::Plain
    }
}

/// Where the Ω normalizer comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AIdealMode {
    /// Base-task test accuracy right after base training.
    PostBase,
    /// Base-task test accuracy of a separate model trained jointly on every task.
    Offline,
}

impl AIdealMode {
    pub fn name(self) -> &'static str {
        match self {
            AIdealMode::PostBase => "post_base",
            AIdealMode::Offline => "offline",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "post_base" => Some(AIdealMode::PostBase),
            "offline" => Some(AIdealMode::Offline),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurriculumConfig {
    pub base_epochs: usize,
    pub incr_epochs: usize,
    pub lr: f64,
    pub lambda: f64,
    pub method: Method,
    pub alpha: f64,
    pub calib_ratio: f64,
    pub seed: u64,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
    pub fisher_samples: usize,
    pub a_ideal: AIdealMode,
    /// Non-standard hidden widths; also lifts the 784/1024 input restriction.
    pub hidden_override: Option<[usize; 2]>,
    /// Clear optimizer moments at the start of every incremental task.
    pub reset_optimizer: bool,
}

impl Default for CurriculumConfig {
    fn default() -> Self {
        CurriculumConfig {
            base_epochs: DEFAULT_BASE_EPOCHS,
            incr_epochs: DEFAULT_INCR_EPOCHS,
            lr: DEFAULT_LR,
            lambda: DEFAULT_LAMBDA,
            method: Method::Plain,
            alpha: DEFAULT_ALPHA,
            calib_ratio: DEFAULT_CALIB_RATIO,
            seed: 0,
            batch_size: DEFAULT_BATCH_SIZE,
            optimizer: OptimizerKind::Adam,
            fisher_samples: DEFAULT_FISHER_SAMPLES,
            a_ideal: AIdealMode::PostBase,
            hidden_override: None,
            reset_optimizer: false,
        }
    }
}

impl CurriculumConfig {
    pub fn run_id(&self, dataset: &str, alpha: f64) -> String {
        format!(
            "{dataset}-{}-c{}-a{}-lr{}-s{}",
            self.method.name(),
            id_number(self.calib_ratio),
            id_number(alpha),
            id_number(self.lr),
            self.seed
        )
    }

    pub fn model_shape(&self, input_dim: usize) -> Result<MlpShape> {
        match self.hidden_override {
            Some([h1, h2]) => Ok(MlpShape::custom(input_dim, h1, h2)),
            None => MlpShape::standard(input_dim),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(CoreError::contract("batch_size must be at least 1"));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(CoreError::contract(format!("learning rate {} must be finite and >= 0", self.lr)));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(CoreError::contract(format!("lambda {} must be finite and >= 0", self.lambda)));
        }
        Ok(())
    }
}

/// Parameter snapshot and diagonal Fisher taken when a task finishes.
#[derive(Debug, Clone, PartialEq)]
pub struct EwcAnchor {
    pub theta_star: ParamSet,
    pub fisher_diag: ParamSet,
    pub task_index: usize,
}

impl EwcAnchor {
    pub fn fingerprint(&self) -> u64 {
        let mut h = crate::math::Fnv::new();
        h.write_u64(self.theta_star.fingerprint());
        h.write_u64(self.fisher_diag.fingerprint());
        h.write_u64(self.task_index as u64);
        h.finish()
    }
}

/// Empirical diagonal Fisher: mean squared gradient of `log p(y_true | x)`
/// over up to `n_samples` randomly chosen samples of `data`.
pub fn estimate_fisher(model: &MlpModel, data: &LabeledSet, n_samples: usize, rng: &mut Rng) -> Result<ParamSet> {
    if data.is_empty() {
        return Err(CoreError::contract("Fisher estimate on an empty dataset"));
    }
    let picked = data.take_random(n_samples.max(1), rng);
    let mut fisher = ParamSet::zeros(model.shape());
    for i in 0..picked.len() {
        let x = picked.x().select_rows(&[i]);
        let (_, g) = model.loss_and_grad(&x, &picked.y()[i..=i])?;
        for (f, gt) in fisher.tensors_mut().iter_mut().zip(g.tensors()) {
            for (fv, gv) in f.data_mut().iter_mut().zip(gt.data()) {
                *fv += gv * gv;
            }
        }
    }
    fisher.scale(1.0 / picked.len() as f64);
    Ok(fisher)
}

/// Adds `weight/2 * Σ F (θ - θ*)²` into `penalty` and `weight * F (θ - θ*)`
/// into `grads`.
fn accumulate_quadratic(params: &ParamSet, anchor: &EwcAnchor, weight: f64, penalty: &mut f64, grads: &mut GradSet) -> Result<()> {
    params.check_layout(&anchor.theta_star, "ewc_penalty")?;
    params.check_layout(&anchor.fisher_diag, "ewc_penalty")?;
    let mut sum = 0.0;
    let iter = params
        .tensors()
        .iter()
        .zip(anchor.theta_star.tensors())
        .zip(anchor.fisher_diag.tensors())
        .zip(grads.tensors_mut().iter_mut());
    for (((p, star), f), g) in iter {
        let lanes = p.data().iter().zip(star.data()).zip(f.data()).zip(g.data_mut().iter_mut());
        for (((&theta, &theta_star), &fi), gi) in lanes {
            let d = theta - theta_star;
            sum += fi * d * d;
            *gi += weight * fi * d;
        }
    }
    *penalty += 0.5 * weight * sum;
    Ok(())
}

/// Single-anchor quadratic penalty `λ/2 Σ F_i (θ_i - θ*_i)²` and its gradient.
pub fn ewc_penalty_single(params: &ParamSet, anchor: &EwcAnchor, lambda: f64) -> Result<(f64, GradSet)> {
    let mut grads = zeros_like(params);
    let mut penalty = 0.0;
    accumulate_quadratic(params, anchor, lambda, &mut penalty, &mut grads)?;
    Ok((penalty, grads))
}

/// Weight of the anchor of task `anchor_task` while training task
/// `current_task` (both 0-based stream indices): `λ / 2^(current - anchor - 1)`.
pub fn multi_anchor_weight(lambda: f64, current_task: usize, anchor_task: usize) -> f64 {
    let age = current_task - anchor_task - 1;
    lambda / libm::pow(2.0, age as f64)
}

/// Sum of one quadratic term per previous task. `current_task` is the 0-based
/// stream index of the task being trained; `anchors` must cover every task
/// before it. The most recent anchor gets weight `λ`, the one before `λ/2`,
/// and so on.
pub fn ewc_penalty_multi(params: &ParamSet, anchors: &[EwcAnchor], lambda: f64, current_task: usize) -> Result<(f64, GradSet)> {
    let missing: Vec<usize> = (0..current_task)
        .filter(|t| !anchors.iter().any(|a| a.task_index == *t))
        .collect();
    if !missing.is_empty() {
        return Err(CoreError::contract(format!("missing EWC anchors for tasks {missing:?}")));
    }
    if let Some(a) = anchors.iter().find(|a| a.task_index >= current_task) {
        return Err(CoreError::contract(format!(
            "anchor for task {} is not before task {current_task}",
            a.task_index
        )));
    }
    let mut grads = zeros_like(params);
    let mut penalty = 0.0;
    for a in anchors {
        let w = multi_anchor_weight(lambda, current_task, a.task_index);
        accumulate_quadratic(params, a, w, &mut penalty, &mut grads)?;
    }
    Ok((penalty, grads))
}

fn zeros_like(params: &ParamSet) -> ParamSet {
    ParamSet::from_tensors(params.tensors().iter().map(|t| Matrix::zeros(t.rows(), t.cols())).collect())
}

/// EWC penalty as a training-loss regularizer.
#[derive(Debug, Clone, Copy)]
pub enum EwcPenalty<'a> {
    Single { anchor: &'a EwcAnchor, lambda: f64 },
    Multi { anchors: &'a [EwcAnchor], lambda: f64, current_task: usize },
}

impl Regularizer for EwcPenalty<'_> {
    fn penalty(&self, params: &ParamSet) -> Result<(f64, GradSet)> {
        match *self {
            EwcPenalty::Single { anchor, lambda } => ewc_penalty_single(params, anchor, lambda),
            EwcPenalty::Multi { anchors, lambda, current_task } => ewc_penalty_multi(params, anchors, lambda, current_task),
        }
    }
}

/// Plain decimal when short (`0.00002`), exponent form otherwise (`1e300`).
fn id_number(v: f64) -> String {
    let plain = format!("{v}");
    if plain.len() <= 12 {
        plain
    } else {
        format!("{v:e}")
    }
}

/// Result of one curriculum run.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub log: RunLog,
    pub a_ideal: f64,
    pub model: MlpModel,
    /// Anchors held when the run ended.
    pub anchors: Vec<EwcAnchor>,
}

/// One training run evaluated at several significance levels.
#[derive(Debug, Clone)]
pub struct MultiAlphaOutcome {
    /// One log per requested alpha, in request order.
    pub logs: Vec<RunLog>,
    pub a_ideal: f64,
    pub model: MlpModel,
    pub anchors: Vec<EwcAnchor>,
}

/// Runs the curriculum at `config.alpha`. `hook` sees every record as soon as
/// it is produced.
pub fn run_curriculum(config: &CurriculumConfig, stream: &TaskStream, hook: &mut dyn FnMut(&RunRecord)) -> Result<RunOutcome> {
    let mut out = run_curriculum_alphas(config, &[config.alpha], stream, hook)?;
    Ok(RunOutcome {
        log: out.logs.remove(0),
        a_ideal: out.a_ideal,
        model: out.model,
        anchors: out.anchors,
    })
}

/// Runs the curriculum once and evaluates CPCF at each of `alphas`. Training
/// never looks at alpha, so each log equals a separate run at that alpha.
pub fn run_curriculum_alphas(
    config: &CurriculumConfig,
    alphas: &[f64],
    stream: &TaskStream,
    hook: &mut dyn FnMut(&RunRecord),
) -> Result<MultiAlphaOutcome> {
    config.validate()?;
    if alphas.is_empty() {
        return Err(CoreError::contract("at least one alpha is required"));
    }
    if stream.len() < 2 {
        return Err(CoreError::contract(format!("curriculum needs a base task and at least one increment, got {} tasks", stream.len())));
    }
    if stream.tasks.iter().any(|t| t.train.is_empty() || t.test.is_empty()) {
        return Err(CoreError::contract("every task needs training and test samples"));
    }
    let shape = config.model_shape(stream.input_dim())?;
    let root = Rng::new(config.seed);
    let mut model = MlpModel::new(shape, Optimizer::new(config.optimizer, config.lr), &mut root.derive(STREAM_INIT));
    let mut train_rng = root.derive(STREAM_TRAIN);
    let mut fisher_rng = root.derive(STREAM_FISHER);

    let template: Vec<RunRecord> = alphas
        .iter()
        .map(|&alpha| RunRecord {
            run_id: config.run_id(&stream.dataset, alpha),
            seed: config.seed,
            dataset: stream.dataset.clone(),
            method: config.method,
            task_index: 0,
            epoch: 0,
            a_prev: None,
            a_new: 0.0,
            cpcf: None,
            q_alpha: None,
            alpha,
            calib_ratio: config.calib_ratio,
            lr: config.lr,
            lambda: config.lambda,
            a_base: None,
            a_all: None,
            param_hash: None,
        })
        .collect();
    let mut logs: Vec<RunLog> = alphas.iter().map(|_| RunLog::default()).collect();

    // base task
    let base = &stream.tasks[0];
    for epoch in 1..=config.base_epochs {
        let loss = model.train_epoch(&base.train, config.batch_size, None, &mut train_rng)?;
        check_finite(loss, &model, 0, epoch)?;
    }
    let eval = evaluate(&model, stream, 0, &[])?;
    for (t, log) in template.iter().zip(logs.iter_mut()) {
        let rec = RunRecord {
            task_index: 0,
            epoch: config.base_epochs,
            a_new: eval.a_new,
            a_base: Some(eval.a_base),
            a_all: Some(eval.a_all),
            param_hash: Some(model.fingerprint()),
            ..t.clone()
        };
        hook(&rec);
        log.records.push(rec);
    }
    let a_ideal = match config.a_ideal {
        AIdealMode::PostBase => eval.a_base,
        AIdealMode::Offline => offline_ideal(config, stream, shape, &root)?,
    };

    let mut anchors: Vec<EwcAnchor> = Vec::new();
    let last = stream.len() - 1;
    for k in 0..=last {
        if k > 0 {
            let task = &stream.tasks[k];
            if config.reset_optimizer {
                model.optimizer.reset();
            }
            for epoch in 1..=config.incr_epochs {
                let penalty = match config.method {
                    Method::Plain => None,
                    Method::EwcSingle => anchors.last().map(|anchor| EwcPenalty::Single { anchor, lambda: config.lambda }),
                    Method::EwcMulti => Some(EwcPenalty::Multi {
                        anchors: &anchors,
                        lambda: config.lambda,
                        current_task: k,
                    }),
                };
                let reg = penalty.as_ref().map(|p| p as &dyn Regularizer);
                let loss = model.train_epoch(&task.train, config.batch_size, reg, &mut train_rng)?;
                check_finite(loss, &model, k, epoch)?;

                let eval = evaluate(&model, stream, k, alphas)?;
                let hash = model.fingerprint();
                for ((t, log), cp) in template.iter().zip(logs.iter_mut()).zip(&eval.cpcf) {
                    let rec = RunRecord {
                        task_index: k,
                        epoch,
                        a_prev: eval.a_prev,
                        a_new: eval.a_new,
                        cpcf: Some(cp.cpcf),
                        q_alpha: Some(cp.q_alpha),
                        a_base: Some(eval.a_base),
                        a_all: Some(eval.a_all),
                        param_hash: Some(hash),
                        ..t.clone()
                    };
                    hook(&rec);
                    log.records.push(rec);
                }
            }
        }
        if config.method.uses_ewc() && k < last {
            let fisher = estimate_fisher(&model, &stream.tasks[k].train, config.fisher_samples, &mut fisher_rng)?;
            let anchor = EwcAnchor {
                theta_star: model.params().clone(),
                fisher_diag: fisher,
                task_index: k,
            };
            if config.method == Method::EwcSingle {
                anchors.clear();
            }
            anchors.push(anchor);
        }
    }

    Ok(MultiAlphaOutcome {
        logs,
        a_ideal,
        model,
        anchors,
    })
}

/// One run per learning rate, everything else unchanged.
pub fn lr_sensitivity_sweep(config: &CurriculumConfig, stream: &TaskStream, lrs: &[f64], hook: &mut dyn FnMut(&RunRecord)) -> Result<Vec<RunOutcome>> {
    if lrs.is_empty() {
        return Err(CoreError::contract("learning-rate list is empty"));
    }
    lrs.iter()
        .map(|&lr| {
            let cfg = CurriculumConfig { lr, ..config.clone() };
            run_curriculum(&cfg, stream, hook)
        })
        .collect()
}

/// Aborts on a non-finite epoch loss or any non-finite parameter.
fn check_finite(loss: f64, model: &MlpModel, task: usize, epoch: usize) -> Result<()> {
    let params_ok = model.params().tensors().iter().all(Matrix::all_finite);
    if loss.is_finite() && params_ok {
        Ok(())
    } else {
        let loss = if params_ok { loss } else { f64::NAN };
        Err(CoreError::NumericalAbort { task, epoch, loss })
    }
}

struct Evaluation {
    a_prev: Option<f64>,
    a_new: f64,
    a_base: f64,
    a_all: f64,
    cpcf: Vec<crate::conformal::CpcfResult>,
}

/// Accuracies over tasks `0..=current` and CPCF over tasks `0..current`.
fn evaluate(model: &MlpModel, stream: &TaskStream, current: usize, alphas: &[f64]) -> Result<Evaluation> {
    let mut test_probs = Vec::with_capacity(current + 1);
    let mut accs = Vec::with_capacity(current + 1);
    let (mut hits, mut seen) = (0usize, 0usize);
    for task in &stream.tasks[..=current] {
        let probs = model.predict_proba(task.test.x())?;
        let correct = count_correct(&probs, task.test.y());
        accs.push(correct as f64 / task.test.len() as f64);
        hits += correct;
        seen += task.test.len();
        test_probs.push(probs);
    }
    let a_prev = (current > 0).then(|| accs[..current].iter().sum::<f64>() / current as f64);

    let mut cpcf = Vec::new();
    if current > 0 && !alphas.is_empty() {
        let calib = stream.pooled_calib(current)?;
        let calib_probs = model.predict_proba(calib.x())?;
        let prev: Vec<&Matrix> = test_probs[..current].iter().collect();
        let pooled_test = Matrix::vstack(&prev)?;
        for &alpha in alphas {
            cpcf.push(cpcf_from_probs(&calib_probs, calib.y(), &pooled_test, alpha)?);
        }
    }
    Ok(Evaluation {
        a_prev,
        a_new: accs[current],
        a_base: accs[0],
        a_all: hits as f64 / seen as f64,
        cpcf,
    })
}

fn offline_ideal(config: &CurriculumConfig, stream: &TaskStream, shape: MlpShape, root: &Rng) -> Result<f64> {
    let mut rng = root.derive(STREAM_OFFLINE);
    let mut model = MlpModel::new(shape, Optimizer::new(config.optimizer, config.lr), &mut rng);
    let joint = stream.joint_train()?;
    for epoch in 1..=config.base_epochs {
        let loss = model.train_epoch(&joint, config.batch_size, None, &mut rng)?;
        check_finite(loss, &model, 0, epoch)?;
    }
    let base = &stream.tasks[0].test;
    model.accuracy(base.x(), base.y())
}
