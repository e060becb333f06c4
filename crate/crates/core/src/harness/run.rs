use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{compute_metrics, mean_sd, ExperimentPlan, HarnessError, Metric, SimulatedOracle};
use crate::clock::{elapsed_ms, Clock};
use crate::corpus::{Manifest, Pool};
use crate::oracle_llm::{EndpointDescriptor, LlmClient};
use crate::promptkit::name_config;
use crate::seeds::derive_seed;
use crate::session::{labeled_records, LabeledRecord, Session, SessionConfig};
use crate::strategies::{
    build_strategy, fit_proxy_classifier, EmbeddingMatrix, ProxyParams, StrategyResources, StrategySpec,
};

/// Data an experiment runs on. Embeddings are keyed by record position in
/// their data files.
#[derive(Clone, Debug)]
pub struct ExperimentInputs {
    pub pool: Pool,
    pub test: Pool,
    pub embeddings: EmbeddingMatrix,
    pub test_embeddings: EmbeddingMatrix,
    pub endpoint: Option<EndpointDescriptor>,
}

impl ExperimentInputs {
    pub fn load(plan: &ExperimentPlan) -> Result<Self, HarnessError> {
        let manifest = Manifest::load(&plan.resolve(&plan.manifest))?;
        let pool = manifest.load_pool()?;
        let test = manifest.load_test()?.ok_or_else(|| HarnessError::Plan("manifest has no test split".into()))?;
        let embeddings_path = manifest
            .embeddings
            .as_ref()
            .ok_or_else(|| HarnessError::Plan("manifest has no embeddings for the pool".into()))?;
        let test_embeddings_path = manifest
            .test
            .as_ref()
            .and_then(|t| t.embeddings.as_ref())
            .ok_or_else(|| HarnessError::Plan("manifest has no embeddings for the test split".into()))?;
        Ok(Self {
            pool,
            test,
            embeddings: EmbeddingMatrix::load(&manifest.resolve(embeddings_path))?,
            test_embeddings: EmbeddingMatrix::load(&manifest.resolve(test_embeddings_path))?,
            endpoint: plan.endpoint()?,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub labeled: usize,
    /// One score per model seed.
    pub scores: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum CellStatus {
    Complete,
    Missing { cause: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    pub strategy: String,
    pub randomization: usize,
    #[serde(flatten)]
    pub status: CellStatus,
    pub points: Vec<CurvePoint>,
    pub labeled_count: usize,
    pub iteration_sizes: Vec<usize>,
    pub iteration_strategies: Vec<String>,
    pub switch_at_label: Option<usize>,
    pub llm_calls: usize,
    /// Selection status name to iteration count.
    pub selection_statuses: BTreeMap<String, usize>,
    pub wall_time_ms: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregatePoint {
    pub labeled: usize,
    pub mean: f64,
    pub sd: f64,
    /// Every score behind the mean: complete cells x model seeds.
    pub raw: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StrategyReport {
    pub strategy: String,
    pub spec: StrategySpec,
    pub config_fingerprint: String,
    pub points: Vec<AggregatePoint>,
    pub complete_cells: usize,
    pub missing_cells: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub plan_fingerprint: String,
    pub metric: Metric,
    pub budget: usize,
    pub step: usize,
    pub num_data_randomizations: usize,
    pub num_model_seeds: usize,
    pub prompt_name: String,
    pub prompt_fingerprint: String,
    pub strategies: Vec<StrategyReport>,
    pub cells: Vec<CellReport>,
    pub wall_time_ms: u64,
}

impl MetricReport {
    /// Pretty JSON with a trailing newline; byte-stable for equal reports.
    pub fn to_json(&self) -> String {
        let mut out = serde_json::to_string_pretty(self).expect("report serializes");
        out.push('\n');
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelSet {
    pub strategy: String,
    pub randomization: usize,
    pub records: Vec<LabeledRecord>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentOutput {
    pub report: MetricReport,
    pub label_sets: Vec<LabelSet>,
}

pub fn run_experiment(plan: &ExperimentPlan, clock: Arc<dyn Clock>) -> Result<ExperimentOutput, HarnessError> {
    plan.validate()?;
    let inputs = ExperimentInputs::load(plan)?;
    run_experiment_with(plan, &inputs, clock)
}

struct Shared<'a> {
    plan: &'a ExperimentPlan,
    inputs: &'a ExperimentInputs,
    test_x: EmbeddingMatrix,
    test_gold: Vec<String>,
    clock: Arc<dyn Clock>,
}

pub fn run_experiment_with(
    plan: &ExperimentPlan,
    inputs: &ExperimentInputs,
    clock: Arc<dyn Clock>,
) -> Result<ExperimentOutput, HarnessError> {
    plan.validate()?;
    let specs = plan.specs()?;
    if specs.iter().any(StrategySpec::needs_llm) && inputs.endpoint.is_none() {
        return Err(HarnessError::Plan("an LLM strategy is listed but no endpoint is configured".into()));
    }
    let test_gold = inputs
        .test
        .instances()
        .iter()
        .map(|i| {
            i.gold_label
                .clone()
                .ok_or_else(|| HarnessError::Plan(format!("test instance {} has no gold label", i.index)))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let started = clock.now();
    let shared = Shared {
        plan,
        inputs,
        test_x: inputs.test_embeddings.aligned_to(&inputs.test)?,
        test_gold,
        clock: clock.clone(),
    };

    let cells: Vec<(usize, usize)> =
        (0..specs.len()).flat_map(|s| (0..plan.num_data_randomizations).map(move |r| (s, r))).collect();
    let results: Vec<(CellReport, Option<LabelSet>)> =
        cells.par_iter().map(|&(s, r)| run_cell(&shared, &specs[s], r)).collect();

    let prompt_fingerprint = plan.prompt.fingerprint();
    let strategies = specs
        .iter()
        .map(|spec| {
            let label = spec.label();
            let cells: Vec<&CellReport> = results.iter().map(|(c, _)| c).filter(|c| c.strategy == label).collect();
            aggregate(spec, &prompt_fingerprint, &cells)
        })
        .collect();
    let (cells, label_sets): (Vec<CellReport>, Vec<Option<LabelSet>>) = results.into_iter().unzip();
    let report = MetricReport {
        plan_fingerprint: plan.fingerprint(),
        metric: plan.metric,
        budget: plan.budget,
        step: plan.step,
        num_data_randomizations: plan.num_data_randomizations,
        num_model_seeds: plan.num_model_seeds,
        prompt_name: name_config(&plan.prompt),
        prompt_fingerprint,
        strategies,
        cells,
        wall_time_ms: elapsed_ms(started, clock.now()),
    };
    Ok(ExperimentOutput { report, label_sets: label_sets.into_iter().flatten().collect() })
}

fn config_fingerprint(spec: &StrategySpec, prompt_fingerprint: &str) -> String {
    let canonical = serde_json::to_string(spec).expect("spec serializes");
    hex::encode(Sha256::digest(format!("{prompt_fingerprint}\n{canonical}").as_bytes()).as_slice())
}

fn aggregate(spec: &StrategySpec, prompt_fingerprint: &str, cells: &[&CellReport]) -> StrategyReport {
    let mut by_label: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for cell in cells.iter().filter(|c| c.status == CellStatus::Complete) {
        for point in &cell.points {
            by_label.entry(point.labeled).or_default().extend(&point.scores);
        }
    }
    let points = by_label
        .into_iter()
        .map(|(labeled, raw)| {
            let (mean, sd) = mean_sd(&raw);
            AggregatePoint { labeled, mean, sd, raw }
        })
        .collect();
    let complete_cells = cells.iter().filter(|c| c.status == CellStatus::Complete).count();
    StrategyReport {
        strategy: spec.label(),
        spec: spec.clone(),
        config_fingerprint: config_fingerprint(spec, prompt_fingerprint),
        points,
        complete_cells,
        missing_cells: cells.len() - complete_cells,
    }
}

fn run_cell(shared: &Shared<'_>, spec: &StrategySpec, randomization: usize) -> (CellReport, Option<LabelSet>) {
    let started = shared.clock.now();
    let mut report = CellReport {
        strategy: spec.label(),
        randomization,
        status: CellStatus::Complete,
        points: Vec::new(),
        labeled_count: 0,
        iteration_sizes: Vec::new(),
        iteration_strategies: Vec::new(),
        switch_at_label: None,
        llm_calls: 0,
        selection_statuses: BTreeMap::new(),
        wall_time_ms: 0,
    };
    let label_set = match simulate_cell(shared, spec, randomization, &mut report) {
        Ok(records) => Some(LabelSet { strategy: spec.label(), randomization, records }),
        Err(e) => {
            tracing::warn!(strategy = %spec.label(), randomization, error = %e, "cell failed");
            report.status = CellStatus::Missing { cause: e.to_string() };
            report.points.clear();
            None
        }
    };
    report.wall_time_ms = elapsed_ms(started, shared.clock.now());
    (report, label_set)
}

fn simulate_cell(
    shared: &Shared<'_>,
    spec: &StrategySpec,
    randomization: usize,
    report: &mut CellReport,
) -> Result<Vec<LabeledRecord>, HarnessError> {
    let plan = shared.plan;
    let r = randomization as u64;
    let pool = shared.inputs.pool.shuffled(derive_seed(plan.seed, "data", r));
    let embeddings = Arc::new(shared.inputs.embeddings.aligned_to(&pool)?);
    let settings = shared.inputs.endpoint.as_ref().map(|e| e.settings.clone()).unwrap_or_default();
    let llm = match (&shared.inputs.endpoint, spec.needs_llm()) {
        (Some(endpoint), true) => Some(Arc::new(LlmClient::new(endpoint.connect()?).with_clock(shared.clock.clone()))),
        _ => None,
    };
    let resources = StrategyResources {
        llm: llm.clone(),
        embeddings: Some(embeddings.clone()),
        prompt: plan.prompt.clone(),
        settings: settings.clone(),
    };
    let mut strategy = build_strategy(spec, &resources)?;
    let config = SessionConfig {
        manifest: None,
        prompt: plan.prompt.clone(),
        settings,
        strategy: spec.clone(),
        budget: plan.budget,
        step: plan.step,
        seed: derive_seed(plan.seed, "session", r),
    };
    let mut session = Session::new(format!("{}-r{randomization}", spec.label()), config)?;

    let every = plan.eval_every();
    let mut checkpoints: Vec<BTreeMap<usize, String>> = Vec::new();
    session.run_to_budget(&pool, strategy.as_mut(), &SimulatedOracle, shared.clock.as_ref(), |s| {
        if s.history.labeled_count() % every == 0 {
            checkpoints.push(s.history.labeled.clone());
        }
        Ok(())
    })?;
    if checkpoints.last().map(BTreeMap::len) != Some(session.history.labeled_count())
        && session.history.labeled_count() > 0
    {
        checkpoints.push(session.history.labeled.clone());
    }

    for labeled in &checkpoints {
        report
            .points
            .push(CurvePoint { labeled: labeled.len(), scores: evaluate(shared, &pool, &embeddings, labeled)? });
    }
    let history = &session.history;
    report.labeled_count = history.labeled_count();
    report.iteration_sizes = history.iterations.iter().map(|i| i.selection.indices.len()).collect();
    report.iteration_strategies = history.iterations.iter().map(|i| i.strategy_id.clone()).collect();
    report.switch_at_label = history.switch_at_label;
    report.llm_calls = history.iterations.iter().map(|i| i.exchanges.len()).sum();
    for iteration in &history.iterations {
        *report.selection_statuses.entry(iteration.selection.status.to_string()).or_default() += 1;
    }
    Ok(labeled_records(&pool, history))
}

fn evaluate(
    shared: &Shared<'_>,
    pool: &Pool,
    embeddings: &EmbeddingMatrix,
    labeled: &BTreeMap<usize, String>,
) -> Result<Vec<f64>, HarnessError> {
    let plan = shared.plan;
    let indices: Vec<usize> = labeled.keys().copied().collect();
    let labels: Vec<String> = labeled.values().cloned().collect();
    let train = embeddings.subset(&indices)?;
    (0..plan.num_model_seeds)
        .into_par_iter()
        .map(|m| {
            let params = ProxyParams {
                l2: plan.successor.l2,
                epochs: plan.successor.epochs,
                lr: plan.successor.lr,
                seed: derive_seed(plan.seed, "model", m as u64),
            };
            let model = fit_proxy_classifier(&train, &labels, pool.label_space(), &params)?;
            let predictions: Vec<String> =
                shared.test_x.vectors().iter().map(|x| model.predict_label(x).to_string()).collect();
            compute_metrics(&predictions, &shared.test_gold, plan.metric, pool.label_space())
        })
        .collect()
}

fn slug(label: &str) -> String {
    let mut out = String::new();
    for c in label.chars() {
        if c.is_ascii_alphanumeric() {
            out.push(c);
        } else if !out.ends_with('_') {
            out.push('_');
        }
    }
    out.trim_matches('_').to_string()
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io { path: path.to_owned(), source }
}

/// Writes `report.json`, `curves.csv` and one `labels/<strategy>_r<n>.jsonl`
/// per complete cell. Returns the paths written.
pub fn write_outputs(output: &ExperimentOutput, dir: &Path) -> Result<Vec<PathBuf>, HarnessError> {
    std::fs::create_dir_all(dir.join("labels")).map_err(io_err(dir))?;
    let mut written = Vec::new();

    let report_path = dir.join("report.json");
    std::fs::write(&report_path, output.report.to_json()).map_err(io_err(&report_path))?;
    written.push(report_path);

    let curves_path = dir.join("curves.csv");
    std::fs::write(&curves_path, curves_csv(&output.report)?).map_err(io_err(&curves_path))?;
    written.push(curves_path);

    for set in &output.label_sets {
        let path = dir.join("labels").join(format!("{}_r{}.jsonl", slug(&set.strategy), set.randomization));
        let mut body = String::new();
        for record in &set.records {
            body.push_str(&serde_json::to_string(record).expect("record serializes"));
            body.push('\n');
        }
        std::fs::write(&path, body).map_err(io_err(&path))?;
        written.push(path);
    }
    Ok(written)
}

/// `strategy,budget,mean,sd,runs`, one row per strategy and checkpoint.
pub fn curves_csv(report: &MetricReport) -> Result<String, HarnessError> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    writer
        .write_record(["strategy", "budget", "mean", "sd", "runs"])
        .map_err(|e| HarnessError::Format(e.to_string()))?;
    for strategy in &report.strategies {
        for point in &strategy.points {
            writer
                .write_record([
                    strategy.strategy.clone(),
                    point.labeled.to_string(),
                    format!("{:.6}", point.mean),
                    format!("{:.6}", point.sd),
                    point.raw.len().to_string(),
                ])
                .map_err(|e| HarnessError::Format(e.to_string()))?;
        }
    }
    let bytes = writer.into_inner().map_err(|e| HarnessError::Format(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| HarnessError::Format(e.to_string()))
}

pub fn load_report(dir: &Path) -> Result<MetricReport, HarnessError> {
    let path = if dir.is_dir() { dir.join("report.json") } else { dir.to_path_buf() };
    let raw = std::fs::read_to_string(&path).map_err(io_err(&path))?;
    serde_json::from_str(&raw).map_err(|e| HarnessError::Format(format!("{}: {e}", path.display())))
}

/// Plain-text table: one row per strategy, one column per checkpoint.
pub fn render_summary(report: &MetricReport) -> String {
    let budgets: BTreeSet<usize> = report.strategies.iter().flat_map(|s| s.points.iter().map(|p| p.labeled)).collect();
    let width = report.strategies.iter().map(|s| s.strategy.len()).max().unwrap_or(8).max(8);
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{} over {} randomization(s) x {} model seed(s), prompt {}",
        report.metric, report.num_data_randomizations, report.num_model_seeds, report.prompt_name
    );
    let _ = write!(out, "{:width$}", "strategy");
    for b in &budgets {
        let _ = write!(out, " {:>15}", b);
    }
    out.push('\n');
    for strategy in &report.strategies {
        let _ = write!(out, "{:width$}", strategy.strategy);
        for b in &budgets {
            match strategy.points.iter().find(|p| p.labeled == *b) {
                Some(p) => {
                    let _ = write!(out, " {:>15}", format!("{:.3} ({:.3})", p.mean, p.sd));
                }
                None => {
                    let _ = write!(out, " {:>15}", "-");
                }
            }
        }
        if strategy.missing_cells > 0 {
            let _ = write!(out, "  [{} missing]", strategy.missing_cells);
        }
        out.push('\n');
    }
    for cell in &report.cells {
        if let CellStatus::Missing { cause } = &cell.status {
            let _ = writeln!(out, "missing: {} r{}: {cause}", cell.strategy, cell.randomization);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slugs() {
        assert_eq!(slug("hybrid_coldstart(50 -> prediction_entropy)"), "hybrid_coldstart_50_prediction_entropy");
        assert_eq!(slug("random"), "random");
    }
}
