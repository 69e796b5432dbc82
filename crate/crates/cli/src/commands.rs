//! One function per subcommand. Each reads its settings, writes its artifacts
//! into the output directory and returns a short summary.

use std::fs;
use std::path::{Path, PathBuf};

use glamlogit::analysis::{
    compensating_variation, cv_cdf, elasticity_report, evaluate as score, knn_transfer, vot_by_segment, AgentTastes,
    BenchmarkPredictor, PredictionReport, SharePredictor,
};
use glamlogit::benchmarks::{estimate_benchmark, BenchmarkFit, ModelKind};
use glamlogit::data::{load_dataset_csv, Dataset, ModelSpec, SplitTag};
use glamlogit::discount::{
    precompute_discount_shares, solve_bp, solve_bp_heuristic, summarize, write_summary_csv, DiscountConfig,
};
use glamlogit::estimator::{bootstrap_standard_errors, fit_glam, EstimationResult};
use glamlogit::regression::{build_differentiation_instruments, control_function_stage1, declared_instruments};
use serde::Serialize;

use crate::{CliError, RunConfig, EXIT_ESTIMATION, EXIT_OPTIMIZATION};

const DEFAULT_KNN_K: usize = 5;
const DEFAULT_PERTURBATION: f64 = 0.01;

type CliResult<T> = Result<T, CliError>;

fn est_err(e: glamlogit::Error) -> CliError {
    CliError::from_core(e, EXIT_ESTIMATION)
}

fn opt_err(e: glamlogit::Error) -> CliError {
    CliError::from_core(e, EXIT_OPTIMIZATION)
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError { code: 1, message: format!("{}: {e}", path.display()) }
}

fn load_spec(cfg: &RunConfig) -> CliResult<ModelSpec> {
    let path = cfg.require(&cfg.spec, "spec")?;
    ModelSpec::from_json_file(path).map_err(|e| CliError::validation(format!("{}: {e}", path.display())))
}

fn load_data(path: &Path, spec: &ModelSpec) -> CliResult<Dataset> {
    load_dataset_csv(path, spec).map_err(|e| CliError::validation(format!("{}: {e}", path.display())))
}

/// The training part of the main dataset: rows tagged `train` when the file
/// carries a split column, every row otherwise.
fn training_data(cfg: &RunConfig, spec: &ModelSpec) -> CliResult<Dataset> {
    let ds = load_data(cfg.require(&cfg.data, "data")?, spec)?;
    match ds.split_tag() {
        Some(_) => ds.tagged(SplitTag::Train).map_err(est_err),
        None => Ok(ds),
    }
}

/// Held-out markets from `test_data`, or the `test` rows of the main dataset.
fn test_data(cfg: &RunConfig, spec: &ModelSpec) -> CliResult<Option<Dataset>> {
    if let Some(path) = &cfg.test_data {
        return Ok(Some(load_data(path, spec)?));
    }
    let ds = load_data(cfg.require(&cfg.data, "data")?, spec)?;
    match ds.split_tag() {
        Some(tags) if tags.contains(&SplitTag::Test) => Ok(Some(ds.tagged(SplitTag::Test).map_err(est_err)?)),
        _ => Ok(None),
    }
}

/// Adds the control-function residual column when the spec declares one.
fn augment(ds: &Dataset) -> CliResult<Dataset> {
    control_function_stage1(ds).map(|(d, _)| d).map_err(est_err)
}

fn load_result(cfg: &RunConfig) -> CliResult<EstimationResult> {
    let path = cfg.require(&cfg.result, "result")?;
    EstimationResult::from_json_file(path).map_err(|e| CliError::validation(format!("{}: {e}", path.display())))
}

struct Output(PathBuf);

impl Output {
    fn new(cfg: &RunConfig) -> CliResult<Self> {
        let dir = cfg.output_dir();
        fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
        Ok(Self(dir))
    }

    fn path(&self, name: &str) -> PathBuf {
        self.0.join(name)
    }

    fn text(&self, name: &str, content: &str) -> CliResult<()> {
        let p = self.path(name);
        fs::write(&p, content).map_err(|e| io_err(&p, e))
    }

    fn json<T: Serialize>(&self, name: &str, value: &T) -> CliResult<()> {
        let text = serde_json::to_string_pretty(value).map_err(|e| io_err(&self.path(name), e))?;
        self.text(name, &(text + "\n"))
    }

    fn with_file(&self, name: &str, f: impl FnOnce(fs::File) -> glamlogit::Result<()>) -> CliResult<()> {
        let p = self.path(name);
        let file = fs::File::create(&p).map_err(|e| io_err(&p, e))?;
        f(file).map_err(|e| io_err(&p, e))
    }

    fn csv(&self, name: &str, header: &[String], rows: &[Vec<String>]) -> CliResult<()> {
        let p = self.path(name);
        let mut w = csv::Writer::from_path(&p).map_err(|e| io_err(&p, e))?;
        w.write_record(header).map_err(|e| io_err(&p, e))?;
        for r in rows {
            w.write_record(r).map_err(|e| io_err(&p, e))?;
        }
        w.flush().map_err(|e| io_err(&p, e))
    }
}

pub fn validate(cfg: &RunConfig) -> CliResult<String> {
    let spec = load_spec(cfg)?;
    let ds = load_data(cfg.require(&cfg.data, "data")?, &spec)?;
    Ok(format!(
        "valid: {} agents, {} alternatives, {} parameters",
        ds.len(),
        spec.alternatives.len(),
        spec.n_params()
    ))
}

pub fn estimate(cfg: &RunConfig) -> CliResult<String> {
    let spec = load_spec(cfg)?;
    let ds = training_data(cfg, &spec)?;
    let est = cfg.estimator();
    let (_, stages, mut result) = fit_glam(&ds, &est).map_err(est_err)?;
    let out = Output::new(cfg)?;
    if est.bootstrap_resamples > 0 {
        let rep = bootstrap_standard_errors(&ds, &est).map_err(est_err)?;
        result.bootstrap_se = Some(rep.standard_errors.clone());
        out.json("bootstrap.json", &rep)?;
    }
    out.json("estimation.json", &result)?;
    out.with_file("agents.csv", |f| result.write_agent_csv(f))?;
    out.with_file("trace.csv", |f| result.write_trace_csv(f))?;
    if !stages.is_empty() {
        out.json("first_stage.json", &stages)?;
    }
    let sizes = &result.trace.last().map(|t| t.cluster_sizes.clone()).unwrap_or_default();
    let mut s = format!(
        "{} after {} iterations; cluster sizes {:?}; {} infeasible, {} relaxed agents",
        if result.converged { "converged" } else { "not converged" },
        result.iterations_run,
        sizes,
        result.n_infeasible,
        result.n_relaxed
    );
    for (m, prior) in result.priors.iter().enumerate() {
        let pairs: Vec<String> = result.parameter_names.iter().zip(prior).map(|(n, v)| format!("{n}={v:.4}")).collect();
        s += &format!("\ncluster {m}: {}", pairs.join(" "));
    }
    Ok(s)
}

pub fn benchmark(cfg: &RunConfig) -> CliResult<String> {
    let spec = load_spec(cfg)?;
    let ds = augment(&training_data(cfg, &spec)?)?;
    let kind = cfg.model.unwrap_or(ModelKind::Mnl);
    let groups = cfg.groups.clone().unwrap_or_default();
    let mut instruments = declared_instruments(&ds).map_err(est_err)?;
    let columns = cfg
        .instrument_columns
        .clone()
        .or_else(|| spec.instruments.as_ref().map(|i| i.group_columns.clone()))
        .unwrap_or_default();
    if !groups.is_empty() && !columns.is_empty() {
        let grouped = build_differentiation_instruments(&ds, &groups, &columns).map_err(est_err)?;
        instruments = instruments.concat(&grouped).map_err(est_err)?;
    }
    let fit = estimate_benchmark(&ds, kind, &groups, &instruments).map_err(est_err)?;
    let out = Output::new(cfg)?;
    out.json(&format!("benchmark_{}.json", kind.to_string().to_lowercase()), &fit)?;
    let mut s = format!("{kind}: {} rows, R² {:.4}", fit.n_rows, fit.fit.r_squared);
    for (n, v) in fit.names.iter().zip(&fit.coefficients) {
        s += &format!("\n{n} = {v:.6}");
    }
    for (g, r) in fit.groups.iter().zip(&fit.rho) {
        s += &format!("\nrho_{} = {r:.6}", g.name);
    }
    Ok(s)
}

#[derive(Debug, Clone, Serialize)]
pub struct EvaluationRow {
    pub model: String,
    /// KNN neighbours used for out-of-sample GLAM tastes.
    #[serde(rename = "K")]
    pub k: Option<usize>,
    pub in_sample: PredictionReport,
    pub out_of_sample: Option<PredictionReport>,
}

fn metric_cells(r: Option<&PredictionReport>) -> Vec<String> {
    match r {
        Some(r) => vec![
            r.mae.to_string(),
            r.overall_accuracy.to_string(),
            r.adjusted_r_square.map(|v| v.to_string()).unwrap_or_default(),
        ],
        None => vec![String::new(); 3],
    }
}

pub fn evaluate(cfg: &RunConfig) -> CliResult<String> {
    let spec = load_spec(cfg)?;
    let result = load_result(cfg)?;
    let train = augment(&training_data(cfg, &spec)?)?;
    let test = test_data(cfg, &spec)?.map(|d| augment(&d)).transpose()?;
    let glam = AgentTastes::from_estimation(&result, &train).map_err(est_err)?;
    let k_glam = result.parameter_names.len() * result.priors.len();
    let in_glam = score(&glam, train.observations(), k_glam).map_err(est_err)?;

    let mut rows = Vec::new();
    match &test {
        Some(test) => {
            for k in 1..=cfg.knn_k.unwrap_or(DEFAULT_KNN_K) {
                let thetas = knn_transfer(&result, &train, test.observations(), k).map_err(est_err)?;
                let model = glam.clone().with_agents(test.observations(), thetas);
                rows.push(EvaluationRow {
                    model: "GLAM".into(),
                    k: Some(k),
                    in_sample: in_glam.clone(),
                    out_of_sample: Some(score(&model, test.observations(), k_glam).map_err(est_err)?),
                });
            }
        }
        None => rows.push(EvaluationRow { model: "GLAM".into(), k: None, in_sample: in_glam, out_of_sample: None }),
    }
    for path in cfg.benchmarks.iter().flatten() {
        let fit = BenchmarkFit::from_json_file(path)
            .map_err(|e| CliError::validation(format!("{}: {e}", path.display())))?;
        let name = fit.model_kind.to_string();
        let k_dof = fit.fit.coefficients.len();
        let model = BenchmarkPredictor::new(fit).map_err(est_err)?;
        let unseen = test.as_ref().map(|t| score(&model, t.observations(), k_dof)).transpose().map_err(est_err)?;
        rows.push(EvaluationRow {
            model: name,
            k: None,
            in_sample: score(&model, train.observations(), k_dof).map_err(est_err)?,
            out_of_sample: unseen,
        });
    }

    let out = Output::new(cfg)?;
    out.json("evaluation.json", &rows)?;
    let header: Vec<String> =
        ["model", "K", "in_sample_mae", "in_sample_oa", "in_sample_ars", "out_of_sample_mae", "out_of_sample_oa", "out_of_sample_ars"]
            .map(String::from)
            .to_vec();
    let cells: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            let mut c = vec![r.model.clone(), r.k.map(|k| k.to_string()).unwrap_or_default()];
            c.extend(metric_cells(Some(&r.in_sample)));
            c.extend(metric_cells(r.out_of_sample.as_ref()));
            c
        })
        .collect();
    out.csv("accuracy.csv", &header, &cells)?;
    Ok(rows
        .iter()
        .map(|r| {
            let k = r.k.map(|k| format!(" (K = {k})")).unwrap_or_default();
            let oos = r.out_of_sample.as_ref().map(|o| format!(", out-of-sample OA {:.4}", o.overall_accuracy)).unwrap_or_default();
            format!("{}{k}: in-sample OA {:.4}{oos}", r.model, r.in_sample.overall_accuracy)
        })
        .collect::<Vec<_>>()
        .join("\n"))
}

fn matrix_rows(alternatives: &[String], m: &[Vec<f64>]) -> Vec<Vec<String>> {
    alternatives
        .iter()
        .zip(m)
        .map(|(a, row)| std::iter::once(a.clone()).chain(row.iter().map(f64::to_string)).collect())
        .collect()
}

#[derive(Serialize)]
struct AnalysisOutput<'a> {
    elasticity: &'a glamlogit::analysis::ElasticityReport,
    value_of_time: &'a [glamlogit::analysis::SegmentVot],
    removed_alternative: Option<&'a str>,
    /// Per agent in dataset order; `None` where the cost parameter is not negative.
    compensating_variation: &'a [Option<f64>],
}

pub fn analyze(cfg: &RunConfig) -> CliResult<String> {
    let spec = load_spec(cfg)?;
    let result = load_result(cfg)?;
    let ds = augment(&training_data(cfg, &spec)?)?;
    let model = AgentTastes::from_estimation(&result, &ds).map_err(est_err)?;
    let time_param = cfg.time_param.clone().unwrap_or_else(|| "time".into());
    let cost_param = cfg.cost_param.clone().unwrap_or_else(|| "cost".into());
    let price = cfg.price_column.clone().unwrap_or_else(|| "cost".into());
    let times = cfg.time_columns.clone().unwrap_or_else(|| vec![time_param.clone(); spec.alternatives.len()]);
    let pert = cfg.perturbation.unwrap_or(DEFAULT_PERTURBATION);
    let report = elasticity_report(&model, &ds, &price, &times, pert).map_err(est_err)?;
    let vot = vot_by_segment(&result, &ds, &time_param, &cost_param).map_err(est_err)?;

    let removed = cfg.removed_alternative.clone().or_else(|| cfg.transit_alternative.clone());
    let mut cv = Vec::new();
    if let Some(alt) = &removed {
        let j = spec
            .alternative_index(alt)
            .ok_or_else(|| CliError::validation(format!("unknown alternative {alt:?}")))?;
        let c = result
            .param_index(&cost_param)
            .ok_or_else(|| CliError::validation(format!("unknown parameter {cost_param:?}")))?;
        cv = ds
            .observations()
            .iter()
            .map(|o| {
                let a = result.agent(&o.agent_id).ok_or_else(|| est_err(glamlogit::Error::Precondition(format!("agent {:?} missing from the result", o.agent_id))))?;
                compensating_variation(&result.theta_or_prior(a), o, model.design(), c, j).map_err(est_err)
            })
            .collect::<CliResult<_>>()?;
    }

    let out = Output::new(cfg)?;
    let alt_header: Vec<String> = std::iter::once("alternative".to_string()).chain(spec.alternatives.iter().cloned()).collect();
    out.csv("elasticity.csv", &alt_header, &matrix_rows(&spec.alternatives, &report.cross))?;
    out.csv("diversion.csv", &alt_header, &matrix_rows(&spec.alternatives, &report.diversion.matrix))?;
    let vot_rows: Vec<Vec<String>> = vot
        .iter()
        .map(|v| vec![v.segment.clone(), v.n_agents.to_string(), v.n_undefined.to_string(), v.mean.to_string(), v.median.to_string()])
        .collect();
    out.csv("vot.csv", &["segment", "n_agents", "n_undefined", "mean", "median"].map(String::from), &vot_rows)?;
    let finite: Vec<f64> = cv.iter().flatten().copied().collect();
    let cdf: Vec<Vec<String>> = cv_cdf(&finite).iter().map(|(x, p)| vec![x.to_string(), p.to_string()]).collect();
    if removed.is_some() {
        out.csv("cv_cdf.csv", &["cv".to_string(), "cdf".to_string()], &cdf)?;
    }
    out.json(
        "analysis.json",
        &AnalysisOutput {
            elasticity: &report,
            value_of_time: &vot,
            removed_alternative: removed.as_deref(),
            compensating_variation: &cv,
        },
    )?;

    let mut s = String::from("direct price elasticities:");
    for (a, e) in spec.alternatives.iter().zip(&report.direct) {
        s += &format!(" {a}={e:.4}");
    }
    for v in &vot {
        s += &format!("\nVOT {}: mean {:.4}, median {:.4}", v.segment, v.mean, v.median);
    }
    if let Some(alt) = &removed {
        s += &format!("\ncompensating variation of removing {alt}: {} agents with a value", finite.len());
    }
    Ok(s)
}

pub fn optimize(cfg: &RunConfig) -> CliResult<String> {
    let spec = load_spec(cfg)?;
    let result = load_result(cfg)?;
    let ds = augment(&training_data(cfg, &spec)?)?;
    let model = AgentTastes::from_estimation(&result, &ds).map_err(est_err)?;
    let d = DiscountConfig::default();
    let dcfg = DiscountConfig {
        transit_alternative: cfg.require(&cfg.transit_alternative, "transit_alternative")?.clone(),
        fare_column: cfg.fare_column.clone().unwrap_or(d.fare_column),
        discount_rate: cfg.discount_rate.unwrap_or(d.discount_rate),
        max_regions: cfg.max_regions.unwrap_or(d.max_regions),
        budget: cfg.budget.unwrap_or(d.budget),
        demand_weighted_loss: cfg.demand_weighted_loss.unwrap_or(false),
    };
    let mut inst = precompute_discount_shares(&model as &dyn SharePredictor, &ds, &dcfg).map_err(opt_err)?;
    inst.max_regions = inst.max_regions.min(inst.regions.len());
    let sol = if cfg.heuristic.unwrap_or(false) { solve_bp_heuristic(&inst) } else { solve_bp(&inst) }.map_err(opt_err)?;
    let summary = summarize(&inst, &sol);

    let out = Output::new(cfg)?;
    out.json("discount_instance.json", &inst)?;
    out.json("discount_solution.json", &sol)?;
    out.with_file("discount_summary.csv", |f| write_summary_csv(f, &summary))?;
    let (gain, loss) = inst.region_totals();
    let rows: Vec<Vec<String>> = inst
        .regions
        .iter()
        .enumerate()
        .filter(|(_, r)| sol.selected_regions.contains(r))
        .map(|(i, r)| vec![r.clone(), inst.agents_by_region[i].len().to_string(), gain[i].to_string(), loss[i].to_string()])
        .collect();
    out.csv("selected_regions.csv", &["region", "n_agents", "ridership_gain", "revenue_loss"].map(String::from), &rows)?;
    Ok(format!(
        "{} of {} regions selected ({}); ridership {:.3} -> {:.3} ({:+.3}); revenue {:.3} -> {:.3} ({:+.3})",
        sol.selected_regions.len(),
        inst.regions.len(),
        if sol.optimal { "optimal".to_string() } else { format!("heuristic, gap {:.3}", sol.gap) },
        summary.total_ridership_before,
        summary.total_ridership_after,
        summary.ridership_change,
        summary.total_revenue_before,
        summary.total_revenue_after,
        summary.revenue_change
    ))
}
