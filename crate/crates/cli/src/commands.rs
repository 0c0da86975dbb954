//! Subcommand implementations.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use hdiv::demand::{build_sum_instruments, expand_characteristics, ExpansionRecipe};
use hdiv::monte_carlo::{
    qualitative_checks, run_simulation, EstimatorId, SimulationConfig, SimulationSummary,
};
use hdiv::problem::RegressionProblem;
use hdiv::{
    estimate_double_selection, estimate_naive_nonorthogonal, estimate_naive_stepwise,
    estimate_union_2sls, fit_ols, Error, IVDataset, PipelineConfig, StepwiseRule,
};
use nalgebra::DMatrix;

use crate::report::{
    render_simulation_csv, render_simulation_table, MethodReport, RunReport, SCHEMA_VERSION,
};
use crate::schema::{load_demand_panel, load_iv_dataset, CsvSchemaMap};
use crate::OutputFormat;

fn write_or_print(out: Option<&Path>, contents: &str) -> Result<(), Error> {
    match out {
        Some(path) => fs::write(path, contents)
            .map_err(|e| Error::Input(format!("cannot write {}: {e}", path.display()))),
        None => {
            println!("{contents}");
            Ok(())
        }
    }
}

fn to_json<T: serde::Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("report serialization cannot fail")
}

/// Runs the requested estimators on a CSV dataset.
pub fn cmd_fit(
    csv: &Path,
    schema_text: &str,
    methods: &[String],
    level: f64,
    format: OutputFormat,
    out: Option<&Path>,
) -> Result<i32, Error> {
    let start = Instant::now();
    let schema = CsvSchemaMap::parse(schema_text)?;
    let data = load_iv_dataset(csv, &schema)?;
    let pipeline = PipelineConfig { confidence_level: level, ..PipelineConfig::default() };

    let mut reports = Vec::new();
    for method in methods {
        let result = run_fit_method(method, &data, &pipeline, level)?;
        reports.push(result);
    }

    let report = RunReport {
        schema_version: SCHEMA_VERSION,
        command: "fit".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        input: csv.display().to_string(),
        confidence_level: level,
        methods: reports,
        timing_seconds: start.elapsed().as_secs_f64(),
    };

    let rendered = match format {
        OutputFormat::Table => report.render_table(),
        OutputFormat::Json => to_json(&report),
        OutputFormat::Csv => report.render_csv(),
    };
    println!("{rendered}");
    if let Some(path) = out {
        write_or_print(Some(path), &to_json(&report))?;
    }

    let weak = report
        .methods
        .iter()
        .any(|m| m.error.as_deref().is_some_and(|e| e.contains("weak identification")));
    let nonconv = report.methods.iter().any(|m| !m.converged);
    Ok(if weak {
        3
    } else if nonconv {
        4
    } else {
        0
    })
}

fn run_fit_method(
    method: &str,
    data: &IVDataset,
    pipeline: &PipelineConfig,
    level: f64,
) -> Result<MethodReport, Error> {
    let report = match method {
        "double_selection" => estimate_double_selection(data, pipeline)
            .map(|e| MethodReport::from_estimate(method, &e, level)),
        "naive_stepwise" => estimate_naive_stepwise(data, &StepwiseRule::default(), pipeline)
            .map(|e| MethodReport::from_estimate(method, &e, level)),
        "naive_nonorthogonal" => estimate_naive_nonorthogonal(data, pipeline)
            .map(|e| MethodReport::from_estimate(method, &e, level)),
        "union_2sls" => estimate_union_2sls(data, pipeline)
            .map(|e| MethodReport::from_estimate(method, &e, level)),
        "ols" => fit_ols_method(data, level),
        "tsls_no_selection" => tsls_no_selection(data, level),
        other => return Err(Error::Config(format!("unknown fit method '{other}'"))),
    };
    Ok(report.unwrap_or_else(|err| MethodReport::from_error(method, &err)))
}

/// OLS of the outcome on the endogenous column and all listed controls,
/// treating the endogenous column as exogenous.
fn fit_ols_method(data: &IVDataset, level: f64) -> Result<MethodReport, Error> {
    let n = data.n();
    let p_x = data.p_x();
    let mut design = DMatrix::<f64>::zeros(n, 2 + p_x);
    design.column_mut(0).fill(1.0);
    design.set_column(1, data.d());
    design.view_mut((0, 2), (n, p_x)).copy_from(data.x());
    let problem = RegressionProblem::new(design, data.y().clone())?;
    let fit = fit_ols(&problem)?;
    let alpha = fit.coefficients[1];
    let se = fit.robust_se(1);
    Ok(wald_report("ols", alpha, se, level, n))
}

/// Plain 2SLS using every listed control and instrument, no selection.
fn tsls_no_selection(data: &IVDataset, level: f64) -> Result<MethodReport, Error> {
    if data.p_z() == 0 {
        return Err(Error::Input("tsls_no_selection requires at least one instrument".into()));
    }
    let n = data.n();
    let p_x = data.p_x();
    let p_z = data.p_z();
    let mut regressors = DMatrix::<f64>::zeros(n, 1 + p_x + 1);
    regressors.column_mut(0).fill(1.0);
    regressors.view_mut((0, 1), (n, p_x)).copy_from(data.x());
    regressors.set_column(1 + p_x, data.d());
    let mut instruments = DMatrix::<f64>::zeros(n, 1 + p_x + p_z);
    instruments.column_mut(0).fill(1.0);
    instruments.view_mut((0, 1), (n, p_x)).copy_from(data.x());
    instruments.view_mut((0, 1 + p_x), (n, p_z)).copy_from(data.z());

    let target = 1 + p_x;
    let fit = hdiv::iv::two_stage_least_squares(data.y(), &regressors, &instruments, target)?;
    let alpha = fit.coefficients[target];
    let se = fit.robust_covariance[(target, target)].max(0.0).sqrt();
    Ok(wald_report("tsls_no_selection", alpha, se, level, n))
}

fn wald_report(method: &str, alpha: f64, se: f64, level: f64, n: usize) -> MethodReport {
    let z = normal_quantile(0.5 + level / 2.0);
    MethodReport {
        method: method.to_string(),
        alpha_hat: Some(alpha),
        std_error: Some(se),
        ci_lower: Some(alpha - z * se),
        ci_upper: Some(alpha + z * se),
        score_set: None,
        selection: None,
        n: Some(n),
        converged: true,
        error: None,
    }
}

fn normal_quantile(p: f64) -> f64 {
    hdiv::dist::normal_quantile(p)
}

/// Runs the Monte Carlo engine from a config file and/or flag overrides.
#[allow(clippy::too_many_arguments)]
pub struct SimulateArgs {
    pub config: Option<PathBuf>,
    pub n: Option<usize>,
    pub p_x: Option<usize>,
    pub p_z: Option<usize>,
    pub replications: Option<usize>,
    pub alpha0: Option<f64>,
    pub seed: Option<u64>,
    pub level: Option<f64>,
    pub methods: Option<Vec<String>>,
    pub format: OutputFormat,
    pub out: Option<PathBuf>,
}

pub fn cmd_simulate(args: &SimulateArgs) -> Result<i32, Error> {
    let (summary, _) = simulate_summary(args)?;
    emit_simulation(&summary, args.format, args.out.as_deref(), false)?;
    Ok(0)
}

fn simulate_summary(args: &SimulateArgs) -> Result<(SimulationSummary, Vec<EstimatorId>), Error> {
    let mut config: SimulationConfig = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| Error::Input(format!("cannot read {}: {e}", path.display())))?;
            toml::from_str(&text)
                .map_err(|e| Error::Config(format!("invalid simulation config: {e}")))?
        }
        None => SimulationConfig::default(),
    };
    if let Some(n) = args.n {
        config.n = n;
    }
    if let Some(p_x) = args.p_x {
        config.p_x = p_x;
    }
    if let Some(p_z) = args.p_z {
        config.p_z = p_z;
    }
    if let Some(replications) = args.replications {
        config.replications = replications;
    }
    if let Some(alpha0) = args.alpha0 {
        config.alpha0 = alpha0;
    }
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(level) = args.level {
        config.test_level = 1.0 - level;
    }
    config.validate()?;

    let estimators: Vec<EstimatorId> = match &args.methods {
        Some(list) => list
            .iter()
            .map(|s| s.parse::<EstimatorId>())
            .collect::<Result<Vec<_>, _>>()?,
        None => EstimatorId::TABLE.to_vec(),
    };
    let summary = run_simulation(&config, &estimators)?;
    Ok((summary, estimators))
}

#[derive(serde::Serialize)]
struct VersionedSummary<'a> {
    schema_version: u32,
    #[serde(flatten)]
    summary: &'a SimulationSummary,
}

fn emit_simulation(
    summary: &SimulationSummary,
    format: OutputFormat,
    out: Option<&Path>,
    published: bool,
) -> Result<(), Error> {
    let versioned = VersionedSummary { schema_version: SCHEMA_VERSION, summary };
    match format {
        OutputFormat::Table => println!("{}", render_simulation_table(summary, published)),
        OutputFormat::Json => println!("{}", to_json(&versioned)),
        OutputFormat::Csv => println!("{}", render_simulation_csv(summary)),
    }
    if let Some(path) = out {
        write_or_print(Some(path), &to_json(&versioned))?;
    }
    Ok(())
}

/// Expands a demand panel into controls plus sum instruments and writes the
/// result as CSV.
pub fn cmd_expand(
    csv: &Path,
    schema_text: &str,
    recipe_name: &str,
    out: &Path,
) -> Result<i32, Error> {
    let schema = CsvSchemaMap::parse(schema_text)?;
    let panel = load_demand_panel(csv, &schema)?;
    let recipe = match recipe_name {
        "blp" => ExpansionRecipe::blp(),
        "base" => {
            if schema.characteristics
                == vec![
                    "air_conditioning".to_string(),
                    "hp_weight".to_string(),
                    "miles_per_dollar".to_string(),
                    "size".to_string(),
                ]
            {
                ExpansionRecipe::blp_base_only()
            } else {
                ExpansionRecipe::base_only(panel.characteristic_names())
            }
        }
        other => return Err(Error::Config(format!("unknown recipe '{other}' (use blp or base)"))),
    };
    let expanded = expand_characteristics(&panel, &recipe)?;
    let (instruments, instrument_names) =
        build_sum_instruments(&panel, &expanded.matrix, &expanded.names)?;

    let mut writer = csv::Writer::from_path(out)
        .map_err(|e| Error::Input(format!("cannot write {}: {e}", out.display())))?;
    let mut header = vec![
        "market_id".to_string(),
        "firm_id".to_string(),
        "product_id".to_string(),
        "share".to_string(),
        "outside_share".to_string(),
        "price".to_string(),
    ];
    header.extend(expanded.names.iter().cloned());
    header.extend(instrument_names.iter().cloned());
    writer
        .write_record(&header)
        .map_err(|e| Error::Input(format!("CSV write failed: {e}")))?;
    for (i, row) in panel.rows().iter().enumerate() {
        let mut record = vec![
            row.market.clone(),
            row.firm.clone(),
            row.product.clone(),
            row.share.to_string(),
            row.outside_share.to_string(),
            row.price.to_string(),
        ];
        for j in 0..expanded.matrix.ncols() {
            record.push(expanded.matrix[(i, j)].to_string());
        }
        for j in 0..instruments.ncols() {
            record.push(instruments[(i, j)].to_string());
        }
        writer
            .write_record(&record)
            .map_err(|e| Error::Input(format!("CSV write failed: {e}")))?;
    }
    writer.flush().map_err(|e| Error::Input(format!("CSV write failed: {e}")))?;

    println!("controls: {}, instruments: {}", expanded.names.len(), instruments.ncols());
    println!("written: {}", out.display());
    Ok(0)
}

/// Runs the shipped default configuration and compares against the published
/// reference table. Exit code 0 only when every threshold check passes.
pub fn cmd_replicate_sim(
    replications: Option<usize>,
    seed: Option<u64>,
    format: OutputFormat,
    out: Option<&Path>,
) -> Result<i32, Error> {
    let mut config = SimulationConfig::default();
    if let Some(replications) = replications {
        config.replications = replications;
    }
    if let Some(seed) = seed {
        config.seed = seed;
    }
    let summary = run_simulation(&config, &EstimatorId::TABLE)?;
    emit_simulation(&summary, format, out, true)?;

    let checks = qualitative_checks(&summary);
    let mut all_passed = true;
    for check in &checks {
        let status = if check.passed { "PASS" } else { "FAIL" };
        println!("check: {:<45} {} ({})", check.name, status, check.detail);
        all_passed &= check.passed;
    }
    Ok(if all_passed { 0 } else { 1 })
}
