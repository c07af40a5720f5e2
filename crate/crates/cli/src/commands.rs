//! One function per subcommand. Each loads and validates everything it
//! needs before creating the output directory, so a failed run leaves no
//! partial artifacts behind.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use winstate::analysis::{extract_case_studies, first_layer_map, zero_fractions, BlockSummary, SparsityReport};
use winstate::dataset::{load_csv, write_csv};
use winstate::dataset::synthetic::{generate_synthetic, read_trigger_log, write_trigger_log, TriggerEvent};
use winstate::dataset::{summary_stats, Dataset, FeatureSchema, SummaryStats};
use winstate::evaluation::{
    evaluate_model, lag_sweep, validate_lags, write_durations_csv, write_metrics_csv, EvalReport,
    ModelEvaluation,
};
use winstate::network::Mlp;
use winstate::stacking::{stack_all, Horizon, Normalizer};
use winstate::training::{
    grid_search, repeat_train, train, write_trials_csv, DataSplits, GridOptions, PreparedSplits,
};
use winstate::Scalar;

use crate::config::{EvalSplit, Precision, RunConfig};
use crate::CliError;

macro_rules! dispatch {
    ($precision:expr, $f:ident($($arg:expr),*)) => {
        match $precision {
            Precision::F32 => $f::<f32>($($arg),*),
            Precision::F64 => $f::<f64>($($arg),*),
        }
    };
}

pub struct Context {
    pub config: RunConfig,
    pub quiet: bool,
}

impl Context {
    fn say(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            println!("{}", msg.as_ref());
        }
    }

    fn out(&self, name: &str) -> PathBuf {
        self.config.out_dir.join(name)
    }

    fn create_out_dir(&self) -> Result<(), CliError> {
        let dir = &self.config.out_dir;
        std::fs::create_dir_all(dir).map_err(|e| CliError::Io {
            path: dir.clone(),
            source: e,
        })
    }
}

/// Sequence length, lag, schema and normalizer a model was trained with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Preprocessing {
    pub seq_minutes: usize,
    pub lag_minutes: usize,
    pub schema: Vec<String>,
    pub normalizer: Normalizer<f64>,
}

impl Preprocessing {
    fn new<T: Scalar>(horizon: Horizon, schema: &FeatureSchema, normalizer: &Normalizer<T>) -> Self {
        let widen = |v: &[T]| v.iter().map(|x| x.to_f64_lossless()).collect();
        Self {
            seq_minutes: horizon.seq_minutes,
            lag_minutes: horizon.lag_minutes,
            schema: schema.static_names().to_vec(),
            normalizer: Normalizer {
                mean: widen(&normalizer.mean),
                std: widen(&normalizer.std),
                constant: normalizer.constant.clone(),
            },
        }
    }

    pub fn horizon(&self) -> Result<Horizon, CliError> {
        Ok(Horizon::new(self.seq_minutes, self.lag_minutes)?)
    }

    pub fn normalizer<T: Scalar>(&self) -> Normalizer<T> {
        let narrow = |v: &[f64]| v.iter().map(|x| T::lit(*x)).collect();
        Normalizer {
            mean: narrow(&self.normalizer.mean),
            std: narrow(&self.normalizer.std),
            constant: self.normalizer.constant.clone(),
        }
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }
}

fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Config(e.to_string()))?;
    std::fs::write(path, text + "\n").map_err(|e| CliError::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

/// Loads the configured CSV, or generates the synthetic series in memory.
pub fn load_data(config: &RunConfig) -> Result<(Dataset, Option<Vec<TriggerEvent>>), CliError> {
    let schema = config.data.schema()?;
    match &config.data.csv {
        Some(path) => {
            if !path.is_file() {
                return Err(CliError::Config(format!("data file {} does not exist", path.display())));
            }
            let dataset = load_csv(path, &schema)?;
            let triggers = match &config.data.triggers {
                Some(t) => Some(read_trigger_log(t)?),
                None => None,
            };
            Ok((dataset, triggers))
        }
        None => {
            if config.data.schema.is_some() && schema != FeatureSchema::default_synthetic() {
                return Err(CliError::Config(
                    "a custom schema needs a CSV file; the generator emits the default schema".into(),
                ));
            }
            let out = generate_synthetic(&config.data.synthetic)?;
            Ok((out.dataset, Some(out.triggers)))
        }
    }
}

fn select_split(config: &RunConfig, dataset: Dataset, which: EvalSplit) -> Result<Dataset, CliError> {
    if which == EvalSplit::All {
        return Ok(dataset);
    }
    let splits = DataSplits::from_dataset(&dataset, config.data.split)?;
    Ok(match which {
        EvalSplit::Val => splits.val,
        _ => splits.test,
    })
}

#[derive(Serialize)]
struct GenSummary<'a> {
    records: usize,
    triggers: usize,
    stats: &'a SummaryStats,
    actions_per_day: f64,
}

pub fn cmd_gen_data(ctx: &Context) -> Result<(), CliError> {
    let out = generate_synthetic(&ctx.config.data.synthetic)?;
    let stats = summary_stats(&out.dataset)?;
    ctx.create_out_dir()?;
    write_csv(&out.dataset, ctx.out("data.csv"))?;
    write_trigger_log(&out.triggers, ctx.out("triggers.csv"))?;
    write_json(
        &ctx.out("summary.json"),
        &GenSummary {
            records: out.dataset.len(),
            triggers: out.triggers.len(),
            stats: &stats,
            actions_per_day: stats.actions_per_day(),
        },
    )?;
    ctx.say(format!(
        "generated {} minutes: open fraction {:.4}, {:.2} openings/day, mean co2 {:.0} ppm, mean T {:.2} C, mean rh {:.1} %",
        out.dataset.len(),
        stats.open_fraction,
        stats.actions_per_day(),
        stats.mean_co2,
        stats.mean_t_indoor,
        stats.mean_rh
    ));
    Ok(())
}

pub fn cmd_train(ctx: &Context) -> Result<(), CliError> {
    let hp = ctx.config.hyperparams()?;
    hp.validate_with_warnings()?;
    let (dataset, _) = load_data(&ctx.config)?;
    let splits = DataSplits::from_dataset(&dataset, ctx.config.data.split)?;
    dispatch!(ctx.config.precision, train_impl(ctx, &splits))
}

fn train_impl<T: Scalar>(ctx: &Context, splits: &DataSplits) -> Result<(), CliError> {
    let hp = ctx.config.hyperparams()?;
    let horizon = hp.horizon()?;
    let prepared = PreparedSplits::<T>::new(&splits.train, &splits.val, None, horizon)?;
    let outcome = train(&prepared.train, &prepared.val, hp)?;
    ctx.create_out_dir()?;
    outcome.model.save(ctx.out("model.bin"))?;
    outcome.best_model.save(ctx.out("model_best.bin"))?;
    let pre = Preprocessing::new(horizon, splits.train.schema(), &prepared.normalizer);
    write_json(&ctx.out("preprocessing.json"), &pre)?;
    let report = &outcome.report;
    report.write_json(ctx.out("train_report.json"))?;
    report.write_trace_csv(ctx.out("loss_trace.csv"))?;
    report.write_checkpoints_csv(ctx.out("checkpoints.csv"))?;
    let m = &report.final_val_metrics;
    ctx.say(format!(
        "trained {} iterations in {:.1} s ({} epochs); validation acc {:.4} tpr {:.4} tnr {:.4} f1 {:.4}; best checkpoint at {}",
        report.total_iterations,
        report.wall_clock_secs,
        report.epochs_completed,
        m.acc,
        m.tpr,
        m.tnr,
        m.f1,
        report.best().iteration
    ));
    Ok(())
}

pub fn cmd_grid(ctx: &Context) -> Result<(), CliError> {
    let spec = ctx
        .config
        .grid
        .as_ref()
        .ok_or_else(|| CliError::Config("missing [grid] section".into()))?;
    let grid = spec.expand()?;
    let (dataset, _) = load_data(&ctx.config)?;
    let splits = DataSplits::from_dataset(&dataset, ctx.config.data.split)?;
    ctx.create_out_dir()?;
    let options = GridOptions {
        parallelism: ctx.config.jobs,
        model_dir: Some(ctx.out("models")),
    };
    let results = dispatch!(
        ctx.config.precision,
        grid_search(&grid, &splits.train, &splits.val, &options)
    )?;
    write_json(&ctx.out("grid_results.json"), &results)?;
    write_trials_csv(ctx.out("grid_results.csv"), &results)?;
    let failed = results.iter().filter(|r| r.error.is_some()).count();
    if let Some(best) = results.first().filter(|r| r.val_metrics.is_some()) {
        let m = best.val_metrics.as_ref().unwrap();
        ctx.say(format!(
            "{} trials ({} failed); best #{}: i={} l={} widths {:?} lambda {} lr {} -> val f1 {:.4} acc {:.4}",
            results.len(),
            failed,
            best.index,
            best.hyperparams.seq_minutes,
            best.hyperparams.lag_minutes,
            best.hyperparams.hidden_widths,
            best.hyperparams.l1_lambda,
            best.hyperparams.lr,
            m.f1,
            m.acc
        ));
    } else {
        ctx.say(format!("{} trials, all failed", results.len()));
    }
    Ok(())
}

pub fn cmd_eval(ctx: &Context) -> Result<(), CliError> {
    let evals = match ctx.config.eval.repeats {
        Some(n) => {
            let hp = ctx.config.hyperparams()?;
            hp.validate_with_warnings()?;
            let (dataset, _) = load_data(&ctx.config)?;
            let splits = DataSplits::from_dataset(&dataset, ctx.config.data.split)?;
            let report = dispatch!(ctx.config.precision, repeat_impl(ctx, &splits, n))?;
            ctx.create_out_dir()?;
            write_json(&ctx.out("repeat_report.json"), &report)?;
            report.evaluations().cloned().collect()
        }
        None => {
            let eval = dispatch!(ctx.config.precision, eval_saved(ctx))?;
            ctx.create_out_dir()?;
            vec![eval]
        }
    };
    let report = EvalReport::new(evals);
    report.write_json(ctx.out("eval_report.json"))?;
    write_metrics_csv(ctx.out("metrics.csv"), &report.runs)?;
    if let Some(first) = report.runs.first() {
        write_durations_csv(ctx.out("durations.csv"), &first.observed, &first.predicted)?;
    }
    let s = &report.summary;
    ctx.say(format!(
        "{} model(s) evaluated; mean acc {:.4} tpr {:.4} tnr {:.4} f1 {:.4}",
        report.runs.len(),
        s.acc.mean,
        s.tpr.mean,
        s.tnr.mean,
        s.f1.mean
    ));
    Ok(())
}

fn repeat_impl<T: Scalar>(
    ctx: &Context,
    splits: &DataSplits,
    n: usize,
) -> Result<winstate::training::RepeatReport, CliError> {
    let hp = ctx.config.hyperparams()?;
    let prepared = PreparedSplits::<T>::from_splits(splits, hp.horizon()?)?;
    Ok(repeat_train(hp, n, &prepared, ctx.config.jobs, ctx.config.eval.choice)?)
}

fn load_model<T: Scalar>(
    ctx: &Context,
    model: &Option<PathBuf>,
    preprocessing: &Option<PathBuf>,
) -> Result<(Mlp<T>, Preprocessing), CliError> {
    let model_path = ctx.config.model_path(model);
    let pre_path = ctx.config.preprocessing_path(preprocessing);
    let mlp = Mlp::<T>::load(&model_path)?;
    let pre = Preprocessing::load(&pre_path)?;
    if pre.normalizer.mean.len() != mlp.input_dim() {
        return Err(CliError::Config(format!(
            "{} expects {} inputs but {} describes {}",
            model_path.display(),
            mlp.input_dim(),
            pre_path.display(),
            pre.normalizer.mean.len()
        )));
    }
    let schema = ctx.config.data.schema()?;
    if schema.static_names() != pre.schema.as_slice() {
        return Err(CliError::Config(format!(
            "data schema differs from the one the model was trained with ({})",
            pre_path.display()
        )));
    }
    Ok((mlp, pre))
}

fn eval_saved<T: Scalar>(ctx: &Context) -> Result<ModelEvaluation, CliError> {
    let cfg = &ctx.config.eval;
    let (mlp, pre) = load_model::<T>(ctx, &cfg.model, &cfg.preprocessing)?;
    let (dataset, _) = load_data(&ctx.config)?;
    let data = select_split(&ctx.config, dataset, cfg.split)?;
    let mut set = stack_all::<T>(&data, pre.horizon()?);
    pre.normalizer::<T>().apply_set(&mut set)?;
    Ok(evaluate_model(&mlp, &set)?)
}

pub fn cmd_lag_sweep(ctx: &Context) -> Result<(), CliError> {
    let hp = ctx.config.hyperparams()?;
    hp.validate_with_warnings()?;
    let lags = &ctx.config.lag_sweep.lags;
    validate_lags(lags)?;
    let options = ctx.config.lag_sweep.options();
    let (dataset, _) = load_data(&ctx.config)?;
    let splits = DataSplits::from_dataset(&dataset, ctx.config.data.split)?;
    let result = dispatch!(
        ctx.config.precision,
        lag_sweep(hp, lags, &splits, &options, ctx.config.jobs)
    )?;
    ctx.create_out_dir()?;
    result.write_csv(ctx.out("lag_sweep.csv"))?;
    result.write_json(ctx.out("lag_sweep.json"))?;
    for cell in &result.cells {
        ctx.say(format!(
            "lag {:>2} min: {} iterations, f1 mean {:.4} (min {:.4}, max {:.4}) over {} runs",
            cell.lag_minutes,
            cell.total_iterations,
            cell.summary.f1.mean,
            cell.summary.f1.min,
            cell.summary.f1.max,
            cell.summary.f1.n
        ));
    }
    Ok(())
}

#[derive(Serialize)]
struct AnalysisSummary<'a> {
    sparsity: &'a SparsityReport,
    blocks: &'a [BlockSummary],
    episodes_requested: usize,
    episodes_found: usize,
    episodes_insufficient: bool,
}

pub fn cmd_analyze(ctx: &Context) -> Result<(), CliError> {
    dispatch!(ctx.config.precision, analyze_impl(ctx))
}

fn analyze_impl<T: Scalar>(ctx: &Context) -> Result<(), CliError> {
    let cfg = &ctx.config.analyze;
    let (mlp, pre) = load_model::<T>(ctx, &cfg.model, &cfg.preprocessing)?;
    let schema = ctx.config.data.schema()?;
    let horizon = pre.horizon()?;
    let sparsity = zero_fractions(&mlp);
    let map = first_layer_map(&mlp, &schema, horizon.seq_minutes)?;
    let (dataset, triggers) = load_data(&ctx.config)?;
    let data = select_split(&ctx.config, dataset, cfg.split)?;
    let cases = extract_case_studies(
        &mlp,
        &pre.normalizer::<T>(),
        &data,
        horizon,
        cfg.episodes,
        triggers.as_deref(),
    )?;
    ctx.create_out_dir()?;
    sparsity.write_csv(ctx.out("sparsity.csv"))?;
    map.write_csv(ctx.out("weight_map.csv"))?;
    map.write_blocks_csv(ctx.out("weight_blocks.csv"))?;
    cases.write_dir(ctx.out("episodes"))?;
    write_json(
        &ctx.out("analysis.json"),
        &AnalysisSummary {
            sparsity: &sparsity,
            blocks: &map.blocks,
            episodes_requested: cases.requested,
            episodes_found: cases.episodes.len(),
            episodes_insufficient: cases.insufficient,
        },
    )?;
    let fractions: Vec<String> = sparsity.layers.iter().map(|l| format!("{:.3}", l.fraction)).collect();
    ctx.say(format!(
        "zero-weight fraction {:.4} overall, per layer [{}]; {} of {} episodes extracted",
        sparsity.fraction,
        fractions.join(", "),
        cases.episodes.len(),
        cases.requested
    ));
    if cases.insufficient {
        log::warn!(
            "only {} correctly predicted openings available, {} requested",
            cases.episodes.len(),
            cases.requested
        );
    }
    Ok(())
}
