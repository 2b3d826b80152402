use std::fmt::Write as _;
use std::fs::File;
use std::path::PathBuf;

use afford::affordance::{AffordanceVector, Indicator, NormalizationSpec, INDICATOR_COUNT};
use afford::datastore::training_set;
use afford::eval::{area_task_mae, closed_loop_metrics, mae_per_indicator, read_log, read_pairs, MaeOptions, MaeReport};
use afford::learning::MlpModel;
use clap::{ArgGroup, Args};

use crate::common::{create, write_text};
use crate::failure::{Classify, Failure, Outcome};
use crate::train::load_datasets;

/// Error reports for a model on a dataset, a paired truth/estimate log, or a
/// trajectory log.
#[derive(Debug, Args)]
#[command(group(ArgGroup::new("input").required(true).args(["data", "pairs", "log"])))]
pub struct EvalArgs {
    /// Dataset to evaluate `--model` on; repeatable.
    #[arg(long = "data", requires = "model")]
    pub data: Vec<PathBuf>,
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Training datasets whose mean output forms a constant predictor to
    /// compare against; repeatable.
    #[arg(long = "baseline-from", requires = "data")]
    pub baseline_from: Vec<PathBuf>,
    /// Paired log written by `drive --pairs-log`.
    #[arg(long)]
    pub pairs: Option<PathBuf>,
    /// Trajectory log written by `drive`.
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// Lane width in meters used for the sentinels of `--pairs`.
    #[arg(long, default_value_t = 4.0)]
    pub lane_width: f64,
    /// Distance sentinel in meters used for `--pairs`.
    #[arg(long, default_value_t = 60.0)]
    pub max_range: f64,
    /// Control period of the trajectory log in seconds.
    #[arg(long, default_value_t = 0.1)]
    pub control_dt: f64,
    /// Skip frames where estimate and truth disagree on activity instead of
    /// charging the sentinel.
    #[arg(long)]
    pub skip_disagreement: bool,
    /// CSV copy of the main report.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn run(args: EvalArgs) -> Outcome {
    let opts = MaeOptions { penalize_disagreement: !args.skip_disagreement };
    if let Some(path) = &args.pairs {
        return eval_pairs(&args, path, opts);
    }
    if let Some(path) = &args.log {
        let rows = read_log(File::open(path).config(&format!("opening {}", path.display()))?)
            .config("reading the trajectory log")?;
        let report = closed_loop_metrics(&rows, args.control_dt).config("summarizing the log")?;
        if let Some(out) = &args.out {
            report.write_csv(create(out)?).runtime("writing the report")?;
        }
        print!("{}", report.to_table());
        return Ok(());
    }
    eval_model(&args, opts)
}

fn eval_pairs(args: &EvalArgs, path: &PathBuf, opts: MaeOptions) -> Outcome {
    let rows = read_pairs(File::open(path).config(&format!("opening {}", path.display()))?).config("reading the pairs log")?;
    if rows.is_empty() {
        return Err(Failure::config("the pairs log is empty"));
    }
    if !(args.lane_width > 0.0 && args.max_range > 0.0) {
        return Err(Failure::config("--lane-width and --max-range must be positive"));
    }
    let spec = NormalizationSpec::new(args.lane_width, args.max_range);
    let pairs: Vec<_> = rows.iter().map(|r| (r.estimate, r.truth)).collect();
    let report = mae_per_indicator(&pairs, &spec, opts, "pairs").runtime("computing MAE")?;
    let areas: Vec<_> = rows.iter().map(|r| (r.area_estimate, r.area_truth)).collect();
    let lenient = area_task_mae(&areas, false, 50.0).runtime("area task")?;
    let strict = area_task_mae(&areas, true, 50.0).runtime("area task")?;
    if let Some(out) = &args.out {
        report.write_csv(create(out)?).runtime("writing the report")?;
    }
    print!("{}\n{}\n{}", report.to_table(), lenient.to_table("false positives ignored"), strict.to_table("false positives penalized"));
    Ok(())
}

fn eval_model(args: &EvalArgs, opts: MaeOptions) -> Outcome {
    let model_path = args.model.as_ref().ok_or_else(|| Failure::config("--data needs --model"))?;
    let ck = MlpModel::load(model_path).config(&format!("loading {}", model_path.display()))?;
    let ds = load_datasets(&args.data)?;
    if ck.camera != ds.header.camera || ck.model.input_size() != ds.header.camera.pixel_count() {
        return Err(Failure::config("the checkpoint was trained on a different camera"));
    }
    let spec = ds.header.spec;
    let set = training_set(&ds.records).config("assembling the evaluation set")?;
    let outputs = set.predict(&ck.model, 256).runtime("running the model")?;
    let pairs: Vec<(AffordanceVector, AffordanceVector)> = outputs
        .rows()
        .into_iter()
        .zip(&ds.records)
        .map(|(y, r)| (spec.denormalize(&std::array::from_fn(|i| y[i])), r.affordance))
        .collect();
    let report = mae_per_indicator(&pairs, &spec, opts, "model").runtime("computing MAE")?;

    if args.baseline_from.is_empty() {
        if let Some(out) = &args.out {
            report.write_csv(create(out)?).runtime("writing the report")?;
        }
        print!("{}", report.to_table());
        return Ok(());
    }
    let train = load_datasets(&args.baseline_from)?;
    if train.header != ds.header {
        return Err(Failure::config("baseline datasets differ in camera or spec from the evaluation data"));
    }
    let mean = constant_mean(&train.records.iter().map(|r| r.targets).collect::<Vec<_>>());
    let constant = spec.denormalize(&mean);
    let base_pairs: Vec<_> = ds.records.iter().map(|r| (constant, r.affordance)).collect();
    let baseline = mae_per_indicator(&base_pairs, &spec, opts, "constant mean").runtime("computing MAE")?;
    let table = comparison(&report, &baseline);
    if let Some(out) = &args.out {
        write_text(out, &comparison_csv(&report, &baseline))?;
    }
    print!("{table}");
    Ok(())
}

/// Per-output mean of normalized targets.
pub fn constant_mean(targets: &[[f64; INDICATOR_COUNT]]) -> [f64; INDICATOR_COUNT] {
    std::array::from_fn(|i| {
        let mut col: Vec<f64> = targets.iter().map(|t| t[i]).collect();
        col.sort_unstable_by(f64::total_cmp);
        col.iter().sum::<f64>() / col.len().max(1) as f64
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or("-".into(), |v| format!("{v:.4}"))
}

fn comparison(model: &MaeReport, baseline: &MaeReport) -> String {
    let mut out = String::from("MAE of the model against a constant mean predictor\n");
    let _ = writeln!(out, "{:<14} {:>10} {:>10} {:>8} {:>8}", "indicator", "model", "constant", "ratio", "frames");
    for ind in Indicator::ALL {
        let (m, b) = (model.get(ind), baseline.get(ind));
        let ratio = match (m, b) {
            (Some(m), Some(b)) if b > 0.0 => format!("{:.3}", m / b),
            _ => "-".into(),
        };
        let _ = writeln!(out, "{:<14} {:>10} {:>10} {:>8} {:>8}", ind.name(), fmt_opt(m), fmt_opt(b), ratio, model.counts[ind.index()]);
    }
    out
}

fn comparison_csv(model: &MaeReport, baseline: &MaeReport) -> String {
    let mut out = String::from("indicator,model_mae,baseline_mae,frames\n");
    for ind in Indicator::ALL {
        let cell = |v: Option<f64>| v.map_or(String::new(), |v| v.to_string());
        let _ = writeln!(out, "{},{},{},{}", ind.name(), cell(model.get(ind)), cell(baseline.get(ind)), model.counts[ind.index()]);
    }
    out
}
