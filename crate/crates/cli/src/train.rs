use std::io::Write;
use std::path::{Path, PathBuf};

use afford::affordance::INDICATOR_COUNT;
use afford::datastore::{read_all, training_set, Dataset};
use afford::learning::{train, TrainConfig};
use clap::Args;

use crate::common::create;
use crate::failure::{Classify, Failure, Outcome};

/// Fits the raster regressor to recorded datasets.
#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset file; repeat to train on several.
    #[arg(long = "data", required = true)]
    pub data: Vec<PathBuf>,
    /// Checkpoint to write.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 20_000)]
    pub iterations: usize,
    #[arg(long, default_value_t = 0.01)]
    pub lr: f64,
    #[arg(long, default_value_t = 64)]
    pub batch: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Hidden layer widths, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "256,64")]
    pub hidden: Vec<usize>,
    #[arg(long, default_value_t = 0.9)]
    pub momentum: f64,
    #[arg(long, default_value_t = 0.0)]
    pub weight_decay: f64,
    /// Per-iteration loss as CSV.
    #[arg(long)]
    pub loss_log: Option<PathBuf>,
}

/// Reads datasets that must share one header.
pub fn load_datasets(paths: &[PathBuf]) -> Result<Dataset, Failure> {
    let mut merged: Option<Dataset> = None;
    for path in paths {
        let ds = read_all(path).config(&format!("reading {}", path.display()))?;
        match &mut merged {
            None => merged = Some(ds),
            Some(m) if m.header == ds.header => m.records.extend(ds.records),
            Some(_) => return Err(Failure::config(format!("{} was recorded with a different camera or spec", path.display()))),
        }
    }
    let merged = merged.ok_or_else(|| Failure::config("no datasets given"))?;
    if merged.records.is_empty() {
        return Err(Failure::config("datasets contain no frames"));
    }
    Ok(merged)
}

pub fn run(args: TrainArgs) -> Outcome {
    let ds = load_datasets(&args.data)?;
    let set = training_set(&ds.records).config("assembling the training set")?;
    let cfg = TrainConfig {
        learning_rate: args.lr,
        batch_size: args.batch,
        iterations: args.iterations,
        seed: args.seed,
        momentum: args.momentum,
        weight_decay: args.weight_decay,
        ..TrainConfig::default()
    };
    cfg.validate().config("training options")?;
    let mut sizes = vec![ds.header.camera.pixel_count()];
    sizes.extend(&args.hidden);
    sizes.push(INDICATOR_COUNT);
    eprintln!("training {:?} on {} frames", sizes, set.len());

    let every = (args.iterations / 20).max(1);
    let mut window = 0.0;
    let out = train(&set, &sizes, &cfg, |it, loss| {
        window += loss;
        if (it + 1) % every == 0 {
            eprintln!("iteration {:>7}  mean loss {:.6}", it + 1, window / every as f64);
            window = 0.0;
        }
    })
    .runtime("training")?;
    if !out.model.is_finite() {
        return Err(Failure::runtime("training diverged to non-finite parameters"));
    }
    out.model.save(&args.out, &ds.header.spec, &ds.header.camera).runtime("saving the checkpoint")?;
    if let Some(path) = &args.loss_log {
        write_losses(path, &out.losses)?;
    }
    println!("wrote {} after {} iterations", args.out.display(), args.iterations);
    Ok(())
}

fn write_losses(path: &Path, losses: &[f64]) -> Outcome {
    let mut w = create(path)?;
    let mut body = String::from("iteration,loss\n");
    for (i, l) in losses.iter().enumerate() {
        body.push_str(&format!("{i},{l}\n"));
    }
    w.write_all(body.as_bytes()).and_then(|_| w.flush()).runtime("writing the loss log")
}
