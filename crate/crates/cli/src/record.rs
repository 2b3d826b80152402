use std::path::PathBuf;

use afford::datastore::{DatasetHeader, DatasetWriter};
use afford::session::Weave;
use clap::Args;

use crate::common::{create, track_id, SimArgs};
use crate::failure::{Classify, Failure, Outcome};
use crate::serve::{run_service, NetArgs, ServiceOptions};

/// Collects labeled frames, either from a human driving through the live
/// service or headless from the autonomous controller with a wandering
/// lane offset.
#[derive(Debug, Args)]
pub struct RecordArgs {
    #[command(flatten)]
    pub sim: SimArgs,
    #[command(flatten)]
    pub net: NetArgs,
    /// Dataset to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Add to an existing dataset instead of replacing it.
    #[arg(long)]
    pub append: bool,
    /// Drive with the autonomous controller instead of serving a human.
    #[arg(long)]
    pub headless: bool,
    /// Frames to collect in headless mode.
    #[arg(long, default_value_t = 10_000)]
    pub frames: usize,
    /// Peak lateral offset in meters of the headless driver's wander.
    #[arg(long, default_value_t = 1.2)]
    pub weave_amplitude: f64,
    /// Period in seconds of the headless driver's wander.
    #[arg(long, default_value_t = 5.0)]
    pub weave_period: f64,
}

pub fn run(args: RecordArgs) -> Outcome {
    let stop_after = args.sim.duration.is_some();
    let p = args.sim.prepare()?;
    if !args.headless {
        let opts = ServiceOptions {
            net: args.net,
            record: Some(args.out),
            append: args.append,
            record_on: true,
            manual: true,
            stop_after: stop_after.then(|| p.scenario.control_ticks()),
        };
        return run_service(p, opts);
    }
    if !(args.weave_amplitude >= 0.0 && args.weave_period > 0.0) {
        return Err(Failure::config("--weave-amplitude must be >= 0 and --weave-period positive"));
    }
    let mut session = p.session;
    let header = DatasetHeader { spec: session.spec, camera: session.config.camera };
    let mut writer = if args.append && args.out.exists() {
        DatasetWriter::append_to(&args.out, header).config("opening the dataset")?
    } else {
        drop(create(&args.out)?);
        DatasetWriter::create(&args.out, header).config("creating the dataset")?
    };
    session.weave = Some(Weave { amplitude: args.weave_amplitude, period: args.weave_period });
    let track = track_id(&p.scenario);
    let budget = args.frames as u64 * 3 + 100;
    let mut collisions = 0;
    let mut saved = 0;
    while saved < args.frames {
        if session.control_tick() >= budget {
            return Err(Failure::runtime(format!(
                "only {saved} of {} frames were representable in {budget} ticks",
                args.frames
            )));
        }
        let (out, record) = session.tick_capturing(&track).runtime("simulation")?;
        collisions += out.row.new_collisions;
        if let Some(r) = record {
            writer.append(&r).runtime("recording a frame")?;
            saved += 1;
        }
    }
    writer.finish().runtime("closing the dataset")?;
    println!(
        "recorded {saved} frames on {track} in {} ticks ({collisions} collisions) to {}",
        session.control_tick(),
        args.out.display()
    );
    Ok(())
}
