use std::path::PathBuf;

use afford::datastore::read_all;
use afford::eval::{closed_loop_metrics, write_log};
use afford::session::Pilot;
use clap::Args;

use crate::common::{create, track_id, SimArgs};
use crate::failure::{Classify, Failure, Outcome};

/// Re-drives a recording from its stored commands and checks that the
/// trajectory comes out identical.
#[derive(Debug, Args)]
pub struct ReplayArgs {
    #[command(flatten)]
    pub sim: SimArgs,
    /// Dataset recorded from tick 0 of the same scenario and seed.
    #[arg(long)]
    pub data: PathBuf,
    /// Trajectory log of the replay.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn run(args: ReplayArgs) -> Outcome {
    let mut p = args.sim.prepare()?;
    let ds = read_all(&args.data).config(&format!("reading {}", args.data.display()))?;
    if ds.records.is_empty() {
        return Err(Failure::config("the recording is empty"));
    }
    let track = track_id(&p.scenario);
    for (i, r) in ds.records.iter().enumerate() {
        if r.tick != i as u64 {
            return Err(Failure::config(format!(
                "recording must hold consecutive ticks from 0; found tick {} at position {i}",
                r.tick
            )));
        }
        if r.track_id != track {
            return Err(Failure::config(format!("recorded on track {} but the scenario uses {track}", r.track_id)));
        }
    }
    let session = &mut p.session;
    session.set_pilot(Pilot::Manual);
    let mut rows = Vec::with_capacity(ds.records.len());
    for r in &ds.records {
        let ego = session.world.ego();
        if ego.frame != r.frame || ego.speed != r.speed {
            return Err(Failure::runtime(format!(
                "replay diverged at tick {}: station {} lateral {} vs recorded {} {}",
                r.tick, ego.frame.station, ego.frame.lateral, r.frame.station, r.frame.lateral
            )));
        }
        if session.truth() != Some(r.affordance) {
            return Err(Failure::runtime(format!(
                "replay diverged at tick {}: labels differ, so traffic does not match the recording",
                r.tick
            )));
        }
        session.set_manual_command(r.command);
        rows.push(session.tick().runtime("simulation")?.row);
    }
    if let Some(out) = &args.out {
        write_log(&rows, create(out)?).runtime("writing the trajectory")?;
    }
    let report = closed_loop_metrics(&rows, p.scenario.file.control_dt).runtime("summarizing the replay")?;
    println!("replayed {} ticks, trajectory matches the recording", rows.len());
    print!("{}", report.to_table());
    Ok(())
}
