use std::path::PathBuf;

use afford::affordance::{closest_car_by_area, AreaPartition};
use afford::eval::{closed_loop_metrics, write_log, write_pairs, PairRow};
use afford::perception::perceive_areas_projection;
use afford::sim::EGO_ID;
use clap::Args;

use crate::common::{create, write_text, SimArgs};
use crate::failure::{Classify, Outcome};

/// Closed-loop run without a display.
#[derive(Debug, Args)]
pub struct DriveArgs {
    #[command(flatten)]
    pub sim: SimArgs,
    /// Directory receiving trajectory.csv, report.txt and report.csv.
    #[arg(long, default_value = "drive-out")]
    pub out: PathBuf,
    /// Also write per-tick truth and estimate pairs, including the
    /// closest-car-by-area projection estimate, for `eval --pairs`.
    #[arg(long)]
    pub pairs_log: Option<PathBuf>,
}

pub fn run(args: DriveArgs) -> Outcome {
    let mut p = args.sim.prepare()?;
    let session = &mut p.session;
    let partition = AreaPartition::default();
    let depth_offset = p.scenario.file.vehicle.length / 2.0;
    let ticks = p.scenario.control_ticks();
    let mut rows = Vec::with_capacity(ticks as usize);
    let mut pairs = Vec::new();
    for _ in 0..ticks {
        let areas = match args.pairs_log {
            Some(_) => {
                let truth = closest_car_by_area(&session.world, EGO_ID, &partition).runtime("area truth")?;
                let (cam, style) = (&session.config.camera, &session.config.style);
                let est = perceive_areas_projection(&session.world, EGO_ID, cam, style, &partition, depth_offset)
                    .runtime("projection estimate")?;
                Some((truth, est))
            }
            None => None,
        };
        let out = session.tick().runtime("simulation")?;
        if let (Some((area_truth, area_estimate)), Some(truth), Some(est)) = (areas, out.truth, &out.estimate) {
            pairs.push(PairRow { tick: out.row.tick, truth, estimate: est.vector, area_truth, area_estimate });
        }
        rows.push(out.row);
    }
    let report = closed_loop_metrics(&rows, p.scenario.file.control_dt).runtime("summarizing the run")?;

    write_log(&rows, create(&args.out.join("trajectory.csv"))?).runtime("writing the trajectory")?;
    report.write_csv(create(&args.out.join("report.csv"))?).runtime("writing report.csv")?;
    let table = format!(
        "scenario {} seed {} perceiver {}\n{}",
        p.scenario.name,
        p.seed,
        session.perceiver.source().as_str(),
        report.to_table()
    );
    write_text(&args.out.join("report.txt"), &table)?;
    if let Some(path) = &args.pairs_log {
        write_pairs(&pairs, create(path)?).runtime("writing the pairs log")?;
    }
    print!("{table}");
    Ok(())
}
