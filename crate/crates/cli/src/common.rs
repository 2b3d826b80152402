use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use afford::scenario::{PerceiverKind, Scenario};
use afford::session::{perceiver_for, Session};
use clap::{Args, ValueEnum};

use crate::failure::{Classify, Failure};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PerceiverArg {
    Oracle,
    Noisy,
    Learned,
}

impl From<PerceiverArg> for PerceiverKind {
    fn from(p: PerceiverArg) -> Self {
        match p {
            PerceiverArg::Oracle => PerceiverKind::Oracle,
            PerceiverArg::Noisy => PerceiverKind::Noisy,
            PerceiverArg::Learned => PerceiverKind::Learned,
        }
    }
}

/// Flags shared by every command that builds a simulation.
#[derive(Debug, Clone, Args)]
pub struct SimArgs {
    /// Scenario file (TOML).
    #[arg(long)]
    pub scenario: PathBuf,
    /// Estimator feeding the controller; defaults to the scenario's choice.
    #[arg(long, value_enum)]
    pub perceiver: Option<PerceiverArg>,
    /// Checkpoint for the learned estimator.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Traffic and noise seed; defaults to the scenario's seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Simulated seconds; defaults to the scenario's duration.
    #[arg(long)]
    pub duration: Option<f64>,
}

pub struct Prepared {
    pub scenario: Scenario,
    pub seed: u64,
    pub session: Session,
}

impl SimArgs {
    pub fn prepare(&self) -> Result<Prepared, Failure> {
        let mut scenario = Scenario::load(&self.scenario).config("loading the scenario")?;
        if let Some(d) = self.duration {
            scenario.file.duration = d;
            scenario.validate().config("--duration")?;
        }
        let seed = self.seed.unwrap_or(scenario.file.seed);
        let perceiver =
            perceiver_for(&scenario, self.perceiver.map(Into::into), self.model.as_deref()).config("setting up perception")?;
        let session = Session::from_scenario(&scenario, seed, perceiver).config("building the scenario")?;
        Ok(Prepared { scenario, seed, session })
    }
}

pub fn create(path: &Path) -> Result<BufWriter<File>, Failure> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).runtime(&format!("creating {}", dir.display()))?;
    }
    File::create(path).map(BufWriter::new).runtime(&format!("creating {}", path.display()))
}

pub fn write_text(path: &Path, text: &str) -> Result<(), Failure> {
    let mut w = create(path)?;
    w.write_all(text.as_bytes()).and_then(|_| w.flush()).runtime(&format!("writing {}", path.display()))
}

/// Track name used to tag recorded frames.
pub fn track_id(scenario: &Scenario) -> String {
    scenario.track.name().to_string()
}
