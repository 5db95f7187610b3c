//! Command-line pipeline around `expanet-core`: each command is one stage
//! that reads upstream artefacts from the work directory and records what
//! it produced in a manifest.

pub mod artifacts;
pub mod config;
pub mod error;
pub mod manifest;
pub mod stages;

pub use config::PipelineConfig;
pub use error::CliError;
pub use manifest::{Layout, Stage, StageManifest};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Synth,
    Preprocess,
    Featurize,
    Graph,
    Train,
    Explain,
    Report,
    /// Every stage from `preprocess` to `report`.
    Run,
}

pub fn run(command: Command, cfg: &PipelineConfig) -> Result<(), CliError> {
    match command {
        Command::Synth => stages::synth(cfg).map(drop),
        Command::Preprocess => stages::preprocess(cfg).map(drop),
        Command::Featurize => stages::featurize(cfg).map(drop),
        Command::Graph => stages::graph(cfg).map(drop),
        Command::Train => stages::train(cfg).map(drop),
        Command::Explain => stages::explain(cfg).map(drop),
        Command::Report => stages::report(cfg).map(drop),
        Command::Run => stages::run_all(cfg),
    }
}
