use super::data;
use crate::config::ExperimentConfig;
use crate::errors::CliError;
use crate::logging;
use sica_core::signals::{mix, SignalMatrix};
use sica_core::SignalMatrix64;
use std::path::Path;

pub fn run(cfg: &ExperimentConfig, out: &Path, input: Option<&Path>) -> Result<(), CliError> {
    let input = input
        .map(Path::to_path_buf)
        .unwrap_or_else(|| out.join("sources.csv"));
    let sources: SignalMatrix64 = SignalMatrix::read_csv(&input)?;
    let mixed = mix(&sources, &data::mix_config(cfg, sources.d()))?;
    let path = out.join("mixed.csv");
    mixed.write_csv(&path, &[format!("config: {}", cfg.echo())])?;
    logging::info!(
        "mixed {} with {} steps ({}) -> {}",
        input.display(),
        cfg.mix_steps,
        match cfg.mix_activation {
            sica_core::signals::MixActivation::Identity => "identity",
            sica_core::signals::MixActivation::Gelu => "gelu",
        },
        path.display()
    );
    Ok(())
}
