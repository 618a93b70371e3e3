use super::data;
use crate::config::ExperimentConfig;
use crate::errors::CliError;
use crate::logging;
use std::path::Path;

pub fn run(cfg: &ExperimentConfig, out: &Path) -> Result<(), CliError> {
    let sources = data::generate_sources(cfg)?;
    let path = out.join("sources.csv");
    sources.write_csv(&path, &[format!("config: {}", cfg.echo())])?;
    logging::info!(
        "wrote {} ({}x{})",
        path.display(),
        sources.d(),
        sources.t_len()
    );
    Ok(())
}
