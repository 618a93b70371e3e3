use crate::config::ExperimentConfig;
use crate::errors::CliError;
use crate::logging;
use sica_core::eval::mcc;
use sica_core::signals::SignalMatrix;
use sica_core::SignalMatrix64;
use std::path::Path;

pub fn run(
    cfg: &ExperimentConfig,
    out: &Path,
    recovered: Option<&Path>,
    sources: Option<&Path>,
) -> Result<(), CliError> {
    let recovered_path = recovered
        .map(Path::to_path_buf)
        .unwrap_or_else(|| out.join("recovered.csv"));
    let sources_path = sources
        .map(Path::to_path_buf)
        .unwrap_or_else(|| out.join("sources.csv"));
    let z: SignalMatrix64 = SignalMatrix::read_csv(&recovered_path)?;
    let s: SignalMatrix64 = SignalMatrix::read_csv(&sources_path)?;
    let result = mcc(&z, &s)?;
    let json = serde_json::json!({
        "mcc": result.mcc,
        "assignment": result.assignment,
        "abs_corr": result.abs_corr,
        "config": cfg.echo(),
    });
    let path = out.join("mcc.json");
    std::fs::write(&path, serde_json::to_string_pretty(&json).unwrap())?;
    logging::info!("mcc = {:.4} -> {}", result.mcc, path.display());
    Ok(())
}
