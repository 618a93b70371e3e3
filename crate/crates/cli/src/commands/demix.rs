use super::data;
use crate::config::ExperimentConfig;
use crate::errors::CliError;
use crate::logging;
use sica_core::sica::{apply_demixer, demix, load_demixer, save_demixer};
use sica_core::signals::SignalMatrix;
use sica_core::SignalMatrix64;
use std::path::Path;

pub fn run(cfg: &ExperimentConfig, out: &Path, input: Option<&Path>) -> Result<(), CliError> {
    let input = input
        .map(Path::to_path_buf)
        .unwrap_or_else(|| out.join("mixed.csv"));
    let observed: SignalMatrix64 = SignalMatrix::read_csv(&input)?;
    let ground_truth = data::optional_sources(out);
    let sica_cfg = cfg.sica_config();
    let output = demix(&observed, &sica_cfg, ground_truth.as_ref())?;

    let echo = format!("config: {}", cfg.echo());
    output
        .z
        .write_csv(out.join("recovered.csv"), &[echo.clone()])?;
    std::fs::write(
        out.join("trace.csv"),
        output.trace.to_csv_string(&[echo.clone()]),
    )?;
    let models_dir = out.join("models");
    let config_echo = serde_json::json!({
        "config": cfg.echo(),
        "seed": cfg.seed,
    });
    save_demixer(&models_dir, &output.demixer, config_echo)?;

    for entry in &output.trace.entries {
        if let (Some(proxy), eta) = (entry.wgf_lipschitz_proxy, sica_cfg.eta) {
            if eta > 0.0 && proxy > 1.0 / eta {
                logging::info!(
                    "iteration {}: velocity Lipschitz proxy {proxy:.2} exceeds 1/eta = {:.2}; \
                     the one-step refinement may not be invertible",
                    entry.iteration,
                    1.0 / eta
                );
            }
        }
    }
    if let Some((_, kl)) = output.trace.kl_curve().last() {
        logging::info!("final KL estimate {kl:.4}");
    }
    logging::info!(
        "wrote {}, {}, {}",
        out.join("recovered.csv").display(),
        out.join("trace.csv").display(),
        models_dir.join("manifest.json").display()
    );
    Ok(())
}

pub fn apply(input: &Path, models: &Path, output: &Path) -> Result<(), CliError> {
    let observed: SignalMatrix64 = SignalMatrix::read_csv(input)?;
    let demixer = load_demixer::<f64>(models)?;
    let recovered = apply_demixer(&demixer, &observed)?;
    recovered.write_csv(output, &[format!("models: {}", models.display())])?;
    logging::info!("replayed {} refinements -> {}", demixer.models.len(), output.display());
    Ok(())
}
