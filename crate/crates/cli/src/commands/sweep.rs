//! MCC over mixing depths: for every (J_mix, seed) cell, generate, mix and
//! score each configured method. Rows come out in long format so any
//! plotting tool can reproduce the curves without reshaping.

use super::data;
use crate::config::{Dataset, ExperimentConfig};
use crate::errors::CliError;
use crate::logging;
use sica_core::eval::{fastica, mcc};
use sica_core::sica::{demix, FlowKind};
use sica_core::signals::mix;
use std::path::Path;
use std::time::Instant;

pub fn run(cfg: &ExperimentConfig, out: &Path) -> Result<(), CliError> {
    if cfg.sweep.is_empty() {
        return Err(CliError::usage("sweep list is empty"));
    }
    if cfg.dataset == Dataset::Heart {
        return Err(CliError::usage(
            "sweep expects a mixing-depth dataset (ar7 or mnist)",
        ));
    }
    let mut rows: Vec<(String, usize, u64, f64, f64)> = Vec::new();
    for &j_mix in &cfg.sweep {
        for run in 0..cfg.runs {
            let seed = cfg.seed + run as u64;
            let mut cell = cfg.clone();
            cell.seed = seed;
            cell.mix_steps = j_mix;
            let sources = data::generate_sources(&cell)?;
            let mixed = mix(&sources, &data::mix_config(&cell, sources.d()))?;
            for method in &cfg.methods {
                let started = Instant::now();
                let score = match method.as_str() {
                    "baseline" => mcc(&mixed, &sources)?.mcc,
                    "fastica" => {
                        let z = fastica(&mixed, cfg.fastica_max_iter, cfg.fastica_tol)?;
                        mcc(&z, &sources)?.mcc
                    }
                    "sica-wgf" | "sica-rf" => {
                        let mut sica_cfg = cell.sica_config();
                        sica_cfg.flow = if method == "sica-wgf" {
                            FlowKind::Wgf
                        } else {
                            FlowKind::Rf
                        };
                        let output = demix(&mixed, &sica_cfg, None)?;
                        mcc(&output.z, &sources)?.mcc
                    }
                    other => return Err(CliError::usage(format!("unknown method `{other}`"))),
                };
                let seconds = started.elapsed().as_secs_f64();
                logging::info!(
                    "sweep: method={method} j_mix={j_mix} seed={seed} mcc={score:.4} ({seconds:.1}s)"
                );
                rows.push((method.clone(), j_mix, seed, score, seconds));
            }
        }
    }
    rows.sort_by(|a, b| (&a.0, a.1, a.2).cmp(&(&b.0, b.1, b.2)));

    let mut csv = format!("# config: {}\n", cfg.echo());
    csv.push_str("method,j_mix,seed,mcc,seconds\n");
    for (method, j_mix, seed, score, seconds) in &rows {
        csv.push_str(&format!("{method},{j_mix},{seed},{score},{seconds}\n"));
    }
    let path = out.join("sweep.csv");
    std::fs::write(&path, csv)?;
    logging::info!("wrote {} ({} rows)", path.display(), rows.len());
    Ok(())
}
