//! Dataset assembly shared by the commands: source generation for each
//! dataset kind, the mixing configuration, and a built-in digit image
//! fallback for image experiments when no IDX files are configured.

use crate::config::{Dataset, ExperimentConfig};
use crate::errors::CliError;
use crate::logging;
use sica_core::rng::SeedSplitter;
use sica_core::signals::{
    generate_ar7, generate_heart, images_to_signals, load_idx_images, load_idx_labels, ArConfig,
    GrayImage, MixConfig, SignalMatrix,
};
use sica_core::SignalMatrix64;

/// 5x7 digit glyphs, one string per digit, `#` = ink.
const DIGIT_GLYPHS: [[&str; 7]; 10] = [
    [" ### ", "#   #", "#  ##", "# # #", "##  #", "#   #", " ### "],
    ["  #  ", " ##  ", "  #  ", "  #  ", "  #  ", "  #  ", " ### "],
    [" ### ", "#   #", "    #", "   # ", "  #  ", " #   ", "#####"],
    [" ### ", "#   #", "    #", "  ## ", "    #", "#   #", " ### "],
    ["   # ", "  ## ", " # # ", "#  # ", "#####", "   # ", "   # "],
    ["#####", "#    ", "#### ", "    #", "    #", "#   #", " ### "],
    [" ### ", "#    ", "#    ", "#### ", "#   #", "#   #", " ### "],
    ["#####", "    #", "   # ", "  #  ", " #   ", " #   ", " #   "],
    [" ### ", "#   #", "#   #", " ### ", "#   #", "#   #", " ### "],
    [" ### ", "#   #", "#   #", " ####", "    #", "    #", " ### "],
];

/// Render digit `n` as a 28x28 grayscale image (4x upscaled glyph,
/// centered). Stands in for real image data in offline environments.
pub fn synthetic_digit(n: usize) -> GrayImage<f64> {
    let glyph = &DIGIT_GLYPHS[n % 10];
    let mut pixels = vec![0.0f64; 28 * 28];
    let scale = 4;
    let top = (28 - 7 * scale) / 2;
    let left = (28 - 5 * scale) / 2;
    for (r, row) in glyph.iter().enumerate() {
        for (c, ch) in row.chars().enumerate() {
            if ch == '#' {
                for dr in 0..scale {
                    for dc in 0..scale {
                        pixels[(top + r * scale + dr) * 28 + (left + c * scale + dc)] = 1.0;
                    }
                }
            }
        }
    }
    GrayImage {
        height: 28,
        width: 28,
        pixels,
    }
}

/// Pick `d` images for the overlay experiment: from the configured IDX
/// files when present, synthetic digits otherwise.
pub fn image_sources(cfg: &ExperimentConfig) -> Result<SignalMatrix64, CliError> {
    let images: Vec<GrayImage<f64>> = match (&cfg.mnist_images, &cfg.mnist_labels) {
        (Some(images_path), Some(labels_path)) => {
            let images = load_idx_images::<f64, _>(images_path)?;
            let labels = load_idx_labels(labels_path)?;
            if images.len() != labels.len() {
                return Err(CliError::data(format!(
                    "image/label count mismatch: {} vs {}",
                    images.len(),
                    labels.len()
                )));
            }
            // one random image per distinct label, seeded
            let sp = SeedSplitter::new(cfg.seed);
            let order = sica_core::rng::permutation(&mut sp.stream(77), images.len());
            let mut picked = Vec::with_capacity(cfg.d);
            let mut seen_labels = Vec::new();
            for &idx in &order {
                if picked.len() == cfg.d {
                    break;
                }
                if !seen_labels.contains(&labels[idx]) {
                    seen_labels.push(labels[idx]);
                    picked.push(images[idx].clone());
                }
            }
            if picked.len() < cfg.d {
                return Err(CliError::data(format!(
                    "need {} images with distinct labels, found {}",
                    cfg.d,
                    picked.len()
                )));
            }
            picked
        }
        _ => {
            logging::info!("no IDX files configured; using built-in digit images");
            (0..cfg.d)
                .map(|i| synthetic_digit((cfg.seed as usize + 3 * i) % 10))
                .collect()
        }
    };
    Ok(images_to_signals(&images, cfg.image_side)?)
}

pub fn generate_sources(cfg: &ExperimentConfig) -> Result<SignalMatrix64, CliError> {
    match cfg.dataset {
        Dataset::Ar7 => {
            let ar = ArConfig {
                beta: cfg.ar_beta.clone(),
                noise_std: cfg.noise_std,
                burn_in: cfg.burn_in,
                seed: cfg.seed,
            };
            Ok(generate_ar7(&ar, cfg.d, cfg.t_len)?)
        }
        Dataset::Heart => {
            if cfg.d != 2 {
                return Err(CliError::usage("heart dataset is two-dimensional (d = 2)"));
            }
            Ok(generate_heart(cfg.t_len, cfg.noise_std, cfg.seed)?)
        }
        Dataset::Mnist => image_sources(cfg),
    }
}

pub fn mix_config(cfg: &ExperimentConfig, d: usize) -> MixConfig {
    MixConfig::uniform_coupling(
        d,
        cfg.mix_diag,
        cfg.mix_offdiag,
        cfg.mix_steps,
        cfg.mix_activation,
    )
}

/// Ground truth for trace MCC, if the conventional sources file exists.
pub fn optional_sources(out: &std::path::Path) -> Option<SignalMatrix64> {
    let path = out.join("sources.csv");
    path.exists()
        .then(|| SignalMatrix::read_csv(&path).ok())
        .flatten()
}
