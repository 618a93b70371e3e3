use sica_core::ndgrad::{ConvMode, NetConfig, OptimizerKind, TrainConfig};
use sica_core::rectflow::{sample_rf, train_rf, RfDataset, RfPair};
use sica_core::rng::{normal_f64, SeedSplitter};
use sica_core::signals::SignalMatrix;
use std::time::Instant;

fn main() {
    let sp = SeedSplitter::new(4);
    let mut rng = sp.stream(0);
    let n = 8000;
    let src: Vec<f64> = (0..n).map(|_| normal_f64(&mut rng)).collect();
    let tgt: Vec<f64> = (0..n).map(|_| 2.0 + normal_f64(&mut rng)).collect();
    let base = SignalMatrix::zeros(1, 1);
    let pairs: Vec<RfPair<f64>> = src
        .iter()
        .zip(&tgt)
        .map(|(&a, &b)| RfPair {
            source_values: vec![a],
            source_cols: vec![0],
            target_values: vec![b],
            target_cols: vec![0],
        })
        .collect();
    let ds = RfDataset { base: &base, pairs };
    let net_cfg = NetConfig { hidden_channels: 32, ..NetConfig::default() };

    let t0 = Instant::now();
    let cfg = TrainConfig::new(OptimizerKind::Adam, 4e-3, 10, 128);
    let model = train_rf(&ds, ConvMode::OneD { t_len: 1 }, &net_cfg, &cfg, &mut sp.stream(1)).unwrap();
    println!("train 10 epochs: {:.2?}", t0.elapsed());

    let t1 = Instant::now();
    let mut rng2 = sp.stream(2);
    let mut acc = 0.0;
    for _ in 0..2000 {
        let y0 = normal_f64(&mut rng2);
        acc += sample_rf(&model, &base, 0, &[y0], 100).unwrap()[0];
    }
    println!("2000 x 100-step integrations: {:.2?} (acc {acc:.3})", t1.elapsed());
}
