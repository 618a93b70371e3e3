use sica_core::dre::{fit_ratio, wgf_velocity, RatioDataset};
use sica_core::ndgrad::{ConvMode, NetConfig, OptimizerKind, TrainConfig};
use sica_core::rng::SeedSplitter;
use sica_core::signals::{generate_ar7, ArConfig, PermutedProduct};
use std::time::Instant;

fn main() {
    let sp = SeedSplitter::new(1);
    let z = generate_ar7::<f64>(&ArConfig::default(), 2, 1024).unwrap();
    let (z, _) = z.standardize_rows();
    let product = PermutedProduct::draw(2, 1024, &mut sp.stream(0)).samples(&z);
    let ds = RatioDataset::from_signal(&z, product);

    // one epoch of DRE training: 2048 samples
    let cfg = TrainConfig::new(OptimizerKind::Adam, 1e-3, 1, 100);
    let t0 = Instant::now();
    let model = fit_ratio(&ds, ConvMode::OneD { t_len: 1024 }, &NetConfig::default(), &cfg, &mut sp.stream(1)).unwrap();
    let dt = t0.elapsed();
    println!("1 epoch (2048 fwd+bwd at T=1024): {dt:.2?}  => {:.0} passes/s", 2048.0 / dt.as_secs_f64());

    // velocity evaluation over all t
    let t1 = Instant::now();
    let mut acc = 0.0;
    for t in 0..1024 {
        let v = wgf_velocity(&model, &z, &[t, t], &z.column(t)).unwrap();
        acc += v[0];
    }
    let dt1 = t1.elapsed();
    println!("1024 velocity evals: {dt1:.2?} (acc {acc:.3}) => {:.0}/s", 1024.0 / dt1.as_secs_f64());
}
