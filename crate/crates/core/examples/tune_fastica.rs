use sica_core::eval::{fastica, mcc};
use sica_core::signals::{generate_ar7, mix, ArConfig, MixActivation, MixConfig};

fn main() {
    for seed in 0..8u64 {
        let ar = ArConfig { seed: 1000 + seed, burn_in: std::env::var("BURN").ok().and_then(|v| v.parse().ok()).unwrap_or(100), ..ArConfig::default() };
        let s = generate_ar7::<f64>(&ar, 2, 1024).unwrap();
        let mut line = format!("seed {seed}:");
        for j_mix in [5, 10, 20] {
            let x = mix(&s, &MixConfig::uniform_coupling(2, 1.0, 0.7, j_mix, if std::env::var("GELU").is_ok() { MixActivation::Gelu } else { MixActivation::Identity })).unwrap();
            let m = mcc(&fastica(&x, 20000, 1e-6).unwrap(), &s).unwrap().mcc;
            let b = mcc(&x, &s).unwrap().mcc;
            line += &format!("  J{j_mix}: fica {m:.3} base {b:.3}");
        }
        println!("{line}");
    }
}
