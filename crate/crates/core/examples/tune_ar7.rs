use sica_core::eval::{fastica, mcc};
use sica_core::ndgrad::{OptimizerKind, TrainConfig};
use sica_core::sica::{demix, FlowKind, KlMonitor, SicaConfig};
use sica_core::signals::{generate_ar7, mix, ArConfig, MixActivation, MixConfig};
use std::time::Instant;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let flow = args.get(1).map(|s| s.as_str()).unwrap_or("wgf");
    let j_mix: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(5);
    let seeds: u64 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(2);
    let iters: usize = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(6);
    let epochs: usize = args.get(5).and_then(|s| s.parse().ok()).unwrap_or(3);
    let lr: f64 = args.get(6).and_then(|s| s.parse().ok()).unwrap_or(1e-3);
    let eta: f64 = args.get(7).and_then(|s| s.parse().ok()).unwrap_or(0.3);
    let act = args.get(8).map(|s| s.as_str()).unwrap_or("identity");
    let whiten = args.get(9).map(|s| s == "whiten").unwrap_or(false);

    let activation = if act == "gelu" { MixActivation::Gelu } else { MixActivation::Identity };
    let mut base_sum = 0.0;
    let mut sica_sum = 0.0;
    let mut fica_sum = 0.0;
    for seed in 0..seeds {
        let ar = ArConfig { seed: 1000 + seed, ..ArConfig::default() };
        let s = generate_ar7::<f64>(&ar, 2, 1024).unwrap();
        let x = mix(&s, &MixConfig::uniform_coupling(2, 1.0, 0.7, j_mix, activation)).unwrap();
        let baseline = mcc(&x, &s).unwrap().mcc;
        let fica = mcc(&fastica(&x, 20000, 1e-6).unwrap(), &s).unwrap().mcc;

        let mut cfg = SicaConfig::wgf_defaults();
        cfg.flow = if flow == "rf" { FlowKind::Rf } else { FlowKind::Wgf };
        cfg.iterations = iters;
        cfg.eta = eta;
        cfg.euler_steps = 10;
        cfg.dre_train = TrainConfig::new(OptimizerKind::Adam, lr, epochs, 128);
        cfg.rf_train = TrainConfig::new(OptimizerKind::Adam, lr, epochs, 128);
        cfg.kl_monitor = if std::env::var("MON").is_ok() { KlMonitor::On } else { KlMonitor::Off };
        cfg.whiten_input = whiten;
        cfg.product_draws = std::env::var("DRAWS").ok().and_then(|v| v.parse().ok()).unwrap_or(1);
        if let Ok(es) = std::env::var("ESTEPS") { cfg.euler_steps = es.parse().unwrap(); }
        if std::env::var("WARM").is_ok() { cfg.warm_start = true; }
        if let Ok(h) = std::env::var("HIDDEN") { cfg.net.hidden_channels = h.parse().unwrap(); }
        cfg.seed = 42 + seed;
        let t0 = Instant::now();
        let out = demix(&x, &cfg, Some(&s)).unwrap();
        let m = mcc(&out.z, &s).unwrap().mcc;
        let curve: Vec<String> = out.trace.entries.iter().filter_map(|e| e.mcc).map(|v| format!("{v:.3}")).collect();
        println!("seed {seed}: baseline {baseline:.3} fastica {fica:.3} {flow} {m:.3} ({:.1?}) curve=[{}]", t0.elapsed(), curve.join(","));
        if !out.trace.kl_curve().is_empty() {
            let kls: Vec<String> = out.trace.kl_curve().iter().map(|(_, kl)| format!("{kl:.3}")).collect();
            println!("      kl=[{}]", kls.join(","));
        }
        base_sum += baseline;
        sica_sum += m;
        fica_sum += fica;
    }
    let n = seeds as f64;
    println!("== {flow} J_mix={j_mix} iters={iters} epochs={epochs} lr={lr} eta={eta} {act}: baseline {:.3} fastica {:.3} sica {:.3}", base_sum/n, fica_sum/n, sica_sum/n);
}
