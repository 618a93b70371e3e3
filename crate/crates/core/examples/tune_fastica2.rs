use sica_core::eval::{mcc};
use sica_core::signals::{generate_ar7, mix, ArConfig, MixActivation, MixConfig, SignalMatrix};
use sica_core::rng::{normal_f64, SeedSplitter};

// local reimpl: whiten + symmetric fastica with chosen init seed, to probe init sensitivity
fn whiten(x: &SignalMatrix<f64>) -> SignalMatrix<f64> {
    let d = x.d(); let t = x.t_len(); let n = t as f64;
    let mut c = x.clone();
    for i in 0..d {
        let r = c.row_mut(i);
        let m: f64 = r.iter().sum::<f64>() / n;
        let mut var = 0.0;
        for v in r.iter_mut() { *v -= m; var += *v * *v; }
        var /= n;
        let s = var.sqrt();
        for v in r.iter_mut() { *v /= s; }
    }
    // 2x2 analytic whitening
    let rho: f64 = c.row(0).iter().zip(c.row(1)).map(|(a,b)| a*b).sum::<f64>() / n;
    // eigvecs of [[1,rho],[rho,1]]: [1,1]/sqrt2 (1+rho), [1,-1]/sqrt2 (1-rho)
    let (l1, l2) = (1.0+rho, 1.0-rho);
    let mut out = SignalMatrix::zeros(2, t);
    for tt in 0..t {
        let (a, b) = (c.get(0,tt), c.get(1,tt));
        out.set(0, tt, (a+b)/(2.0*l1).sqrt());
        out.set(1, tt, (a-b)/(2.0*l2).sqrt());
    }
    out
}

fn run(xw: &SignalMatrix<f64>, init_seed: u64, iters: usize) -> SignalMatrix<f64> {
    run_g(xw, init_seed, iters, 0)
}

fn run_g(xw: &SignalMatrix<f64>, init_seed: u64, iters: usize, contrast: usize) -> SignalMatrix<f64> {
    let d = 2; let t = xw.t_len(); let n = t as f64;
    let sp = SeedSplitter::new(init_seed);
    let mut rng = sp.stream(0);
    let mut w = [normal_f64(&mut rng), normal_f64(&mut rng), normal_f64(&mut rng), normal_f64(&mut rng)];
    for _ in 0..iters {
        let mut wn = [0.0; 4];
        for i in 0..d {
            let (wi0, wi1) = (w[i*2], w[i*2+1]);
            let mut eg = [0.0; 2]; let mut egp = 0.0;
            for tt in 0..t {
                let y = wi0 * xw.get(0,tt) + wi1 * xw.get(1,tt);
                let (g, gp) = match contrast {
                    0 => (y.tanh(), 1.0 - y.tanh()*y.tanh()),
                    1 => (y*y*y, 3.0*y*y),
                    _ => { let e = (-y*y/2.0).exp(); (y*e, (1.0-y*y)*e) }
                };
                egp += gp;
                eg[0] += xw.get(0,tt) * g;
                eg[1] += xw.get(1,tt) * g;
            }
            wn[i*2] = eg[0]/n - egp/n*wi0;
            wn[i*2+1] = eg[1]/n - egp/n*wi1;
        }
        // symmetric decorrelation 2x2 via analytic
        let mmt = [wn[0]*wn[0]+wn[1]*wn[1], wn[0]*wn[2]+wn[1]*wn[3], 0.0, wn[2]*wn[2]+wn[3]*wn[3]];
        // use jacobi-free: normalize + gram-schmidt symmetric... quick hack: use eigen of 2x2 sym
        let (a, b, c2) = (mmt[0], mmt[1], mmt[3]);
        let tr = a + c2; let det = a*c2 - b*b;
        let disc = ((tr*tr/4.0 - det).max(0.0)).sqrt();
        let (l1, l2) = (tr/2.0 + disc, tr/2.0 - disc);
        // eigvec for l1: [b, l1-a], for l2: [b, l2-a], normalized (handle b=0)
        let (v1, v2) = if b.abs() > 1e-300 {
            ([b, l1-a], [b, l2-a])
        } else { ([1.0, 0.0], [0.0, 1.0]) };
        let n1 = (v1[0]*v1[0]+v1[1]*v1[1]).sqrt(); let n2 = (v2[0]*v2[0]+v2[1]*v2[1]).sqrt();
        let e1 = [v1[0]/n1, v1[1]/n1]; let e2 = [v2[0]/n2, v2[1]/n2];
        // M^{-1/2} = e1 e1^T/sqrt(l1) + e2 e2^T/sqrt(l2)
        let mut inv = [0.0; 4];
        for (e, l) in [(e1, l1), (e2, l2)] {
            let s = 1.0 / l.sqrt();
            inv[0] += e[0]*e[0]*s; inv[1] += e[0]*e[1]*s; inv[2] += e[1]*e[0]*s; inv[3] += e[1]*e[1]*s;
        }
        w = [inv[0]*wn[0]+inv[1]*wn[2], inv[0]*wn[1]+inv[1]*wn[3],
             inv[2]*wn[0]+inv[3]*wn[2], inv[2]*wn[1]+inv[3]*wn[3]];
    }
    let mut out = SignalMatrix::zeros(2, t);
    for tt in 0..t {
        out.set(0, tt, w[0]*xw.get(0,tt) + w[1]*xw.get(1,tt));
        out.set(1, tt, w[2]*xw.get(0,tt) + w[3]*xw.get(1,tt));
    }
    out
}

fn main() {
    for seed in [1u64, 5, 7] {
        let ar = ArConfig { seed: 1000 + seed, ..ArConfig::default() };
        let s = generate_ar7::<f64>(&ar, 2, 1024).unwrap();
        let x = mix(&s, &MixConfig::uniform_coupling(2, 1.0, 0.7, 5, MixActivation::Identity)).unwrap();
        let xw = whiten(&x);
        for (cname, c) in [("tanh", 0usize), ("pow3", 1), ("gauss", 2)] {
            let mut line = format!("data seed {seed} {cname}: ");
            for init in 0..4 {
                let z = run_g(&xw, 77 + init, 400, c);
                line += &format!(" {:.3}", mcc(&z, &s).unwrap().mcc);
            }
            println!("{line}");
        }
    }
}
