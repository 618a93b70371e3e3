use sica_core::ndgrad::{ConvMode, NetConfig, Tape, Tensor, VectorFieldNet};
use sica_core::rng::SeedSplitter;
use std::time::Instant;

fn main() {
    let sp = SeedSplitter::new(1);
    let net: VectorFieldNet<f64> = VectorFieldNet::new(
        ConvMode::OneD { t_len: 1024 }, 6, 1, &NetConfig::default(), &mut sp.stream(0));
    let input = Tensor::new(vec![6, 1024], (0..6*1024).map(|i| (i as f64 * 0.001).sin()).collect()).unwrap();

    let reps = 200;
    // forward only
    let t0 = Instant::now();
    for _ in 0..reps {
        let mut tape = Tape::new();
        let x = tape.leaf(input.clone(), false);
        let v = net.forward_on(&mut tape, x, false).unwrap();
        std::hint::black_box(tape.value(v.output).data()[0]);
    }
    println!("forward only: {:.3} ms/pass", t0.elapsed().as_secs_f64()*1e3/reps as f64);

    // forward + param backward
    let t1 = Instant::now();
    for _ in 0..reps {
        let mut tape = Tape::new();
        let x = tape.leaf(input.clone(), false);
        let v = net.forward_on(&mut tape, x, true).unwrap();
        let g = tape.backward(v.output).unwrap();
        std::hint::black_box(g.get(v.params[0]));
    }
    println!("fwd+param bwd: {:.3} ms/pass", t1.elapsed().as_secs_f64()*1e3/reps as f64);

    // forward + input backward
    let t2 = Instant::now();
    for _ in 0..reps {
        let mut tape = Tape::new();
        let x = tape.leaf(input.clone(), true);
        let v = net.forward_on(&mut tape, x, false).unwrap();
        let g = tape.backward(v.output).unwrap();
        std::hint::black_box(g.get(x));
    }
    println!("fwd+input bwd: {:.3} ms/pass", t2.elapsed().as_secs_f64()*1e3/reps as f64);
}
