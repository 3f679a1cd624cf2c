use scatterpos_core::autodiff::{Tape, Tensor};
use scatterpos_core::nn::{build_model, spec_by_name, ComplexTensor};
use scatterpos_core::train::{adamw_step, AdamState, TrainConfig};
use std::time::Instant;

fn main() {
    let spec = spec_by_name("cnn_fe_cvnn").unwrap();
    let mut model = build_model(&spec, 1).unwrap();
    let batch = 64;
    let re = Tensor::new(&[batch, 121], (0..batch * 121).map(|i| (i as f64 * 0.01).sin() * 0.1).collect()).unwrap();
    let im = Tensor::new(&[batch, 121], (0..batch * 121).map(|i| (i as f64 * 0.013).cos() * 0.1).collect()).unwrap();
    let x = ComplexTensor::new(re, im).unwrap();
    let target = Tensor::new(&[batch, 1], vec![0.5; batch]).unwrap();
    let params = model.parameters();
    let mut adam = AdamState::new(&params);
    let cfg = TrainConfig::for_spec(&spec, 1, 0);

    let reps = 200;
    // forward only
    let t0 = Instant::now();
    for _ in 0..reps {
        let tape = Tape::new();
        let _ = model.forward_train(&tape, &x).unwrap();
    }
    let fwd = t0.elapsed().as_secs_f64() / reps as f64;

    // forward + loss + backward
    let t0 = Instant::now();
    for _ in 0..reps {
        let tape = Tape::new();
        let pred = model.forward_train(&tape, &x).unwrap();
        let loss = tape.mse_loss(&pred, &target).unwrap();
        tape.backward(&loss).unwrap();
        for p in &params { p.zero_grad(); }
    }
    let fwdbwd = t0.elapsed().as_secs_f64() / reps as f64;

    // full step
    let t0 = Instant::now();
    for _ in 0..reps {
        let tape = Tape::new();
        let pred = model.forward_train(&tape, &x).unwrap();
        let loss = tape.mse_loss(&pred, &target).unwrap();
        tape.backward(&loss).unwrap();
        adamw_step(&params, &mut adam, &cfg, 1e-9).unwrap();
        for p in &params { p.zero_grad(); }
    }
    let full = t0.elapsed().as_secs_f64() / reps as f64;

    println!("forward: {:.2} ms, +backward: {:.2} ms, +adamw: {:.2} ms", fwd*1e3, fwdbwd*1e3, full*1e3);
    println!("per-epoch estimate at 531 train batches + val: {:.1} s", full*531.0 + fwd/ (64.0/1024.0) * 8.5);
}
