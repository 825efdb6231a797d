//! The numerics kernel in isolation: record a small computation on a tape,
//! run backward, and verify one gradient against central differences.

use slimdt::numerics::{fd, Tape};

fn main() {
    // loss = mse(relu(x W + b), y)
    let x_data = vec![0.5, -1.0, 2.0, 0.25, 1.5, -0.75];
    let w_data = vec![0.2, -0.4, 0.1, 0.3, -0.2, 0.5];
    let y_data = vec![0.1, 0.2, 0.3, 0.4];

    let mut tape = Tape::new(0);
    let x = tape.leaf(x_data.clone(), &[2, 3], true);
    let w = tape.leaf(w_data.clone(), &[3, 2], true);
    let b = tape.leaf(vec![0.05, -0.05], &[2], true);
    let y = tape.constant(y_data.clone(), &[2, 2]);

    let lin = tape.linear(x, w, b);
    let act = tape.relu(lin);
    let loss = tape.mse(act, y);
    println!("loss = {:.6}", tape.scalar(loss));

    tape.backward(loss);
    let grad_w = tape.grad(w).unwrap().to_vec();
    println!("dL/dW = {grad_w:?}");

    // independent check: rebuild the graph at perturbed inputs
    let mut f = |wv: &[f64]| {
        let mut t = Tape::new(0);
        let x = t.constant(x_data.clone(), &[2, 3]);
        let w = t.constant(wv.to_vec(), &[3, 2]);
        let b = t.constant(vec![0.05, -0.05], &[2]);
        let y = t.constant(y_data.clone(), &[2, 2]);
        let lin = t.linear(x, w, b);
        let act = t.relu(lin);
        let loss = t.mse(act, y);
        t.scalar(loss)
    };
    match fd::check_grad(&mut f, &w_data, &grad_w) {
        Ok(()) => println!("central differences agree within {}", fd::GRAD_RTOL),
        Err((i, ad, fdv)) => println!("mismatch at coord {i}: ad={ad} fd={fdv}"),
    }

    // the tape also counts elementwise work and multiply-adds
    println!(
        "multiply-adds: {}   elementwise flops: {}",
        tape.total_macs(),
        tape.elementwise_flops()
    );
}
