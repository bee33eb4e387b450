//! Finite-difference check of the full training loss, then of a hand-built
//! loss on the tape.
//!
//! cargo run --release --example gradient_check

use seam::numerics::{grad_check, ParamStore, Tensor2};
use seam::synthetic::stream_rng;
use seam::training::check_loss_gradients;
use seam::HeadDims;

fn main() -> seam::Result<()> {
    let dims = HeadDims { input: 32, embed: 16, inner: 8 };
    let report = check_loss_gradients(4, dims, 3, 0, 1e-5, 1e-4)?;
    println!("{:<16} {:>12} {:>12}", "parameter", "max abs", "max rel");
    for e in &report.entries {
        println!("{:<16} {:>12.3e} {:>12.3e}", e.name, e.max_abs_err, e.max_rel_err);
    }
    println!("passed: {}", report.passed());

    // softmax attention over three frames, scored with BCE
    let mut rng = stream_rng(0, 0, 0);
    let mut store = ParamStore::new();
    store.insert("w", Tensor2::uniform(4, 1, 1.0, &mut rng));
    let x = Tensor2::uniform(3, 4, 1.0, &mut rng);
    let report = grad_check(
        &store,
        |tape, s| {
            let w = tape.param(s, "w")?;
            let xs = tape.constant(x.clone())?;
            let logits = tape.matmul(xs, w)?;
            let logits = tape.transpose(logits)?;
            let a = tape.softmax_rows(logits)?;
            let h = tape.matmul(a, xs)?;
            let z = tape.sum(h)?;
            let p = tape.sigmoid(z)?;
            tape.bce(p, &[1.0])
        },
        1e-5,
        1e-6,
    )?;
    println!("attention toy: max rel err {:.2e}", report.max_rel_err());
    Ok(())
}
