//! Gradients and gradients of gradients on the tape.
//!
//! `cargo run --example autodiff_basics`

use sdfgan::autodiff::{Tape, Tensor};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut tape = Tape::new();
    let x = tape.var(Tensor::row(vec![0.5, -1.0, 2.0]));
    let w = tape.var(Tensor::row(vec![1.0, 2.0, 3.0]));

    // f = sum(w * x^2)
    let x2 = tape.square(x)?;
    let wx2 = tape.mul(w, x2)?;
    let f = tape.sum(wx2)?;
    println!("f = {}", tape.value(f).item());

    // df/dx = 2 w x, kept on the tape so it can be differentiated again
    let dx = tape.grad(f, &[x], true)?[0];
    println!("df/dx = {:?}", tape.value(dx).data());

    // penalty = |df/dx|^2, differentiated with respect to w
    let dx2 = tape.square(dx)?;
    let penalty = tape.sum(dx2)?;
    let dw = tape.grad(penalty, &[w], false)?[0];
    println!("|df/dx|^2 = {}", tape.value(penalty).item());
    println!("d|df/dx|^2/dw = {:?} (8 w x^2 = [2, 16, 96])", tape.value(dw).data());
    Ok(())
}
