//! Reverse-mode gradients of a small MLP checked against central
//! differences.
//!
//!     cargo run --release --example autodiff

use fmirl::nn::{finite_difference_grad, max_relative_error, Activation, Mlp, ParamStore, Tape, Tensor};
use fmirl::rng::{gaussian_vec, stream};

fn main() -> fmirl::Result<()> {
    let mut rng = stream(0, 0);
    let mut store = ParamStore::new();
    let net = Mlp::new(&mut store, "net", &[3, 8, 8, 2], Activation::Silu, 1.0, &mut rng)?;
    let x = Tensor::new([16, 3], gaussian_vec(&mut rng, 48, 1.0))?;
    let y = Tensor::new([16, 2], gaussian_vec(&mut rng, 32, 1.0))?;

    let loss = |store: &ParamStore, tape: &mut Tape| -> fmirl::Result<_> {
        let xv = tape.constant(x.clone());
        let out = net.forward(tape, store, xv)?;
        let yv = tape.constant(y.clone());
        let d = tape.sub(out, yv)?;
        let sq = tape.square(d);
        Ok(tape.mean(sq))
    };

    let mut tape = Tape::new();
    let l = loss(&store, &mut tape)?;
    println!("loss {:.6} ({} tape nodes, {} parameters)", tape.item(l), tape.len(), store.num_scalars());
    tape.backward(l, &mut store)?;
    let analytic = store.flat_grads();

    let numeric = finite_difference_grad(&mut store, 1e-6, |s| {
        let mut t = Tape::new();
        let l = loss(s, &mut t).unwrap();
        t.item(l)
    });
    println!("max relative error {:.2e}", max_relative_error(&analytic, &numeric, 1e-8));
    Ok(())
}
