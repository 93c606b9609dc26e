//! Monte-Carlo distance of a point from a modeled distribution, against the
//! closed form for the zero field: `E||x1 - x0||^2 = ||x1||^2 + d sigma^2`.
//!
//!     cargo run --release --example distance

use fmirl::flow::{estimate_dist_with_error, AffineField, Condition};
use fmirl::rng::stream;

fn main() -> fmirl::Result<()> {
    let zero = AffineField {
        dim: 4,
        scale: 0.0,
        offset: vec![0.0; 4],
    };
    let x1 = [1.0, 0.5, 0.0, 0.0];
    let exact = 1.25 + 4.0 * 0.25;
    let mut rng = stream(2, 0);
    println!("exact {exact}");
    for s in [10, 100, 1000, 10_000] {
        let e = estimate_dist_with_error(&zero, &x1, Condition::Expert, s, &mut rng, 0.5)?;
        println!("S = {s:>6}: {:.4} +- {:.4}", e.mean, e.std_err);
    }
    Ok(())
}
