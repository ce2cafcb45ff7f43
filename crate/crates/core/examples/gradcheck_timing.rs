//! Runs the full gradient-check suite and reports its wall time.

use std::time::Instant;

fn main() -> vidpred::Result<()> {
    let start = Instant::now();
    for r in vidpred::diagnostics::gradcheck_suite(None)? {
        println!("{r}");
    }
    println!("{:.2} s", start.elapsed().as_secs_f64());
    Ok(())
}
