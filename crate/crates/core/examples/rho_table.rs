//! Prints the distortion-factor table frozen in `link_metrics::RHO_TABLE`.

#[path = "../tests/support/quantizer.rs"]
mod quantizer;

fn main() {
    println!("pub const RHO_TABLE: [f64; 16] = [");
    for bits in 1..=16 {
        let (mse, step) = quantizer::optimal_uniform(bits);
        println!("    {mse:e}, // B = {bits}, step = {step:.6}");
    }
    println!("];");
}
