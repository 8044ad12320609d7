//! Trains the toy denoiser on the added-tone corpus and prints the loss curve.
//!
//! cargo run --release --example train_toy -- [steps, default 2000]

mod common;

use diffad::nn::load_checkpoint;

fn main() -> diffad::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let steps = common::arg_or(2000u64);
    let desk = common::desk(steps)?;
    let history = load_checkpoint(&desk.checkpoint)?.loss_history;
    let chunk = (history.len() / 10).max(1);
    for (i, c) in history.chunks(chunk).enumerate() {
        println!(
            "steps {:>5}-{:<5} mean loss {:.4}",
            i * chunk + 1,
            i * chunk + c.len(),
            c.iter().sum::<f64>() / c.len() as f64
        );
    }
    println!("checkpoint: {}", desk.checkpoint.display());
    Ok(())
}
