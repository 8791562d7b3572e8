//! Closed-loop throughput benchmark over the seven gateway services.
//!
//! Runs a short configuration by default. Pass a TOML config path to run
//! something else, for example the desk defaults:
//!
//! ```text
//! cargo run --release --example bench -- bench.toml
//! ```

use mdm_core::bench::{run_bench, BenchConfig};

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    let config = match std::env::args().nth(1) {
        Some(path) => BenchConfig::load(path.as_ref())?,
        None => BenchConfig {
            total_requests: 100,
            batch_size: 20,
            block_interval_ms: 200,
            ..BenchConfig::default()
        },
    };
    println!(
        "{} requests per service, {} concurrent clients, {} ms blocks of capacity {}",
        config.total_requests, config.batch_size, config.block_interval_ms, config.block_capacity
    );
    let report = run_bench(&config).await?;
    print!("{}", report.to_table());
    println!("write ceiling: {:.1} tps", report.write_ceiling_tps());
    Ok(())
}
