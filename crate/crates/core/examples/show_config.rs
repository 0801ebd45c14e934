//! Prints a preset run configuration as JSON, ready to edit and pass back
//! with `--config`.
//!
//!     cargo run --release --example show_config -- [desk|slic]

use latent_anchors::config::RunConfig;

fn main() -> latent_anchors::Result<()> {
    let name = std::env::args().nth(1).unwrap_or_else(|| "desk".into());
    println!("{}", RunConfig::preset(&name)?.to_json()?);
    Ok(())
}
