//! Runs the full batch pipeline for a configuration (first example by
//! default) and lists the files written.

use std::path::PathBuf;

use bank_dynamics::cli::{run_pipeline, RunConfig};

fn main() -> bank_dynamics::Result<()> {
    let root = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let path = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| root.join("configs/example1.toml"));
    let cfg = RunConfig::load(&path)?;
    let out = std::env::temp_dir().join("bankdyn-pipeline");
    let result = run_pipeline(&cfg, &out)?;
    for node in &result.nodes {
        let status = match node.outcome.solution() {
            Some(s) => format!("solved, equity value {:.4}", s.v_equity),
            None => "bankrupt".to_string(),
        };
        println!("node {}: {status}", node.state.node.node_id);
    }
    for f in &result.files {
        println!("wrote {}", f.display());
    }
    Ok(())
}
