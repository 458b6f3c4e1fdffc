//! Writes the bundled example networks and ground-truth states as JSON.
//!
//! Usage: `cargo run --release -p sdpse-core --example make_fixtures [dir]`
//! (default directory `fixtures`).

use std::fs;
use std::path::{Path, PathBuf};

use sdpse::measurements::state_to_records;
use sdpse::network::{NetworkDocument, NetworkModel};
use sdpse::synthetic;

fn write(dir: &Path, name: &str, doc: NetworkDocument, seed: u64) -> sdpse::Result<()> {
    let model = NetworkModel::from_document(&doc)?;
    let truth = synthetic::truth_state(&model, seed);
    let mut net = serde_json::to_string_pretty(&doc)?;
    net.push('\n');
    fs::write(dir.join(format!("{name}.network.json")), net)?;
    let mut state = serde_json::to_string_pretty(&state_to_records(&model, &truth))?;
    state.push('\n');
    fs::write(dir.join(format!("{name}.state.json")), state)?;
    println!(
        "{name}: {} buses, {} nodes, {} branches",
        model.buses.len(),
        model.node_count(),
        model.branch_count()
    );
    Ok(())
}

fn main() -> sdpse::Result<()> {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "fixtures".into()));
    fs::create_dir_all(&dir)?;
    write(&dir, "ieee13", synthetic::ieee13(), 1)?;
    write(&dir, "radial41", synthetic::radial41(), 1)?;
    write(&dir, "ten_bus", synthetic::ten_bus(), 1)?;
    write(&dir, "feeder110", synthetic::radial_feeder(110, 5), 1)?;
    write(&dir, "tree500", synthetic::random_tree(500, 7), 1)?;
    Ok(())
}
