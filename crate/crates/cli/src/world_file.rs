//! Serialized worlds on disk.

use crate::config::{world_hash, ExperimentConfig};
use crate::error::{CliError, CliResult};
use mdg_core::world::WorldCheck;
use mdg_core::{make_world, SyntheticWorld};
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldFile {
    pub config_hash: String,
    pub world_hash: String,
    pub world: SyntheticWorld,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldSummary {
    pub path: String,
    pub world_hash: String,
    pub check: WorldCheck,
}

/// Builds the world described by `config.world` and writes it to `out`.
pub fn cmd_gen_world(config: &ExperimentConfig, out: &Path) -> CliResult<WorldSummary> {
    let world = make_world(config.world.clone())?;
    let check = world.check()?;
    let file = WorldFile { config_hash: config.hash(), world_hash: world_hash(&world), world };
    let mut text = serde_json::to_string_pretty(&file).map_err(|e| CliError::Output(e.to_string()))?;
    text.push('\n');
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    std::fs::write(out, text).map_err(|e| CliError::io(out, e))?;
    log::info!(
        "world {}: max anchor cosine {:.4}, min construction cosine {:.4}",
        &file.world_hash[..12],
        check.max_anchor_cosine,
        check.min_construction_cosine
    );
    for (c, v) in check.matched_volumes.iter().enumerate() {
        log::info!("concept {c}: matched volume {v:.6}");
    }
    Ok(WorldSummary { path: out.display().to_string(), world_hash: file.world_hash, check })
}

/// Reads a world file and verifies its recorded hash.
pub fn load_world(path: &Path) -> CliResult<(SyntheticWorld, String)> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let file: WorldFile =
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let hash = world_hash(&file.world);
    if hash != file.world_hash {
        return Err(CliError::SchemaMismatch(format!(
            "{} records world hash {} but its contents hash to {hash}",
            path.display(),
            file.world_hash
        )));
    }
    file.world.check()?;
    Ok((file.world, hash))
}
