use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{CliError, CliResult};
use crate::output::RunDir;

pub mod analyze;
pub mod eval;
pub mod infer;
pub mod synth;
pub mod train;
pub mod uncertainty;

pub fn read_json<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Config { path: path.to_path_buf(), message: e.to_string() })
}

/// Writes `config.json`: the invocation plus every resolved setting it implies.
pub fn snapshot<A: Serialize, R: Serialize>(dir: &RunDir, command: &str, args: &A, resolved: &R) -> CliResult<()> {
    #[derive(Serialize)]
    struct Snapshot<'a, A, R> {
        command: &'a str,
        version: &'a str,
        args: &'a A,
        resolved: &'a R,
    }
    let snap = Snapshot { command, version: env!("CARGO_PKG_VERSION"), args, resolved };
    dir.write_json("config.json", &snap)?;
    Ok(())
}
