use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::Serialize;
use serde_json::json;

use crate::Globals;

pub fn create(path: &Path) -> anyhow::Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

/// Writes to `path` or, when absent, prints to stdout.
pub fn emit_json<T: Serialize>(path: Option<&Path>, value: &T) -> anyhow::Result<()> {
    match path {
        Some(p) => write_json(p, value),
        None => {
            println!("{}", serde_json::to_string_pretty(value)?);
            Ok(())
        }
    }
}

/// `meta.json` with the resolved configuration, seed and version, placed by
/// `--meta` or next to the primary output.
pub fn write_meta<T: Serialize>(g: &Globals, command: &str, seed: u64, resolved: &T, primary: Option<&Path>) -> anyhow::Result<()> {
    let target: Option<PathBuf> = match (&g.meta, primary) {
        (Some(m), _) => Some(m.clone()),
        (None, Some(p)) => Some(p.parent().map_or_else(PathBuf::new, Path::to_path_buf).join("meta.json")),
        (None, None) => None,
    };
    let Some(target) = target else {
        return Ok(());
    };
    let meta = json!({
        "command": command,
        "seed": seed,
        "version": env!("CARGO_PKG_VERSION"),
        "config": resolved,
        "timings": g.timings,
    });
    write_json(&target, &meta)
}
