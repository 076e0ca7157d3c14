pub mod bench;
pub mod estimate;
pub mod gen;
pub mod report;
pub mod train;

use odl_core::{Error, Result};
use std::path::Path;

/// Unix seconds; recorded in manifests, excluded from reproducibility
/// comparisons.
pub fn timestamp() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

pub fn write_json_atomic(path: &Path, value: &serde_json::Value) -> Result<()> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Config(format!("cannot serialize json: {e}")))?;
    odl_core::matio::write_atomic(path, text.as_bytes())
}
