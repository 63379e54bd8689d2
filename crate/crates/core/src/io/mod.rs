//! On-disk formats: `IMGF` images, `BBKD1` checkpoints, PNG/PGM previews and
//! pretty-printed JSON documents.

mod checkpoint;
mod imgf;
mod png;

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CHECKPOINT_VERSION};
pub use imgf::{decode_imgf, encode_imgf, read_imgf, write_imgf};
pub use png::{dequantize, export_png, import_png, quantize};

/// Writes `value` as pretty JSON with a trailing newline. Field order follows
/// the struct declaration, so output is stable across runs.
pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut text =
        serde_json::to_string_pretty(value).map_err(|e| Error::format(path, format!("serialising JSON: {e}")))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(path, format!("invalid JSON: {e}")))
}

pub fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(format!("creating {}", path.display()), e))
}
