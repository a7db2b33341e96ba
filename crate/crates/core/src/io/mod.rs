//! Reading and writing labeled clouds as ASCII PLY.

mod ply;

pub use ply::{parse_ply, read_ply, to_ply_string, write_ply, ColorMode, PlyCloud, PlyError};

use std::io::Write;
use std::path::Path;

use crate::Result;

/// Writes `contents` to `path` through a temporary file in the same
/// directory, so a failed write never leaves a partial file behind.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(contents)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}
