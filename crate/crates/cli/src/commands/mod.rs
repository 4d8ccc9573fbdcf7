mod data;
mod evaluate;
mod frames;
mod infer;
mod service;

use std::io::Write;
use std::path::Path;

use bargewatch_core::dataset::{DatasetError, DatasetManifest};
use bargewatch_core::scene::LabelMap;

use crate::{CliError, ManifestArgs};

pub use data::{augment, split};
pub use evaluate::evaluate;
pub use frames::bgsub;
pub use infer::{classify, detect};
pub use service::{monitor, serve};

fn label_map(path: Option<&Path>) -> Result<LabelMap, CliError> {
    let Some(path) = path else {
        return Ok(LabelMap::default());
    };
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    Ok(LabelMap::from_names(&text).map_err(DatasetError::from)?)
}

fn load_manifest(args: &ManifestArgs) -> Result<DatasetManifest, CliError> {
    let map = label_map(args.labels.as_deref())?;
    Ok(DatasetManifest::load(&args.manifest, map)?)
}

fn emit(out: &mut dyn Write, text: &str) -> Result<(), CliError> {
    out.write_all(text.as_bytes())
        .and_then(|_| if text.ends_with('\n') { Ok(()) } else { out.write_all(b"\n") })
        .map_err(|e| CliError::Runtime(format!("writing output: {e}")))
}

fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

/// Image files directly inside `dir`, sorted by file name.
fn image_files(dir: &Path) -> Result<Vec<std::path::PathBuf>, CliError> {
    const EXTENSIONS: [&str; 5] = ["png", "jpg", "jpeg", "bmp", "gif"];
    let entries = std::fs::read_dir(dir).map_err(|e| CliError::io(dir, e))?;
    let mut files = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| CliError::io(dir, e))?.path();
        let is_image = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()));
        if path.is_file() && is_image {
            files.push(path);
        }
    }
    files.sort_by(|a, b| a.file_name().cmp(&b.file_name()));
    Ok(files)
}

fn file_stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}
