//! Versioned TOML registry files.
//!
//! ```toml
//! format_version = 1
//!
//! [[spec]]
//! name = "my_images"
//! domain = "natural_images"
//! modality = "image2d"
//! ...
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};
use unissl_core::datasets::{DatasetSpec, Registry};

use crate::error::{KitError, Result};

pub const REGISTRY_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RegistryFile {
    format_version: u32,
    #[serde(default)]
    spec: Vec<DatasetSpec>,
}

pub fn to_toml(registry: &Registry) -> Result<String> {
    let file = RegistryFile { format_version: REGISTRY_FORMAT_VERSION, spec: registry.iter().cloned().collect() };
    toml::to_string(&file).map_err(|e| KitError::Config(e.to_string()))
}

pub fn parse(text: &str, path: &Path) -> Result<Vec<DatasetSpec>> {
    let fail = |reason: String| KitError::Format { path: path.to_path_buf(), reason };
    let file: RegistryFile = toml::from_str(text).map_err(|e| fail(e.to_string()))?;
    if file.format_version != REGISTRY_FORMAT_VERSION {
        return Err(fail(format!(
            "registry format_version {}, this build reads {REGISTRY_FORMAT_VERSION}",
            file.format_version
        )));
    }
    Ok(file.spec)
}

/// The built-in registry with every spec from `path` added or replaced.
pub fn builtin_with_file(path: &Path) -> Result<Registry> {
    let text = std::fs::read_to_string(path).map_err(KitError::io(path))?;
    let mut reg = Registry::builtin();
    for spec in parse(&text, path)? {
        reg.insert(spec)?;
    }
    Ok(reg)
}
