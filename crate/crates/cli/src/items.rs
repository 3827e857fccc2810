//! Input sets: one sub-directory per item, holding sources named by a
//! single lowercase letter (`a.png`, `b.png`, ...; `.pgm` also accepted),
//! used in alphabetical order. Other files are ignored.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use ttd_core::image::{load_image, ImageTensor};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Item {
    pub id: String,
    pub sources: Vec<PathBuf>,
}

impl Item {
    pub fn load(&self) -> Result<Vec<ImageTensor>> {
        self.sources
            .iter()
            .map(|p| load_image(p).with_context(|| format!("item {}", self.id)))
            .collect()
    }
}

fn is_source(path: &Path) -> bool {
    let ext_ok = matches!(path.extension().and_then(|e| e.to_str()), Some("png" | "pgm"));
    let stem_ok = path
        .file_stem()
        .and_then(|s| s.to_str())
        .is_some_and(|s| s.len() == 1 && s.as_bytes()[0].is_ascii_lowercase());
    ext_ok && stem_ok
}

/// Items sorted by id.
pub fn discover(input: &Path) -> Result<Vec<Item>> {
    let entries = std::fs::read_dir(input).with_context(|| format!("reading input {}", input.display()))?;
    let mut items = Vec::new();
    for entry in entries {
        let path = entry?.path();
        if !path.is_dir() {
            continue;
        }
        let mut sources: Vec<PathBuf> = std::fs::read_dir(&path)?
            .map(|e| e.map(|e| e.path()))
            .collect::<std::io::Result<Vec<_>>>()?
            .into_iter()
            .filter(|p| p.is_file() && is_source(p))
            .collect();
        if sources.is_empty() {
            continue;
        }
        sources.sort();
        let id = path.file_name().unwrap_or_default().to_string_lossy().into_owned();
        items.push(Item { id, sources });
    }
    if items.is_empty() {
        bail!("no items with source images under {}", input.display());
    }
    items.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(items)
}
