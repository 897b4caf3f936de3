//! Directory-backed catalog of condition images.
//!
//! Layout: `<root>/<Condition Name>/<type>[-<n>].<jpg|jpeg|png>`. The parent
//! directory names the condition; the file stem, minus any trailing numeric
//! index, names its type.

use std::fs;
use std::path::{Component, Path, PathBuf};

use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CatalogError {
    #[error("image root {0} does not exist or is not a directory")]
    MissingRoot(String),
    #[error("no images found under {0}")]
    EmptyCatalog(String),
    #[error("path `{0}` does not follow <condition>/<type>[-n].<ext>")]
    MalformedPath(String),
    #[error("cannot read {path}: {detail}")]
    Io { path: String, detail: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ImageFormat {
    Jpeg,
    Png,
}

impl ImageFormat {
    pub fn from_extension(ext: &str) -> Option<Self> {
        match ext.to_ascii_lowercase().as_str() {
            "jpg" | "jpeg" => Some(ImageFormat::Jpeg),
            "png" => Some(ImageFormat::Png),
            _ => None,
        }
    }

    pub fn mime(self) -> &'static str {
        match self {
            ImageFormat::Jpeg => "image/jpeg",
            ImageFormat::Png => "image/png",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageEntry {
    /// Relative to the catalog root, `/`-separated.
    pub path: String,
    pub condition_name: String,
    pub condition_type: String,
    pub format: ImageFormat,
}

/// Splits a catalog-relative path into `(condition_name, condition_type)`.
pub fn condition_from_path(path: &str) -> Result<(String, String), CatalogError> {
    let malformed = || CatalogError::MalformedPath(path.to_string());
    let normalized = path.replace('\\', "/");
    let parts: Vec<&str> = Path::new(&normalized)
        .components()
        .filter_map(|c| match c {
            Component::Normal(s) => s.to_str(),
            _ => None,
        })
        .collect();
    let [.., dir, file] = parts.as_slice() else {
        return Err(malformed());
    };
    let (stem, ext) = file.rsplit_once('.').ok_or_else(malformed)?;
    ImageFormat::from_extension(ext).ok_or_else(malformed)?;
    let condition_name = dir.trim();
    let condition_type = strip_index(stem).trim();
    if condition_name.is_empty() || condition_type.is_empty() {
        return Err(malformed());
    }
    Ok((condition_name.to_string(), condition_type.to_string()))
}

/// `blister-3` → `blister`, `plaque_12` → `plaque`, `plaque` → `plaque`.
fn strip_index(stem: &str) -> &str {
    let without_digits = stem.trim_end_matches(|c: char| c.is_ascii_digit());
    if without_digits.len() == stem.len() {
        return stem;
    }
    without_digits.trim_end_matches(['-', '_', ' '])
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Catalog {
    root: PathBuf,
    entries: Vec<ImageEntry>,
}

impl Catalog {
    /// Walks `root` for images. Files that are not JPEG/PNG, or that sit
    /// directly in the root, are skipped. Entries are sorted by path.
    pub fn scan(root: &Path) -> Result<Self, CatalogError> {
        if !root.is_dir() {
            return Err(CatalogError::MissingRoot(root.display().to_string()));
        }
        let mut entries = Vec::new();
        for item in walkdir::WalkDir::new(root).follow_links(true) {
            let item = item.map_err(|e| CatalogError::Io {
                path: root.display().to_string(),
                detail: e.to_string(),
            })?;
            if !item.file_type().is_file() {
                continue;
            }
            let Some(format) = item
                .path()
                .extension()
                .and_then(|e| e.to_str())
                .and_then(ImageFormat::from_extension)
            else {
                continue;
            };
            let Ok(rel) = item.path().strip_prefix(root) else { continue };
            let Some(rel) = rel.to_str().map(|s| s.replace('\\', "/")) else {
                tracing::warn!(path = %item.path().display(), "skipping non-UTF-8 image path");
                continue;
            };
            let Ok((condition_name, condition_type)) = condition_from_path(&rel) else {
                tracing::warn!(path = %rel, "skipping image outside the condition layout");
                continue;
            };
            if let Err(e) = fs::File::open(item.path()) {
                return Err(CatalogError::Io { path: rel, detail: e.to_string() });
            }
            entries.push(ImageEntry { path: rel, condition_name, condition_type, format });
        }
        if entries.is_empty() {
            return Err(CatalogError::EmptyCatalog(root.display().to_string()));
        }
        entries.sort_by(|a, b| a.path.cmp(&b.path));
        Ok(Self { root: root.to_path_buf(), entries })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn entries(&self) -> &[ImageEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn conditions(&self) -> Vec<&str> {
        let mut names: Vec<&str> = self.entries.iter().map(|e| e.condition_name.as_str()).collect();
        names.dedup();
        names
    }

    /// Uniform draw over entries.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<&ImageEntry, CatalogError> {
        self.entries
            .choose(rng)
            .ok_or_else(|| CatalogError::EmptyCatalog(self.root.display().to_string()))
    }

    pub fn find(&self, path: &str) -> Option<&ImageEntry> {
        self.entries.iter().find(|e| e.path == path)
    }

    pub fn read(&self, entry: &ImageEntry) -> Result<Vec<u8>, CatalogError> {
        let full = self.root.join(&entry.path);
        fs::read(&full).map_err(|e| CatalogError::Io { path: entry.path.clone(), detail: e.to_string() })
    }
}
