//! Directory ingestion: PPM/PGM files plus an optional label index.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::image::RgbImage;

#[derive(Debug, Clone)]
pub struct Entry {
    /// File name relative to the dataset directory.
    pub name: String,
    pub image: RgbImage,
    pub label: Option<usize>,
}

#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub entries: Vec<Entry>,
    /// Files that could not be read, with the reason.
    pub skipped: Vec<(String, String)>,
}

impl Dataset {
    /// Name of the first entry without a label.
    pub fn first_unlabeled(&self) -> Option<&str> {
        self.entries.iter().find(|e| e.label.is_none()).map(|e| e.name.as_str())
    }
}

/// Reads a label index: one `filename label` pair per line, separated by
/// whitespace or a comma, `#` starts a comment.
pub fn read_labels(path: &Path) -> Result<BTreeMap<String, usize>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
    parse_labels(&text)
}

pub fn parse_labels(text: &str) -> Result<BTreeMap<String, usize>> {
    let mut map = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(|c: char| c == ',' || c.is_whitespace()).filter(|s| !s.is_empty()).collect();
        let [name, label] = fields[..] else {
            return Err(Error::Parse { line: i + 1, message: format!("expected `filename label`, found {line:?}") });
        };
        let label = label
            .parse::<usize>()
            .map_err(|e| Error::Parse { line: i + 1, message: format!("label {label:?}: {e}") })?;
        map.insert(name.to_string(), label);
    }
    Ok(map)
}

fn is_image(path: &Path) -> bool {
    matches!(
        path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref(),
        Some("ppm" | "pgm" | "pnm")
    )
}

/// Loads every PPM/PGM file in `dir` in lexicographic order, resizing each
/// to `size x size` with bilinear interpolation when `size` is given.
/// Unreadable files are skipped and reported in [`Dataset::skipped`].
pub fn ingest(dir: &Path, size: Option<usize>, labels: Option<&Path>) -> Result<Dataset> {
    let labels = labels.map(read_labels).transpose()?;
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::file(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && is_image(p))
        .collect();
    files.sort();
    let mut ds = Dataset::default();
    for path in files {
        let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        let loaded = RgbImage::read_ppm(&path).and_then(|img| match size {
            Some(s) => img.resize_bilinear(s, s),
            None => Ok(img),
        });
        match loaded {
            Ok(image) => {
                let label = labels.as_ref().and_then(|m| m.get(&name).copied());
                ds.entries.push(Entry { name, image, label });
            }
            Err(e) => ds.skipped.push((name, e.to_string())),
        }
    }
    if ds.entries.is_empty() {
        return Err(Error::Config(format!("no readable images in {}", dir.display())));
    }
    Ok(ds)
}
