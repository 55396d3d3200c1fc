//! Directory-per-class image ingestion: `<root>/<class_name>/<files>`.
//!
//! Labels follow the caller-supplied class-list order, never filesystem
//! enumeration order; files within a class are processed in sorted-name
//! order so ingestion is deterministic. Undecodable files are skipped with
//! a warning — a class only fails if it ends up empty.

use std::fs;
use std::path::{Path, PathBuf};

use image::imageops::FilterType;

use selrep_core::data::Dataset;
use selrep_core::Tensor;

use crate::{io_err, CliError, Result};

/// Images and labels of one ingested folder tree, labels indexed by the
/// supplied class list.
pub struct LoadedFolder {
    pub images: Vec<Tensor>,
    pub labels: Vec<usize>,
    /// Files that could not be decoded, with the decoder's message.
    pub skipped: Vec<(PathBuf, String)>,
}

/// Decodes and resizes every image of the listed classes. Classes absent
/// from the list are ignored entirely.
pub fn load_folder_images(
    root: &Path,
    classes: &[String],
    image_size: usize,
) -> Result<LoadedFolder> {
    if !root.is_dir() {
        return Err(CliError::Dataset(format!(
            "dataset root `{}` is not a directory",
            root.display()
        )));
    }
    let mut images = Vec::new();
    let mut labels = Vec::new();
    let mut skipped = Vec::new();
    for (class_idx, class_name) in classes.iter().enumerate() {
        let dir = root.join(class_name);
        let entries = fs::read_dir(&dir).map_err(io_err(&dir))?;
        let mut files: Vec<PathBuf> = entries
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| p.is_file())
            .collect();
        files.sort();
        let before = images.len();
        for file in files {
            match decode_image(&file, image_size) {
                Ok(tensor) => {
                    images.push(tensor);
                    labels.push(class_idx);
                }
                Err(message) => {
                    log::warn!("skipping `{}`: {message}", file.display());
                    skipped.push((file, message));
                }
            }
        }
        if images.len() == before {
            return Err(CliError::Dataset(format!(
                "class `{class_name}` has no decodable images in `{}`",
                dir.display()
            )));
        }
    }
    Ok(LoadedFolder { images, labels, skipped })
}

/// Decodes one file to a `(3, size, size)` tensor in `[0, 1]`.
fn decode_image(path: &Path, size: usize) -> std::result::Result<Tensor, String> {
    let img = image::open(path).map_err(|e| e.to_string())?;
    let resized = img
        .resize_exact(size as u32, size as u32, FilterType::Triangle)
        .to_rgb8();
    let mut data = vec![0.0; 3 * size * size];
    for (x, y, pixel) in resized.enumerate_pixels() {
        let base = y as usize * size + x as usize;
        for c in 0..3 {
            data[c * size * size + base] = pixel.0[c] as f64 / 255.0;
        }
    }
    Tensor::from_vec(&[3, size, size], data).map_err(|e| e.to_string())
}

/// Loads the source domain: all listed classes, labels attached.
pub fn load_source_dataset(
    root: &Path,
    classes: &[String],
    image_size: usize,
) -> Result<(Dataset, Vec<(PathBuf, String)>)> {
    let loaded = load_folder_images(root, classes, image_size)?;
    let ds = Dataset::source(loaded.images, loaded.labels, classes.len())?;
    Ok((ds, loaded.skipped))
}

/// Loads the target domain from its own class subset. The returned labels
/// live in the *source* class space and are held out for evaluation only.
pub fn load_target_dataset(
    root: &Path,
    source_classes: &[String],
    target_classes: &[String],
    image_size: usize,
) -> Result<(Dataset, Vec<usize>, Vec<(PathBuf, String)>)> {
    let loaded = load_folder_images(root, target_classes, image_size)?;
    let remap: Vec<usize> = target_classes
        .iter()
        .map(|name| {
            source_classes
                .iter()
                .position(|s| s == name)
                .ok_or_else(|| {
                    CliError::Config(format!("target class `{name}` is not a source class"))
                })
        })
        .collect::<Result<_>>()?;
    let labels: Vec<usize> = loaded.labels.iter().map(|&l| remap[l]).collect();
    let ds = Dataset::target(loaded.images, source_classes.len())?;
    Ok((ds, labels, loaded.skipped))
}
