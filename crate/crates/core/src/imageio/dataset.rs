use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use crate::rng::derive_seed;
use crate::scalar::Real;

use super::pnm::{load_image, load_mask, save_image, save_mask};
use super::synth::{gen_synthetic_scene, SceneConfig};
use super::types::PairedSample;
use super::voc::{parse_voc_annotation, write_voc_annotation, ClassTable};
use super::ImageError;

/// Source of a dataset for [`make_dataset`].
#[derive(Clone, Debug)]
pub enum DatasetKind {
    /// Reads `images/*.ppm`, `masks/*.pgm`, `annotations/*.xml`, and
    /// `classes.txt` under the root directory.
    VocPairs,
    /// Generates scenes in memory; the root directory is not touched. Scene
    /// `i` uses a seed derived from `(seed, i)`, so datasets with different
    /// base seeds are disjoint streams.
    Synthetic { config: SceneConfig, count: usize, seed: u64 },
}

/// Assembles a dataset, sorted by stem for on-disk kinds and by index for
/// synthetic ones.
pub fn make_dataset<T: Real>(
    root: &Path,
    kind: &DatasetKind,
) -> Result<Vec<PairedSample<T>>, ImageError> {
    match kind {
        DatasetKind::VocPairs => load_voc_pairs(root),
        DatasetKind::Synthetic { config, count, seed } => (0..*count)
            .map(|i| gen_synthetic_scene(derive_seed(*seed, i as u64), config))
            .collect(),
    }
}

fn load_voc_pairs<T: Real>(root: &Path) -> Result<Vec<PairedSample<T>>, ImageError> {
    let images = list_stems(&root.join("images"), "ppm")?;
    let masks = list_stems(&root.join("masks"), "pgm")?;
    let annotations = list_stems(&root.join("annotations"), "xml")?;

    let mut orphans = Vec::new();
    for stem in images.keys() {
        if !masks.contains_key(stem) {
            orphans.push(format!("{stem} (no mask)"));
        }
        if !annotations.contains_key(stem) {
            orphans.push(format!("{stem} (no annotation)"));
        }
    }
    for stem in masks.keys().chain(annotations.keys()) {
        if !images.contains_key(stem) && !orphans.iter().any(|o| o.starts_with(stem.as_str())) {
            orphans.push(format!("{stem} (no image)"));
        }
    }
    if !orphans.is_empty() {
        orphans.sort();
        orphans.dedup();
        return Err(ImageError::Dataset(format!(
            "unpaired stems: {}",
            orphans.join(", ")
        )));
    }
    if images.is_empty() {
        return Ok(Vec::new());
    }

    let classes = ClassTable::load(&root.join("classes.txt"))?;
    let mut samples = Vec::with_capacity(images.len());
    for (stem, image_path) in &images {
        let image = load_image(image_path)?;
        let mask = load_mask(&masks[stem])?;
        let text = fs::read_to_string(&annotations[stem])
            .map_err(|e| ImageError::io(&annotations[stem], e))?;
        let boxes = parse_voc_annotation(&text, &classes)
            .map_err(|e| ImageError::Dataset(format!("{stem}: {e}")))?;
        let sample = PairedSample::new(image, mask, boxes)
            .map_err(|e| ImageError::Dataset(format!("{stem}: {e}")))?;
        samples.push(sample);
    }
    Ok(samples)
}

/// Stems of files with the given extension; a missing directory reads as
/// empty so a bare root is an empty dataset rather than an error.
fn list_stems(dir: &Path, ext: &str) -> Result<BTreeMap<String, PathBuf>, ImageError> {
    let mut stems = BTreeMap::new();
    let entries = match fs::read_dir(dir) {
        Ok(e) => e,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(stems),
        Err(e) => return Err(ImageError::io(dir, e)),
    };
    for entry in entries {
        let path = entry.map_err(|e| ImageError::io(dir, e))?.path();
        if path.extension().and_then(|e| e.to_str()) != Some(ext) {
            continue;
        }
        if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
            stems.insert(stem.to_string(), path);
        }
    }
    Ok(stems)
}

/// Writes samples in the standard layout: `images/<stem>.ppm`,
/// `masks/<stem>.pgm`, `annotations/<stem>.xml`, and `classes.txt`, with
/// stems `scene_0000`, `scene_0001`, …
pub fn write_dataset<T: Real>(
    root: &Path,
    samples: &[PairedSample<T>],
    classes: &ClassTable,
) -> Result<(), ImageError> {
    let stems: Vec<String> = (0..samples.len()).map(|i| format!("scene_{i:04}")).collect();
    write_dataset_named(root, samples, classes, &stems)
}

/// [`write_dataset`] with caller-chosen stems, one per sample.
pub fn write_dataset_named<T: Real>(
    root: &Path,
    samples: &[PairedSample<T>],
    classes: &ClassTable,
    stems: &[String],
) -> Result<(), ImageError> {
    if stems.len() != samples.len() {
        return Err(ImageError::Dataset(format!(
            "{} stems for {} samples",
            stems.len(),
            samples.len()
        )));
    }
    for sub in ["images", "masks", "annotations"] {
        fs::create_dir_all(root.join(sub)).map_err(|e| ImageError::io(root.join(sub), e))?;
    }
    classes.save(&root.join("classes.txt"))?;
    for (stem, sample) in stems.iter().zip(samples) {
        save_image(sample.image(), &root.join("images").join(format!("{stem}.ppm")))?;
        save_mask(sample.mask(), &root.join("masks").join(format!("{stem}.pgm")))?;
        let doc = write_voc_annotation(
            sample.boxes(),
            classes,
            sample.image().width(),
            sample.image().height(),
            sample.image().channels(),
        )?;
        let path = root.join("annotations").join(format!("{stem}.xml"));
        fs::write(&path, doc).map_err(|e| ImageError::io(path, e))?;
    }
    Ok(())
}

/// Stems of the dataset under `root`, in the order [`make_dataset`] loads
/// them.
pub fn list_dataset_stems(root: &Path) -> Result<Vec<String>, ImageError> {
    Ok(list_stems(&root.join("images"), "ppm")?.into_keys().collect())
}
