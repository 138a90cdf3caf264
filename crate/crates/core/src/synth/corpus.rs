use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{SynthRecord, SynthSpec};
use crate::error::{Error, Result};
use crate::imaging::{load_image, save_png, CropBox, RgbImage};

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestItem {
    /// Path relative to the dataset root.
    pub file: String,
    pub label: Option<usize>,
    pub anomaly_box: Option<CropBox>,
    #[serde(default)]
    pub distractor_boxes: Vec<CropBox>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub spec: Option<SynthSpec>,
    pub labeled: bool,
    pub items: Vec<ManifestItem>,
}

/// Writes `root/class_<id>/img_<n>.png` (or a flat `root/img_<n>.png` when
/// unlabeled) plus `manifest.json`.
pub fn write_dataset(records: &[SynthRecord], spec: Option<&SynthSpec>, root: impl AsRef<Path>, labeled: bool) -> Result<Manifest> {
    let root = root.as_ref();
    fs::create_dir_all(root)?;
    let items: Vec<ManifestItem> = records
        .iter()
        .enumerate()
        .map(|(n, r)| {
            let file = if labeled {
                format!("class_{}/img_{n:05}.png", r.label)
            } else {
                format!("img_{n:05}.png")
            };
            ManifestItem {
                file,
                label: labeled.then_some(r.label),
                anomaly_box: r.anomaly_box,
                distractor_boxes: r.distractor_boxes.clone(),
            }
        })
        .collect();
    for item in &items {
        if let Some(parent) = Path::new(&item.file).parent() {
            fs::create_dir_all(root.join(parent))?;
        }
    }
    records
        .par_iter()
        .zip(items.par_iter())
        .try_for_each(|(r, item)| save_png(&r.image, root.join(&item.file)))?;
    let manifest = Manifest { spec: spec.cloned(), labeled, items };
    fs::write(root.join(MANIFEST), serde_json::to_vec_pretty(&manifest)?)?;
    Ok(manifest)
}

/// Images with optional labels, in a fixed order.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub images: Vec<RgbImage>,
    pub labels: Vec<Option<usize>>,
    pub files: Vec<String>,
}

impl Corpus {
    pub fn from_records(records: &[SynthRecord]) -> Self {
        Self {
            images: records.iter().map(|r| r.image.clone()).collect(),
            labels: records.iter().map(|r| Some(r.label)).collect(),
            files: (0..records.len()).map(|n| format!("img_{n:05}.png")).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// Labels, failing if any image is unlabeled.
    pub fn require_labels(&self) -> Result<Vec<usize>> {
        self.labels
            .iter()
            .enumerate()
            .map(|(i, l)| l.ok_or_else(|| Error::Shape(format!("image {} has no label", self.files[i]))))
            .collect()
    }
}

fn is_image(p: &Path) -> bool {
    matches!(
        p.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase()).as_deref(),
        Some("png" | "jpg" | "jpeg")
    )
}

fn sorted_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && is_image(p))
        .collect();
    files.sort();
    Ok(files)
}

/// Reads a dataset directory: `manifest.json` when present, otherwise
/// `class_<id>/` subdirectories, otherwise a flat unlabeled directory.
pub fn load_corpus(root: impl AsRef<Path>) -> Result<Corpus> {
    let root = root.as_ref();
    let mut entries: Vec<(String, Option<usize>)> = Vec::new();
    let manifest = root.join(MANIFEST);
    if manifest.is_file() {
        let m: Manifest = serde_json::from_slice(&fs::read(&manifest)?)?;
        entries = m.items.into_iter().map(|i| (i.file, i.label)).collect();
    } else {
        let mut class_dirs: Vec<(usize, PathBuf)> = fs::read_dir(root)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_dir())
            .filter_map(|p| {
                let id = p.file_name()?.to_str()?.strip_prefix("class_")?.parse().ok()?;
                Some((id, p))
            })
            .collect();
        class_dirs.sort();
        if class_dirs.is_empty() {
            for p in sorted_images(root)? {
                entries.push((p.file_name().unwrap().to_string_lossy().into_owned(), None));
            }
        } else {
            for (id, dir) in class_dirs {
                for p in sorted_images(&dir)? {
                    let rel = p.strip_prefix(root).expect("inside root").to_string_lossy().into_owned();
                    entries.push((rel, Some(id)));
                }
            }
        }
    }
    if entries.is_empty() {
        return Err(Error::Empty("dataset directory"));
    }
    let images = entries
        .par_iter()
        .map(|(f, _)| load_image(root.join(f)))
        .collect::<Result<Vec<_>>>()?;
    Ok(Corpus {
        images,
        labels: entries.iter().map(|e| e.1).collect(),
        files: entries.into_iter().map(|e| e.0).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::generate_dataset;

    #[test]
    fn labeled_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SynthSpec { n_images: 6, image_size: 64, anomaly_radius: [4, 10], bubble_radius: [2, 6], debris_radius: [2, 6], ..Default::default() };
        let records = generate_dataset(&spec).unwrap();
        let m = write_dataset(&records, Some(&spec), dir.path(), true).unwrap();
        assert!(dir.path().join(&m.items[0].file).is_file());
        assert!(m.items[0].file.starts_with(&format!("class_{}/", records[0].label)));
        let c = load_corpus(dir.path()).unwrap();
        assert_eq!(c.len(), 6);
        assert_eq!(c.require_labels().unwrap(), records.iter().map(|r| r.label).collect::<Vec<_>>());
        for (a, b) in c.images.iter().zip(&records) {
            let worst = a.data().iter().zip(b.image.data()).map(|(x, y)| (x - y).abs()).fold(0.0f32, f32::max);
            assert!(worst <= 0.5 / 255.0 + 1e-6);
        }
        fs::remove_file(dir.path().join(MANIFEST)).unwrap();
        let by_dirs = load_corpus(dir.path()).unwrap();
        assert_eq!(by_dirs.len(), 6);
        assert!(by_dirs.labels.iter().all(|l| l.is_some()));
    }

    #[test]
    fn unlabeled_is_flat() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SynthSpec { n_images: 3, image_size: 64, anomaly_radius: [4, 10], bubble_radius: [2, 6], debris_radius: [2, 6], ..Default::default() };
        let records = generate_dataset(&spec).unwrap();
        write_dataset(&records, None, dir.path(), false).unwrap();
        assert!(dir.path().join("img_00000.png").is_file());
        let c = load_corpus(dir.path()).unwrap();
        assert!(c.labels.iter().all(|l| l.is_none()));
        assert!(c.require_labels().is_err());
    }

    #[test]
    fn empty_directory_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(load_corpus(dir.path()).is_err());
    }
}
