use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::saliency::ImageTensor;

/// An image with its ground-truth class index.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledImage {
    pub id: String,
    pub label: usize,
    pub image: ImageTensor,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

/// A labeled image collection sharing one class list.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub class_names: Vec<String>,
    pub items: Vec<LabeledImage>,
}

impl Dataset {
    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&LabeledImage> {
        self.items.iter().find(|it| it.id == id)
    }
}

/// Train and test splits over one class list, with optional object masks
/// keyed by image id.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitDataset {
    pub train: Dataset,
    pub test: Dataset,
    pub masks: BTreeMap<String, Vec<bool>>,
}

impl SplitDataset {
    pub fn mask(&self, image_id: &str) -> Option<&[bool]> {
        self.masks.get(image_id).map(Vec::as_slice)
    }

    pub fn class_names(&self) -> &[String] {
        &self.train.class_names
    }

    pub fn split(&self, split: Split) -> &Dataset {
        match split {
            Split::Train => &self.train,
            Split::Test => &self.test,
        }
    }

    pub fn items(&self) -> impl Iterator<Item = &LabeledImage> {
        self.train.items.iter().chain(&self.test.items)
    }
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("manifest: {0}")]
    Manifest(String),
    #[error("image {id}: {reason}")]
    Image { id: String, reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestItem {
    pub id: String,
    pub label: usize,
    pub split: Split,
    /// Paths relative to the dataset directory.
    pub image: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub dataset_id: String,
    pub class_names: Vec<String>,
    pub items: Vec<ManifestItem>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), DatasetError> {
    std::fs::write(path, bytes).map_err(io_err(path))
}

/// Encodes a mask as a 1-bit grayscale PNG (object = white).
pub fn mask_to_png(mask: &[bool], width: usize, height: usize) -> Result<Vec<u8>, String> {
    if mask.len() != width * height {
        return Err(format!("mask has {} entries for {width}x{height}", mask.len()));
    }
    let stride = width.div_ceil(8);
    let mut packed = vec![0u8; stride * height];
    for (i, _) in mask.iter().enumerate().filter(|(_, &m)| m) {
        let (x, y) = (i % width, i / width);
        packed[y * stride + x / 8] |= 0x80 >> (x % 8);
    }
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, width as u32, height as u32);
        enc.set_color(png::ColorType::Grayscale);
        enc.set_depth(png::BitDepth::One);
        let mut w = enc.write_header().map_err(|e| e.to_string())?;
        w.write_image_data(&packed).map_err(|e| e.to_string())?;
    }
    Ok(out)
}

pub fn mask_from_png(bytes: &[u8]) -> Result<(Vec<bool>, usize, usize), String> {
    let mut dec = png::Decoder::new(std::io::Cursor::new(bytes));
    dec.set_transformations(png::Transformations::EXPAND);
    let mut reader = dec.read_info().map_err(|e| e.to_string())?;
    let mut buf = vec![0u8; reader.output_buffer_size().ok_or("image too large")?];
    let info = reader.next_frame(&mut buf).map_err(|e| e.to_string())?;
    if info.color_type != png::ColorType::Grayscale {
        return Err(format!("expected grayscale mask, got {:?}", info.color_type));
    }
    let (w, h) = (info.width as usize, info.height as usize);
    let mask = match info.bit_depth {
        png::BitDepth::Eight => buf[..w * h].iter().map(|&v| v >= 128).collect(),
        png::BitDepth::Sixteen => buf[..w * h * 2].chunks_exact(2).map(|v| v[0] >= 128).collect(),
        other => return Err(format!("unexpected bit depth {other:?}")),
    };
    Ok((mask, w, h))
}

/// Writes `manifest.json`, `images/<id>.png` and `masks/<id>.png` under
/// `dir`.
pub fn write_dataset_dir(dir: &Path, dataset_id: &str, data: &SplitDataset) -> Result<(), DatasetError> {
    for sub in ["images", "masks"] {
        let p = dir.join(sub);
        std::fs::create_dir_all(&p).map_err(io_err(&p))?;
    }
    let mut items = Vec::new();
    for (split, ds) in [(Split::Train, &data.train), (Split::Test, &data.test)] {
        for it in &ds.items {
            let image = format!("images/{}.png", it.id);
            let png = it.image.to_png().map_err(|e| DatasetError::Image {
                id: it.id.clone(),
                reason: e.to_string(),
            })?;
            write_file(&dir.join(&image), &png)?;
            let mask = match data.mask(&it.id) {
                Some(m) => {
                    let rel = format!("masks/{}.png", it.id);
                    let bytes = mask_to_png(m, it.image.width(), it.image.height()).map_err(|reason| {
                        DatasetError::Image {
                            id: it.id.clone(),
                            reason,
                        }
                    })?;
                    write_file(&dir.join(&rel), &bytes)?;
                    Some(rel)
                }
                None => None,
            };
            items.push(ManifestItem {
                id: it.id.clone(),
                label: it.label,
                split,
                image,
                mask,
            });
        }
    }
    let manifest = Manifest {
        dataset_id: dataset_id.to_string(),
        class_names: data.class_names().to_vec(),
        items,
    };
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| DatasetError::Manifest(e.to_string()))?;
    write_file(&dir.join(MANIFEST_FILE), text.as_bytes())
}

pub fn read_dataset_dir(dir: &Path) -> Result<(Manifest, SplitDataset), DatasetError> {
    let mpath = dir.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&mpath).map_err(io_err(&mpath))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| DatasetError::Manifest(e.to_string()))?;
    let mut train = Vec::new();
    let mut test = Vec::new();
    let mut masks = BTreeMap::new();
    for it in &manifest.items {
        if it.label >= manifest.class_names.len() {
            return Err(DatasetError::Manifest(format!("{}: label {} out of range", it.id, it.label)));
        }
        let bad = |reason: String| DatasetError::Image {
            id: it.id.clone(),
            reason,
        };
        let ipath = dir.join(&it.image);
        let image = ImageTensor::from_png(&std::fs::read(&ipath).map_err(io_err(&ipath))?).map_err(|e| bad(e.to_string()))?;
        if let Some(rel) = &it.mask {
            let p = dir.join(rel);
            let (mask, w, h) = mask_from_png(&std::fs::read(&p).map_err(io_err(&p))?).map_err(bad)?;
            if (w, h) != (image.width(), image.height()) {
                return Err(bad(format!("mask is {w}x{h}, image is {}x{}", image.width(), image.height())));
            }
            masks.insert(it.id.clone(), mask);
        }
        let item = LabeledImage {
            id: it.id.clone(),
            label: it.label,
            image,
        };
        match it.split {
            Split::Train => train.push(item),
            Split::Test => test.push(item),
        }
    }
    let class_names = manifest.class_names.clone();
    Ok((
        manifest,
        SplitDataset {
            train: Dataset {
                class_names: class_names.clone(),
                items: train,
            },
            test: Dataset {
                class_names,
                items: test,
            },
            masks,
        },
    ))
}
