use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use image::{GrayImage, ImageBuffer, Luma, Rgb, RgbImage};

use super::{Dataset, Provenance, Sample, Split, SynthManifest};
use crate::error::{data_err, shape_err};
use crate::tensor::Tensor;
use crate::{Error, Result};

const IMAGE_EXTS: [&str; 3] = ["png", "jpg", "jpeg"];

/// Loads `<root>/images/*` paired with `<root>/GT/*.png`.
pub fn load_dataset(root: impl AsRef<Path>) -> Result<Dataset> {
    let root = root.as_ref();
    load_dataset_dirs(root.join("images"), root.join("GT"))
}

/// Loads every image in `image_dir` with its same-stem PNG mask, sorted by stem.
pub fn load_dataset_dirs(image_dir: impl AsRef<Path>, mask_dir: impl AsRef<Path>) -> Result<Dataset> {
    let (image_dir, mask_dir) = (image_dir.as_ref(), mask_dir.as_ref());
    if !mask_dir.is_dir() {
        return Err(data_err!("directory {} does not exist", mask_dir.display()));
    }
    let samples = image_stems(image_dir)?
        .into_iter()
        .map(|(stem, path)| {
            let mask_path = mask_dir.join(format!("{stem}.png"));
            if !mask_path.is_file() {
                return Err(data_err!("image {stem} has no mask at {}", mask_path.display()));
            }
            Sample::new(stem, load_image(&path)?, load_mask_png(&mask_path)?)
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(samples, Split::All, Provenance::Directory(image_dir.display().to_string()))
}

/// Loads the images of a directory without masks, sorted by stem.
pub fn load_images(image_dir: impl AsRef<Path>) -> Result<Vec<(String, Tensor<f32>)>> {
    image_stems(image_dir.as_ref())?
        .into_iter()
        .map(|(stem, path)| Ok((stem, load_image(&path)?)))
        .collect()
}

fn image_stems(image_dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    if !image_dir.is_dir() {
        return Err(data_err!("directory {} does not exist", image_dir.display()));
    }
    let mut stems = BTreeMap::new();
    let entries = fs::read_dir(image_dir).map_err(|e| Error::io(image_dir, e))?;
    for entry in entries {
        let path = entry.map_err(|e| Error::io(image_dir, e))?.path();
        let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
        if !ext.is_some_and(|e| IMAGE_EXTS.contains(&e.as_str())) {
            continue;
        }
        if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
            if let Some(prev) = stems.insert(stem.to_string(), path.clone()) {
                return Err(data_err!("two images share the stem {stem}: {} and {}", prev.display(), path.display()));
            }
        }
    }
    if stems.is_empty() {
        return Err(data_err!("no images found in {}", image_dir.display()));
    }
    Ok(stems)
}

fn open(path: &Path) -> Result<image::DynamicImage> {
    image::open(path).map_err(|e| data_err!("cannot read {}: {e}", path.display()))
}

fn load_image(path: &Path) -> Result<Tensor<f32>> {
    let img = open(path)?.to_rgb8();
    let (w, h) = img.dimensions();
    let data = img.into_raw().into_iter().map(|v| f32::from(v) / 255.0).collect();
    Tensor::new(vec![1, h as usize, w as usize, 3], data)
}

/// Reads a mask and binarises it at half intensity.
pub fn load_mask_png(path: impl AsRef<Path>) -> Result<Tensor<f32>> {
    let img = open(path.as_ref())?.to_luma8();
    let (w, h) = img.dimensions();
    let data = img.into_raw().into_iter().map(|v| if v >= 128 { 1.0 } else { 0.0 }).collect();
    Tensor::new(vec![1, h as usize, w as usize, 1], data)
}

fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn single_channel(t: &Tensor<f32>) -> Result<(u32, u32)> {
    let [n, h, w, c] = t.dims4()?;
    if n != 1 || c != 1 {
        return Err(shape_err!("expected a (1, H, W, 1) map, got {:?}", t.shape()));
    }
    Ok((w as u32, h as u32))
}

fn save(img: impl FnOnce(&Path) -> image::ImageResult<()>, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    img(path).map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => data_err!("cannot write {}: {other}", path.display()),
    })
}

/// Writes a `(1, H, W, 1)` map as 8-bit grayscale, quantised as `round(255 s)`.
pub fn write_saliency_png(path: impl AsRef<Path>, map: &Tensor<f32>) -> Result<()> {
    let (w, h) = single_channel(map)?;
    let img: GrayImage = ImageBuffer::from_raw(w, h, map.data().iter().map(|&v| quantize(v)).collect())
        .expect("buffer sized from shape");
    save(|p| img.save(p), path.as_ref())
}

/// Reads an 8-bit grayscale map back to `[0, 1]` without binarising.
pub fn read_saliency_png(path: impl AsRef<Path>) -> Result<Tensor<f32>> {
    let img = open(path.as_ref())?.to_luma8();
    let (w, h) = img.dimensions();
    let data = img.into_raw().into_iter().map(|v| f32::from(v) / 255.0).collect();
    Tensor::new(vec![1, h as usize, w as usize, 1], data)
}

/// Writes `images/<id>.png` and `GT/<id>.png`, plus `manifest.json` for
/// synthetic datasets.
pub fn write_dataset(dataset: &Dataset, root: impl AsRef<Path>) -> Result<()> {
    let root = root.as_ref();
    for s in &dataset.samples {
        let (h, w) = s.dims();
        let rgb: RgbImage = ImageBuffer::<Rgb<u8>, _>::from_raw(
            w as u32,
            h as u32,
            s.image.data().iter().map(|&v| quantize(v)).collect(),
        )
        .expect("buffer sized from shape");
        save(|p| rgb.save(p), &root.join("images").join(format!("{}.png", s.id)))?;
        let mask: GrayImage = ImageBuffer::<Luma<u8>, _>::from_raw(
            w as u32,
            h as u32,
            s.mask.data().iter().map(|&v| if v >= 0.5 { 255 } else { 0 }).collect(),
        )
        .expect("buffer sized from shape");
        save(|p| mask.save(p), &root.join("GT").join(format!("{}.png", s.id)))?;
    }
    if let Provenance::Synthetic { seed, n, size, empty_fraction } = dataset.provenance {
        let manifest = SynthManifest {
            seed,
            n,
            size,
            empty_fraction,
            empty_ids: dataset.samples.iter().filter(|s| s.is_empty_gt()).map(|s| s.id.clone()).collect(),
        };
        let path: PathBuf = root.join("manifest.json");
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serialises");
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}
