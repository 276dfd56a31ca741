//! IDX binary reader and writer (the FMNIST/MNIST file format).
//!
//! Big-endian headers: magic 0x00000803 + (count, rows, cols) for images,
//! magic 0x00000801 + (count,) for labels, then raw unsigned bytes. Pixels
//! are scaled to [0, 1] on load.

use std::fs;
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::LabeledDataset;

const IMAGE_MAGIC: u32 = 0x0000_0803;
const LABEL_MAGIC: u32 = 0x0000_0801;

struct Reader<'a> {
    bytes: &'a [u8],
    offset: usize,
    file: &'a str,
}

impl<'a> Reader<'a> {
    fn read_u32(&mut self, field: &str) -> Result<u32> {
        let end = self.offset + 4;
        if end > self.bytes.len() {
            return Err(Error::Format {
                field: format!("{}: {field}", self.file),
                message: format!(
                    "file truncated at byte {} while reading {field}",
                    self.bytes.len()
                ),
            });
        }
        let value = u32::from_be_bytes(self.bytes[self.offset..end].try_into().unwrap());
        self.offset = end;
        Ok(value)
    }

    fn read_payload(&mut self, count: usize, field: &str) -> Result<&'a [u8]> {
        let end = self.offset + count;
        if end > self.bytes.len() {
            return Err(Error::Format {
                field: format!("{}: {field}", self.file),
                message: format!(
                    "expected {count} payload bytes, found {}",
                    self.bytes.len() - self.offset
                ),
            });
        }
        let slice = &self.bytes[self.offset..end];
        self.offset = end;
        Ok(slice)
    }
}

fn check_magic(actual: u32, expected: u32, file: &str) -> Result<()> {
    if actual != expected {
        return Err(Error::Format {
            field: format!("{file}: magic"),
            message: format!("expected 0x{expected:08x}, found 0x{actual:08x}"),
        });
    }
    Ok(())
}

/// Load an image/label file pair into a dataset with features in [0, 1].
pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<LabeledDataset> {
    let images_path = images_path.as_ref();
    let labels_path = labels_path.as_ref();
    let image_bytes = fs::read(images_path)?;
    let label_bytes = fs::read(labels_path)?;

    let images_name = images_path.display().to_string();
    let mut images = Reader { bytes: &image_bytes, offset: 0, file: &images_name };
    check_magic(images.read_u32("magic")?, IMAGE_MAGIC, &images_name)?;
    let image_count = images.read_u32("image count")? as usize;
    let rows = images.read_u32("rows")? as usize;
    let cols = images.read_u32("cols")? as usize;
    let pixels_per_image = rows * cols;
    if pixels_per_image == 0 {
        return Err(Error::Format {
            field: format!("{images_name}: rows/cols"),
            message: "image dimensions must be nonzero".into(),
        });
    }
    let payload = images.read_payload(image_count * pixels_per_image, "pixel data")?;

    let labels_name = labels_path.display().to_string();
    let mut labels = Reader { bytes: &label_bytes, offset: 0, file: &labels_name };
    check_magic(labels.read_u32("magic")?, LABEL_MAGIC, &labels_name)?;
    let label_count = labels.read_u32("label count")? as usize;
    if label_count != image_count {
        return Err(Error::Format {
            field: "label count".into(),
            message: format!("{image_count} images but {label_count} labels"),
        });
    }
    let label_payload = labels.read_payload(label_count, "label data")?;

    let features = Array2::from_shape_vec(
        (image_count, pixels_per_image),
        payload.iter().map(|&b| f64::from(b) / 255.0).collect(),
    )
    .expect("payload length checked above");
    let label_values: Vec<usize> = label_payload.iter().map(|&b| b as usize).collect();
    let num_classes = label_values.iter().copied().max().unwrap_or(0).max(1) + 1;
    LabeledDataset::new(
        features,
        label_values,
        num_classes,
        images_path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "idx".into()),
    )
}

/// Write a dataset as an IDX image/label file pair.
///
/// Features must lie in [0, 1]; they are quantized to bytes, so a reload
/// matches the original only up to 1/255. Images are written flat with
/// dimensions (count, dim, 1).
pub fn write_idx(
    dataset: &LabeledDataset,
    images_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
) -> Result<()> {
    if dataset.num_classes() > 256 {
        return Err(Error::Parameter(format!(
            "IDX labels are bytes; cannot store {} classes",
            dataset.num_classes()
        )));
    }
    let count = dataset.len();
    let dim = dataset.dim();

    let mut image_bytes = Vec::with_capacity(16 + count * dim);
    image_bytes.extend_from_slice(&IMAGE_MAGIC.to_be_bytes());
    image_bytes.extend_from_slice(&(count as u32).to_be_bytes());
    image_bytes.extend_from_slice(&(dim as u32).to_be_bytes());
    image_bytes.extend_from_slice(&1u32.to_be_bytes());
    for &value in dataset.features().iter() {
        if !(0.0..=1.0).contains(&value) {
            return Err(Error::Parameter(format!(
                "feature value {value} outside [0, 1]; cannot quantize to IDX bytes"
            )));
        }
        image_bytes.push((value * 255.0).round() as u8);
    }

    let mut label_bytes = Vec::with_capacity(8 + count);
    label_bytes.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
    label_bytes.extend_from_slice(&(count as u32).to_be_bytes());
    label_bytes.extend(dataset.labels().iter().map(|&l| l as u8));

    fs::write(images_path, image_bytes)?;
    fs::write(labels_path, label_bytes)?;
    Ok(())
}
