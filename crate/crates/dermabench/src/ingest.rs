//! Reading and writing dataset archives.
//!
//! An archive is a zip of `.npy` arrays named `train_images`, `train_labels`,
//! `val_images`, `val_labels`, `test_images` and `test_labels`. Images are
//! `N × H × W × 3` bytes and labels `N × 1` (or `N`) integers.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Seek};
use std::path::{Path, PathBuf};

use dermabench_core::dataset::{DatasetKind, Split, CHANNELS};
use dermabench_core::{ClassLabel, DatasetBundle, DatasetDescriptor};
use ndarray::{Array2, ArrayD, ArrayView4, IxDyn};
use ndarray_npy::{NpzReader, NpzWriter, ReadNpzError};

use crate::error::IoContext;
use crate::{Error, Result};

const SPLIT_KEYS: [&str; 3] = ["train", "val", "test"];

/// File name the archive of `kind` is cached under.
pub fn archive_file_name(kind: DatasetKind) -> &'static str {
    match kind {
        DatasetKind::DermaMnist => "dermamnist.npz",
        DatasetKind::DermaMnistC => "dermamnist_corrected_224.npz",
        DatasetKind::Synthetic => "synthetic.npz",
    }
}

/// Resolves `path` to an archive file: a directory is joined with the
/// dataset's archive name.
pub fn archive_path(descriptor: &DatasetDescriptor, path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join(archive_file_name(descriptor.name))
    } else {
        path.to_path_buf()
    }
}

/// Loads and validates a bundle. `path` may be the archive itself or the
/// directory holding it.
pub fn load_dataset(descriptor: &DatasetDescriptor, path: &Path) -> Result<DatasetBundle> {
    let file = archive_path(descriptor, path);
    let load_err = |message: String| Error::Load {
        path: file.clone(),
        message,
    };
    if !file.is_file() {
        return Err(load_err("archive not found".into()));
    }
    let handle = File::open(&file).at(&file)?;
    let mut npz = NpzReader::new(BufReader::new(handle)).map_err(|e| load_err(format!("not a readable npz archive: {e}")))?;
    let mut splits = Vec::with_capacity(3);
    for key in SPLIT_KEYS {
        let split = read_split(&mut npz, key).map_err(|e| match e {
            ReadError::Format(m) => load_err(m),
            ReadError::Core(c) => Error::Core(c),
        })?;
        splits.push(split);
    }
    let test = splits.pop().expect("three splits");
    let validation = splits.pop().expect("three splits");
    let train = splits.pop().expect("three splits");
    log::info!(
        "loaded {} from {}: {} / {} / {} images",
        descriptor.name,
        file.display(),
        train.len(),
        validation.len(),
        test.len()
    );
    Ok(DatasetBundle::new(descriptor.clone(), train, validation, test)?)
}

enum ReadError {
    Format(String),
    Core(dermabench_core::Error),
}

impl From<dermabench_core::Error> for ReadError {
    fn from(e: dermabench_core::Error) -> Self {
        ReadError::Core(e)
    }
}

fn read_split<R: Read + Seek>(npz: &mut NpzReader<R>, key: &str) -> std::result::Result<Split, ReadError> {
    let images_key = format!("{key}_images");
    let images: ArrayD<u8> = npz
        .by_name(&images_key)
        .map_err(|e| ReadError::Format(format!("array `{images_key}`: {e}")))?;
    let shape = images.shape().to_vec();
    if shape.len() != 4 || shape[3] != CHANNELS || shape[1] != shape[2] {
        return Err(ReadError::Format(format!(
            "`{images_key}` has shape {shape:?}, expected N×S×S×3"
        )));
    }
    let (n, side) = (shape[0], shape[1]);
    let codes = read_labels(npz, key)?;
    if codes.len() != n {
        return Err(ReadError::Format(format!(
            "`{key}_labels` has {} entries for {n} images",
            codes.len()
        )));
    }
    let labels = codes
        .into_iter()
        .map(ClassLabel::from_code)
        .collect::<dermabench_core::Result<Vec<_>>>()?;
    let pixels = if images.is_standard_layout() {
        images.into_raw_vec_and_offset().0
    } else {
        images.iter().copied().collect()
    };
    Ok(Split::new(side, pixels, labels)?)
}

/// Labels as `N × 1` or `N` integers of any common width.
fn read_labels<R: Read + Seek>(npz: &mut NpzReader<R>, key: &str) -> std::result::Result<Vec<i64>, ReadError> {
    let name = format!("{key}_labels");
    fn flat<T: Copy + Into<i64>>(a: ArrayD<T>, name: &str) -> std::result::Result<Vec<i64>, ReadError> {
        let s = a.shape();
        let ok = s.len() == 1 || (s.len() == 2 && s[1] == 1);
        if !ok {
            return Err(ReadError::Format(format!("`{name}` has shape {s:?}, expected N×1")));
        }
        Ok(a.iter().map(|&v| v.into()).collect())
    }
    macro_rules! attempt {
        ($t:ty) => {
            match npz.by_name::<ndarray::OwnedRepr<$t>, IxDyn>(&name) {
                Ok(a) => return flat(a, &name),
                Err(ReadNpzError::Npy(_)) => {}
                Err(e) => return Err(ReadError::Format(format!("array `{name}`: {e}"))),
            }
        };
    }
    attempt!(u8);
    attempt!(i64);
    attempt!(i32);
    attempt!(u16);
    attempt!(i16);
    attempt!(i8);
    attempt!(u32);
    Err(ReadError::Format(format!("`{name}` is not an integer array")))
}

/// Writes `bundle`'s splits as a deflate-compressed archive, through a
/// temporary file renamed into place.
pub fn write_archive(bundle: &DatasetBundle, path: &Path) -> Result<()> {
    write_splits([bundle.train(), bundle.validation(), bundle.test()], path)
}

/// Like [`write_archive`] for splits that need not form a valid bundle,
/// such as deliberately damaged fixtures.
pub fn write_splits(splits: [&Split; 3], path: &Path) -> Result<()> {
    let tmp = path.with_extension("npz.partial");
    let file = File::create(&tmp).at(&tmp)?;
    let mut npz = NpzWriter::new_compressed(BufWriter::new(file));
    let npz_err = |e: ndarray_npy::WriteNpzError| Error::Load {
        path: path.to_path_buf(),
        message: format!("cannot write archive: {e}"),
    };
    for (key, split) in SPLIT_KEYS.iter().zip(splits) {
        let side = split.side();
        let images = ArrayView4::from_shape((split.len(), side, side, CHANNELS), split.pixels())
            .map_err(|e| Error::Build(e.to_string()))?;
        npz.add_array(format!("{key}_images"), &images).map_err(npz_err)?;
        let codes: Vec<u8> = split.labels().iter().map(|l| l.code()).collect();
        let labels = Array2::from_shape_vec((split.len(), 1), codes).map_err(|e| Error::Build(e.to_string()))?;
        npz.add_array(format!("{key}_labels"), &labels).map_err(npz_err)?;
    }
    npz.finish().map_err(npz_err)?;
    std::fs::rename(&tmp, path).at(path)?;
    Ok(())
}
