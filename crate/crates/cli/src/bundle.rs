//! Loading and saving packed matrices, and writing run artifacts.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use qwalk_core::matrixgen::{gen_band_matrix, preprocess, BandMatrixSpec, CscMatrixImage, ImageSidecar};
use qwalk_core::QramImage;
use serde::Serialize;

use crate::{Exit, MatrixArgs};

pub const IMAGE_FILE: &str = "image.bin";
pub const SIDECAR_FILE: &str = "image.json";

/// Largest dimension for which dense oracles are run.
pub const DENSE_LIMIT: u64 = 2048;

/// A packed image plus its metadata.
pub struct Bundle {
    pub image: QramImage,
    pub sidecar: ImageSidecar,
}

impl Bundle {
    pub fn generate(args: &MatrixArgs) -> Result<Self, Exit> {
        let mut spec = BandMatrixSpec::new(args.rows, args.bandwidth, args.word_length, args.seed);
        spec.signed = args.signed;
        let dense = gen_band_matrix(&spec)?;
        let (csc, kappa) = preprocess(&dense, args.word_length)?;
        Ok(Bundle {
            image: csc.pack_qram()?,
            sidecar: ImageSidecar::new(&csc, kappa, Some(&spec)),
        })
    }

    /// Reads `image.json` and `image.bin` from a directory, or a sidecar path
    /// with the image next to it.
    pub fn load(path: &Path) -> Result<Self, Exit> {
        let (json, bin) = if path.is_dir() {
            (path.join(SIDECAR_FILE), path.join(IMAGE_FILE))
        } else {
            (path.to_path_buf(), path.with_extension("bin"))
        };
        let text = fs::read_to_string(&json).map_err(|e| Exit::io(&json, e))?;
        let sidecar: ImageSidecar =
            serde_json::from_str(&text).map_err(|e| Exit::Config(format!("{}: {e}", json.display())))?;
        let image = QramImage::load(&bin).map_err(|e| Exit::io(&bin, e))?;
        Ok(Bundle { image, sidecar })
    }

    /// `--matrix` when given, otherwise a freshly generated matrix.
    pub fn from_args(args: &MatrixArgs) -> Result<Self, Exit> {
        match &args.matrix {
            Some(p) => Self::load(p),
            None => Self::generate(args),
        }
    }

    pub fn save(&self, dir: &Path) -> Result<(), Exit> {
        create_dir(dir)?;
        let bin = dir.join(IMAGE_FILE);
        self.image.save(&bin).map_err(|e| Exit::io(&bin, e))?;
        write_json(&dir.join(SIDECAR_FILE), &self.sidecar)
    }

    /// The validated row layout.
    pub fn csc(&self) -> Result<CscMatrixImage, Exit> {
        Ok(CscMatrixImage::unpack(&self.image, &self.sidecar.params())?)
    }

    /// `A/s` as a dense matrix, refusing sizes beyond the oracle limit.
    pub fn dense_h(&self, csc: &CscMatrixImage) -> Result<DMatrix<f64>, Exit> {
        if csc.rows > DENSE_LIMIT {
            return Err(Exit::Config(format!(
                "N={} exceeds the dense oracle limit of {DENSE_LIMIT}",
                csc.rows
            )));
        }
        Ok(csc.to_dense() / csc.sparsity as f64)
    }
}

pub fn create_dir(dir: &Path) -> Result<(), Exit> {
    fs::create_dir_all(dir).map_err(|e| Exit::io(dir, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Exit> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Exit::Config(e.to_string()))?;
    fs::write(path, text + "\n").map_err(|e| Exit::io(path, e))
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T], header: &[&str]) -> Result<(), Exit> {
    let io = |e: csv::Error| Exit::Io(format!("{}: {e}", path.display()));
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(io)?;
    w.write_record(header).map_err(io)?;
    for r in rows {
        w.serialize(r).map_err(io)?;
    }
    w.flush().map_err(|e| Exit::io(path, e))
}

pub fn out_path(dir: &Path, name: &str) -> PathBuf {
    dir.join(name)
}
