//! Random symmetric band matrices and their packed QRAM layout.
//!
//! A matrix is stored row by row with exactly `s` slots per row: an element
//! segment of fixed-point words followed by a segment of strictly increasing
//! column indices. Unused slots hold element 0 and the padding indices
//! `N, N+1, ...`, which keeps every window sorted and fits in `log2 N + 1`
//! bits.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::semiquantum::QramImage;
use crate::state::width_mask;
use crate::walk::WalkParams;

/// Parameters of a generated band matrix.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BandMatrixSpec {
    pub rows: u64,
    pub bandwidth: u64,
    pub word_length: u32,
    pub seed: u64,
    /// Draw in-band values from `(-1, 1)` instead of `[0, 1)`; the diagonal
    /// stays nonnegative.
    #[serde(default)]
    pub signed: bool,
}

impl BandMatrixSpec {
    pub fn new(rows: u64, bandwidth: u64, word_length: u32, seed: u64) -> Self {
        BandMatrixSpec {
            rows,
            bandwidth,
            word_length,
            seed,
            signed: false,
        }
    }

    /// Padded row length `2^⌈log2(2·bandwidth + 1)⌉`.
    pub fn sparsity(&self) -> u64 {
        (2 * self.bandwidth + 1).next_power_of_two()
    }
}

/// `⌊x · 2^k_w⌋` for `0 <= x <= 1`.
pub fn quantize(x: f64, word_length: u32) -> Result<u64> {
    if !(0.0..=1.0).contains(&x) {
        return Err(Error::InvalidParameter(format!("{x} is outside [0, 1]")));
    }
    if word_length == 0 || word_length > 52 {
        return Err(Error::InvalidParameter(format!("word length {word_length} not in 1..=52")));
    }
    Ok((x * (word_length as f64).exp2()).floor() as u64)
}

pub fn dequantize(word: u64, word_length: u32) -> f64 {
    word as f64 / (word_length as f64).exp2()
}

fn quantize_signed(x: f64, word_length: u32) -> Result<(u64, bool)> {
    Ok((quantize(x.abs(), word_length)?, x < 0.0))
}

/// Symmetric `N × N` band matrix with entries quantized to `k_w` bits.
pub fn gen_band_matrix(spec: &BandMatrixSpec) -> Result<DMatrix<f64>> {
    let n = spec.rows;
    if n == 0 || !n.is_power_of_two() {
        return Err(Error::InvalidParameter(format!("N={n} is not a power of two")));
    }
    if n > 1 && spec.bandwidth >= n / 2 {
        return Err(Error::InvalidParameter(format!(
            "bandwidth {} must be below N/2 = {}",
            spec.bandwidth,
            n / 2
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = n as usize;
    let bw = spec.bandwidth as usize;
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n.min(i + bw + 1) {
            let u: f64 = rng.gen();
            let x = if spec.signed && i != j { 2.0 * u - 1.0 } else { u };
            let (w, neg) = quantize_signed(x, spec.word_length)?;
            let v = dequantize(w, spec.word_length) * if neg { -1.0 } else { 1.0 };
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    Ok(m)
}

/// A matrix in the packed row layout.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CscMatrixImage {
    pub rows: u64,
    pub sparsity: u64,
    pub word_length: u32,
    /// Bits per element word: `k_w`, plus an integer bit when some entry is
    /// exactly 1, plus a sign bit for signed matrices.
    pub element_width: u32,
    pub signed: bool,
    /// `N·s` element words, row-major.
    pub elements: Vec<u64>,
    /// `N·s` column indices, row-major.
    pub col_indices: Vec<u64>,
    pub element_offset: u64,
    pub sparsity_offset: u64,
}

impl CscMatrixImage {
    pub fn index_width(&self) -> u32 {
        self.rows.trailing_zeros() + 1
    }

    pub fn params(&self) -> WalkParams {
        WalkParams {
            rows: self.rows,
            sparsity: self.sparsity,
            word_length: self.word_length,
            element_width: self.element_width,
            signed: self.signed,
            element_offset: self.element_offset,
            sparsity_offset: self.sparsity_offset,
        }
    }

    /// Number of stored nonzero entries.
    pub fn nnz(&self) -> usize {
        self.elements.iter().filter(|&&w| w & self.magnitude_mask() != 0).count()
    }

    fn magnitude_mask(&self) -> u64 {
        width_mask(self.element_width - u32::from(self.signed))
    }

    /// Real value of an element word.
    pub fn element_value(&self, word: u64) -> f64 {
        let mag = dequantize(word & self.magnitude_mask(), self.word_length);
        if self.signed && word >> (self.element_width - 1) & 1 == 1 {
            -mag
        } else {
            mag
        }
    }

    /// The dense matrix the image encodes.
    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.rows as usize;
        let s = self.sparsity as usize;
        let mut m = DMatrix::zeros(n, n);
        for j in 0..n {
            for l in 0..s {
                let k = self.col_indices[j * s + l] as usize;
                if k < n {
                    m[(j, k)] = self.element_value(self.elements[j * s + l]);
                }
            }
        }
        m
    }

    pub fn pack_qram(&self) -> Result<QramImage> {
        let total = (2 * self.rows * self.sparsity) as usize;
        let mut words = vec![0u64; total];
        for (i, &w) in self.elements.iter().enumerate() {
            words[self.element_offset as usize + i] = w;
        }
        for (i, &c) in self.col_indices.iter().enumerate() {
            words[self.sparsity_offset as usize + i] = c;
        }
        QramImage::new(
            words,
            self.params().address_width(),
            self.element_width.max(self.index_width()),
        )
    }

    /// Inverse of [`pack_qram`](Self::pack_qram) given the layout parameters.
    pub fn unpack(image: &QramImage, params: &WalkParams) -> Result<Self> {
        let ns = (params.rows * params.sparsity) as usize;
        let read = |off: u64| -> Vec<u64> { (0..ns as u64).map(|i| image.read(off + i)).collect() };
        let out = CscMatrixImage {
            rows: params.rows,
            sparsity: params.sparsity,
            word_length: params.word_length,
            element_width: params.element_width,
            signed: params.signed,
            elements: read(params.element_offset),
            col_indices: read(params.sparsity_offset),
            element_offset: params.element_offset,
            sparsity_offset: params.sparsity_offset,
        };
        out.validate()?;
        Ok(out)
    }

    /// Checks the window and padding invariants.
    pub fn validate(&self) -> Result<()> {
        let n = self.rows;
        let s = self.sparsity as usize;
        if self.elements.len() != n as usize * s || self.col_indices.len() != n as usize * s {
            return Err(Error::InvalidMatrix("segment lengths do not match N·s".into()));
        }
        for j in 0..n as usize {
            let cols = &self.col_indices[j * s..(j + 1) * s];
            if cols.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::InvalidMatrix(format!("row {j}: column indices not strictly increasing")));
            }
            if cols.iter().any(|&c| c >= 2 * n) {
                return Err(Error::InvalidMatrix(format!("row {j}: column index does not fit")));
            }
            for l in 0..s {
                if cols[l] >= n && self.elements[j * s + l] != 0 {
                    return Err(Error::InvalidMatrix(format!("row {j}: nonzero element in padding slot {l}")));
                }
            }
        }
        Ok(())
    }
}

/// Packs a symmetric matrix: rescale when an entry exceeds 1 in magnitude,
/// quantize, compress rows to `s = 2^⌈log2 max_nnz⌉` slots, and compute
/// `κ = 1 / min |eig(A/s)|` of the quantized matrix.
pub fn preprocess(dense: &DMatrix<f64>, word_length: u32) -> Result<(CscMatrixImage, f64)> {
    let n = dense.nrows();
    if n == 0 || n != dense.ncols() || !n.is_power_of_two() {
        return Err(Error::InvalidMatrix(format!(
            "need a square matrix with power-of-two size, got {}x{}",
            dense.nrows(),
            dense.ncols()
        )));
    }
    if dense.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidMatrix("non-finite entry".into()));
    }
    if dense != &dense.transpose() {
        return Err(Error::InvalidMatrix("matrix is not symmetric".into()));
    }
    let max = dense.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let scale = if max > 1.0 { 1.0 / max } else { 1.0 };
    let signed = dense.iter().any(|&x| x < 0.0);

    let mut rows: Vec<Vec<(u64, u64, bool)>> = Vec::with_capacity(n);
    for j in 0..n {
        let mut row = Vec::new();
        for k in 0..n {
            let (w, neg) = quantize_signed((dense[(j, k)] * scale).clamp(-1.0, 1.0), word_length)?;
            if w != 0 {
                if neg && j == k {
                    return Err(Error::InvalidMatrix(format!("negative diagonal entry at {j}")));
                }
                row.push((k as u64, w, neg));
            }
        }
        rows.push(row);
    }
    let max_nnz = rows.iter().map(Vec::len).max().unwrap_or(0).max(1);
    let s = max_nnz.next_power_of_two();
    if s > n {
        return Err(Error::InvalidMatrix(format!("padded row length {s} exceeds N={n}")));
    }
    let one = 1u64 << word_length;
    let int_bit = rows.iter().flatten().any(|&(_, w, _)| w == one);
    let magnitude_width = word_length + u32::from(int_bit);
    let element_width = magnitude_width + u32::from(signed);

    let mut elements = Vec::with_capacity(n * s);
    let mut col_indices = Vec::with_capacity(n * s);
    for row in &rows {
        for &(k, w, neg) in row {
            col_indices.push(k);
            elements.push(if neg { w | 1 << magnitude_width } else { w });
        }
        for p in 0..(s - row.len()) as u64 {
            col_indices.push(n as u64 + p);
            elements.push(0);
        }
    }
    let ns = (n * s) as u64;
    let image = CscMatrixImage {
        rows: n as u64,
        sparsity: s as u64,
        word_length,
        element_width,
        signed,
        elements,
        col_indices,
        element_offset: 0,
        sparsity_offset: ns,
    };
    image.validate()?;
    let h = image.to_dense() / s as f64;
    let lambda = min_abs_eigenvalue(&h);
    if lambda < 1e-14 {
        return Err(Error::Singular(lambda));
    }
    Ok((image, 1.0 / lambda))
}

fn min_abs_eigenvalue(h: &DMatrix<f64>) -> f64 {
    h.clone()
        .symmetric_eigenvalues()
        .iter()
        .fold(f64::INFINITY, |m, x| m.min(x.abs()))
}

/// JSON sidecar stored next to a packed image.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageSidecar {
    #[serde(rename = "N")]
    pub rows: u64,
    pub s: u64,
    pub k_w: u32,
    pub n: u32,
    #[serde(rename = "elementOffset")]
    pub element_offset: u64,
    #[serde(rename = "sparsityOffset")]
    pub sparsity_offset: u64,
    pub kappa: f64,
    pub seed: Option<u64>,
    #[serde(rename = "elementWidth")]
    pub element_width: u32,
    pub signed: bool,
    pub bandwidth: Option<u64>,
}

impl ImageSidecar {
    pub fn new(image: &CscMatrixImage, kappa: f64, spec: Option<&BandMatrixSpec>) -> Self {
        ImageSidecar {
            rows: image.rows,
            s: image.sparsity,
            k_w: image.word_length,
            n: image.index_width(),
            element_offset: image.element_offset,
            sparsity_offset: image.sparsity_offset,
            kappa,
            seed: spec.map(|s| s.seed),
            element_width: image.element_width,
            signed: image.signed,
            bandwidth: spec.map(|s| s.bandwidth),
        }
    }

    pub fn params(&self) -> WalkParams {
        WalkParams {
            rows: self.rows,
            sparsity: self.s,
            word_length: self.k_w,
            element_width: self.element_width,
            signed: self.signed,
            element_offset: self.element_offset,
            sparsity_offset: self.sparsity_offset,
        }
    }
}

/// Unit vector with entries drawn uniformly from `[0, 1)` and normalized.
/// Uses a different stream than [`gen_band_matrix`] for the same seed.
pub fn random_unit_vector(len: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let mut v: Vec<f64> = (0..len).map(|_| rng.gen()).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    v
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantize_examples() {
        assert_eq!(quantize(0.0, 8).unwrap(), 0);
        assert_eq!(quantize(0.5, 8).unwrap(), 128);
        assert_eq!(quantize(0.999, 3).unwrap(), 7);
        assert_eq!(quantize(1.0, 3).unwrap(), 8);
        assert!(quantize(-0.1, 3).is_err());
        assert!(quantize(1.5, 3).is_err());
        for i in 0..1000 {
            let x = i as f64 / 1000.0;
            let d = x - dequantize(quantize(x, 8).unwrap(), 8);
            assert!((0.0..1.0 / 256.0).contains(&d));
        }
    }

    #[test]
    fn generation_is_deterministic_and_banded() {
        let spec = BandMatrixSpec::new(16, 3, 8, 11);
        let a = gen_band_matrix(&spec).unwrap();
        assert_eq!(a, gen_band_matrix(&spec).unwrap());
        assert_eq!(a, a.transpose());
        for i in 0..16usize {
            for j in 0..16usize {
                if i.abs_diff(j) > 3 {
                    assert_eq!(a[(i, j)], 0.0);
                }
            }
        }
        let d = gen_band_matrix(&BandMatrixSpec::new(8, 0, 8, 1)).unwrap();
        assert!(d.is_square() && (0..8).all(|i| (0..8).all(|j| i == j || d[(i, j)] == 0.0)));
        assert!(gen_band_matrix(&BandMatrixSpec::new(12, 1, 8, 1)).is_err());
        assert!(gen_band_matrix(&BandMatrixSpec::new(8, 4, 8, 1)).is_err());
    }

    #[test]
    fn bandwidth_three_gives_s_eight() {
        let spec = BandMatrixSpec::new(16, 3, 8, 5);
        assert_eq!(spec.sparsity(), 8);
        let (img, _) = preprocess(&gen_band_matrix(&spec).unwrap(), 8).unwrap();
        assert_eq!(img.sparsity, 8);
    }

    #[test]
    fn doubled_identity_rescales() {
        let a = DMatrix::<f64>::identity(4, 4) * 2.0;
        let (img, kappa) = preprocess(&a, 8).unwrap();
        assert_eq!(img.sparsity, 1);
        assert_eq!(img.element_width, 9);
        assert!((kappa - 1.0).abs() < 1e-12);
        assert_eq!(img.to_dense(), DMatrix::identity(4, 4));
    }

    #[test]
    fn hand_packed_example() {
        let mut a = DMatrix::zeros(2, 2);
        a[(0, 0)] = 0.5;
        a[(1, 1)] = 0.25;
        let (img, _) = preprocess(&a, 8).unwrap();
        // s = 1 here; force the two-slot layout by hand instead.
        assert_eq!(img.sparsity, 1);
        let img = CscMatrixImage {
            rows: 2,
            sparsity: 2,
            word_length: 8,
            element_width: 8,
            signed: false,
            elements: vec![128, 0, 64, 0],
            col_indices: vec![0, 2, 1, 2],
            element_offset: 0,
            sparsity_offset: 4,
        };
        img.validate().unwrap();
        let q = img.pack_qram().unwrap();
        assert_eq!(q.words(), &[128, 0, 64, 0, 0, 2, 1, 2]);
        assert_eq!(CscMatrixImage::unpack(&q, &img.params()).unwrap(), img);
        assert_eq!(img.to_dense(), a);
    }

    #[test]
    fn image_reconstructs_input() {
        for seed in 0..5 {
            let spec = BandMatrixSpec::new(32, 2, 8, seed);
            let a = gen_band_matrix(&spec).unwrap();
            let (img, kappa) = preprocess(&a, 8).unwrap();
            assert_eq!(img.to_dense(), a);
            assert!(kappa >= 1.0);
            let q = img.pack_qram().unwrap();
            assert_eq!(CscMatrixImage::unpack(&q, &img.params()).unwrap(), img);
            let s = img.sparsity as usize;
            for j in 0..32usize {
                let cols = &img.col_indices[j * s..(j + 1) * s];
                let valid = cols.iter().filter(|&&c| c < 32).count();
                for (p, &c) in cols[valid..].iter().enumerate() {
                    assert_eq!(c, 32 + p as u64);
                }
            }
        }
    }

    #[test]
    fn signed_matrices() {
        let mut spec = BandMatrixSpec::new(16, 1, 6, 3);
        spec.signed = true;
        let a = gen_band_matrix(&spec).unwrap();
        assert!(a.iter().any(|&x| x < 0.0));
        let (img, _) = preprocess(&a, 6).unwrap();
        assert!(img.signed);
        assert_eq!(img.element_width, 7);
        assert_eq!(img.to_dense(), a);

        let mut bad = DMatrix::identity(2, 2);
        bad[(1, 1)] = -0.5;
        assert!(matches!(preprocess(&bad, 4), Err(Error::InvalidMatrix(_))));
    }

    #[test]
    fn rejects_bad_input() {
        let mut a = DMatrix::identity(4, 4) * 0.5;
        a[(0, 1)] = 0.25;
        assert!(matches!(preprocess(&a, 8), Err(Error::InvalidMatrix(_))));
        let z = DMatrix::<f64>::zeros(4, 4);
        assert!(matches!(preprocess(&z, 8), Err(Error::Singular(_))));
    }

    #[test]
    fn sidecar_keys() {
        let (img, kappa) = preprocess(&(DMatrix::identity(4, 4) * 0.5), 8).unwrap();
        let json = serde_json::to_value(ImageSidecar::new(&img, kappa, None)).unwrap();
        for key in ["N", "s", "k_w", "n", "elementOffset", "sparsityOffset", "kappa", "seed"] {
            assert!(json.get(key).is_some(), "missing {key}");
        }
    }
}
