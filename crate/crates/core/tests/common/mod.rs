#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use qwalk_core::matrixgen::{gen_band_matrix, preprocess, random_unit_vector, BandMatrixSpec, CscMatrixImage};
use qwalk_core::walk::WalkContext;
use qwalk_core::SparseState;

pub struct Fixture {
    pub image: CscMatrixImage,
    pub kappa: f64,
    /// Quantized `A/s`.
    pub h: DMatrix<f64>,
    pub template: SparseState,
    pub ctx: WalkContext,
}

pub fn fixture(spec: &BandMatrixSpec) -> Fixture {
    let a = gen_band_matrix(spec).unwrap();
    from_dense(&a, spec.word_length)
}

pub fn from_dense(a: &DMatrix<f64>, word_length: u32) -> Fixture {
    let (image, kappa) = preprocess(a, word_length).unwrap();
    let h = image.to_dense() / image.sparsity as f64;
    let mut template = SparseState::new();
    let ctx = WalkContext::new(&mut template, image.params(), image.pack_qram().unwrap()).unwrap();
    Fixture {
        image,
        kappa,
        h,
        template,
        ctx,
    }
}

pub fn input(n: usize, seed: u64) -> (Vec<f64>, Vec<Complex64>) {
    let b = random_unit_vector(n, seed);
    let amps = b.iter().map(|&x| Complex64::new(x, 0.0)).collect();
    (b, amps)
}

pub fn dvec(v: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(v)
}

/// Max-norm distance between a flag-zero vector (indexed over `2^n`) and a
/// dense vector of length `N` padded with zeros.
pub fn max_err(got: &[Complex64], want: &DVector<f64>) -> f64 {
    got.iter()
        .enumerate()
        .map(|(i, g)| (g - Complex64::new(want.get(i).copied().unwrap_or(0.0), 0.0)).norm())
        .fold(0.0, f64::max)
}
