mod common;

use common::{dvec, fixture, from_dense, input, max_err};
use nalgebra::DMatrix;
use qwalk_core::matrixgen::BandMatrixSpec;
use qwalk_core::oracle::cheb_apply;
use qwalk_core::walk::{block_column, t_tilde, t_tilde_adjoint, walk_w};

fn chebyshev_error(spec: &BandMatrixSpec, steps: usize) -> f64 {
    let fx = fixture(spec);
    let n = spec.rows as usize;
    let (b, amps) = input(n, spec.seed);
    let want = cheb_apply(&fx.h, &dvec(&b), steps);
    let mut st = fx.template.empty_like();
    fx.ctx.load_input(&mut st, &amps).unwrap();
    t_tilde(&mut st, &fx.ctx).unwrap();
    let mut worst: f64 = 0.0;
    for (step, want_n) in want.iter().enumerate().skip(1) {
        walk_w(&mut st, &fx.ctx).unwrap();
        assert!((st.norm() - 1.0).abs() < 1e-9, "norm drift at step {step}");
        let mut probe = st.clone();
        t_tilde_adjoint(&mut probe, &fx.ctx).unwrap();
        let got = fx.ctx.flag_zero_amplitudes(&probe).unwrap();
        worst = worst.max(max_err(&got, want_n));
    }
    worst
}

#[test]
fn chebyshev_identity_small() {
    for (rows, bw) in [(8, 1), (16, 1), (16, 3)] {
        let err = chebyshev_error(&BandMatrixSpec::new(rows, bw, 8, 3), 20);
        assert!(err <= 1e-8, "N={rows} bw={bw}: {err}");
    }
}

#[test]
fn chebyshev_identity_signed() {
    let mut spec = BandMatrixSpec::new(16, 2, 8, 5);
    spec.signed = true;
    let err = chebyshev_error(&spec, 20);
    assert!(err <= 1e-8, "{err}");
}

#[test]
fn block_encoding_matches_matrix() {
    let fx = fixture(&BandMatrixSpec::new(16, 3, 8, 9));
    for col in 0..16u64 {
        let got = block_column(&fx.ctx, &fx.template, col).unwrap();
        let want = fx.h.column(col as usize).into_owned();
        assert!(max_err(&got, &want) <= 1e-10, "column {col}");
    }
}

#[test]
fn block_encoding_after_rescale() {
    let fx = from_dense(&(DMatrix::identity(8, 8) * 2.0), 8);
    for col in 0..8u64 {
        let got = block_column(&fx.ctx, &fx.template, col).unwrap();
        assert!(max_err(&got, &fx.h.column(col as usize).into_owned()) <= 1e-10);
    }
}
