#![allow(dead_code)]

use meshfi_core::matrix::{MatI32, MatI8, Matrix};
use meshfi_core::mesh::{BoundaryInputs, MeshConfig, PeState};
use rand::Rng;

/// Next-state function written as compute-then-commit: every new register
/// value is derived from an untouched copy of the pre-edge grid.
pub fn two_phase_step(
    cfg: &MeshConfig,
    old: &[PeState],
    inp: &BoundaryInputs,
) -> Vec<PeState> {
    let (rows, cols) = (cfg.rows, cfg.cols);
    let at = |r: usize, c: usize| old[r * cols + c];
    let mut new = old.to_vec();
    // Phase 1: compute.
    let mut next = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            let a = if c == 0 { inp.a[r] } else { at(r, c - 1).a_reg };
            let (b, propag, valid) = if r == 0 {
                (inp.b[c], inp.propag[c], inp.valid[c])
            } else {
                let u = at(r - 1, c);
                (u.b_reg, u.propag, u.valid)
            };
            let above = if r == 0 { inp.d[c] } else { at(r - 1, c).shift };
            let me = at(r, c);
            let (acc, shift) = if propag {
                (above, me.acc)
            } else if valid {
                (me.acc.wrapping_add(a as i32 * b as i32), above)
            } else {
                (me.acc, above)
            };
            next.push(PeState {
                a_reg: a,
                b_reg: b,
                acc,
                shift,
                propag,
                valid,
            });
        }
    }
    // Phase 2: commit.
    new.copy_from_slice(&next);
    new
}

pub fn triple_loop(a: &MatI8, b: &MatI8, d: &MatI32) -> MatI32 {
    let mut c = MatI32::zeros(a.rows(), b.cols());
    for i in 0..a.rows() {
        for j in 0..b.cols() {
            let mut s = d.get(i, j);
            for k in 0..a.cols() {
                s = s.wrapping_add(a.get(i, k) as i32 * b.get(k, j) as i32);
            }
            c.set(i, j, s);
        }
    }
    c
}

pub fn rand_i8<R: Rng>(rng: &mut R, r: usize, c: usize) -> MatI8 {
    Matrix::from_fn(r, c, |_, _| rng.gen())
}

/// Uniform over int8 without zero.
pub fn rand_nonzero_i8<R: Rng>(rng: &mut R, r: usize, c: usize) -> MatI8 {
    Matrix::from_fn(r, c, |_, _| loop {
        let v: i8 = rng.gen();
        if v != 0 {
            break v;
        }
    })
}

pub fn rand_i32<R: Rng>(rng: &mut R, r: usize, c: usize) -> MatI32 {
    Matrix::from_fn(r, c, |_, _| rng.gen())
}

/// Int8 matrix where each element is zero with probability `p_zero`.
pub fn rand_sparse_i8<R: Rng>(rng: &mut R, r: usize, c: usize, p_zero: f64) -> MatI8 {
    Matrix::from_fn(r, c, |_, _| {
        if rng.gen_bool(p_zero) {
            0
        } else {
            loop {
                let v: i8 = rng.gen();
                if v != 0 {
                    break v;
                }
            }
        }
    })
}
