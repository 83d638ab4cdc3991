//! Finite-difference verification of every differentiable primitive at
//! random points, plus the composite paths the trainer relies on.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use sdhn_core::diffnum::{grad_check, Axis, DiffError, Matrix, ReduceOp, Tape, Var};
use sdhn_core::hypergraph::{hgcn_layer_tape, relaxed_sample_tape, relaxed_skewness_tape, skewness_loss_tape};

const POINTS: usize = 100;
const TOL: f64 = 1e-4;
const EPS: f64 = 1e-5;

fn random_matrix(rng: &mut ChaCha12Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Matrix {
    let mut m = Matrix::zeros(rows, cols);
    for v in m.data_mut() {
        *v = rng.gen::<f64>() * (hi - lo) + lo;
    }
    m
}

/// Keep every entry at least `margin` away from `kink`.
fn away_from(m: &mut Matrix, kink: f64, margin: f64) {
    for v in m.data_mut() {
        if (*v - kink).abs() < margin {
            *v = kink + margin * if *v >= kink { 1.0 } else { -1.0 };
        }
    }
}

fn check_all<F>(name: &str, seed: u64, make_x: impl Fn(&mut ChaCha12Rng) -> Matrix, f: F)
where
    F: Fn(&mut Tape, Var) -> Result<Var, DiffError>,
{
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..POINTS {
        let x = make_x(&mut rng);
        let err = grad_check(&f, &x, EPS).unwrap_or_else(|e| panic!("{name}: {e}"));
        worst = worst.max(err);
    }
    assert!(worst < TOL, "{name}: worst relative error {worst}");
}

#[test]
fn matmul_wrt_left_and_right() {
    check_all("matmul-left", 1, |rng| random_matrix(rng, 3, 4, -2.0, 2.0), |t, x| {
        let other = t.leaf(Matrix::from_vec(4, 2, (0..8).map(|i| 0.3 * i as f64 - 1.0).collect()).unwrap());
        let p = t.matmul(x, other)?;
        t.sum_all(p)
    });
    check_all("matmul-right", 2, |rng| random_matrix(rng, 4, 2, -2.0, 2.0), |t, x| {
        let other = t.leaf(Matrix::from_vec(3, 4, (0..12).map(|i| 0.2 * i as f64 - 1.0).collect()).unwrap());
        let p = t.matmul(other, x)?;
        let sq = t.square(p);
        t.sum_all(sq)
    });
}

#[test]
fn binary_elementwise_ops() {
    check_all("add", 3, |rng| random_matrix(rng, 2, 3, -2.0, 2.0), |t, x| {
        let other = t.leaf(Matrix::filled(2, 3, 0.7));
        let s = t.add(x, other)?;
        let sq = t.square(s);
        t.sum_all(sq)
    });
    check_all("sub", 4, |rng| random_matrix(rng, 2, 3, -2.0, 2.0), |t, x| {
        let other = t.leaf(Matrix::filled(2, 3, 0.4));
        let s = t.sub(other, x)?;
        let sq = t.square(s);
        t.sum_all(sq)
    });
    check_all("mul", 5, |rng| random_matrix(rng, 2, 3, -2.0, 2.0), |t, x| {
        let other = t.leaf(Matrix::from_vec(2, 3, vec![0.5, -1.5, 2.0, 1.0, -0.25, 0.75]).unwrap());
        let p = t.mul(x, other)?;
        t.sum_all(p)
    });
    check_all("div-numerator", 6, |rng| random_matrix(rng, 2, 3, -2.0, 2.0), |t, x| {
        let other = t.leaf(Matrix::from_vec(2, 3, vec![0.5, 1.5, 2.0, 1.0, 0.25, 0.75]).unwrap());
        let q = t.div(x, other)?;
        t.sum_all(q)
    });
    check_all("div-denominator", 7, |rng| random_matrix(rng, 2, 3, 0.5, 2.5), |t, x| {
        let other = t.leaf(Matrix::from_vec(2, 3, vec![0.5, -1.5, 2.0, 1.0, -0.25, 0.75]).unwrap());
        let q = t.div(other, x)?;
        t.sum_all(q)
    });
    check_all("min", 8, |rng| {
        let mut m = random_matrix(rng, 2, 3, -2.0, 2.0);
        // stay away from the tie with the constant 0.2 threshold
        away_from(&mut m, 0.2, 1e-2);
        m
    }, |t, x| {
        let other = t.leaf(Matrix::filled(2, 3, 0.2));
        let m = t.min(x, other)?;
        t.sum_all(m)
    });
}

#[test]
fn unary_elementwise_ops() {
    check_all("sigmoid", 10, |rng| random_matrix(rng, 2, 4, -3.0, 3.0), |t, x| {
        let y = t.sigmoid(x);
        t.sum_all(y)
    });
    check_all("tanh", 11, |rng| random_matrix(rng, 2, 4, -3.0, 3.0), |t, x| {
        let y = t.tanh(x);
        t.sum_all(y)
    });
    check_all("relu-away-from-zero", 12, |rng| {
        let mut m = random_matrix(rng, 2, 4, -3.0, 3.0);
        away_from(&mut m, 0.0, 1e-2);
        m
    }, |t, x| {
        let y = t.relu(x);
        let sq = t.square(y);
        t.sum_all(sq)
    });
    check_all("log", 13, |rng| random_matrix(rng, 2, 4, 0.1, 4.0), |t, x| {
        let y = t.log(x)?;
        t.sum_all(y)
    });
    check_all("exp", 14, |rng| random_matrix(rng, 2, 4, -2.0, 1.5), |t, x| {
        let y = t.exp(x);
        t.sum_all(y)
    });
    check_all("square", 15, |rng| random_matrix(rng, 2, 4, -3.0, 3.0), |t, x| {
        let y = t.square(x);
        t.sum_all(y)
    });
    check_all("negate", 16, |rng| random_matrix(rng, 2, 4, -3.0, 3.0), |t, x| {
        let y = t.negate(x);
        let e = t.exp(y);
        t.sum_all(e)
    });
    check_all("sqrt", 17, |rng| random_matrix(rng, 2, 4, 0.2, 4.0), |t, x| {
        let y = t.sqrt(x)?;
        t.sum_all(y)
    });
    check_all("inv-sqrt", 18, |rng| random_matrix(rng, 2, 4, 0.3, 4.0), |t, x| {
        let y = t.inv_sqrt_or_zero(x);
        t.sum_all(y)
    });
    check_all("recip", 19, |rng| random_matrix(rng, 2, 4, 0.3, 4.0), |t, x| {
        let y = t.recip_or_zero(x);
        t.sum_all(y)
    });
    check_all("clamp-interior", 20, |rng| {
        let mut m = random_matrix(rng, 2, 4, -0.8, 0.8);
        away_from(&mut m, -0.9, 1e-2);
        away_from(&mut m, 0.9, 1e-2);
        m
    }, |t, x| {
        let y = t.clamp(x, -0.9, 0.9);
        let sq = t.square(y);
        t.sum_all(sq)
    });
    check_all("scale-addconst", 21, |rng| random_matrix(rng, 2, 4, -2.0, 2.0), |t, x| {
        let y = t.scale(x, -1.7);
        let z = t.add_const(y, 0.3);
        let sq = t.square(z);
        t.sum_all(sq)
    });
}

#[test]
fn reductions_and_structure_ops() {
    for (name, seed, op, axis) in [
        ("sum-cols", 30u64, ReduceOp::Sum, Axis::Cols),
        ("sum-rows", 31, ReduceOp::Sum, Axis::Rows),
        ("sum-all", 32, ReduceOp::Sum, Axis::All),
        ("mean-cols", 33, ReduceOp::Mean, Axis::Cols),
        ("mean-rows", 34, ReduceOp::Mean, Axis::Rows),
        ("mean-all", 35, ReduceOp::Mean, Axis::All),
    ] {
        check_all(name, seed, |rng| random_matrix(rng, 3, 4, -2.0, 2.0), move |t, x| {
            let r = t.reduce(op, x, axis)?;
            let sq = t.square(r);
            t.sum_all(sq)
        });
    }
    check_all("transpose", 36, |rng| random_matrix(rng, 3, 4, -2.0, 2.0), |t, x| {
        let y = t.transpose(x);
        let other = t.leaf(Matrix::from_vec(3, 1, vec![0.5, -1.0, 2.0]).unwrap());
        let p = t.matmul(y, other)?;
        let sq = t.square(p);
        t.sum_all(sq)
    });
    check_all("concat-cols", 37, |rng| random_matrix(rng, 3, 2, -2.0, 2.0), |t, x| {
        let other = t.leaf(Matrix::filled(3, 3, 0.25));
        let c = t.concat_cols(x, other)?;
        let sq = t.square(c);
        t.sum_all(sq)
    });
    check_all("gather-cols", 38, |rng| random_matrix(rng, 3, 4, -2.0, 2.0), |t, x| {
        let g = t.gather_cols(x, &[2, 0, 3])?;
        let sq = t.square(g);
        t.sum_all(sq)
    });
    check_all("log-softmax", 39, |rng| random_matrix(rng, 3, 5, -2.0, 2.0), |t, x| {
        let ls = t.log_softmax_rows(x);
        let picked = t.gather_cols(ls, &[1, 4, 0])?;
        t.sum_all(picked)
    });
    check_all("add-row-vec", 40, |rng| random_matrix(rng, 1, 4, -2.0, 2.0), |t, x| {
        let base = t.leaf(Matrix::filled(3, 4, 0.6));
        let y = t.add_row_vec(base, x)?;
        let sq = t.square(y);
        t.sum_all(sq)
    });
    check_all("repeat-rows", 41, |rng| random_matrix(rng, 1, 4, -2.0, 2.0), |t, x| {
        let y = t.repeat_rows(x, 5)?;
        let sq = t.square(y);
        t.sum_all(sq)
    });
    check_all("mul-col-vec", 42, |rng| random_matrix(rng, 3, 1, -2.0, 2.0), |t, x| {
        let base = t.leaf(Matrix::from_vec(3, 2, vec![0.3, -0.6, 1.2, 0.9, -1.1, 0.4]).unwrap());
        let y = t.mul_col_vec(base, x)?;
        t.sum_all(y)
    });
    check_all("mul-row-vec", 43, |rng| random_matrix(rng, 1, 2, -2.0, 2.0), |t, x| {
        let base = t.leaf(Matrix::from_vec(3, 2, vec![0.3, -0.6, 1.2, 0.9, -1.1, 0.4]).unwrap());
        let y = t.mul_row_vec(base, x)?;
        t.sum_all(y)
    });
    check_all("sub-scalar", 44, |rng| random_matrix(rng, 1, 1, -2.0, 2.0), |t, x| {
        let base = t.leaf(Matrix::from_vec(2, 3, vec![0.3, -0.6, 1.2, 0.9, -1.1, 0.4]).unwrap());
        let y = t.sub_scalar(base, x)?;
        let sq = t.square(y);
        t.sum_all(sq)
    });
}

#[test]
fn hgcn_layer_wrt_features_and_weights() {
    // fixed incidence with mixed degrees, including an isolated vertex
    let h = Matrix::from_rows(&[
        &[1.0, 0.0, 1.0],
        &[1.0, 1.0, 0.0],
        &[0.0, 1.0, 1.0],
        &[0.0, 0.0, 0.0],
    ])
    .unwrap();
    check_all("hgcn-wrt-x", 50, |rng| random_matrix(rng, 4, 3, 0.1, 2.0), |t, x| {
        let hv = t.leaf(h.clone());
        let theta = t.leaf(Matrix::from_vec(3, 2, vec![0.4, -0.7, 1.1, 0.2, -0.5, 0.9]).unwrap());
        let out = hgcn_layer_tape(t, hv, x, theta)?;
        let sq = t.square(out);
        t.sum_all(sq)
    });
    let h2 = h.clone();
    check_all("hgcn-wrt-theta", 51, move |rng| random_matrix(rng, 3, 2, -1.5, 1.5), move |t, x| {
        let hv = t.leaf(h2.clone());
        let feats = t.leaf(
            Matrix::from_vec(4, 3, vec![0.3, 0.9, 0.5, 1.2, 0.1, 0.8, 0.6, 1.0, 0.2, 0.4, 0.7, 1.1])
                .unwrap(),
        );
        let out = hgcn_layer_tape(t, hv, feats, x)?;
        let sq = t.square(out);
        t.sum_all(sq)
    });
}

#[test]
fn relaxed_sample_wrt_probabilities() {
    let noise = Matrix::from_vec(2, 3, vec![0.4, -1.3, 0.8, -0.2, 1.7, -0.6]).unwrap();
    for tau in [0.5, 1.0, 2.0] {
        let noise = noise.clone();
        check_all(
            "relaxed-sample",
            60 + (tau * 10.0) as u64,
            |rng| random_matrix(rng, 2, 3, 0.05, 0.95),
            move |t, p| {
                let y = relaxed_sample_tape(t, p, &noise, tau)?;
                let sq = t.square(y);
                t.sum_all(sq)
            },
        );
    }
}

#[test]
fn skewness_loss_on_relaxed_degrees() {
    check_all("skewness-loss", 70, |rng| {
        // keep the degree spread away from the zero-variance regime
        let mut y = random_matrix(rng, 3, 6, 0.1, 0.9);
        y.set(0, 0, 0.95);
        y.set(1, 1, 0.05);
        y
    }, |t, y| {
        let sk = relaxed_skewness_tape(t, y)?;
        skewness_loss_tape(t, sk, -0.6)
    });
}

#[test]
fn hgcn_composed_with_sum_on_random_input() {
    // composite example: a full convolution layer reduced to a scalar
    let h = Matrix::from_rows(&[&[1.0, 1.0], &[1.0, 0.0], &[0.0, 1.0], &[1.0, 1.0]]).unwrap();
    check_all("hgcn-sum-4x3", 80, |rng| random_matrix(rng, 4, 3, 0.2, 1.8), |t, x| {
        let hv = t.leaf(h.clone());
        let theta = t.leaf(Matrix::from_vec(3, 3, vec![
            0.5, -0.3, 0.8, 0.2, 0.9, -0.4, -0.6, 0.1, 0.7,
        ]).unwrap());
        let out = hgcn_layer_tape(t, hv, x, theta)?;
        t.sum_all(out)
    });
}
