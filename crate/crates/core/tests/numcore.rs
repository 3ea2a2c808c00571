//! Differentiation, softmax and optimizer behavior checked against
//! independent numeric evaluations.

use attnas_core::numcore::{softmax_rows, AdamState, LrSchedule, ParamStore, Tape, Tensor, Var};
use attnas_core::rng;
use proptest::prelude::*;
use rand::Rng as _;

/// A scalar loss built from leaf values; `vars` are the differentiated inputs.
type Build = dyn Fn(&mut Tape, &[Var]) -> Var;

/// Worst relative error between tape gradients and central differences.
/// Entries much smaller than the largest gradient are compared against that
/// scale, since differencing noise swamps their own magnitude.
fn fd_error(inputs: &[(usize, usize, Vec<f64>)], build: &Build, h: f64) -> f64 {
    let eval = |vals: &[Vec<f64>]| {
        let mut t = Tape::new();
        let vars: Vec<Var> = inputs.iter().zip(vals).map(|(&(r, c, _), v)| t.variable(r, c, v.clone())).collect();
        let loss = build(&mut t, &vars);
        (t, vars, loss)
    };
    let base: Vec<Vec<f64>> = inputs.iter().map(|i| i.2.clone()).collect();
    let (mut tape, vars, loss) = eval(&base);
    tape.backward(loss, &mut ParamStore::new()).unwrap();
    let analytic: Vec<Vec<f64>> =
        vars.iter().zip(&base).map(|(v, b)| tape.grad(*v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; b.len()])).collect();
    let floor = analytic.iter().flatten().fold(1e-6f64, |m, g| m.max(1e-4 * g.abs()));
    let mut worst: f64 = 0.0;
    for (a, analytic) in analytic.iter().enumerate() {
        for i in 0..base[a].len() {
            let mut up = base.clone();
            up[a][i] += h;
            let mut down = base.clone();
            down[a][i] -= h;
            let (tu, _, lu) = eval(&up);
            let (td, _, ld) = eval(&down);
            let numeric = (tu.scalar(lu) - td.scalar(ld)) / (2.0 * h);
            let err = (analytic[i] - numeric).abs() / analytic[i].abs().max(numeric.abs()).max(floor);
            worst = worst.max(err);
        }
    }
    worst
}

fn random_vec(n: usize, r: &mut rng::Rng) -> Vec<f64> {
    (0..n).map(|_| r.random_range(-1.0..1.0)).collect()
}

#[test]
fn three_layer_mlp_gradients_match_finite_differences() {
    for seed in 0..5 {
        let mut r = rng::seeded(seed);
        let dims = [5, 7, 6, 3];
        let mut inputs = vec![(4, 5, random_vec(20, &mut r))];
        for w in dims.windows(2) {
            inputs.push((w[0], w[1], random_vec(w[0] * w[1], &mut r)));
            inputs.push((1, w[1], random_vec(w[1], &mut r)));
        }
        let build = |t: &mut Tape, v: &[Var]| {
            let mut x = v[0];
            for l in 0..3 {
                let z = t.matmul(x, v[1 + 2 * l]);
                x = t.add_row(z, v[2 + 2 * l]);
                if l < 2 {
                    x = t.relu(x);
                }
            }
            t.cross_entropy(x, &[0, 2, 1, 2])
        };
        let err = fd_error(&inputs, &build, 1e-4);
        assert!(err < 1e-3, "seed {seed}: relative error {err:e}");
    }
}

#[test]
fn backward_worked_examples() {
    let mut t = Tape::new();
    let w = t.variable(1, 3, vec![0.5, -1.0, 2.0]);
    let s = t.sum(w);
    t.backward(s, &mut ParamStore::new()).unwrap();
    assert_eq!(t.grad(w).unwrap(), &[1.0, 1.0, 1.0]);

    let mut t = Tape::new();
    let w = t.variable(1, 2, vec![1.0, 2.0]);
    let sq = t.mul(w, w);
    let s = t.sum(sq);
    t.backward(s, &mut ParamStore::new()).unwrap();
    assert_eq!(t.grad(w).unwrap(), &[2.0, 4.0]);

    let mut t = Tape::new();
    let w = t.variable(2, 2, vec![1.0; 4]);
    let mut store = ParamStore::new();
    assert!(t.backward(w, &mut store).is_err());
}

#[test]
fn softmax_worked_examples() {
    let x = Tensor::new(vec![1, 3], vec![0.0; 3]).unwrap();
    let out = softmax_rows(&x, None).unwrap();
    assert!(out.data().iter().all(|&p| (p - 1.0 / 3.0).abs() < 1e-15));

    let x = Tensor::new(vec![1, 3], vec![5.0, 1e3, -7.0]).unwrap();
    let out = softmax_rows(&x, Some(&[true, false, false])).unwrap();
    assert_eq!(out.data(), &[1.0, 0.0, 0.0]);

    let x = Tensor::new(vec![1, 2], vec![1.0, 2.0]).unwrap();
    let out = softmax_rows(&x, None).unwrap();
    let (e1, e2) = (1f64.exp(), 2f64.exp());
    assert!((out.data()[0] - e1 / (e1 + e2)).abs() < 1e-15);
    assert!((out.data()[1] - e2 / (e1 + e2)).abs() < 1e-15);

    let err = softmax_rows(&x, Some(&[false, false])).unwrap_err();
    assert!(err.to_string().contains("degenerate attention row"), "{err}");
}

#[test]
fn adam_trace_on_a_square_matches_a_scalar_replay() {
    let mut store = ParamStore::new();
    let id = store.add("w", Tensor::new(vec![1], vec![1.0]).unwrap().with_grad());
    let mut adam = AdamState::new();
    // Scalar Adam written out independently.
    let (mut w, mut m, mut v) = (1.0f64, 0.0f64, 0.0f64);
    let mut prev = w.abs();
    for t in 1..=10 {
        store.zero_grad();
        let mut tape = Tape::new();
        let p = tape.param(&store, id);
        let sq = tape.mul(p, p);
        let loss = tape.sum(sq);
        tape.backward(loss, &mut store).unwrap();
        adam.step(&mut store, &[id], 0.1).unwrap();

        let g = 2.0 * w;
        m = 0.9 * m + 0.1 * g;
        v = 0.98 * v + 0.02 * g * g;
        let mh = m / (1.0 - 0.9f64.powi(t));
        let vh = v / (1.0 - 0.98f64.powi(t));
        w -= 0.1 * mh / (vh.sqrt() + 1e-9);
        let got = store.get(id).data()[0];
        assert!((got - w).abs() < 1e-12, "step {t}: {got} vs {w}");
        assert!(got.abs() < prev, "step {t}: |w| did not shrink");
        prev = got.abs();
    }
    assert_eq!(adam.step_count(), 10);
}

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = (usize, usize, Vec<f64>)> {
    prop::collection::vec(-2.0f64..2.0, rows * cols).prop_map(move |v| (rows, cols, v))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn softmax_rows_sum_to_one_and_ignore_row_shifts(
        (r, c, x) in (1usize..6, 1usize..8).prop_flat_map(|(r, c)| matrix(r, c)),
        shift in -50.0f64..50.0,
        keep in prop::collection::vec(any::<bool>(), 48),
    ) {
        let mask: Vec<bool> = (0..r * c).map(|i| keep[i % keep.len()] || i % c == 0).collect();
        let t = Tensor::new(vec![r, c], x.clone()).unwrap();
        let out = softmax_rows(&t, Some(&mask)).unwrap();
        let shifted = Tensor::new(vec![r, c], x.iter().map(|v| v + shift).collect()).unwrap();
        let out2 = softmax_rows(&shifted, Some(&mask)).unwrap();
        for row in 0..r {
            let s: f64 = out.data()[row * c..(row + 1) * c].iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-6);
        }
        for i in 0..r * c {
            prop_assert!(out.data()[i] >= 0.0);
            if !mask[i] {
                prop_assert_eq!(out.data()[i], 0.0);
            }
            prop_assert!((out.data()[i] - out2.data()[i]).abs() < 1e-6);
        }
    }

    #[test]
    fn elementwise_and_normalizing_ops_differentiate_correctly(
        a in matrix(3, 4), b in matrix(4, 2), gamma in matrix(1, 4), beta in matrix(1, 4),
    ) {
        let build = |t: &mut Tape, v: &[Var]| {
            let n = t.layer_norm(v[0], v[2], v[3], 1e-5);
            let e = t.elu_plus_one(n);
            let p = t.matmul(e, v[1]);
            let s = t.softmax_rows(p, None).unwrap();
            let x = t.exp(p);
            let m = t.mul(s, x);
            let den = t.row_sq_norm(e);
            let d = t.div_col(m, den).unwrap();
            t.mean(d)
        };
        prop_assert!(fd_error(&[a, b, gamma, beta], &build, 1e-6) < 1e-3);
    }

    #[test]
    fn structural_ops_differentiate_correctly(a in matrix(4, 3), b in matrix(4, 2), c in matrix(5, 2)) {
        let build = |t: &mut Tape, v: &[Var]| {
            let cat = t.concat_cols(&[v[0], v[1]]);
            let top = t.slice_rows(cat, 1, 2);
            let prod = t.matmul(top, v[2]);
            let g = t.gather_rows(prod, &[1, 0, 1]);
            let tr = t.transpose(g);
            let cols = t.slice_cols(tr, 0, 2);
            let rows = t.concat_rows(&[cols, cols]);
            let nt = t.matmul_nt(rows, rows);
            let tn = t.matmul_tn(cat, cat);
            let s1 = t.mean(nt);
            let s2 = t.sum(tn);
            let scaled = t.scale(s2, 0.1);
            let both = t.concat_cols(&[s1, scaled]);
            t.sum(both)
        };
        prop_assert!(fd_error(&[a, b, c], &build, 1e-6) < 1e-3);
    }

    #[test]
    fn schedule_rises_then_decays(base in 1e-3f64..1.0, warmup in 1u64..200) {
        let s = LrSchedule::new(base, warmup).unwrap();
        prop_assert!(s.lr_at(0).is_err());
        let mut prev = 0.0;
        for t in 1..=warmup {
            let lr = s.lr_at(t).unwrap();
            prop_assert!(lr > 0.0 && lr >= prev);
            prev = lr;
        }
        prop_assert!((prev - base / (warmup as f64).sqrt()).abs() < 1e-12);
        for t in warmup + 1..warmup + 50 {
            let lr = s.lr_at(t).unwrap();
            prop_assert!(lr > 0.0 && lr <= prev);
            prev = lr;
        }
    }
}
