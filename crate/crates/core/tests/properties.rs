use envae::data::{gen_bars, gen_gmm2d};
use envae::eval::{energy_distance, lipschitz_estimate, residual_histogram};
use envae::losses::energy_score_values;
use envae::random::{kl_diag_gaussian, GaussianPosterior, Rng};
use envae::tensor::{Tape, Tensor};
use proptest::prelude::*;

fn tensor(shape: &[usize], data: Vec<f64>) -> Tensor {
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// `(m, b, n, samples, x)` with samples `[m, b, n]` and x `[b, n]`.
fn score_case() -> impl Strategy<Value = (usize, usize, usize, Vec<f64>, Vec<f64>)> {
    (2usize..6, 1usize..4, 1usize..5).prop_flat_map(|(m, b, n)| {
        (
            Just(m),
            Just(b),
            Just(n),
            prop::collection::vec(-3.0..3.0f64, m * b * n),
            prop::collection::vec(-3.0..3.0f64, b * n),
        )
    })
}

fn point_set(max_rows: usize, n: usize) -> impl Strategy<Value = Tensor> {
    (2..max_rows).prop_flat_map(move |rows| {
        prop::collection::vec(-2.0..2.0f64, rows * n).prop_map(move |d| tensor(&[rows, n], d))
    })
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn energy_score_ignores_sample_order(
        (m, b, n, s, x) in score_case(),
        beta in 0.3..2.0f64,
        seed in any::<u64>(),
    ) {
        let base = energy_score_values(&tensor(&[m, b, n], s.clone()), &tensor(&[b, n], x.clone()), beta).unwrap();
        let perm = Rng::new(seed).permutation(m);
        let mut shuffled = Vec::with_capacity(s.len());
        for &i in &perm {
            shuffled.extend_from_slice(&s[i * b * n..(i + 1) * b * n]);
        }
        let moved = energy_score_values(&tensor(&[m, b, n], shuffled), &tensor(&[b, n], x), beta).unwrap();
        for (p, q) in base.iter().zip(&moved) {
            prop_assert!(close(*p, *q, 1e-12), "{p} vs {q}");
        }
    }

    #[test]
    fn energy_score_is_homogeneous(
        (m, b, n, s, x) in score_case(),
        beta in 0.3..2.0f64,
        c in 0.1..10.0f64,
    ) {
        let base = energy_score_values(&tensor(&[m, b, n], s.clone()), &tensor(&[b, n], x.clone()), beta).unwrap();
        let scaled = energy_score_values(
            &tensor(&[m, b, n], s.iter().map(|v| c * v).collect()),
            &tensor(&[b, n], x.iter().map(|v| c * v).collect()),
            beta,
        ).unwrap();
        for (p, q) in base.iter().zip(&scaled) {
            prop_assert!(close(c.powf(beta) * p, *q, 1e-10), "{} vs {q}", c.powf(beta) * p);
        }
    }

    #[test]
    fn kl_is_nonnegative(
        data in prop::collection::vec((-5.0..5.0f64, -8.0..8.0f64), 1..20),
    ) {
        let k = data.len();
        let tape = Tape::new();
        let mu = tape.constant(tensor(&[1, k], data.iter().map(|d| d.0).collect()));
        let lv = tape.constant(tensor(&[1, k], data.iter().map(|d| d.1).collect()));
        let kl = kl_diag_gaussian(&GaussianPosterior::new(mu, lv).unwrap()).unwrap();
        prop_assert!(kl.to_tensor().data()[0] >= 0.0);
    }

    #[test]
    fn energy_distance_symmetric_and_zero_on_self(
        a in point_set(12, 3),
        b in point_set(12, 3),
        beta in 0.2..2.0f64,
    ) {
        let ab = energy_distance(&a, &b, beta).unwrap();
        let ba = energy_distance(&b, &a, beta).unwrap();
        prop_assert_eq!(ab.to_bits(), ba.to_bits());
        prop_assert!(ab >= -1e-12);
        prop_assert!(energy_distance(&a, &a, beta).unwrap().abs() <= 1e-12);
    }

    #[test]
    fn lipschitz_estimate_grows_with_pairs(
        pts in point_set(30, 2),
        pairs in 1usize..50,
        extra in 0usize..50,
        seed in any::<u64>(),
    ) {
        let map = |x: &Tensor| Ok(x.map(|v| v.sin() * 3.0));
        let few = lipschitz_estimate(map, &pts, pairs, &mut Rng::new(seed));
        let many = lipschitz_estimate(map, &pts, pairs + extra, &mut Rng::new(seed));
        match (few, many) {
            (Ok(f), Ok(m)) => prop_assert!(m >= f),
            (Err(_), _) => {}
            (Ok(_), Err(e)) => prop_assert!(false, "superset failed: {e}"),
        }
    }

    #[test]
    fn residual_histogram_conserves_mass(
        r in prop::collection::vec(-1.0..1.0f64, 1..200),
        bins in 3usize..50,
    ) {
        let h = residual_histogram(&r, bins).unwrap();
        prop_assert_eq!(h.counts.iter().sum::<u64>(), r.len() as u64);
        prop_assert_eq!(h.edges.len(), bins + 1);
    }

    #[test]
    fn generated_data_lies_in_unit_box(seed in any::<u64>(), n in 8usize..300) {
        for ds in [gen_gmm2d(8, 1.0, n, seed).unwrap(), gen_bars(8, 8, n, seed).unwrap()] {
            prop_assert!(ds.x.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn generators_are_pure(seed in any::<u64>()) {
        prop_assert_eq!(gen_gmm2d(4, 0.5, 50, seed).unwrap().x, gen_gmm2d(4, 0.5, 50, seed).unwrap().x);
        prop_assert_eq!(gen_bars(6, 5, 20, seed).unwrap().x, gen_bars(6, 5, 20, seed).unwrap().x);
    }
}

#[test]
fn broadcast_mismatch_is_an_error() {
    let tape = Tape::new();
    let a = tape.constant(Tensor::zeros(&[2, 3]));
    let b = tape.constant(Tensor::zeros(&[2, 4]));
    assert!(a.add(b).is_err());
    let c = tape.constant(Tensor::zeros(&[3]));
    assert_eq!(a.mul(c).unwrap().shape(), vec![2, 3]);
}

#[test]
fn backward_twice_is_pure() {
    let tape = Tape::new();
    let x = tape.leaf(tensor(&[2, 2], vec![0.3, -1.2, 2.0, 0.7]));
    let y = x.tanh().unwrap().mul(x).unwrap().pow_norm(1.5).unwrap().sum().unwrap();
    let g1 = tape.backward(y).unwrap().get(x);
    let g2 = tape.backward(y).unwrap().get(x);
    assert_eq!(g1, g2);
}
