use ndarray::{Array1, Array2};
use proptest::prelude::{prop_assert, prop_assert_eq, proptest, ProptestConfig};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

use vididi_core::eval::{knn_recall, linear_probe, pca2d, silhouette, LabeledEmbeddings, Metric, ProbeSettings};

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller
    let (u, v): (f64, f64) = (rng.gen_range(1e-12..1.0), rng.gen());
    (-2.0 * u.ln()).sqrt() * (2.0 * std::f64::consts::PI * v).cos()
}

fn random_set(rng: &mut ChaCha8Rng, n: usize, d: usize, classes: usize) -> LabeledEmbeddings {
    let v = Array2::from_shape_fn((n, d), |_| gaussian(rng));
    let labels = (0..n).map(|_| rng.gen_range(0..classes)).collect();
    LabeledEmbeddings::unnamed(v, labels).unwrap()
}

/// Sorts every database row by distance and reads off the first hit.
fn brute_force_recall(db: &LabeledEmbeddings, q: &LabeledEmbeddings, k: usize, metric: Metric) -> f64 {
    let mut hits = 0;
    for qi in 0..q.len() {
        let x = q.vectors.row(qi);
        let mut ranked: Vec<(f64, usize)> = (0..db.len())
            .map(|i| {
                let y = db.vectors.row(i);
                let d = match metric {
                    Metric::Cosine => 1.0 - x.dot(&y) / (x.dot(&x).sqrt() * y.dot(&y).sqrt()),
                    Metric::Euclidean => (&x - &y).mapv(|v| v * v).sum().sqrt(),
                };
                (d, i)
            })
            .collect();
        ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        if ranked.iter().take(k).any(|&(_, i)| db.labels[i] == q.labels[qi]) {
            hits += 1;
        }
    }
    hits as f64 / q.len() as f64
}

#[test]
fn recall_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let all = random_set(&mut rng, 200, 6, 4);
    let db = all.select(&(0..100).collect::<Vec<_>>()).unwrap();
    let q = all.select(&(100..200).collect::<Vec<_>>()).unwrap();
    let ks = [1, 2, 5, 10, 100];
    for metric in [Metric::Cosine, Metric::Euclidean] {
        for (k, r) in knn_recall(&db, &q, &ks, metric).unwrap() {
            assert_eq!(r, brute_force_recall(&db, &q, k, metric), "{metric:?} k={k}");
        }
    }
}

#[test]
fn two_blob_retrieval() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let v = Array2::from_shape_fn((20, 2), |(i, _)| if i < 10 { 1.0 } else { -1.0 } + 0.8 * gaussian(&mut rng));
    let e = LabeledEmbeddings::unnamed(v, (0..20).map(|i| usize::from(i >= 10)).collect()).unwrap();
    let db = e.select(&(0..20).step_by(2).collect::<Vec<_>>()).unwrap();
    let q = e.select(&(1..20).step_by(2).collect::<Vec<_>>()).unwrap();
    for (k, r) in knn_recall(&db, &q, &[1, 3], Metric::Cosine).unwrap() {
        assert_eq!(r, brute_force_recall(&db, &q, k, Metric::Cosine));
    }
}

#[test]
fn silhouette_six_points() {
    // Class 0 at x = 0, 1, 2 and class 1 at x = 5, 6, 8 on a line.
    let v = Array2::from_shape_vec((6, 1), vec![0.0, 1.0, 2.0, 5.0, 6.0, 8.0]).unwrap();
    let e = LabeledEmbeddings::unnamed(v, vec![0, 0, 0, 1, 1, 1]).unwrap();
    let expected = (29.0 / 38.0 + 13.0 / 16.0 + 17.0 / 26.0 + 0.5 + 0.7 + 9.0 / 14.0) / 6.0;
    assert!((silhouette(&e).unwrap() - expected).abs() < 1e-12);
}

#[test]
fn singleton_class_scores_zero() {
    let v = Array2::from_shape_vec((3, 1), vec![0.0, 1.0, 10.0]).unwrap();
    let e = LabeledEmbeddings::unnamed(v, vec![0, 0, 1]).unwrap();
    // Points 0 and 1: a = 1, b = 10 and 9.
    let expected = (0.9 + 8.0 / 9.0 + 0.0) / 3.0;
    assert!((silhouette(&e).unwrap() - expected).abs() < 1e-12);
}

#[test]
fn probe_on_permuted_labels_is_at_chance() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let n = 400;
    let mut labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
    labels.shuffle(&mut rng);
    let v = Array2::from_shape_fn((n, 8), |_| gaussian(&mut rng));
    let train = LabeledEmbeddings::unnamed(v.slice(ndarray::s![..200, ..]).to_owned(), labels[..200].to_vec()).unwrap();
    let test = LabeledEmbeddings::unnamed(v.slice(ndarray::s![200.., ..]).to_owned(), labels[200..].to_vec()).unwrap();
    let acc = linear_probe(&train, &test, ProbeSettings { epochs: 200, lr: 0.5, seed: 0 }).unwrap();
    let sigma = (0.25f64 / 200.0).sqrt();
    assert!((acc - 0.5).abs() <= 3.0 * sigma, "{acc}");
}

#[test]
fn pca_keeps_planar_distances() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let d = 7;
    // Orthonormal pair by Gram-Schmidt.
    let a = Array1::from_shape_fn(d, |_| gaussian(&mut rng));
    let a = &a / a.dot(&a).sqrt();
    let b = Array1::from_shape_fn(d, |_| gaussian(&mut rng));
    let b = &b - &(&a * a.dot(&b));
    let b = &b / b.dot(&b).sqrt();
    let offset = Array1::from_shape_fn(d, |_| gaussian(&mut rng));
    let n = 30;
    let plane: Vec<(f64, f64)> = (0..n).map(|_| (3.0 * gaussian(&mut rng), gaussian(&mut rng))).collect();
    let mut v = Array2::zeros((n, d));
    for (i, &(x, y)) in plane.iter().enumerate() {
        v.row_mut(i).assign(&(&offset + &(&a * x) + &(&b * y)));
    }
    let e = LabeledEmbeddings::unnamed(v.clone(), vec![0; n]).unwrap();
    let p = pca2d(&e).unwrap();
    for i in 0..n {
        for j in 0..n {
            let orig = (&v.row(i) - &v.row(j)).mapv(|x| x * x).sum().sqrt();
            let proj = (&p.row(i) - &p.row(j)).mapv(|x| x * x).sum().sqrt();
            assert!((orig - proj).abs() < 1e-9, "{orig} vs {proj}");
        }
    }
    for c in 0..2 {
        let col = p.column(c);
        let peak = col.iter().copied().fold(0.0_f64, |m, x| if x.abs() > m.abs() { x } else { m });
        assert!(peak > 0.0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(50))]

    #[test]
    fn recall_is_monotone_in_k(seed in 0u64..u64::MAX) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let db = random_set(&mut rng, 40, 5, 5);
        let q = random_set(&mut rng, 20, 5, 5);
        let ks: Vec<usize> = (1..=40).collect();
        let r = knn_recall(&db, &q, &ks, Metric::Cosine).unwrap();
        for w in r.windows(2) {
            prop_assert!(w[0].1 <= w[1].1);
        }
    }

    #[test]
    fn recall_ignores_vector_scale(seed in 0u64..u64::MAX) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let db = random_set(&mut rng, 30, 4, 3);
        let q = random_set(&mut rng, 15, 4, 3);
        let mut scaled = db.clone();
        for mut row in scaled.vectors.rows_mut() {
            row *= rng.gen_range(0.01..100.0);
        }
        let ks = [1, 3, 7];
        let a = knn_recall(&db, &q, &ks, Metric::Cosine).unwrap();
        let b = knn_recall(&scaled, &q, &ks, Metric::Cosine).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn silhouette_ignores_rotation_and_scale(seed in 0u64..u64::MAX, scale in 0.1f64..10.0, angle in 0.0f64..6.3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let e = random_set(&mut rng, 24, 2, 3);
        prop_assert!(e.labels.iter().any(|&l| l == 0));
        let (s, c) = angle.sin_cos();
        let rot = ndarray::array![[c, -s], [s, c]] * scale;
        let moved = e.with_labels(e.labels.clone()).unwrap();
        let moved = LabeledEmbeddings { vectors: moved.vectors.dot(&rot), ..moved };
        match (silhouette(&e), silhouette(&moved)) {
            (Ok(a), Ok(b)) => prop_assert!((a - b).abs() < 1e-9),
            (a, b) => prop_assert_eq!(a.is_err(), b.is_err()),
        }
    }
}
