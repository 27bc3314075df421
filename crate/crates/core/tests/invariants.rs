use proptest::prelude::*;
use rotex::features::cpsd;
use rotex::rotation::make_rotation_operator;
use rotex::shallowml::{knn1_cityblock, pca_fit};
use rotex::tensor::{xcorr2_valid, CorrMethod, Tensor};

fn tensor(rows: usize, cols: usize) -> impl Strategy<Value = Tensor> {
    prop::collection::vec(-1.0f64..1.0, rows * cols).prop_map(move |v| Tensor::from_vec(&[rows, cols], v).unwrap())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn rotation_adjoint(n in prop::sample::select(vec![3usize, 5, 7, 11]), angle in 0.0f64..6.3, seed in any::<u64>()) {
        let op = make_rotation_operator(n, angle).unwrap();
        let mut s = seed;
        let mut next = || { s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407); (s >> 11) as f64 / (1u64 << 53) as f64 - 0.5 };
        let f: Vec<f64> = (0..n * n).map(|_| next()).collect();
        let g: Vec<f64> = (0..n * n).map(|_| next()).collect();
        let (mut rf, mut rtg) = (vec![0.0; n * n], vec![0.0; n * n]);
        op.apply_slice(&f, &mut rf);
        op.adjoint_slice(&g, &mut rtg);
        prop_assert!((dot(&rf, &g) - dot(&f, &rtg)).abs() < 1e-12);
    }

    #[test]
    fn rotation_is_linear(f in prop::collection::vec(-1.0f64..1.0, 25), g in prop::collection::vec(-1.0f64..1.0, 25), a in -3.0f64..3.0, angle in 0.0f64..6.3) {
        let op = make_rotation_operator(5, angle).unwrap();
        let mix: Vec<f64> = f.iter().zip(&g).map(|(x, y)| a * x + y).collect();
        let (mut rf, mut rg, mut rm) = (vec![0.0; 25], vec![0.0; 25], vec![0.0; 25]);
        op.apply_slice(&f, &mut rf);
        op.apply_slice(&g, &mut rg);
        op.apply_slice(&mix, &mut rm);
        for i in 0..25 {
            prop_assert!((rm[i] - (a * rf[i] + rg[i])).abs() < 1e-12);
        }
    }

    #[test]
    fn fft_matches_direct(img in tensor(13, 17), ker in tensor(4, 6)) {
        let a = xcorr2_valid(&img, &ker, CorrMethod::Direct).unwrap();
        let b = xcorr2_valid(&img, &ker, CorrMethod::Fft).unwrap();
        prop_assert_eq!(a.shape(), &[10, 12]);
        for (x, y) in a.data().iter().zip(b.data()) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn cpsd_is_symmetric_and_scales(x in tensor(8, 8), y in tensor(8, 8), k in 0.1f64..5.0) {
        let xy = cpsd(&x, &y).unwrap();
        prop_assert!((xy - cpsd(&y, &x).unwrap()).abs() <= 1e-12 * xy.max(1.0));
        let scaled = y.map(|v| k * v);
        prop_assert!((cpsd(&x, &scaled).unwrap() - k * xy).abs() <= 1e-10 * xy.max(1.0));
        prop_assert!(xy >= 0.0);
    }

    #[test]
    fn cpsd_ignores_circular_shift(x in tensor(8, 8), y in tensor(3, 3), dr in 0usize..8, dc in 0usize..8) {
        let shifted = Tensor::from_fn(8, 8, |r, c| x.at((r + dr) % 8, (c + dc) % 8));
        let a = cpsd(&x, &y).unwrap();
        prop_assert!((a - cpsd(&shifted, &y).unwrap()).abs() <= 1e-10 * a.max(1.0));
    }

    #[test]
    fn knn_is_scale_and_shift_invariant(
        train in prop::collection::vec(prop::collection::vec(-8i32..8, 3), 2..20),
        query in prop::collection::vec(-8i32..8, 3),
        k in 1i32..5,
        shift in -4i32..4,
    ) {
        let to_f = |v: &Vec<i32>, k: i32, s: i32| v.iter().map(|&x| (k * x + s) as f64).collect::<Vec<f64>>();
        let labels: Vec<usize> = (0..train.len()).collect();
        let base: Vec<Vec<f64>> = train.iter().map(|r| to_f(r, 1, 0)).collect();
        let moved: Vec<Vec<f64>> = train.iter().map(|r| to_f(r, k, shift)).collect();
        let a = knn1_cityblock(&base, &labels, &to_f(&query, 1, 0)).unwrap();
        let b = knn1_cityblock(&moved, &labels, &to_f(&query, k, shift)).unwrap();
        prop_assert_eq!(a, b);
        prop_assert_eq!(knn1_cityblock(&base, &labels, &base[a]).unwrap(), base.iter().position(|r| *r == base[a]).unwrap());
    }

    #[test]
    fn pca_components_are_orthonormal(rows in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 4), 6..20)) {
        let pca = pca_fit(&rows, 3).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let want = f64::from(u8::from(i == j));
                prop_assert!((dot(pca.component(i), pca.component(j)) - want).abs() < 1e-9);
            }
        }
        prop_assert!(pca.eigenvalues.windows(2).all(|w| w[0] >= w[1] - 1e-12));
    }
}
