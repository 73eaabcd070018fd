use fixformer::kernels::{layernorm_ref, softmax_fixed, SoftmaxConfig};
use fixformer::pipeline::Reorg;
use fixformer::qcore::{q, FixedTensor, RealTensor};
use proptest::prelude::*;

fn sorted(v: &[i64]) -> Vec<i64> {
    let mut v = v.to_vec();
    v.sort_unstable();
    v
}

fn tensor(dims: Vec<usize>, seed: u64) -> FixedTensor {
    let n: usize = dims.iter().product();
    let raw = (0..n as u64).map(|i| ((i.wrapping_mul(2654435761) ^ seed) % 65536) as i64 - 32768).collect();
    FixedTensor::with_format(dims, q("S7.8"), raw).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn permute_preserves_values(dims in prop::collection::vec(1usize..5, 1..5), seed in any::<u64>(), rot in 0usize..4) {
        let x = tensor(dims.clone(), seed);
        let rank = dims.len();
        let axes: Vec<usize> = (0..rank).map(|i| (i + rot) % rank).collect();
        let y = x.permute(&axes).unwrap();
        prop_assert_eq!(sorted(y.raw()), sorted(x.raw()));
        let back: Vec<usize> = (0..rank).map(|i| axes.iter().position(|&a| a == i).unwrap()).collect();
        prop_assert_eq!(y.permute(&back).unwrap(), x);
    }

    #[test]
    fn split_concat_preserve_values(rows in 1usize..9, cols in 1usize..9, cut in 0usize..9, seed in any::<u64>()) {
        let x = tensor(vec![rows, cols], seed);
        let cut = cut.min(cols);
        let parts = x.split(1, &[cut, cols - cut]).unwrap();
        let mut joined: Vec<i64> = parts.iter().flat_map(|p| p.raw().to_vec()).collect();
        joined.sort_unstable();
        prop_assert_eq!(joined, sorted(x.raw()));
        prop_assert_eq!(FixedTensor::concatenate(&parts, 1).unwrap(), x);
    }

    #[test]
    fn windows_preserve_values(nh in 1usize..4, nw in 1usize..4, win in 1usize..4, c in 1usize..3, seed in any::<u64>()) {
        let x = tensor(vec![nh * win, nw * win, c], seed);
        let y = x.window_partition(win).unwrap();
        prop_assert_eq!(sorted(y.raw()), sorted(x.raw()));
    }

    #[test]
    fn layernorm_ref_is_scale_invariant(v in prop::collection::vec(-100.0f64..100.0, 4..64), a in 0.1f64..10.0) {
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / v.len() as f64;
        prop_assume!(a * a * var > 1.0);
        let ones = vec![1.0; v.len()];
        let zeros = vec![0.0; v.len()];
        let eps = 1e-12;
        let y = layernorm_ref(&RealTensor::from_row(v.clone()).unwrap(), &ones, &zeros, eps).unwrap();
        let ys = layernorm_ref(&RealTensor::from_row(v.iter().map(|x| a * x).collect()).unwrap(), &ones, &zeros, eps).unwrap();
        for (p, r) in y.values().iter().zip(ys.values()) {
            prop_assert!((p - r).abs() <= 1e-9);
        }
    }

    #[test]
    fn softmax_sums_to_one(raw in prop::collection::vec(-32768i64..=32767, 1..=256)) {
        let n = raw.len();
        let x = FixedTensor::with_format(vec![n], q("S6.9"), raw).unwrap();
        let y = softmax_fixed(&x, &SoftmaxConfig::new(q("S6.9"), q("U1.15"))).unwrap();
        let sum: f64 = y.dequantize().values().iter().sum();
        prop_assert!((sum - 1.0).abs() <= n as f64 * 2f64.powi(-15) + 0.01);
    }
}
