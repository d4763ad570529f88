use proptest::prelude::*;
use rand::Rng;
use xmf_core::rng::rng_from;
use xmf_core::tensor::io::{read_tensor, write_tensor};
use xmf_core::tensor::{Graph, Tensor};

fn softmax_of(row: &[f64]) -> Vec<f64> {
    let mut g = Graph::new();
    let x = g.input(Tensor::new(&[1, row.len()], row.to_vec()).unwrap());
    let s = g.softmax_rows(x).unwrap();
    g.value(s).data().to_vec()
}

#[test]
fn softmax_examples() {
    let p = softmax_of(&[1.0, 2.0, 3.0]);
    for (a, b) in p.iter().zip([0.09003, 0.24473, 0.66524]) {
        assert!((a - b).abs() < 1e-5, "{p:?}");
    }
    assert_eq!(softmax_of(&[1000.0, 1000.0]), vec![0.5, 0.5]);
}

#[test]
fn conv_examples() {
    let mut g = Graph::new();
    let x = g.input(Tensor::new(&[1, 1, 3, 3], (1..=9).map(f64::from).collect()).unwrap());
    let k = g.input(Tensor::new(&[1, 1, 1, 1], vec![1.0]).unwrap());
    let y = g.conv2d(x, k, 1).unwrap();
    assert_eq!(g.value(y).data(), g.value(x).data());

    let x = g.input(Tensor::full(&[1, 1, 2, 2], 1.0));
    let k = g.input(Tensor::full(&[1, 1, 2, 2], 1.0));
    let y = g.conv2d(x, k, 1).unwrap();
    assert_eq!(g.value(y).data(), &[4.0]);

    let big = g.input(Tensor::full(&[1, 1, 3, 3], 1.0));
    assert!(g.conv2d(x, big, 1).is_err());
}

/// Quadruple-loop valid cross-correlation.
fn conv_oracle(x: &Tensor, k: &Tensor, stride: usize) -> Vec<f64> {
    let (n, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (o, kh, kw) = (k.shape()[0], k.shape()[2], k.shape()[3]);
    let (ho, wo) = ((h - kh) / stride + 1, (w - kw) / stride + 1);
    let mut out = vec![0.0; n * o * ho * wo];
    for b in 0..n {
        for oc in 0..o {
            for i in 0..ho {
                for j in 0..wo {
                    let mut s = 0.0;
                    for ic in 0..c {
                        for di in 0..kh {
                            for dj in 0..kw {
                                s += x.data()[((b * c + ic) * h + i * stride + di) * w + j * stride + dj]
                                    * k.data()[((oc * c + ic) * kh + di) * kw + dj];
                            }
                        }
                    }
                    out[((b * o + oc) * ho + i) * wo + j] = s;
                }
            }
        }
    }
    out
}

#[test]
fn conv_matches_loop_oracle() {
    let mut rng = rng_from(7);
    for stride in [1, 2, 3] {
        for _ in 0..10 {
            let x = Tensor::new(&[2, 1, 5, 5], (0..50).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
            let k = Tensor::new(&[2, 1, 3, 3], (0..18).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
            let mut g = Graph::new();
            let (xv, kv) = (g.input(x.clone()), g.input(k.clone()));
            let y = g.conv2d(xv, kv, stride).unwrap();
            let want = conv_oracle(&x, &k, stride);
            for (a, b) in g.value(y).data().iter().zip(&want) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn dropout_behaviour() {
    let mut rng = rng_from(3);
    let x = Tensor::full(&[100_000], 1.0);
    let mut g = Graph::new();
    let xv = g.input(x.clone());
    let eval = g.dropout(xv, 0.3, false, &mut rng).unwrap();
    assert_eq!(g.value(eval).data(), x.data());
    let zero = g.dropout(xv, 0.0, true, &mut rng).unwrap();
    assert_eq!(g.value(zero).data(), x.data());
    let half = g.dropout(xv, 0.5, true, &mut rng).unwrap();
    let zeros = g.value(half).data().iter().filter(|&&v| v == 0.0).count() as f64 / 1e5;
    assert!((zeros - 0.5).abs() < 0.01, "{zeros}");
    assert!(g.value(half).data().iter().all(|&v| v == 0.0 || v == 2.0));
    assert!(g.dropout(xv, 1.0, true, &mut rng).is_err());
}

#[test]
fn cross_entropy_value() {
    let mut g = Graph::new();
    let l = g.input(Tensor::new(&[2, 3], vec![0.0, 0.0, 0.0, 1.0, 2.0, 3.0]).unwrap());
    let ce = g.cross_entropy(l, &[0, 2]).unwrap();
    let lse = (1f64.exp() + 2f64.exp() + 3f64.exp()).ln();
    let want = (3f64.ln() + (lse - 3.0)) / 2.0;
    assert!((g.value(ce).item() - want).abs() < 1e-12);
    assert!(g.cross_entropy(l, &[0, 3]).is_err());
}

proptest! {
    #[test]
    fn tensor_io_round_trip(shape in proptest::collection::vec(1usize..5, 1..4), seed in any::<u64>()) {
        let n: usize = shape.iter().product();
        let mut rng = rng_from(seed);
        let t = Tensor::new(&shape, (0..n).map(|_| rng.random_range(-1e6..1e6)).collect()).unwrap();
        let mut buf = Vec::new();
        write_tensor(&mut buf, &t).unwrap();
        let back = read_tensor(&mut buf.as_slice()).unwrap();
        prop_assert_eq!(back.shape(), t.shape());
        prop_assert!(back.data().iter().zip(t.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn softmax_rows_are_distributions(row in proptest::collection::vec(-50.0f64..50.0, 1..12), shift in -500.0f64..500.0) {
        let p = softmax_of(&row);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(p.iter().all(|&v| (0.0..=1.0).contains(&v)));
        let shifted: Vec<f64> = row.iter().map(|v| v + shift).collect();
        let q = softmax_of(&shifted);
        for (a, b) in p.iter().zip(&q) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn ops_keep_values_finite(data in proptest::collection::vec(-1e3f64..1e3, 6)) {
        let mut g = Graph::new();
        let x = g.input(Tensor::new(&[2, 3], data).unwrap());
        let s = g.softmax_rows(x).unwrap();
        let r = g.relu(x).unwrap();
        let m = g.mul(s, r).unwrap();
        let ce = g.cross_entropy(x, &[0, 1]).unwrap();
        prop_assert!(g.value(m).is_finite());
        prop_assert!(g.value(ce).is_finite());
    }
}
