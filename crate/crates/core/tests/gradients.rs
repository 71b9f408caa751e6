mod support;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use rtext_core::fusion::{fusion_backward, fusion_forward, FusionDims, GateVariant};
use rtext_core::optim::ParamTensors;
use rtext_core::tensor::DenseMatrix;
use rtext_core::train::{cross_entropy_loss, triplet_loss, TripletBatch};
use rtext_oracle as oracle;
use support::*;

const VARIANTS: [(GateVariant, bool); 4] = [
    (GateVariant::Paper, false),
    (GateVariant::Paper, true),
    (GateVariant::Tirg, false),
    (GateVariant::Tirg, true),
];

fn dims8() -> FusionDims {
    FusionDims {
        image: 8,
        text: 8,
        hidden: 8,
        hidden2: 8,
    }
}

#[test]
fn forward_matches_straight_line_oracle() {
    for (gate, l2) in VARIANTS {
        for seed in 0..10 {
            let params = random_params(dims8(), gate, l2, seed);
            let naive = naive_from(&params);
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 50);
            let (img, txt) = (uniform(&mut rng, 8), uniform(&mut rng, 8));
            let (out, _) = fusion_forward(&params, &img, &txt).unwrap();
            for (a, b) in out.iter().zip(naive.forward(&img, &txt)) {
                assert!((a - b).abs() < 1e-6, "{gate} l2={l2} seed {seed}: {a} vs {b}");
            }
        }
    }
}

#[test]
fn shared_layer_gradient_is_sum_of_untied_copies() {
    let dims = FusionDims {
        image: 8,
        text: 6,
        hidden: 7,
        hidden2: 5,
    };
    for (gate, l2) in VARIANTS {
        for seed in 0..10 {
            let params = random_params(dims, gate, l2, seed);
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 70);
            let (img, txt, up) = (uniform(&mut rng, 8), uniform(&mut rng, 6), uniform(&mut rng, 8));
            let (_, trace) = fusion_forward(&params, &img, &txt).unwrap();
            let (g, gi, gt) = fusion_backward(&trace, &params, &up).unwrap();
            let o = naive_from(&params).backward_untied(&img, &txt, &up);

            let flat = |r: &Vec<Vec<f64>>| r.iter().flatten().copied().collect::<Vec<_>>();
            let lin_sum: Vec<f64> = flat(&o.lin_ref_w)
                .iter()
                .zip(flat(&o.lin_res_w))
                .map(|(a, b)| a + b)
                .collect();
            let lin_b_sum: Vec<f64> = o.lin_ref_b.iter().zip(&o.lin_res_b).map(|(a, b)| a + b).collect();
            let expected: Vec<(&str, Vec<f64>)> = vec![
                ("lin.weight", lin_sum),
                ("lin.bias", lin_b_sum),
                ("im1.weight", flat(&o.im1_w)),
                ("im1.bias", o.im1_b.clone()),
                ("t1.weight", flat(&o.t1_w)),
                ("t1.bias", o.t1_b.clone()),
                ("t2.weight", flat(&o.t2_w)),
                ("t2.bias", o.t2_b.clone()),
                ("w_r", vec![o.w_r]),
                ("w_d", vec![o.w_d]),
                ("image", o.image.clone()),
                ("text", o.text.clone()),
            ];
            let mut got = g.tensors();
            got.push(("image", gi.as_slice()));
            got.push(("text", gt.as_slice()));
            for ((name, want), (gname, have)) in expected.iter().zip(&got) {
                assert_eq!(name, gname);
                for (a, b) in want.iter().zip(have.iter()) {
                    assert!((a - b).abs() < 1e-6, "{gate} l2={l2} seed {seed} {name}: {a} vs {b}");
                }
            }
        }
    }
}

#[test]
fn single_sample_backward_matches_finite_differences() {
    let dims = FusionDims {
        image: 8,
        text: 5,
        hidden: 7,
        hidden2: 6,
    };
    for (gate, l2) in VARIANTS {
        for seed in 0..4 {
            let params = random_params(dims, gate, l2, seed);
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 90);
            let (img, txt, up) = (uniform(&mut rng, 8), uniform(&mut rng, 5), uniform(&mut rng, 8));
            let (_, trace) = fusion_forward(&params, &img, &txt).unwrap();
            let (g, gi, gt) = fusion_backward(&trace, &params, &up).unwrap();
            let project = |out: &[f64]| out.iter().zip(&up).map(|(a, b)| a * b).sum::<f64>();
            let (err, at) = fd_fusion_params(&params, &g, |p| project(&fusion_forward(p, &img, &txt).unwrap().0));
            assert!(err < 1e-3, "{gate} l2={l2} seed {seed}: {err} at {at}");
            for i in 0..8 {
                let fd = oracle::central_difference(
                    |x| {
                        let mut v = img.clone();
                        v[i] = x;
                        project(&fusion_forward(&params, &v, &txt).unwrap().0)
                    },
                    img[i],
                    FD_STEP,
                );
                assert!(oracle::relative_error(gi[i], fd, REL_FLOOR) < 1e-3);
            }
            for i in 0..5 {
                let fd = oracle::central_difference(
                    |x| {
                        let mut v = txt.clone();
                        v[i] = x;
                        project(&fusion_forward(&params, &img, &v).unwrap().0)
                    },
                    txt[i],
                    FD_STEP,
                );
                assert!(oracle::relative_error(gt[i], fd, REL_FLOOR) < 1e-3);
            }
        }
    }
}

#[test]
fn objectives_match_finite_differences_for_every_variant() {
    for (gate, l2) in VARIANTS {
        for seed in 0..3 {
            let case = gradient_case(seed, 8, 12, gate, l2);
            assert!(case.n_triplets > 0);
            assert!(case.max_error() < 1e-3, "{gate} l2={l2} seed {seed}: {case:?}");
        }
    }
}

#[test]
fn triplet_loss_matches_oracle_and_differences() {
    for seed in 0..10 {
        let emb = oracle::uniform_rows(seed, 9, 4);
        let triplets: Vec<(usize, usize, usize)> = (0..9)
            .flat_map(|a| (0..9).map(move |p| (a, p)))
            .filter(|&(a, p)| a != p)
            .map(|(a, p)| (a, p, (a + p + seed as usize) % 9))
            .collect();
        let mut batch = TripletBatch::default();
        for &(a, p, n) in &triplets {
            batch.push(a, p, n);
        }
        let m = DenseMatrix::from_rows(&emb).unwrap();
        let got = triplet_loss(&m, &batch, 0.2).unwrap();
        let (loss, grad) = oracle::triplet_loss(&emb, &triplets, 0.2);
        assert!((got.loss - loss).abs() < 1e-9);
        for (r, row) in grad.iter().enumerate() {
            for (c, g) in row.iter().enumerate() {
                assert!((got.grad.get(r, c) - g).abs() < 1e-9);
                let fd = oracle::central_difference(
                    |x| {
                        let mut e = emb.clone();
                        e[r][c] = x;
                        oracle::triplet_loss(&e, &triplets, 0.2).0
                    },
                    emb[r][c],
                    FD_STEP,
                );
                assert!(oracle::relative_error(*g, fd, REL_FLOOR) < 1e-3);
            }
        }
    }
}

#[test]
fn cross_entropy_matches_oracle_and_differences() {
    for seed in 0..10 {
        let logits: Vec<Vec<f64>> = oracle::uniform_rows(seed, 6, 5)
            .into_iter()
            .map(|r| r.into_iter().map(|v| 4.0 * v).collect())
            .collect();
        let labels = oracle::random_labels(seed + 1, 6, 5);
        let m = DenseMatrix::from_rows(&logits).unwrap();
        let (loss, grad) = cross_entropy_loss(&m, &labels).unwrap();
        let (want, want_grad) = oracle::cross_entropy(&logits, &labels);
        assert!((loss - want).abs() < 1e-9);
        for r in 0..6 {
            for c in 0..5 {
                assert!((grad.get(r, c) - want_grad[r][c]).abs() < 1e-9);
                let fd = oracle::central_difference(
                    |x| {
                        let mut l = logits.clone();
                        l[r][c] = x;
                        oracle::cross_entropy(&l, &labels).0
                    },
                    logits[r][c],
                    FD_STEP,
                );
                assert!(oracle::relative_error(grad.get(r, c), fd, REL_FLOOR) < 1e-3);
            }
        }
    }
}
