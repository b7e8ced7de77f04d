//! Minimal reverse-mode automatic differentiation.
//!
//! Just enough surface for the toy driving model: rank-0/1/2 f64 tensors,
//! an eager tape graph, named parameter sets with plain-gradient updates,
//! and a finite-difference oracle used by the tests.

mod gradcheck;
mod graph;
mod params;
mod tensor;

pub use gradcheck::{central_difference, max_relative_error, relative_error};
pub use graph::{Attention, Graph, NodeId};
pub(crate) use graph::{entropy_raw, softmax_row_in_place};
pub use params::{ParamBinding, ParamEntry, ParamSet};
pub use tensor::Tensor;


#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{KeyedRng, Purpose};

    fn rand_vec(rng: &mut KeyedRng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.range(-2.0, 2.0)).collect()
    }

    /// Finite-difference check of a scalar function of one flat input.
    fn fd_check(build: &dyn Fn(&[f64], &mut Graph) -> NodeId, x: &[f64]) -> f64 {
        let mut g = Graph::new();
        let loss = build(x, &mut g);
        // Locate the leaf: build must create it as node 0.
        let leaf = NodeId(0);
        g.backward(loss).unwrap();
        let analytic = g.grad(leaf).expect("input must receive grad").data().to_vec();
        let mut f = |probe: &[f64]| {
            let mut g = Graph::new();
            let loss = build(probe, &mut g);
            g.value(loss).item()
        };
        let numeric = central_difference(&mut f, x, 1e-5);
        max_relative_error(&analytic, &numeric)
    }

    #[test]
    fn matmul_identity_and_annihilator() {
        let mut g = Graph::new();
        let i = g.constant(Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap());
        let x = g.constant(Tensor::matrix(2, 1, vec![3.0, 4.0]).unwrap());
        let y = g.matmul(i, x).unwrap();
        assert_eq!(g.value(y).data(), &[3.0, 4.0]);

        let z = g.constant(Tensor::zeros(vec![2, 2]));
        let zy = g.matmul(z, x).unwrap();
        assert_eq!(g.value(zy).data(), &[0.0, 0.0]);
    }

    #[test]
    fn matmul_shape_mismatch_names_both_shapes() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::zeros(vec![2, 3]));
        let b = g.constant(Tensor::zeros(vec![2, 3]));
        let err = g.matmul(a, b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]"), "{msg}");
    }

    #[test]
    fn matmul_gradients_match_finite_differences() {
        // 3x4 times a fixed 4x2, random projection to scalar.
        let mut rng = KeyedRng::from_key(&[Purpose::Test as u64, 1]);
        let b_data = rand_vec(&mut rng, 8);
        let c_data = rand_vec(&mut rng, 6);
        for seed in 0..20 {
            let mut r = KeyedRng::from_key(&[Purpose::Test as u64, 2, seed]);
            let a_data = rand_vec(&mut r, 12);
            let b = b_data.clone();
            let c = c_data.clone();
            let build = move |x: &[f64], g: &mut Graph| {
                let a = g.leaf(Tensor::matrix(3, 4, x.to_vec()).unwrap());
                let bb = g.constant(Tensor::matrix(4, 2, b.clone()).unwrap());
                let y = g.matmul(a, bb).unwrap();
                let cc = g.constant(Tensor::matrix(3, 2, c.clone()).unwrap());
                let w = g.mul(y, cc).unwrap();
                g.sum(w)
            };
            let err = fd_check(&build, &a_data);
            assert!(err < 1e-4, "matmul grad err {err} at seed {seed}");
        }
    }

    #[test]
    fn softmax_constant_input_is_uniform() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::vector(vec![3.7; 6]));
        let y = g.softmax(x).unwrap();
        for &p in g.value(y).data() {
            assert!((p - 1.0 / 6.0).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_closed_form_two_logits() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::vector(vec![2.0f64.ln(), 0.0]));
        let y = g.softmax(x).unwrap();
        let v = g.value(y).data();
        assert!((v[0] - 2.0 / 3.0).abs() < 1e-12);
        assert!((v[1] - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn softmax_peaked_logit_matches_direct_evaluation() {
        // Independent route: the unstabilized definition evaluated directly.
        let e10 = 10.0f64.exp();
        let expect0 = e10 / (e10 + 5.0);
        let mut g = Graph::new();
        let x = g.constant(Tensor::vector(vec![10.0, 0.0, 0.0, 0.0, 0.0, 0.0]));
        let y = g.softmax(x).unwrap();
        assert!((g.value(y).data()[0] - expect0).abs() < 1e-12);
        assert!((expect0 - 0.999_773_1).abs() < 1e-6);
    }

    #[test]
    fn softmax_empty_input_is_dimension_error() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::vector(vec![]));
        assert!(g.softmax(x).is_err());
    }

    #[test]
    fn entropy_uniform_and_one_hot() {
        let mut g = Graph::new();
        let u = g.constant(Tensor::vector(vec![1.0 / 6.0; 6]));
        let h = g.entropy(u).unwrap();
        assert!((g.value(h).item() - 6.0f64.ln()).abs() < 1e-12);

        let onehot = g.constant(Tensor::vector(vec![0.0, 1.0, 0.0]));
        let h0 = g.entropy(onehot).unwrap();
        assert_eq!(g.value(h0).item(), 0.0);
    }

    #[test]
    fn entropy_of_peaked_distribution_matches_direct_evaluation() {
        // Direct accumulation of -sum p ln p, independent of the graph op.
        let p: Vec<f64> = vec![0.99966, 0.000068, 0.000068, 0.000068, 0.000068, 0.000068];
        let direct: f64 = -p.iter().filter(|&&v| v > 0.0).map(|&v| v * v.ln()).sum::<f64>();
        let mut g = Graph::new();
        let pn = g.constant(Tensor::vector(p));
        let h = g.entropy(pn).unwrap();
        assert!((g.value(h).item() - direct).abs() < 1e-15);
        assert!((direct - 3.602_7e-3).abs() < 1e-6, "direct {direct}");
    }

    #[test]
    fn entropy_rejects_unnormalized_input() {
        let mut g = Graph::new();
        let p = g.constant(Tensor::vector(vec![0.5, 0.6]));
        assert!(matches!(g.entropy(p), Err(crate::error::Error::Contract(_))));
    }

    #[test]
    fn l1_distance_arithmetic_identity_and_tie_subgradient() {
        let mut g = Graph::new();
        let a = g.leaf(Tensor::vector(vec![1.0, 2.0]));
        let d = g.l1_to_const(a, &Tensor::vector(vec![1.5, 1.8])).unwrap();
        assert!((g.value(d).item() - 0.7).abs() < 1e-15);

        let mut g = Graph::new();
        let a = g.leaf(Tensor::vector(vec![1.0, 2.0]));
        let d = g.l1_to_const(a, &Tensor::vector(vec![1.0, 2.0])).unwrap();
        assert_eq!(g.value(d).item(), 0.0);
        g.backward(d).unwrap();
        assert_eq!(g.grad(a).unwrap().data(), &[0.0, 0.0]);
    }

    #[test]
    fn backward_square_and_constant() {
        let mut g = Graph::new();
        let theta = g.leaf(Tensor::scalar(3.0));
        let sq = g.mul(theta, theta).unwrap();
        g.backward(sq).unwrap();
        assert_eq!(g.grad(theta).unwrap().item(), 6.0);

        let mut g = Graph::new();
        let theta = g.leaf(Tensor::scalar(3.0));
        let c = g.constant(Tensor::scalar(5.0));
        let loss = g.mul(c, c).unwrap();
        g.backward(loss).unwrap();
        assert!(g.grad(theta).is_none(), "constant loss leaves no grad");
    }

    #[test]
    fn backward_accumulates_on_reused_node() {
        // loss = x*x + x, so dloss/dx = 2x + 1 (hand expansion).
        let mut g = Graph::new();
        let x = g.leaf(Tensor::scalar(1.7));
        let xx = g.mul(x, x).unwrap();
        let loss = g.add(xx, x).unwrap();
        g.backward(loss).unwrap();
        assert!((g.grad(x).unwrap().item() - (2.0 * 1.7 + 1.0)).abs() < 1e-15);
    }

    #[test]
    fn second_backward_without_reset_is_state_error() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::scalar(2.0));
        let loss = g.mul(x, x).unwrap();
        g.backward(loss).unwrap();
        assert!(matches!(g.backward(loss), Err(crate::error::Error::State(_))));
        g.reset_grads();
        g.backward(loss).unwrap();
        assert_eq!(g.grad(x).unwrap().item(), 4.0);
    }

    #[test]
    fn non_scalar_backward_root_is_contract_error() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::vector(vec![1.0, 2.0]));
        assert!(matches!(g.backward(x), Err(crate::error::Error::Contract(_))));
    }

    #[test]
    fn every_primitive_matches_finite_differences() {
        struct Case {
            name: &'static str,
            n: usize,
            build: Box<dyn Fn(&[f64], &mut Graph) -> NodeId>,
        }
        // Each case: leaf is node 0, output reduced to a scalar through a
        // fixed random projection so the whole Jacobian is probed.
        let mut proj_rng = KeyedRng::from_key(&[Purpose::Test as u64, 99]);
        let proj6 = rand_vec(&mut proj_rng, 6);
        let proj4 = rand_vec(&mut proj_rng, 4);
        let proj12 = rand_vec(&mut proj_rng, 12);
        let other6 = rand_vec(&mut proj_rng, 6);

        let p6 = proj6.clone();
        let project6 = move |g: &mut Graph, y: NodeId| {
            let shape = g.value(y).shape().to_vec();
            let c = g.constant(Tensor::new(shape, p6[..g.value(y).numel()].to_vec()).unwrap());
            let w = g.mul(y, c).unwrap();
            g.sum(w)
        };

        let cases: Vec<Case> = vec![
            Case {
                name: "add",
                n: 6,
                build: {
                    let o = other6.clone();
                    let pr = project6.clone();
                    Box::new(move |x, g| {
                        let a = g.leaf(Tensor::matrix(2, 3, x.to_vec()).unwrap());
                        let b = g.constant(Tensor::matrix(2, 3, o.clone()).unwrap());
                        let y = g.add(a, b).unwrap();
                        pr(g, y)
                    })
                },
            },
            Case {
                name: "sub",
                n: 6,
                build: {
                    let o = other6.clone();
                    let pr = project6.clone();
                    Box::new(move |x, g| {
                        let a = g.leaf(Tensor::matrix(2, 3, x.to_vec()).unwrap());
                        let b = g.constant(Tensor::matrix(2, 3, o.clone()).unwrap());
                        let y = g.sub(b, a).unwrap();
                        pr(g, y)
                    })
                },
            },
            Case {
                name: "mul",
                n: 6,
                build: {
                    let o = other6.clone();
                    let pr = project6.clone();
                    Box::new(move |x, g| {
                        let a = g.leaf(Tensor::matrix(2, 3, x.to_vec()).unwrap());
                        let b = g.constant(Tensor::matrix(2, 3, o.clone()).unwrap());
                        let y = g.mul(a, b).unwrap();
                        pr(g, y)
                    })
                },
            },
            Case {
                name: "scale",
                n: 6,
                build: {
                    let pr = project6.clone();
                    Box::new(move |x, g| {
                        let a = g.leaf(Tensor::matrix(2, 3, x.to_vec()).unwrap());
                        let y = g.scale(a, -1.37);
                        pr(g, y)
                    })
                },
            },
            Case {
                name: "transpose",
                n: 6,
                build: {
                    let pr = project6.clone();
                    Box::new(move |x, g| {
                        let a = g.leaf(Tensor::matrix(2, 3, x.to_vec()).unwrap());
                        let y = g.transpose(a).unwrap();
                        pr(g, y)
                    })
                },
            },
            Case {
                name: "tanh",
                n: 6,
                build: {
                    let pr = project6.clone();
                    Box::new(move |x, g| {
                        let a = g.leaf(Tensor::matrix(2, 3, x.to_vec()).unwrap());
                        let y = g.tanh(a);
                        pr(g, y)
                    })
                },
            },
            Case {
                name: "sigmoid",
                n: 6,
                build: {
                    let pr = project6.clone();
                    Box::new(move |x, g| {
                        let a = g.leaf(Tensor::matrix(2, 3, x.to_vec()).unwrap());
                        let y = g.sigmoid(a);
                        pr(g, y)
                    })
                },
            },
            Case {
                name: "softmax_rows",
                n: 6,
                build: {
                    let pr = project6.clone();
                    Box::new(move |x, g| {
                        let a = g.leaf(Tensor::matrix(2, 3, x.to_vec()).unwrap());
                        let y = g.softmax(a).unwrap();
                        pr(g, y)
                    })
                },
            },
            Case {
                name: "entropy_of_softmax",
                n: 6,
                build: Box::new(move |x, g| {
                    let a = g.leaf(Tensor::vector(x.to_vec()));
                    let p = g.softmax(a).unwrap();
                    g.entropy(p).unwrap()
                }),
            },
            Case {
                name: "l1_to_const",
                n: 2,
                build: Box::new(move |x, g| {
                    let a = g.leaf(Tensor::vector(x.to_vec()));
                    g.l1_to_const(a, &Tensor::vector(vec![0.31, -0.74])).unwrap()
                }),
            },
            Case {
                name: "sum",
                n: 6,
                build: Box::new(move |x, g| {
                    let a = g.leaf(Tensor::matrix(3, 2, x.to_vec()).unwrap());
                    g.sum(a)
                }),
            },
            Case {
                name: "reshape",
                n: 6,
                build: {
                    let pr = project6.clone();
                    Box::new(move |x, g| {
                        let a = g.leaf(Tensor::matrix(2, 3, x.to_vec()).unwrap());
                        let y = g.reshape(a, vec![6]).unwrap();
                        pr(g, y)
                    })
                },
            },
            Case {
                name: "concat_rows_with_self",
                n: 6,
                build: {
                    let p = proj12.clone();
                    Box::new(move |x, g| {
                        let a = g.leaf(Tensor::matrix(2, 3, x.to_vec()).unwrap());
                        let y = g.concat_rows(&[a, a]).unwrap();
                        let c = g.constant(Tensor::matrix(4, 3, p.clone()).unwrap());
                        let w = g.mul(y, c).unwrap();
                        g.sum(w)
                    })
                },
            },
            Case {
                name: "concat_cols",
                n: 6,
                build: {
                    let o = other6.clone();
                    let p = proj12.clone();
                    Box::new(move |x, g| {
                        let a = g.leaf(Tensor::matrix(2, 3, x.to_vec()).unwrap());
                        let b = g.constant(Tensor::matrix(2, 3, o.clone()).unwrap());
                        let y = g.concat_cols(&[a, b]).unwrap();
                        let c = g.constant(Tensor::matrix(2, 6, p.clone()).unwrap());
                        let w = g.mul(y, c).unwrap();
                        g.sum(w)
                    })
                },
            },
            Case {
                name: "narrow_rows",
                n: 6,
                build: {
                    let p = proj4.clone();
                    Box::new(move |x, g| {
                        let a = g.leaf(Tensor::matrix(3, 2, x.to_vec()).unwrap());
                        let y = g.narrow_rows(a, 1, 2).unwrap();
                        let c = g.constant(Tensor::matrix(2, 2, p.clone()).unwrap());
                        let w = g.mul(y, c).unwrap();
                        g.sum(w)
                    })
                },
            },
            Case {
                name: "narrow_cols",
                n: 6,
                build: {
                    let p = proj4.clone();
                    Box::new(move |x, g| {
                        let a = g.leaf(Tensor::matrix(2, 3, x.to_vec()).unwrap());
                        let y = g.narrow_cols(a, 1, 2).unwrap();
                        let c = g.constant(Tensor::matrix(2, 2, p.clone()).unwrap());
                        let w = g.mul(y, c).unwrap();
                        g.sum(w)
                    })
                },
            },
            Case {
                name: "bce_with_logits",
                n: 4,
                build: Box::new(move |x, g| {
                    let a = g.leaf(Tensor::vector(x.to_vec()));
                    g.bce_with_logits(a, &Tensor::vector(vec![1.0, 0.0, 1.0, 0.0])).unwrap()
                }),
            },
            Case {
                name: "cross_entropy_logits",
                n: 6,
                build: Box::new(move |x, g| {
                    let a = g.leaf(Tensor::vector(x.to_vec()));
                    g.cross_entropy_logits(a, 2).unwrap()
                }),
            },
            Case {
                name: "mse_to_const",
                n: 6,
                build: {
                    let o = other6.clone();
                    Box::new(move |x, g| {
                        let a = g.leaf(Tensor::matrix(2, 3, x.to_vec()).unwrap());
                        g.mse_to_const(a, &Tensor::matrix(2, 3, o.clone()).unwrap()).unwrap()
                    })
                },
            },
            Case {
                name: "attention_query",
                n: 6,
                build: {
                    let o = other6.clone();
                    let p = proj6.clone();
                    Box::new(move |x, g| {
                        let q = g.leaf(Tensor::matrix(2, 3, x.to_vec()).unwrap());
                        let kv = g.constant(Tensor::matrix(2, 3, o.clone()).unwrap());
                        let att = g.attention(q, kv, kv).unwrap();
                        let c = g.constant(Tensor::matrix(2, 3, p.clone()).unwrap());
                        let w = g.mul(att.output, c).unwrap();
                        g.sum(w)
                    })
                },
            },
            Case {
                name: "attention_keys_values",
                n: 6,
                build: {
                    let o = other6.clone();
                    let p = proj6.clone();
                    Box::new(move |x, g| {
                        let kv = g.leaf(Tensor::matrix(2, 3, x.to_vec()).unwrap());
                        let q = g.constant(Tensor::matrix(2, 3, o.clone()).unwrap());
                        let att = g.attention(q, kv, kv).unwrap();
                        let c = g.constant(Tensor::matrix(2, 3, p.clone()).unwrap());
                        let w = g.mul(att.output, c).unwrap();
                        g.sum(w)
                    })
                },
            },
        ];

        for case in &cases {
            for seed in 0..20u64 {
                let mut r = KeyedRng::from_key(&[Purpose::Test as u64, 3, seed]);
                let x = rand_vec(&mut r, case.n);
                let err = fd_check(&case.build, &x);
                assert!(err < 1e-4, "{}: grad err {err} at seed {seed}", case.name);
            }
        }
    }

    #[test]
    fn attention_weights_are_detached_row_distribution() {
        let mut g = Graph::new();
        let q = g.leaf(Tensor::matrix(1, 4, vec![0.3, -0.1, 0.8, 0.0]).unwrap());
        let kv = g.leaf(Tensor::matrix(3, 4, (0..12).map(|i| i as f64 * 0.1).collect()).unwrap());
        let att = g.attention(q, kv, kv).unwrap();
        let w = &att.weights;
        assert_eq!(w.shape(), &[1, 3]);
        let sum: f64 = w.data().iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
    }
}
