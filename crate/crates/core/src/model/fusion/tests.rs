use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::nn::gradcheck::{check_gradients, check_param_gradients};

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

/// Exhaustive pairwise-distance sort.
fn brute_force_neighbors(f: &Tensor, k: usize, include_self: bool) -> Vec<usize> {
    let c = f.shape()[2];
    let n = f.numel() / c;
    let mut out = Vec::new();
    for i in 0..n {
        let mut all: Vec<(f64, usize)> = (0..n)
            .filter(|&j| include_self || j != i)
            .map(|j| {
                let d = (0..c).map(|ch| (f.data()[i * c + ch] - f.data()[j * c + ch]).powi(2)).sum();
                (d, j)
            })
            .collect();
        all.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        out.extend(all.iter().take(k).map(|p| p.1));
    }
    out
}

/// Direct loops over rows for `mr_conv` with the parameter values in `store`.
fn mr_conv_oracle(f: &Tensor, nbrs: &[usize], k: usize, store: &ParamStore, p: &GgfParams) -> Vec<f64> {
    let c = f.shape()[2];
    let n = f.numel() / c;
    let row = |i: usize| &f.data()[i * c..(i + 1) * c];
    let matvec = |x: &[f64], w: &Tensor, b: Option<&Tensor>| -> Vec<f64> {
        let dout = w.shape()[1];
        (0..dout)
            .map(|o| {
                let s: f64 = x.iter().enumerate().map(|(i, xi)| xi * w.data()[i * dout + o]).sum();
                s + b.map_or(0.0, |b| b.data()[o])
            })
            .collect()
    };
    let mut out = Vec::new();
    for i in 0..n {
        let mut rel = vec![f64::NEG_INFINITY; c];
        for &j in &nbrs[i * k..(i + 1) * k] {
            for ch in 0..c {
                rel[ch] = rel[ch].max(row(i)[ch] - row(j)[ch]);
            }
        }
        let agg = matvec(&rel, store.get(p.w_agg.w), None);
        let mut upd = matvec(&agg, store.get(p.w_update.w), None);
        upd.extend_from_slice(row(i));
        out.extend(matvec(&upd, store.get(p.w_proj.w), p.w_proj.b.map(|b| store.get(b))));
    }
    out
}

fn ggf(c_r: usize, c_t: usize, seed: u64) -> (ParamStore, GgfParams) {
    let mut store = ParamStore::new();
    let p = GgfParams::new(&mut store, &mut ChaCha8Rng::seed_from_u64(seed), "g", c_r, c_t);
    (store, p)
}

#[test]
fn identical_features_pick_lowest_indices() {
    let f = Tensor::full(&[2, 3, 2], 0.5);
    let t = build_graph(&f, GraphSpec { k: 2, ..GraphSpec::default() }).unwrap();
    assert_eq!(&t[0..2], &[1, 2]);
    assert_eq!(&t[2..4], &[0, 2]);
    assert_eq!(&t[10..12], &[0, 1]);
}

#[test]
fn complete_graph_and_bad_k() {
    let f = Tensor::from_fn(&[2, 2, 1], |i| i as f64);
    let t = build_graph(&f, GraphSpec { k: 3, ..GraphSpec::default() }).unwrap();
    for i in 0..4 {
        let mut row = t[i * 3..i * 3 + 3].to_vec();
        row.sort();
        let expect: Vec<usize> = (0..4).filter(|&j| j != i).collect();
        assert_eq!(row, expect);
    }
    for k in [0, 4, 5] {
        let e = build_graph(&f, GraphSpec { k, ..GraphSpec::default() }).unwrap_err();
        assert!(matches!(e, Error::InvalidInput(_)));
    }
    let with_self = GraphSpec {
        k: 4,
        include_self: true,
        ..GraphSpec::default()
    };
    assert!(build_graph(&f, with_self).is_ok());
}

#[test]
fn spatial_window_neighbors() {
    let f = Tensor::zeros(&[3, 3, 1]);
    let spec = GraphSpec {
        k: 4,
        metric: GraphMetric::SpatialWindow,
        include_self: false,
    };
    let t = build_graph(&f, spec).unwrap();
    // Center cell 4: the four edge-adjacent cells.
    assert_eq!(&t[16..20], &[1, 3, 5, 7]);
    // Corner cell 0: two adjacent, then the diagonal, then distance 2.
    assert_eq!(&t[0..4], &[1, 3, 4, 2]);
}

#[test]
fn six_nodes_k2_matches_exhaustive_sort() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let f = rand_tensor(&mut rng, &[2, 3, 4]);
    let t = build_graph(&f, GraphSpec { k: 2, ..GraphSpec::default() }).unwrap();
    assert_eq!(t, brute_force_neighbors(&f, 2, false));
}

#[test]
fn graph_matches_brute_force_with_ties() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for case in 0..40 {
        let (h, w, c) = (rng.random_range(1..5), rng.random_range(2..5), rng.random_range(1..5));
        let mut f = rand_tensor(&mut rng, &[h, w, c]);
        // Quantize half the cases so exact distance ties occur.
        if case % 2 == 0 {
            f = f.map(|v| (v * 2.0).round());
        }
        let n = h * w;
        let include_self = case % 3 == 0;
        let avail = if include_self { n } else { n - 1 };
        for k in 1..=avail.min(15) {
            let spec = GraphSpec {
                k,
                metric: GraphMetric::FeatureEuclidean,
                include_self,
            };
            assert_eq!(
                build_graph(&f, spec).unwrap(),
                brute_force_neighbors(&f, k, include_self),
                "case {case} k {k}"
            );
        }
    }
}

#[test]
fn mr_conv_matches_row_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for case in 0..20 {
        let (h, w, c) = (rng.random_range(1..5), rng.random_range(2..5), rng.random_range(1..6));
        let k = rng.random_range(1..(h * w).min(9));
        let f = rand_tensor(&mut rng, &[h, w, c]);
        let (mut store, p) = ggf(c, 3, case);
        let b = p.w_proj.b.unwrap();
        store.set(b, rand_tensor(&mut rng, &[c]));
        let nbrs = build_graph(&f, GraphSpec { k, ..GraphSpec::default() }).unwrap();
        let mut g = Graph::new();
        let x = g.constant(f.clone());
        let y = mr_conv(&mut g, &store, x, &nbrs, k, &p);
        assert_eq!(g.shape(y), f.shape());
        let expect = mr_conv_oracle(&f, &nbrs, k, &store, &p);
        let err = g.value(y).data().iter().zip(&expect).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-12, "case {case}: {err}");
    }
}

#[test]
fn mr_conv_hand_computed() {
    // 2x2 grid, C = 2, k = 1, identity-like weights.
    let f = Tensor::new(&[2, 2, 2], vec![0.0, 0.0, 1.0, 0.0, 0.0, 2.0, 3.0, 3.0]);
    let (mut store, p) = ggf(2, 1, 0);
    store.set(p.w_agg.w, Tensor::new(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]));
    store.set(p.w_update.w, Tensor::new(&[2, 2], vec![2.0, 0.0, 0.0, 2.0]));
    // out = upd + [1, -1] * residual, plus bias (0.5, -0.5).
    store.set(
        p.w_proj.w,
        Tensor::new(&[4, 2], vec![1.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0, -1.0]),
    );
    store.set(p.w_proj.b.unwrap(), Tensor::new(&[2], vec![0.5, -0.5]));
    let nbrs = build_graph(&f, GraphSpec { k: 1, ..GraphSpec::default() }).unwrap();
    // Squared distances: 0-1: 1, 0-2: 4, 1-2: 5, 0-3: 18, 1-3: 13, 2-3: 10.
    assert_eq!(nbrs, vec![1, 0, 0, 2]);
    let mut g = Graph::new();
    let x = g.constant(f);
    let y = mr_conv(&mut g, &store, x, &nbrs, 1, &p);
    // rel: n0 = (-1, 0), n1 = (1, 0), n2 = (0, 2), n3 = (3, 1); upd = 2 rel.
    let expect = [
        -2.0 + 0.0 + 0.5,
        0.0 - 0.0 - 0.5,
        2.0 + 1.0 + 0.5,
        0.0 - 0.0 - 0.5,
        0.0 + 0.0 + 0.5,
        4.0 - 2.0 - 0.5,
        6.0 + 3.0 + 0.5,
        2.0 - 3.0 - 0.5,
    ];
    assert_eq!(g.value(y).data(), &expect);
}

#[test]
fn constant_field_uses_only_the_residual_branch() {
    let f = Tensor::full(&[3, 3, 4], 0.7);
    let (store, p) = ggf(4, 2, 3);
    let k = 5;
    let nbrs = build_graph(&f, GraphSpec { k, ..GraphSpec::default() }).unwrap();
    let mut g = Graph::new();
    let x = g.constant(f.clone());
    let flat = g.reshape(x, &[9, 4]);
    let agg = aggregate(&mut g, &store, flat, &nbrs, k, &p);
    assert!(g.value(agg).data().iter().all(|v| *v == 0.0));
    let y = mr_conv(&mut g, &store, x, &nbrs, k, &p);
    // project(concat(0, F)) = F * W_proj[C..] + b.
    let wp = store.get(p.w_proj.w);
    for cell in 0..9 {
        for o in 0..4 {
            let e: f64 = (0..4).map(|i| 0.7 * wp.data()[(4 + i) * 4 + o]).sum();
            assert!((g.value(y).data()[cell * 4 + o] - e).abs() < 1e-12);
        }
    }
}

fn text_leaf(g: &mut Graph, t: &Tensor) -> Var {
    g.constant(t.clone())
}

#[test]
fn zero_gate_is_one_and_a_half() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (store, p) = ggf(5, 3, 1);
    let f = rand_tensor(&mut rng, &[4, 4, 5]);
    let t = rand_tensor(&mut rng, &[6, 3]);
    let mask = [true, true, true, false, false, false];
    let mut g = Graph::new();
    let fv = g.constant(f.clone());
    let tv = text_leaf(&mut g, &t);
    let y = gated_fuse(&mut g, &store, fv, TextFeatures { matrix: tv, pad_mask: &mask }, &p.w_t).unwrap();
    for (a, b) in g.value(y).data().iter().zip(f.data()) {
        assert_eq!(*a, 1.5 * b);
    }
}

#[test]
fn saturated_gate_doubles() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let (mut store, p) = ggf(3, 2, 1);
    // Pooled text is (1, 1); each gate logit is then 50.
    store.set(p.w_t.w, Tensor::full(&[2, 3], 25.0));
    let f = rand_tensor(&mut rng, &[2, 2, 3]);
    let t = Tensor::full(&[2, 2], 1.0);
    let mut g = Graph::new();
    let fv = g.constant(f.clone());
    let tv = text_leaf(&mut g, &t);
    let y = gated_fuse(&mut g, &store, fv, TextFeatures { matrix: tv, pad_mask: &[true, true] }, &p.w_t).unwrap();
    for (a, b) in g.value(y).data().iter().zip(f.data()) {
        assert!((a - 2.0 * b).abs() < 1e-6);
    }
}

#[test]
fn gated_fuse_hand_computed() {
    // C_r = 2, L = 2 tokens, C_t = 2.
    let (mut store, p) = ggf(2, 2, 0);
    store.set(p.w_t.w, Tensor::new(&[2, 2], vec![1.0, 0.0, 0.0, -1.0]));
    let t = Tensor::new(&[2, 2], vec![0.5, -2.0, -1.0, 1.0]);
    // Pool: (0.5, 1.0); logits: (0.5, -1.0).
    let f = Tensor::new(&[1, 1, 2], vec![2.0, -4.0]);
    let mut g = Graph::new();
    let fv = g.constant(f);
    let tv = text_leaf(&mut g, &t);
    let y = gated_fuse(&mut g, &store, fv, TextFeatures { matrix: tv, pad_mask: &[true, true] }, &p.w_t).unwrap();
    let s = |x: f64| 1.0 / (1.0 + (-x).exp());
    let expect = [2.0 * s(0.5) + 2.0, -4.0 * s(-1.0) - 4.0];
    for (a, b) in g.value(y).data().iter().zip(expect) {
        assert!((a - b).abs() < 1e-15);
    }
}

#[test]
fn all_padded_text_rejected() {
    let (store, p) = ggf(2, 2, 0);
    let mut g = Graph::new();
    let fv = g.constant(Tensor::zeros(&[2, 2, 2]));
    let tv = g.constant(Tensor::zeros(&[3, 2]));
    let e = gated_fuse(&mut g, &store, fv, TextFeatures { matrix: tv, pad_mask: &[false; 3] }, &p.w_t).unwrap_err();
    assert!(matches!(e, Error::InvalidInput(_)));
}

fn small_fpn(kind: FusionKind, seed: u64) -> (ParamStore, FusionFpn) {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let graph = GraphSpec {
        k: 3,
        ..GraphSpec::default()
    };
    let fpn = FusionFpn::new(&mut store, &mut rng, "f", kind, graph, [4, 8, 16], 4).unwrap();
    (store, fpn)
}

fn stage_inputs(rng: &mut ChaCha8Rng) -> [Tensor; 3] {
    [
        rand_tensor(rng, &[8, 8, 4]),
        rand_tensor(rng, &[4, 4, 8]),
        rand_tensor(rng, &[2, 2, 16]),
    ]
}

#[test]
fn every_kind_preserves_stage_shapes() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let xs = stage_inputs(&mut rng);
    let t = rand_tensor(&mut rng, &[5, 4]);
    let mask = [true, true, false, true, false];
    for kind in FusionKind::ALL {
        let (store, fpn) = small_fpn(kind, 1);
        let mut g = Graph::new();
        let vs = xs.clone().map(|x| g.constant(x));
        let tv = g.constant(t.clone());
        let out = fpn.forward(&mut g, &store, vs, TextFeatures { matrix: tv, pad_mask: &mask }).unwrap();
        for (o, x) in out.iter().zip(&xs) {
            assert_eq!(g.shape(*o), x.shape(), "{kind:?}");
        }
    }
}

#[test]
fn zero_text_projection_gives_one_and_a_half_mr_conv_per_stage() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let xs = stage_inputs(&mut rng);
    let t = rand_tensor(&mut rng, &[3, 4]);
    let (store, fpn) = small_fpn(FusionKind::Ggf, 2);
    let mut g = Graph::new();
    let vs = xs.clone().map(|x| g.constant(x));
    let tv = g.constant(t);
    let out = fpn.forward(&mut g, &store, vs, TextFeatures { matrix: tv, pad_mask: &[true; 3] }).unwrap();
    for s in 0..3 {
        let p = fpn.ggf_params(s).unwrap();
        let nbrs = build_graph(&xs[s], fpn.graph).unwrap();
        let mr = mr_conv(&mut g, &store, vs[s], &nbrs, fpn.graph.k, p);
        let err = g.value(out[s]).zip_map(g.value(mr), |a, b| (a - 1.5 * b).abs()).data().iter().fold(0.0, |m: f64, v| m.max(*v));
        assert!(err < 1e-12, "stage {s}: {err}");
    }
}

#[test]
fn ggf_stack_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let (mut store, fpn) = small_fpn(FusionKind::Ggf, 3);
    // Non-zero gate weights so the text path carries gradient.
    for id in store.ids().collect::<Vec<_>>() {
        if store.name(id).contains("w_t") {
            let shape = store.get(id).shape().to_vec();
            store.set(id, rand_tensor(&mut rng, &shape));
        }
    }
    let xs = stage_inputs(&mut rng);
    let t = rand_tensor(&mut rng, &[3, 4]);
    let mask = [true, false, true];
    let weights: Vec<Tensor> = xs.iter().map(|x| rand_tensor(&mut rng, x.shape())).collect();
    let readout = |g: &mut Graph, out: [Var; 3]| {
        let mut total = None;
        for (o, w) in out.iter().zip(&weights) {
            let wv = g.constant(w.clone());
            let p = g.mul(*o, wv);
            let s = g.sum(p);
            total = Some(match total {
                None => s,
                Some(t) => g.add(t, s),
            });
        }
        total.unwrap()
    };
    // Parameters.
    let r = check_param_gradients(&store, 1e-6, 1, |g, st| {
        let vs = xs.clone().map(|x| g.constant(x));
        let tv = g.constant(t.clone());
        let out = fpn.forward(g, st, vs, TextFeatures { matrix: tv, pad_mask: &mask }).unwrap();
        readout(g, out)
    });
    assert!(r.max_rel_err < 1e-4, "params: {r:?}");
    // Radar maps and text features.
    let mut inputs = xs.to_vec();
    inputs.push(t.clone());
    let r = check_gradients(&inputs, 1e-6, |g, v| {
        let tf = TextFeatures { matrix: v[3], pad_mask: &mask };
        let out = fpn.forward(g, &store, [v[0], v[1], v[2]], tf).unwrap();
        readout(g, out)
    });
    assert!(r.max_rel_err < 1e-4, "inputs: {r:?}");
}

#[test]
fn text_pathway_is_live() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let (mut store, fpn) = small_fpn(FusionKind::Ggf, 4);
    for id in store.ids().collect::<Vec<_>>() {
        if store.name(id).contains("w_t") {
            let shape = store.get(id).shape().to_vec();
            store.set(id, rand_tensor(&mut rng, &shape));
        }
    }
    let xs = stage_inputs(&mut rng);
    let t = rand_tensor(&mut rng, &[3, 4]);
    let mut g = Graph::new();
    let vs = xs.clone().map(|x| g.constant(x));
    let tv = g.leaf(t);
    let out = fpn.forward(&mut g, &store, vs, TextFeatures { matrix: tv, pad_mask: &[true; 3] }).unwrap();
    let a = g.sum(out[0]);
    let b = g.sum(out[2]);
    let l = g.add(a, b);
    let grads = g.backward(l);
    assert!(grads.get(tv).unwrap().data().iter().any(|v| v.abs() > 1e-6));
}

proptest! {
    #[test]
    fn repeated_rows_match_brute_force(
        palette in prop::collection::vec(prop::collection::vec(-2i8..3, 2), 1..4),
        picks in prop::collection::vec(0usize..4, 4..30),
        k in 1usize..8,
        include_self in any::<bool>(),
    ) {
        let n = picks.len();
        prop_assume!(k <= if include_self { n } else { n - 1 });
        let data: Vec<f64> = picks
            .iter()
            .flat_map(|&p| palette[p % palette.len()].iter().map(|&v| f64::from(v)))
            .collect();
        let f = Tensor::new(&[1, n, 2], data);
        let spec = GraphSpec { k, metric: GraphMetric::FeatureEuclidean, include_self };
        prop_assert_eq!(build_graph(&f, spec).unwrap(), brute_force_neighbors(&f, k, include_self));
    }

    #[test]
    fn aggregate_term_is_shift_invariant(
        seed in any::<u64>(),
        shift in prop::collection::vec(-50.0f64..50.0, 3),
        k in 1usize..6,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f = rand_tensor(&mut rng, &[3, 3, 3]);
        let shifted = Tensor::from_fn(f.shape(), |i| f.data()[i] + shift[i % 3]);
        let (store, p) = ggf(3, 2, seed);
        let run = |x: &Tensor| {
            let nbrs = build_graph(x, GraphSpec { k, ..GraphSpec::default() }).unwrap();
            let mut g = Graph::new();
            let v = g.constant(x.clone());
            let flat = g.reshape(v, &[9, 3]);
            let a = aggregate(&mut g, &store, flat, &nbrs, k, &p);
            (nbrs, g.value(a).clone())
        };
        let (n0, a0) = run(&f);
        let (n1, a1) = run(&shifted);
        // Shifting can perturb near-tied distances at the last bit; compare
        // the aggregate under the original graph when the graphs differ.
        if n0 == n1 {
            prop_assert!(a0.max_abs_diff(&a1) < 1e-9);
        } else {
            let mut g = Graph::new();
            let v = g.constant(shifted.clone());
            let flat = g.reshape(v, &[9, 3]);
            let a = aggregate(&mut g, &store, flat, &n0, k, &p);
            prop_assert!(a0.max_abs_diff(g.value(a)) < 1e-9);
        }
    }

    #[test]
    fn fused_output_lies_between_one_and_two_times_input(
        seed in any::<u64>(),
        // |logit| <= 15 keeps the gate strictly inside (0, 1) in f64.
        scale in 0.0f64..5.0,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (mut store, p) = ggf(4, 3, seed);
        store.set(p.w_t.w, rand_tensor(&mut rng, &[3, 4]).map(|v| v * scale));
        let mut f = rand_tensor(&mut rng, &[3, 3, 4]);
        f.data_mut()[0] = 0.0;
        let t = rand_tensor(&mut rng, &[4, 3]);
        let mut g = Graph::new();
        let fv = g.constant(f.clone());
        let tv = g.constant(t);
        let mask = [true, false, true, false];
        let y = gated_fuse(&mut g, &store, fv, TextFeatures { matrix: tv, pad_mask: &mask }, &p.w_t).unwrap();
        for (&o, &x) in g.value(y).data().iter().zip(f.data()) {
            if x > 0.0 {
                prop_assert!(x < o && o < 2.0 * x);
            } else if x < 0.0 {
                prop_assert!(2.0 * x < o && o < x);
            } else {
                prop_assert_eq!(o, 0.0);
            }
        }
    }

    #[test]
    fn padded_rows_never_affect_the_pooled_text(
        seed in any::<u64>(),
        junk in -1e3f64..1e3,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t = rand_tensor(&mut rng, &[5, 3]);
        let mask = [true, false, true, false, false];
        let mut t2 = t.clone();
        for r in [1, 3, 4] {
            for c in 0..3 {
                t2.data_mut()[r * 3 + c] = junk;
            }
        }
        let pool = |t: &Tensor| {
            let mut g = Graph::new();
            let v = g.constant(t.clone());
            let p = pool_tokens(&mut g, TextFeatures { matrix: v, pad_mask: &mask }).unwrap();
            g.value(p).clone()
        };
        prop_assert_eq!(pool(&t), pool(&t2));
    }
}
