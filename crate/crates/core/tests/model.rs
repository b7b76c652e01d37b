mod common;

use std::collections::BTreeSet;

use common::{max_grad_error, model_loss_grad_error, probe, random_tensor, rng, tiny_arch, tiny_dataset};
use phase_core::model::encoders::{
    encode_fc, encode_layered, encode_temporal, fc_specs, layered_specs, temporal_specs,
};
use phase_core::model::fusion::{embedding_name, fuse, fusion_specs, FusionShape};
use phase_core::model::heads::{default_registry, head_specs, predict_all};
use phase_core::model::*;
use phase_core::pipeline::{MinMax, Task};
use phase_core::tensor::{Graph, Tensor};
use phase_core::Error;
use rand::Rng;

fn bound_from<'g>(g: &'g Graph<f64>, specs: &[ParamSpec], seed: u64) -> Bound<'g, f64> {
    Params::<f64>::init(specs, seed).bind(g, true)
}

#[test]
fn zero_sequence_with_zero_biases_encodes_to_zero() {
    let specs = temporal_specs("t", 5, 4);
    let g = Graph::new();
    let b = bound_from(&g, &specs, 1);
    let z = encode_temporal(&b, "t", g.constant(Tensor::zeros(&[12, 3, 5]))).unwrap();
    assert_eq!(z.shape(), vec![3, 4]);
    assert!(z.value().data().iter().all(|&v| v == 0.0));
}

#[test]
fn temporal_encoder_is_order_sensitive_and_checks_input() {
    let specs = temporal_specs("t", 4, 3);
    let mut r = rng(2);
    let x = random_tensor(&mut r, &[6, 1, 5], 1.0);
    let mut rev = x.clone();
    for t in 0..6 {
        for v in 0..5 {
            rev.data_mut()[t * 5 + v] = x.data()[(5 - t) * 5 + v];
        }
    }
    let g = Graph::new();
    let b = bound_from(&g, &specs, 3);
    let a = encode_temporal(&b, "t", g.constant(x)).unwrap().value();
    let c = encode_temporal(&b, "t", g.constant(rev)).unwrap().value();
    assert!(a.data().iter().zip(c.data()).any(|(p, q)| (p - q).abs() > 1e-6));
    let empty = g.constant(Tensor::zeros(&[0, 1, 5]));
    assert!(matches!(encode_temporal(&b, "t", empty), Err(Error::Contract(_))));
    let wrong = g.constant(Tensor::zeros(&[4, 1, 3]));
    assert!(matches!(encode_temporal(&b, "t", wrong), Err(Error::Dimension(_))));
}

#[test]
fn layered_encoder_shapes_and_depth_asymmetry() {
    for feats in 1..=4 {
        let specs = layered_specs("c", feats, [2, 3], 5);
        let g = Graph::new();
        let b = bound_from(&g, &specs, feats as u64);
        let mut r = rng(feats as u64);
        let x = random_tensor(&mut r, &[2, 9, feats], 1.0);
        let mut flipped = x.clone();
        for l in 0..9 {
            for f in 0..feats {
                for s in 0..2 {
                    flipped.data_mut()[(s * 9 + l) * feats + f] = x.data()[(s * 9 + 8 - l) * feats + f];
                }
            }
        }
        let a = encode_layered(&b, "c", g.constant(x)).unwrap();
        assert_eq!(a.shape(), vec![2, 5]);
        let c = encode_layered(&b, "c", g.constant(flipped)).unwrap();
        assert!(a.value().data().iter().zip(c.value().data()).any(|(p, q)| (p - q).abs() > 1e-9));
    }
    let specs = layered_specs("c", 3, [2, 3], 5);
    let g = Graph::new();
    let b = bound_from(&g, &specs, 0);
    let bad = g.constant(Tensor::zeros(&[1, 8, 3]));
    assert!(matches!(encode_layered(&b, "c", bad), Err(Error::Dimension(_))));
}

#[test]
fn fc_encoder_examples() {
    for fan_in in [1, 7, 20] {
        let specs = fc_specs("s", fan_in, 6, 4);
        let g = Graph::new();
        let b = bound_from(&g, &specs, 5);
        let z = encode_fc(&b, "s", g.constant(Tensor::zeros(&[3, fan_in]))).unwrap();
        assert_eq!(z.shape(), vec![3, 4]);
        assert!(z.value().data().iter().all(|&v| v == 0.0));
        let bad = g.constant(Tensor::zeros(&[3, fan_in + 1]));
        assert!(matches!(encode_fc(&b, "s", bad), Err(Error::Dimension(_))));
    }
}

/// Gradient of a probe of `encode(params, input)` with respect to every
/// parameter and the input, via finite differences.
fn branch_grad_error(specs: &[ParamSpec], input: Tensor<f64>, seed: u64, encode: EncodeFn) -> f64 {
    let params = Params::<f64>::init(specs, seed);
    let names: Vec<String> = params.names().map(str::to_string).collect();
    let mut tensors: Vec<Tensor<f64>> = names.iter().map(|n| params.get(n).unwrap().clone()).collect();
    // Zero biases would leave relu units exactly at their kink; nudge them.
    let mut r = rng(seed + 99);
    for t in &mut tensors {
        for v in t.data_mut() {
            *v += r.random_range(-0.1..0.1);
        }
    }
    tensors.push(input);
    max_grad_error(&tensors, 40, |g, vars| {
        let b = BoundView { names: &names, vars };
        let z = encode(&b, g, vars[vars.len() - 1]);
        probe(g, z, seed)
    })
}

type EncodeFn = for<'g> fn(&BoundView<'_, 'g>, &'g Graph<f64>, phase_core::tensor::Var<'g, f64>) -> phase_core::tensor::Var<'g, f64>;

/// Parameters supplied as graph leaves by the finite-difference harness.
struct BoundView<'a, 'g> {
    names: &'a [String],
    vars: &'a [phase_core::tensor::Var<'g, f64>],
}

impl<'g> BoundView<'_, 'g> {
    fn bound(&self) -> Bound<'g, f64> {
        Bound::from_vars(self.names.iter().cloned().zip(self.vars.iter().copied()))
    }
}

#[test]
fn branch_gradients_match_finite_differences() {
    let mut r = rng(7);
    let temporal = temporal_specs("t", 3, 4);
    let err = branch_grad_error(&temporal, random_tensor(&mut r, &[5, 2, 5], 1.0), 1, |b, _, x| {
        encode_temporal(&b.bound(), "t", x).unwrap()
    });
    assert!(err < 1e-4, "temporal branch gradient error {err}");
    let layered = layered_specs("c", 3, [2, 3], 4);
    let err = branch_grad_error(&layered, random_tensor(&mut r, &[2, 9, 3], 1.0), 2, |b, _, x| {
        encode_layered(&b.bound(), "c", x).unwrap()
    });
    assert!(err < 1e-4, "layered branch gradient error {err}");
    let fc = fc_specs("s", 6, 5, 4);
    let err = branch_grad_error(&fc, random_tensor(&mut r, &[3, 6], 1.0), 3, |b, _, x| {
        encode_fc(&b.bound(), "s", x).unwrap()
    });
    assert!(err < 1e-4, "dense branch gradient error {err}");
}

fn fusion_setup(n: usize, seed: u64) -> (FusionShape, Params<f64>, Vec<String>) {
    let shape = FusionShape {
        d: 8,
        heads: 2,
        layers: 2,
        ff_mult: 2,
    };
    let names: Vec<String> = (0..n).map(|i| format!("m{i}")).collect();
    let refs: Vec<&str> = names.iter().map(String::as_str).collect();
    (shape, Params::init(&fusion_specs(shape, &refs), seed), names)
}

#[test]
fn fusion_is_invariant_to_group_order() {
    let (shape, params, names) = fusion_setup(4, 11);
    let mut r = rng(12);
    let latents: Vec<Tensor<f64>> = (0..4).map(|_| random_tensor(&mut r, &[3, 8], 1.0)).collect();
    let run = |order: &[usize]| {
        let g = Graph::new();
        let b = params.bind(&g, false);
        let tokens: Vec<_> = order
            .iter()
            .map(|&i| (g.constant(latents[i].clone()), b.p(&embedding_name(&names[i]))))
            .collect();
        fuse(&b, shape, &tokens).unwrap().pooled.value()
    };
    let a = run(&[0, 1, 2, 3]);
    let c = run(&[2, 0, 3, 1]);
    for (p, q) in a.data().iter().zip(c.data()) {
        assert!((p - q).abs() < 1e-12);
    }
}

#[test]
fn single_group_attends_to_itself_and_identical_groups_spread_evenly() {
    let (shape, params, names) = fusion_setup(1, 13);
    let g = Graph::new();
    let b = params.bind(&g, false);
    let z = g.constant(random_tensor(&mut rng(1), &[2, 8], 1.0));
    let f = fuse(&b, shape, &[(z, b.p(&embedding_name(&names[0])))]).unwrap();
    assert!(f.attention.value().data().iter().all(|&a| (a - 1.0).abs() < 1e-12));

    // Same latent and same embedding for every group: each row is uniform.
    let (shape, params, names) = fusion_setup(3, 14);
    let g = Graph::new();
    let b = params.bind(&g, false);
    let z = g.constant(random_tensor(&mut rng(2), &[2, 8], 1.0));
    let e = b.p(&embedding_name(&names[0]));
    let f = fuse(&b, shape, &[(z, e), (z, e), (z, e)]).unwrap();
    assert_eq!(f.attention.shape(), vec![2, 2, 3, 3]);
    assert!(f.attention.value().data().iter().all(|&a| (a - 1.0 / 3.0).abs() < 1e-12));
}

#[test]
fn heads_stay_positive_for_extreme_latents() {
    let d = 6;
    let registry = default_registry(3);
    let params = Params::<f64>::init(&head_specs(&registry, d, 5), 21);
    let mut r = rng(22);
    let mut z = random_tensor(&mut r, &[10_000, d], 10.0);
    for (i, v) in z.data_mut().iter_mut().enumerate() {
        match i % 13 {
            0 => *v = 100.0,
            1 => *v = -100.0,
            _ => {}
        }
    }
    for row in 0..4 {
        for j in 0..d {
            z.data_mut()[row * d + j] = if row % 2 == 0 { 100.0 } else { -100.0 };
        }
    }
    let g = Graph::new();
    let b = params.bind(&g, false);
    let bundle = predict_all(&b, &registry, g.constant(z.clone())).unwrap();
    assert_eq!(bundle.outputs.len(), 9);
    for (spec, out) in bundle.registry.iter().zip(&bundle.outputs) {
        assert!(out.value().data().iter().all(|&v| v > 0.0), "{} not positive", spec.name);
    }
    let g32 = Graph::<f32>::new();
    let p32 = params.cast::<f32>();
    let b32 = p32.bind(&g32, false);
    let bundle = predict_all(&b32, &registry, g32.constant(z.cast())).unwrap();
    assert!(bundle.outputs.iter().all(|o| o.value().data().iter().all(|&v| v > 0.0)));
    assert!(matches!(bundle.get("no_such_task"), Err(Error::Contract(_))));
    assert_eq!(bundle.shaped("soil3c").unwrap().shape(), vec![10_000, 9]);
}

#[test]
fn denormalize_maps_unit_interval_to_training_range() {
    let ds = tiny_dataset(3);
    let norm = &ds.manifest.norm;
    let widths: Vec<usize> = Task::ALL.iter().map(|t| t.dim(3)).collect();
    let at = |v: f64| Predictions {
        values: widths.iter().map(|&w| vec![vec![v; w]]).collect(),
    };
    let lo = denormalize(&at(0.0), norm).unwrap();
    let hi = denormalize(&at(1.0), norm).unwrap();
    for (t, stats) in norm.targets.iter().enumerate() {
        for (c, s) in stats.iter().enumerate() {
            let s: &MinMax = s;
            assert!((lo.values[t][0][c] - s.min).abs() <= 1e-12 * s.min.abs().max(1.0));
            assert!((hi.values[t][0][c] - s.max).abs() <= 1e-12 * s.max.abs().max(1.0));
        }
    }
    let short = Predictions { values: vec![vec![vec![0.0]]] };
    assert!(matches!(denormalize(&short, norm), Err(Error::Contract(_))));
}

fn arch_for(variant: Variant) -> (Architecture, Vec<Prepared>) {
    tiny_arch(variant)
}

fn spec_names(a: &Architecture) -> BTreeSet<String> {
    a.specs().into_iter().map(|s| s.name).collect()
}

fn spec_count(a: &Architecture, pred: impl Fn(&str) -> bool) -> usize {
    a.specs().iter().filter(|s| pred(&s.name)).map(|s| s.shape.iter().product::<usize>()).sum()
}

#[test]
fn variants_differ_only_in_their_component() {
    let (full, _) = arch_for(Variant::Full);
    let (no_phys, _) = arch_for(Variant::NoPhys);
    assert_eq!(full.specs(), no_phys.specs());

    let total = |a: &Architecture| spec_count(a, |_| true);
    for (variant, prefixes) in [
        (Variant::NoCnn, vec!["enc.cnn.", "fusion.emb.cnn"]),
        (Variant::NoLstm, vec!["enc.lstm.", "fusion.emb.lstm"]),
        (Variant::NoFc, vec!["enc.static.", "enc.pft.", "fusion.emb.static", "fusion.emb.pft"]),
    ] {
        let (a, _) = arch_for(variant);
        let removed = spec_count(&full, |n| prefixes.iter().any(|p| n.starts_with(p)));
        assert!(removed > 0);
        assert_eq!(total(&full) - total(&a), removed, "{variant}");
        let kept = spec_names(&a);
        assert!(kept.iter().all(|n| !prefixes.iter().any(|p| n.starts_with(p))));
        assert!(kept.is_subset(&spec_names(&full)), "{variant} adds parameters");
    }

    let (no_trans, _) = arch_for(Variant::NoTrans);
    let names = spec_names(&no_trans);
    assert!(names.iter().all(|n| !n.starts_with("fusion.l") && !n.starts_with("fusion.emb")));
    let fusion = spec_count(&full, |n| n.starts_with("fusion."));
    let concat = spec_count(&no_trans, |n| n.starts_with("fusion."));
    assert_eq!(total(&full) - fusion, total(&no_trans) - concat);

    let (pinn, _) = arch_for(Variant::BaselinePinn);
    let (mlp, _) = arch_for(Variant::BaselineMlp);
    assert!(spec_names(&mlp).iter().all(|n| n.starts_with("mlp.") || n.starts_with("head.")));
    let deltas: Vec<String> = spec_names(&pinn).difference(&spec_names(&mlp)).cloned().collect();
    assert_eq!(deltas.len(), 6 * 4);
    assert!(deltas.iter().all(|n| n.starts_with("head.delta_")));
}

#[test]
fn attention_is_reported_only_by_attention_variants() {
    for variant in Variant::ALL {
        let (arch, prepared) = arch_for(variant);
        let refs: Vec<&Prepared> = prepared.iter().collect();
        let batch = InputBatch::<f64>::new(&refs, &arch.dims).unwrap();
        let params = Params::<f64>::init(&arch.specs(), 0);
        let g = Graph::new();
        let b = params.bind(&g, false);
        let fw = arch.forward(&b, &g, &batch).unwrap();
        let n_groups = arch.modalities().len();
        match fw.attention {
            Some(a) => {
                assert!(!matches!(variant, Variant::NoTrans | Variant::BaselineMlp | Variant::BaselinePinn));
                assert_eq!(a.shape(), vec![3, 2, n_groups, n_groups]);
            }
            None => assert!(matches!(variant, Variant::NoTrans | Variant::BaselineMlp | Variant::BaselinePinn)),
        }
        assert_eq!(fw.bundle.outputs.len(), 9);
        assert_eq!(fw.deltas.len(), if variant == Variant::BaselinePinn { 6 } else { 0 });
    }
}

#[test]
fn composite_loss_gradients_match_finite_differences_for_every_variant() {
    for (i, variant) in Variant::ALL.into_iter().enumerate() {
        let err = model_loss_grad_error(variant, 30 + i as u64, 3);
        assert!(err < 1e-4, "{variant}: {err}");
    }
}
