use snnkit::analysis::{
    compare_grads, loss_landscape, loss_landscape_with, metrics, pca_directions, project_trajectory,
    project_trajectory_onto, LandscapeOptions,
};
use snnkit::learning::{evaluate, Batch, Estimator, LossSpec};
use snnkit::network::{LayerSpec, Network, NetworkSpec};
use snnkit::randman::{generate, Encoding, RandmanConfig};
use snnkit::testing::{random_case, CaseOptions};
use snnkit::Tensor;

#[test]
fn self_comparison_is_one() {
    let case = random_case(1, &CaseOptions::default());
    let r = compare_grads(&case.net, &case.params, &case.batch, LossSpec::offline(), Estimator::Bptt, Estimator::Bptt)
        .unwrap();
    assert!((r.global_cosine - 1.0).abs() < 1e-12);
    assert!(!r.global_degenerate);
    assert_eq!(r.estimators, ["bptt".to_string(), "bptt".to_string()]);
}

#[test]
fn bptt_and_rtrl_agree() {
    let opts = CaseOptions {
        cat: snnkit::testing::CatKind::Any,
        ..CaseOptions::default()
    };
    let case = random_case(2, &opts);
    let r = compare_grads(&case.net, &case.params, &case.batch, LossSpec::online(), Estimator::Bptt, Estimator::Rtrl)
        .unwrap();
    assert!((r.global_cosine - 1.0).abs() < 1e-6);
    for b in &r.blocks {
        assert!((-1.0..=1.0).contains(&b.cosine));
    }
}

#[test]
fn ostl_final_block_exact_on_random_nets() {
    let opts = CaseOptions {
        blocks: (2, 3),
        ..CaseOptions::default()
    };
    for seed in 0..10 {
        let case = random_case(seed, &opts);
        let r =
            compare_grads(&case.net, &case.params, &case.batch, LossSpec::online(), Estimator::Bptt, Estimator::Ostl)
                .unwrap();
        let last = r.group(case.net.num_layers() - 2).unwrap();
        assert!(last.degenerate || (last.cosine - 1.0).abs() < 1e-9, "seed {seed}: {}", last.cosine);
        assert!((-1.0..=1.0).contains(&r.global_cosine));
    }
}

#[test]
fn ostl_hidden_block_aligns_on_rate_randman() {
    for seed in 0..3u64 {
        let cfg = RandmanConfig {
            samples_per_class: 4,
            encoding: Encoding::rate(),
            manifold_seed: seed,
            sample_seed: seed + 100,
            ..RandmanConfig::default()
        };
        let batch = generate(&cfg).unwrap().into_batch();
        let spec = NetworkSpec::chain(vec![
            LayerSpec::affine(50),
            LayerSpec::lif(),
            LayerSpec::affine(10),
            LayerSpec::lif(),
        ]);
        let net = Network::new(spec, cfg.units).unwrap();
        let params = net.init_params(seed);
        let r = compare_grads(&net, &params, &batch, LossSpec::online(), Estimator::Bptt, Estimator::Ostl).unwrap();
        let (hidden, last) = (r.group(0).unwrap(), r.group(2).unwrap());
        assert!((last.cosine - 1.0).abs() < 1e-10);
        assert!(hidden.cosine > 0.0 && hidden.cosine < 1.0, "seed {seed}: {}", hidden.cosine);
        assert!(r.global_cosine > 0.0 && r.global_cosine <= 1.0);
    }
}

#[test]
fn comparison_is_symmetric() {
    let case = random_case(3, &CaseOptions::default());
    let ab = compare_grads(&case.net, &case.params, &case.batch, LossSpec::online(), Estimator::Bptt, Estimator::Ostl)
        .unwrap();
    let ba = compare_grads(&case.net, &case.params, &case.batch, LossSpec::online(), Estimator::Ostl, Estimator::Bptt)
        .unwrap();
    assert_eq!(ab.global_cosine, ba.global_cosine);
    assert_eq!(ab.norm_a, ba.norm_b);
    for (x, y) in ab.blocks.iter().zip(&ba.blocks) {
        assert_eq!(x.cosine, y.cosine);
    }
}

#[test]
fn landscape_center_and_counts() {
    let case = random_case(4, &CaseOptions::default());
    let direct = evaluate(&case.net, &case.params, &case.batch, LossSpec::offline()).unwrap().0;
    let g = loss_landscape(&case.net, &case.params, &case.batch, LossSpec::offline(), 5, 1.0, 42).unwrap();
    assert_eq!(g.losses.len(), 25);
    assert_eq!(g.center_loss.to_bits(), direct.to_bits());
    assert_eq!(g.loss(2, 2).to_bits(), direct.to_bits());
    assert_eq!(g.coords, vec![-1.0, -0.5, 0.0, 0.5, 1.0]);

    let again = loss_landscape(&case.net, &case.params, &case.batch, LossSpec::offline(), 5, 1.0, 42).unwrap();
    assert_eq!(g, again);
    let threaded = loss_landscape_with(
        &case.net,
        &case.params,
        &case.batch,
        LossSpec::offline(),
        5,
        1.0,
        42,
        LandscapeOptions { threads: 3 },
    )
    .unwrap();
    assert_eq!(g, threaded);
    let other = loss_landscape(&case.net, &case.params, &case.batch, LossSpec::offline(), 5, 1.0, 43).unwrap();
    assert_ne!(g.losses, other.losses);
}

#[test]
fn landscape_rejects_bad_resolution() {
    let case = random_case(4, &CaseOptions::default());
    assert!(loss_landscape(&case.net, &case.params, &case.batch, LossSpec::offline(), 4, 1.0, 0).is_err());
    assert!(loss_landscape(&case.net, &case.params, &case.batch, LossSpec::offline(), 5, 0.0, 0).is_err());
}

#[test]
fn landscape_flags_non_finite_points() {
    let case = random_case(5, &CaseOptions::default());
    let g = loss_landscape(&case.net, &case.params, &case.batch, LossSpec::offline(), 3, 1e308, 1).unwrap();
    assert!(g.center_loss.is_finite());
    assert!(g.flagged() > 0);
    assert!(g.losses.iter().all(|l| l.is_finite() || *l == f64::INFINITY));
}

#[test]
fn trajectory_projection_arithmetic() {
    let case = random_case(6, &CaseOptions::default());
    let g = loss_landscape(&case.net, &case.params, &case.batch, LossSpec::offline(), 3, 1.0, 7).unwrap();
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let shifted = |a: f64, b: f64| {
        let flat: Vec<f64> = g
            .center
            .iter()
            .zip(g.delta.iter().zip(&g.eta))
            .map(|(c, (d, e))| c + a * d + b * e)
            .collect();
        case.params.with_flat(&flat).unwrap()
    };
    let pts = project_trajectory(&[case.params.clone(), shifted(0.3, 0.0)], &g).unwrap();
    assert_eq!(pts[0], (0.0, 0.0));
    let cross = 0.3 * dot(&g.delta, &g.eta) / dot(&g.eta, &g.eta);
    assert!((pts[1].0 - 0.3).abs() < 1e-12);
    assert!((pts[1].1 - cross).abs() < 1e-12);

    // Moving along the part of η orthogonal to δ leaves the first
    // coordinate unchanged.
    let k = dot(&g.delta, &g.eta) / dot(&g.delta, &g.delta);
    let eta_perp: Vec<f64> = g.eta.iter().zip(&g.delta).map(|(e, d)| e - k * d).collect();
    let along = |b: f64| {
        let flat: Vec<f64> = g
            .center
            .iter()
            .zip(g.delta.iter().zip(&eta_perp))
            .map(|(c, (d, e))| c + 0.1 * d + b * e)
            .collect();
        case.params.with_flat(&flat).unwrap()
    };
    let pts = g.project(&[along(0.2), along(-0.4)]).unwrap();
    assert!((pts[0].0 - pts[1].0).abs() < 1e-12);
    assert!((pts[0].1 - pts[1].1).abs() > 1e-3);
}

#[test]
fn pca_frame_recovers_a_line() {
    let case = random_case(7, &CaseOptions::default());
    let center = case.params.flatten();
    let dir: Vec<f64> = (0..center.len()).map(|i| ((i * 7919) % 13) as f64 - 6.0).collect();
    let ckpts: Vec<_> = (0..5)
        .map(|k| {
            let flat: Vec<f64> = center.iter().zip(&dir).map(|(c, d)| c + 0.1 * k as f64 * d).collect();
            case.params.with_flat(&flat).unwrap()
        })
        .collect();
    let (d1, d2) = pca_directions(&ckpts, &center).unwrap();
    let norm = dir.iter().map(|x| x * x).sum::<f64>().sqrt();
    let cos: f64 = d1.iter().zip(&dir).map(|(a, b)| a * b).sum::<f64>() / norm;
    assert!((cos.abs() - 1.0).abs() < 1e-10);
    assert!(d2.iter().all(|&x| x == 0.0));
    let pts = project_trajectory_onto(&ckpts, &center, &d1, &d2).unwrap();
    assert_eq!(pts[0], (0.0, 0.0));
}

fn two_lif_layers() -> Network {
    let spec = NetworkSpec::chain(vec![
        LayerSpec::affine(10),
        LayerSpec::lif(),
        LayerSpec::affine(10),
        LayerSpec::lif(),
    ]);
    Network::new(spec, 3).unwrap()
}

#[test]
fn neuron_updates_count() {
    let net = two_lif_layers();
    let params = net.init_params(0);
    let x = Tensor::zeros(&[4, 50, 3]);
    let r = net.rollout(&params, &x).unwrap();
    let m = metrics(&net, &r.records, &r.outputs, &[0, 1, 2, 3]).unwrap();
    assert_eq!(m.neuron_updates, 4000);
    assert_eq!(m.activation_sparsity, 1.0);
    assert_eq!(m.synaptic_ops, 0);
}

#[test]
fn perfect_predictions_and_scale_freedom() {
    let net = two_lif_layers();
    let mut params = net.init_params(1);
    params.affine_mut(0).0.scale(8.0);
    params.affine_mut(2).0.scale(8.0);
    let mut rng = snnkit::CounterRng::new(9);
    let x = Tensor::from_vec(&[2, 20, 3], (0..120).map(|_| rng.below(2) as f64).collect()).unwrap();
    let r = net.rollout(&params, &x).unwrap();
    let summed = snnkit::learning::accumulate_time(&r.outputs);
    let labels: Vec<usize> = (0..2)
        .map(|i| {
            let row = summed.row(i);
            (0..row.len()).fold(0, |b, c| if row[c] > row[b] { c } else { b })
        })
        .collect();
    let m = metrics(&net, &r.records, &r.outputs, &labels).unwrap();
    assert_eq!(m.accuracy, 1.0);
    assert!(m.activation_sparsity < 1.0);
    assert!(m.synaptic_ops > 0);

    let batch = Batch::new(x, labels).unwrap().select(&[0, 1, 0, 1, 0, 1]);
    let r2 = net.rollout(&params, &batch.x).unwrap();
    let m2 = metrics(&net, &r2.records, &r2.outputs, &batch.labels).unwrap();
    assert_eq!(m2.accuracy, m.accuracy);
    assert!((m2.activation_sparsity - m.activation_sparsity).abs() < 1e-15);
    assert_eq!(m2.synaptic_ops, 3 * m.synaptic_ops);
}

#[test]
fn synaptic_ops_count_input_spikes_times_fan_out() {
    let spec = NetworkSpec::chain(vec![LayerSpec::affine(4), LayerSpec::lif()]);
    let net = Network::new(spec, 3).unwrap();
    let params = net.init_params(0);
    let x = Tensor::from_vec(&[1, 2, 3], vec![1.0, 0.0, 1.0, 0.0, 0.0, 1.0]).unwrap();
    let r = net.rollout(&params, &x).unwrap();
    let m = metrics(&net, &r.records, &r.outputs, &[0]).unwrap();
    assert_eq!(m.synaptic_ops, 3 * 4);
}
