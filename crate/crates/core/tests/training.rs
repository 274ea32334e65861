use snnkit::learning::{
    deferred_grad, evaluate, loss_online_step, train_offline, train_online, train_online_deferred, Estimator,
    FpttConfig, LossSpec, OptimizerSpec,
};
use snnkit::network::{LayerSpec, Network, NetworkSpec};
use snnkit::randman::{generate, RandmanConfig};
use snnkit::testing::{random_case, rel_err, CaseOptions};

fn fig8_net(inputs: usize) -> Network {
    let spec = NetworkSpec::chain(vec![
        LayerSpec::affine(50),
        LayerSpec::lif(),
        LayerSpec::affine(10),
        LayerSpec::lif(),
    ]);
    Network::new(spec, inputs).unwrap()
}

#[test]
fn fig8_single_step_is_finite() {
    let cfg = RandmanConfig {
        samples_per_class: 4,
        ..RandmanConfig::default()
    };
    let batch = generate(&cfg).unwrap().into_batch();
    let net = fig8_net(cfg.units);
    let params = net.init_params(0);
    let opt = OptimizerSpec::adamax(0.001);
    let out = train_offline(&net, &params, &opt, &opt.init(&params), &batch, LossSpec::offline()).unwrap();
    assert!(out.loss.is_finite());
    assert!(out.params.all_finite());
    assert_ne!(out.params, params);
}

#[test]
fn offline_descent_sanity() {
    let cfg = RandmanConfig {
        samples_per_class: 5,
        ..RandmanConfig::default()
    };
    let batch = generate(&cfg).unwrap().into_batch();
    let net = fig8_net(cfg.units);
    let mut params = net.init_params(1);
    let opt = OptimizerSpec::adamax(0.01);
    let mut state = opt.init(&params);
    let mut losses = Vec::new();
    for _ in 0..10 {
        let out = train_offline(&net, &params, &opt, &state, &batch, LossSpec::offline()).unwrap();
        losses.push(out.loss);
        params = out.params;
        state = out.opt_state;
    }
    let final_loss = evaluate(&net, &params, &batch, LossSpec::offline()).unwrap().0;
    losses.push(final_loss);
    assert!(final_loss <= losses[0], "{losses:?}");
    let rises = losses.windows(2).filter(|w| w[1] > w[0]).count();
    assert!(rises <= 2, "{losses:?}");
}

#[test]
fn rtrl_deferred_matches_offline_training_with_online_loss() {
    for seed in 0..5u64 {
        let case = random_case(seed, &CaseOptions::default());
        let opt = OptimizerSpec::adamax(0.01);
        let state = opt.init(&case.params);
        let a = train_offline(&case.net, &case.params, &opt, &state, &case.batch, LossSpec::online()).unwrap();
        let b = train_online_deferred(
            &case.net,
            &case.params,
            &opt,
            &state,
            &case.batch,
            LossSpec::online(),
            Estimator::Rtrl,
        )
        .unwrap();
        assert!(rel_err(&a.params.flatten(), &b.params.flatten()) < 1e-10);
        assert!((a.loss - b.loss).abs() < 1e-12 * a.loss.abs().max(1.0));
    }
}

#[test]
fn ostl_deferred_matches_rtrl_on_one_block() {
    let opts = CaseOptions {
        blocks: (1, 1),
        trainable_tau: true,
        random_tau: true,
        ..CaseOptions::default()
    };
    let case = random_case(2, &opts);
    let opt = OptimizerSpec::sgd(0.1);
    let state = opt.init(&case.params);
    let run = |est| {
        train_online_deferred(&case.net, &case.params, &opt, &state, &case.batch, LossSpec::online(), est)
            .unwrap()
            .params
            .flatten()
    };
    assert!(rel_err(&run(Estimator::Ostl), &run(Estimator::Rtrl)) < 1e-10);
}

#[test]
fn single_step_online_update_equals_offline() {
    let opts = CaseOptions {
        timesteps: (1, 1),
        ..CaseOptions::default()
    };
    let case = random_case(7, &opts);
    let opt = OptimizerSpec::adamax(0.01);
    let state = opt.init(&case.params);
    let a = train_offline(&case.net, &case.params, &opt, &state, &case.batch, LossSpec::online()).unwrap();
    let b = train_online(
        &case.net,
        &case.params,
        &opt,
        &state,
        &case.batch,
        LossSpec::online(),
        Estimator::Rtrl,
        None,
    )
    .unwrap();
    assert!(rel_err(&a.params.flatten(), &b.params.flatten()) < 1e-12);
}

#[test]
fn zero_learning_rate_changes_nothing() {
    let case = random_case(5, &CaseOptions::default());
    let opt = OptimizerSpec::sgd(0.0);
    let state = opt.init(&case.params);
    for est in [Estimator::Rtrl, Estimator::Ostl, Estimator::ottt()] {
        let on = train_online(&case.net, &case.params, &opt, &state, &case.batch, LossSpec::online(), est, None)
            .unwrap();
        assert_eq!(on.params, case.params);
        let rollout = case.net.rollout(&case.params, &case.batch.x).unwrap();
        assert_eq!(on.outputs, rollout.outputs);
        let per_step: f64 = (0..case.batch.timesteps())
            .map(|t| loss_online_step(&rollout.outputs.time_slice(t), &case.batch.labels).unwrap())
            .sum();
        assert_eq!(on.loss, per_step);

        let def =
            train_online_deferred(&case.net, &case.params, &opt, &state, &case.batch, LossSpec::online(), est)
                .unwrap();
        assert_eq!(def.params, case.params);
    }
}

#[test]
fn online_updates_change_parameters_within_the_sequence() {
    let case = random_case(6, &CaseOptions::default());
    let opt = OptimizerSpec::sgd(0.5);
    let state = opt.init(&case.params);
    let online = train_online(
        &case.net,
        &case.params,
        &opt,
        &state,
        &case.batch,
        LossSpec::online(),
        Estimator::Rtrl,
        None,
    )
    .unwrap();
    let deferred = train_online_deferred(
        &case.net,
        &case.params,
        &opt,
        &state,
        &case.batch,
        LossSpec::online(),
        Estimator::Rtrl,
    )
    .unwrap();
    assert_ne!(online.params, deferred.params);
    assert_eq!(online.opt_state.step, case.batch.timesteps() as u64);
    assert_eq!(deferred.opt_state.step, 1);
    assert!(online.params.all_finite());
}

#[test]
fn bptt_is_not_online() {
    let case = random_case(0, &CaseOptions::default());
    let opt = OptimizerSpec::sgd(0.1);
    let err = train_online(
        &case.net,
        &case.params,
        &opt,
        &opt.init(&case.params),
        &case.batch,
        LossSpec::online(),
        Estimator::Bptt,
        None,
    )
    .unwrap_err();
    assert_eq!(err.to_string(), "BPTT is not an online estimator");
}

#[test]
fn fptt_wrapper_returns_running_mean() {
    let case = random_case(8, &CaseOptions::default());
    let opt = OptimizerSpec::sgd(0.1);
    let state = opt.init(&case.params);
    for reuse in [true, false] {
        let cfg = FpttConfig {
            alpha: 0.5,
            reuse_gradient: reuse,
        };
        let out = train_online(
            &case.net,
            &case.params,
            &opt,
            &state,
            &case.batch,
            LossSpec::online(),
            Estimator::Rtrl,
            Some(&cfg),
        )
        .unwrap();
        let mean = out.fptt_mean.expect("FPTT mean");
        assert_eq!(mean.num_params(), case.params.num_params());
        assert!(mean.all_finite() && out.params.all_finite());
    }
}

#[test]
fn deferred_gradient_is_independent_of_optimizer() {
    let case = random_case(9, &CaseOptions::default());
    let (g1, l1, _) = deferred_grad(&case.net, &case.params, &case.batch, LossSpec::online(), Estimator::Rtrl).unwrap();
    let (g2, l2, _) = deferred_grad(&case.net, &case.params, &case.batch, LossSpec::online(), Estimator::Rtrl).unwrap();
    assert_eq!(g1, g2);
    assert_eq!(l1, l2);
}
