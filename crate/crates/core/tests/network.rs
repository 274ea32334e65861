use proptest::prelude::*;
use snnkit::learning::{bptt_grad, deferred_grad, Estimator, LossSpec};
use snnkit::testing::{random_case, rel_err, CaseOptions, CatKind};
use snnkit::Tensor;

fn opts(cat: bool) -> CaseOptions {
    CaseOptions {
        cat: if cat { CatKind::Any } else { CatKind::None },
        ..CaseOptions::default()
    }
}

/// Copy of `x` with every step after `t` replaced by `fill`.
fn perturb_after(x: &Tensor, t: usize, fill: f64) -> Tensor {
    let (b, len, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let mut y = x.clone();
    let data = y.data_mut();
    for i in 0..b {
        for s in t + 1..len {
            for k in 0..w {
                data[(i * len + s) * w + k] = fill;
            }
        }
    }
    y
}

fn prefix(x: &Tensor, t: usize) -> Tensor {
    let (b, len, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let mut out = Vec::with_capacity(b * t * w);
    for i in 0..b {
        out.extend_from_slice(&x.data()[i * len * w..(i * len + t) * w]);
    }
    Tensor::from_vec(&[b, t, w], out).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn outputs_are_causal(seed in 0u64..10_000, cat: bool, cut in 0usize..8, fill in 0.0f64..1.0) {
        let case = random_case(seed, &opts(cat));
        let x = &case.batch.x;
        let t = cut % x.shape()[1];
        let a = case.net.rollout(&case.params, x).unwrap().outputs;
        let b = case.net.rollout(&case.params, &perturb_after(x, t, fill)).unwrap().outputs;
        let prefix_a = prefix(&a, t + 1);
        let prefix_b = prefix(&b, t + 1);
        prop_assert_eq!(prefix_a.data(), prefix_b.data());
    }

    #[test]
    fn short_rollout_is_prefix_of_long(seed in 0u64..10_000, cat: bool, cut in 1usize..8) {
        let case = random_case(seed, &opts(cat));
        let x = &case.batch.x;
        let t = 1 + (cut - 1) % x.shape()[1];
        let full = case.net.rollout(&case.params, x).unwrap().outputs;
        let short = case.net.rollout(&case.params, &prefix(x, t)).unwrap().outputs;
        let head = prefix(&full, t);
        prop_assert_eq!(short.data(), head.data());
    }

    #[test]
    fn rollout_is_deterministic(seed in 0u64..10_000, cat: bool) {
        let case = random_case(seed, &opts(cat));
        let a = case.net.rollout(&case.params, &case.batch.x).unwrap().outputs;
        let b = case.net.rollout(&case.params, &case.batch.x).unwrap().outputs;
        prop_assert_eq!(a.data(), b.data());
    }

    #[test]
    fn rtrl_equals_bptt(seed in 0u64..10_000, cat: bool) {
        let case = random_case(seed, &opts(cat));
        let b = bptt_grad(&case.net, &case.params, &case.batch, LossSpec::online()).unwrap().grads.flatten();
        let (r, _, _) = deferred_grad(&case.net, &case.params, &case.batch, LossSpec::online(), Estimator::Rtrl).unwrap();
        let r = r.flatten();
        prop_assert_eq!(r.len(), b.len());
        prop_assert!(rel_err(&r, &b) < 1e-10, "rel err {}", rel_err(&r, &b));
    }

    #[test]
    fn offline_and_online_losses_coincide_at_one_step(seed in 0u64..10_000) {
        let o = CaseOptions { timesteps: (1, 1), ..opts(false) };
        let case = random_case(seed, &o);
        let off = bptt_grad(&case.net, &case.params, &case.batch, LossSpec::offline()).unwrap();
        let on = bptt_grad(&case.net, &case.params, &case.batch, LossSpec::online()).unwrap();
        prop_assert!((off.loss - on.loss).abs() <= 1e-12 * off.loss.abs().max(1.0));
        prop_assert!(rel_err(&off.grads.flatten(), &on.grads.flatten()) < 1e-12);
    }
}
