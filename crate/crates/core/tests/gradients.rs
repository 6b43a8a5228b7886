use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use upliftlab::loss::{check_gradients, uplift_loss_batch, LossKind};
use upliftlab::model::{Arch, TwinParams};
use upliftlab::Dataset;

const KINDS: [LossKind; 3] = [LossKind::Uplift, LossKind::LogLik, LossKind::BceOnly];

fn random_batch(p: usize, n: usize, rng: &mut ChaCha8Rng) -> Dataset {
    let x = (0..n * p).map(|_| rng.random_range(-1.5..1.5)).collect();
    let t = (0..n).map(|_| u8::from(rng.random_bool(0.5))).collect();
    let y = (0..n).map(|_| u8::from(rng.random_bool(0.5))).collect();
    Dataset::new(p, x, t, y, None).unwrap()
}

fn random_params(arch: Arch, rng: &mut ChaCha8Rng) -> TwinParams {
    let mut params = TwinParams::init(arch, rng.random()).unwrap();
    let layout = params.layout().clone();
    for i in 0..layout.n_split {
        let v = if layout.is_scale(i) {
            rng.random_range(0.5..1.5)
        } else {
            rng.random_range(-0.8..0.8)
        };
        params.set_theta(i, v);
    }
    for b in params.intercepts_mut() {
        *b = rng.random_range(-0.3..0.3);
    }
    params
}

#[test]
fn interaction_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..10 {
        let data = random_batch(4, 16, &mut rng);
        let params = random_params(Arch::Interaction { p: 4 }, &mut rng);
        let idx: Vec<usize> = (0..16).collect();
        for kind in KINDS {
            let r = check_gradients(&params, &data, &idx, kind, 1e-5).unwrap();
            assert_eq!(r.masked, 0);
            assert!(r.max_relative_error < 1e-4, "{kind:?}: {r:?}");
        }
    }
}

#[test]
fn hidden_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for arch in [Arch::hidden1(3, 6), Arch::hidden2(3, 5, 4)] {
        for _ in 0..5 {
            let data = random_batch(3, 12, &mut rng);
            let params = random_params(arch.clone(), &mut rng);
            let idx: Vec<usize> = (0..12).collect();
            for kind in KINDS {
                let r = check_gradients(&params, &data, &idx, kind, 1e-5).unwrap();
                assert!(r.checked > r.masked, "{kind:?}: {r:?}");
                assert!(r.max_relative_error < 1e-4, "{arch:?} {kind:?}: {r:?}");
            }
        }
    }
}

#[test]
fn treatment_term_moves_parameters_for_fixed_outcome() {
    // All outcomes equal: the treatment term still has a nonzero gradient.
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut data = random_batch(3, 20, &mut rng);
    data = Dataset::new(3, data.x().to_vec(), data.t().to_vec(), vec![1; 20], None).unwrap();
    let params = random_params(Arch::Interaction { p: 3 }, &mut rng);
    let idx: Vec<usize> = (0..20).collect();
    let up = uplift_loss_batch(&params, &data, &idx, LossKind::Uplift).unwrap();
    let bce = uplift_loss_batch(&params, &data, &idx, LossKind::BceOnly).unwrap();
    let diff: f64 = up
        .grads
        .split
        .iter()
        .zip(&bce.grads.split)
        .map(|(a, b)| (a - b).abs())
        .sum();
    assert!(diff > 1e-6);
}
