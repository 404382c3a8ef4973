use arnn_core::corpus::{Dialogue, NUM_RESERVED};
use arnn_core::models::{DialogueExample, Model, ModelDims, ModelKind, ModelParams};
use arnn_core::numeric::{grad_check, GradCheckOptions, GradientTape, Parameters};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const V: usize = 20;

// At the default init scale the attention-score gradients are ~1e-11, below
// the central-difference noise floor for a loss of magnitude ~40, so the
// relative check runs on models drawn at a wider scale.
const CHECK_SCALE: f64 = 0.5;

fn random_example(seed: u64) -> DialogueExample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xdead_beef);
    let turns: Vec<Vec<usize>> = (0..rng.gen_range(2..4))
        .map(|_| (0..rng.gen_range(1..5)).map(|_| rng.gen_range(NUM_RESERVED..V)).collect())
        .collect();
    let theta: Vec<f64> = {
        let raw: Vec<f64> = (0..3).map(|_| rng.gen_range(0.1..1.0)).collect();
        let s: f64 = raw.iter().sum();
        raw.iter().map(|v| v / s).collect()
    };
    DialogueExample::new(&Dialogue::from_turns(turns))
        .unwrap()
        .with_theta(theta)
}

fn check(kind: ModelKind, seed: u64) -> f64 {
    let dims = ModelDims::new(8, 6, V).with_topics(3);
    let model = Model::with_scale(kind, dims, seed, CHECK_SCALE).unwrap();
    let ex = random_example(seed);
    let mut tape = GradientTape::new(&model.params);
    model.loss_and_grad(&ex, tape.grads_mut()).unwrap();
    let report = grad_check(
        &model.params,
        tape.grads(),
        |p: &ModelParams| {
            let m = Model {
                params: p.clone(),
                ..model.clone()
            };
            m.loss(&ex)
        },
        &GradCheckOptions {
            // Balances truncation (grows with eps) against cancellation.
            eps: 1e-4,
            seed,
            ..Default::default()
        },
    )
    .unwrap();
    assert!(report.checked > 0);
    if report.max_rel_error >= 1e-4 {
        let (name, idx) = report.worst.unwrap();
        let a = tape.grads().arrays().iter().find(|(n, _)| *n == name).unwrap().1.data()[idx];
        eprintln!("{kind} seed {seed}: worst {name}[{idx}] analytic {a:e} rel {:e}", report.max_rel_error);
    }
    report.max_rel_error
}

#[test]
fn every_variant_passes_grad_check_over_twenty_seeds() {
    for kind in ModelKind::ALL {
        let worst = (0..20).map(|s| check(kind, s)).fold(0.0, f64::max);
        eprintln!("{kind}: max relative error {worst:e}");
        assert!(worst < 1e-4, "{kind}: max relative error {worst:e}");
    }
}

#[test]
fn loss_and_grad_reports_the_same_loss_as_scoring() {
    for kind in ModelKind::ALL {
        let model = Model::new(kind, ModelDims::new(5, 4, V).with_topics(3), 3).unwrap();
        let ex = random_example(3);
        let mut g = model.params.zeros_like();
        let a = model.loss_and_grad(&ex, &mut g).unwrap();
        let b = model.loss(&ex).unwrap();
        assert!((a - b).abs() < 1e-12, "{kind}");
    }
}

#[test]
fn gradients_accumulate_across_calls() {
    let model = Model::new(ModelKind::ARnn, ModelDims::new(5, 4, V), 1).unwrap();
    let ex = random_example(1);
    let mut once = model.params.zeros_like();
    model.loss_and_grad(&ex, &mut once).unwrap();
    let mut twice = model.params.zeros_like();
    model.loss_and_grad(&ex, &mut twice).unwrap();
    model.loss_and_grad(&ex, &mut twice).unwrap();
    for ((_, a), (_, b)) in once.arrays().iter().zip(twice.arrays()) {
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((2.0 * x - y).abs() < 1e-12);
        }
    }
}


#[test]
fn default_scale_gradients_match_in_absolute_terms() {
    let eps = 1e-5;
    for kind in ModelKind::ALL {
        let model = Model::new(kind, ModelDims::new(8, 6, V).with_topics(3), 4).unwrap();
        let ex = random_example(4);
        let mut g = model.params.zeros_like();
        model.loss_and_grad(&ex, &mut g).unwrap();
        let mut probe = model.clone();
        for k in 0..g.arrays().len() {
            let len = g.arrays()[k].1.data().len();
            for idx in (0..len).step_by(7) {
                let orig = model.params.arrays()[k].1.data()[idx];
                probe.params.arrays_mut()[k].1.data_mut()[idx] = orig + eps;
                let plus = probe.loss(&ex).unwrap();
                probe.params.arrays_mut()[k].1.data_mut()[idx] = orig - eps;
                let minus = probe.loss(&ex).unwrap();
                probe.params.arrays_mut()[k].1.data_mut()[idx] = orig;
                let numeric = (plus - minus) / (2.0 * eps);
                let analytic = g.arrays()[k].1.data()[idx];
                assert!(
                    (numeric - analytic).abs() < 1e-8,
                    "{kind} {}[{idx}]: {analytic:e} vs {numeric:e}",
                    g.arrays()[k].0
                );
            }
        }
    }
}
