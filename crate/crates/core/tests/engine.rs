use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use setmixer::model::{ForwardCtx, MixerParams, SetMixer};
use setmixer::nn::{
    adam_step, gradcheck, layer_norm_forward, Activation, AdamConfig, AdamState, FcLayer, GradcheckOptions, Matrix,
    NormKind, ParamSet, Tape,
};

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

/// Runs `build` on a fresh tape and returns (loss, kink signature, parameter gradients).
fn run<F>(ps: &ParamSet, build: &F) -> (f64, u64, Vec<Option<Matrix>>)
where
    F: Fn(&mut Tape, &ParamSet) -> setmixer::nn::Var,
{
    let mut tape = Tape::new();
    let loss = build(&mut tape, ps);
    let value = tape.value(loss).get(0, 0);
    let grads = tape.backward(loss).unwrap().into_param_grads(ps.len());
    (value, tape.kink_signature(), grads)
}

fn check<F>(ps: &ParamSet, build: F, floor: f64) -> f64
where
    F: Fn(&mut Tape, &ParamSet) -> setmixer::nn::Var,
{
    let (_, _, grads) = run(ps, &build);
    let opts = GradcheckOptions { floor, ..GradcheckOptions::default() };
    let eval = |p: &ParamSet| {
        let (v, s, _) = run(p, &build);
        Ok((v, s))
    };
    let report = gradcheck(ps, &grads, eval, &opts).unwrap();
    assert!(report.checked > 0);
    report.overall()
}

#[test]
fn cross_entropy_gradient_matches_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut ps = ParamSet::new();
    let fc = FcLayer::init(&mut ps, "fc", 6, 5, Activation::None, &mut rng);
    let x = random_matrix(&mut rng, 4, 6);
    let labels = [0, 3, 4, 1];
    let err = check(
        &ps,
        |t, p| {
            let xv = t.constant(x.clone());
            let y = fc.apply(t, p, xv).unwrap();
            t.softmax_xent(y, &labels).unwrap()
        },
        1e-8,
    );
    assert!(err < 1e-6, "{err}");
}

#[test]
fn uniform_logits_give_log_class_count() {
    let mut tape = Tape::new();
    let z = tape.constant(Matrix::zeros(3, 40));
    let loss = tape.softmax_xent(z, &[0, 17, 39]).unwrap();
    assert!((tape.value(loss).get(0, 0) - 40f64.ln()).abs() < 1e-12);
    let mut tape = Tape::new();
    let z = tape.constant(Matrix::from_rows(&[[60.0, 0.0, 0.0]]).unwrap());
    let loss = tape.softmax_xent(z, &[0]).unwrap();
    assert!(tape.value(loss).get(0, 0) < 1e-20);
}

#[test]
fn normalization_gradients_match_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut ps = ParamSet::new();
    let g = ps.add("g", Matrix::from_fn(1, 4, |_, _| rng.random_range(0.5..1.5)));
    let s = ps.add("s", random_matrix(&mut rng, 1, 4));
    let w = ps.add("w", random_matrix(&mut rng, 4, 4));
    let x = random_matrix(&mut rng, 9, 4);
    let target = random_matrix(&mut rng, 9, 4);
    for batch in [true, false] {
        let err = check(
            &ps,
            |t, p| {
                let xv = t.constant(x.clone());
                let wv = t.param(p, w);
                let h = t.linear(xv, wv, None).unwrap();
                let (gv, sv) = (t.param(p, g), t.param(p, s));
                let y = if batch { t.batch_norm(h, gv, sv).unwrap().0 } else { t.layer_norm(h, gv, sv).unwrap() };
                t.sum_squares(y, target.clone()).unwrap()
            },
            1e-8,
        );
        assert!(err < 1e-6, "batch {batch}: {err}");
    }
}

#[test]
fn mixer_block_gradients_match_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for norm in [NormKind::LayerNorm, NormKind::None] {
        let mut mp = MixerParams::new(3, 8, 3, 4, 0.2);
        mp.norm = norm;
        let mut ps = ParamSet::new();
        let mixer = SetMixer::init(&mut ps, "mix", &mp, &mut rng).unwrap();
        let x = random_matrix(&mut rng, 2 * 8, 9);
        let target = random_matrix(&mut rng, 2, 6);
        let err = check(
            &ps,
            |t, p| {
                let xv = t.constant(x.clone());
                let y = mixer.apply(t, p, xv, 2, &mut ForwardCtx::train(0).without_dropout()).unwrap();
                t.sum_squares(y, target.clone()).unwrap()
            },
            1e-6,
        );
        assert!(err < 1e-4, "{norm:?}: {err}");
    }
}

#[test]
fn identity_chain_is_exact() {
    let mut ps = ParamSet::new();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let layers: Vec<FcLayer> = (0..3)
        .map(|i| {
            let l = FcLayer::init(&mut ps, &format!("fc{i}"), 5, 5, Activation::None, &mut rng);
            *ps.get_mut(l.weight) = Matrix::identity(5);
            l
        })
        .collect();
    let x = random_matrix(&mut rng, 3, 5);
    let mut tape = Tape::new();
    let mut h = tape.variable(x.clone());
    let input = h;
    for l in &layers {
        h = l.apply(&mut tape, &ps, h).unwrap();
    }
    assert!(tape.value(h).max_abs_diff(&x) < 1e-10);
    let loss = tape.sum_squares(h, Matrix::zeros(3, 5)).unwrap();
    let grads = tape.backward(loss).unwrap();
    let mut expected = x.clone();
    expected.scale(2.0);
    assert!(grads.wrt(input).unwrap().max_abs_diff(&expected) < 1e-10);
}

#[test]
fn layer_norm_rows_are_standardized() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = Matrix::from_fn(20, 16, |_, _| rng.random_range(-5.0..5.0));
    let y = layer_norm_forward(&x, &[1.0; 16], &[0.0; 16]).unwrap();
    for r in 0..20 {
        let row = y.row(r);
        let mean = row.iter().sum::<f64>() / 16.0;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 16.0;
        let raw = x.row(r);
        let rm = raw.iter().sum::<f64>() / 16.0;
        let rv = raw.iter().map(|v| (v - rm).powi(2)).sum::<f64>() / 16.0;
        assert!(mean.abs() < 1e-9);
        assert!((var - rv / (rv + 1e-5)).abs() < 1e-9);
    }
}

#[test]
fn adam_fits_a_linear_map() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut ps = ParamSet::new();
    let fc = FcLayer::init(&mut ps, "fc", 3, 2, Activation::None, &mut rng);
    let truth = random_matrix(&mut rng, 2, 3);
    let x = random_matrix(&mut rng, 32, 3);
    let y = x.matmul_nt(&truth).unwrap();
    let mut state = AdamState::new(&ps);
    let cfg = AdamConfig { lr: 0.05, ..AdamConfig::default() };
    let mut first = None;
    let mut last = 0.0;
    for _ in 0..300 {
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let out = fc.apply(&mut tape, &ps, xv).unwrap();
        let loss = tape.sum_squares(out, y.clone()).unwrap();
        last = tape.value(loss).get(0, 0);
        first.get_or_insert(last);
        let grads = tape.backward(loss).unwrap().into_param_grads(ps.len());
        adam_step(&mut ps, &grads, &mut state, &cfg);
    }
    assert!(last < 1e-4 * first.unwrap(), "{last}");
}
