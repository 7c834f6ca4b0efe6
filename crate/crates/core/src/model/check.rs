use rand::Rng;

use super::config::ModelConfig;
use super::network::{ForwardCtx, Model};
use crate::error::Result;
use crate::geom::{normalize, PointCloud};
use crate::nn::{gradcheck, GradcheckOptions, GradcheckReport, Tape};
use crate::rng::{derive_seed, rng_for};

/// Finite-difference check of the whole network on `instances` random
/// (initialization, cloud, label) triples, with dropout removed and batch
/// norm using batch statistics.
pub fn gradcheck_model(
    config: &ModelConfig,
    instances: usize,
    points: usize,
    seed: u64,
    opts: &GradcheckOptions,
) -> Result<GradcheckReport> {
    let cfg = config.without_dropout();
    let mut report = GradcheckReport::default();
    for i in 0..instances {
        let s = derive_seed(seed, &[i as u64]);
        let model = Model::new(cfg.clone(), s)?;
        let mut rng = rng_for(s, &[1]);
        let coords = (0..points).map(|_| std::array::from_fn(|_| rng.random_range(-1.0..1.0))).collect();
        let cloud = normalize(&PointCloud::from_coords(coords)?)?;
        let label = rng.random_range(0..cfg.head.num_classes);
        let plan = model.plan(&cloud)?;
        let ctx = || ForwardCtx::train(0).without_dropout();
        let analytic = model.loss_and_grads(&[&cloud], &[&plan], &[label], &mut ctx())?.grads;
        let eval = |ps: &crate::nn::ParamSet| -> Result<(f64, u64)> {
            let mut tape = Tape::new();
            let out = model.forward_with(ps, &mut tape, &[&cloud], &[&plan], &mut ctx())?;
            let loss = tape.softmax_xent(out.logits, &[label])?;
            Ok((tape.value(loss).get(0, 0), tape.kink_signature()))
        };
        let r = gradcheck(model.params(), &analytic, eval, &GradcheckOptions { seed: s, ..opts.clone() })?;
        report.merge(&r);
    }
    Ok(report)
}
