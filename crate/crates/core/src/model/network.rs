use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{Aggregator, MixerParams, ModelConfig, SaLayerConfig};
use super::plan::{plan_cloud, CloudPlan, LevelPlan};
use crate::error::{Error, Result};
use crate::geom::{group, Point3, PointCloud};
use crate::nn::{
    Activation, DropoutSpec, FcLayer, Matrix, Mode, NormKind, NormLayer, NormUpdate, ParamSet, Tape,
    Var,
};

/// Mode, dropout randomness and collected batch-norm statistics for one forward pass.
pub struct ForwardCtx {
    pub mode: Mode,
    dropout: bool,
    rng: ChaCha8Rng,
    pub norm_updates: Vec<NormUpdate>,
}

impl ForwardCtx {
    pub fn eval() -> Self {
        ForwardCtx { mode: Mode::Eval, dropout: false, rng: ChaCha8Rng::seed_from_u64(0), norm_updates: Vec::new() }
    }

    pub fn train(seed: u64) -> Self {
        ForwardCtx { mode: Mode::Train, dropout: true, rng: ChaCha8Rng::seed_from_u64(seed), norm_updates: Vec::new() }
    }

    /// Training-mode normalization with every dropout disabled.
    pub fn without_dropout(mut self) -> Self {
        self.dropout = false;
        self
    }

    fn dropout(&mut self, tape: &mut Tape, x: Var, rate: f64) -> Result<Var> {
        let spec = DropoutSpec::new(rate, self.mode == Mode::Train && self.dropout)?;
        spec.apply(tape, x, &mut self.rng)
    }
}

/// Token mixing across sorted points followed by a channel reduction.
#[derive(Clone, Debug)]
pub struct SetMixer {
    pub params: MixerParams,
    norm: NormLayer,
    m: Vec<FcLayer>,
    r: FcLayer,
}

impl SetMixer {
    pub fn init(ps: &mut ParamSet, name: &str, params: &MixerParams, rng: &mut ChaCha8Rng) -> Result<Self> {
        params.validate()?;
        let width = params.n_sort * params.c_in;
        let norm = NormLayer::init(ps, &format!("{name}.norm"), params.norm, width);
        let mut m = Vec::with_capacity(3);
        let mut in_dim = params.k;
        for (i, &out) in params.m_layers.iter().enumerate() {
            let act = if i < 2 { Activation::Relu } else { Activation::None };
            m.push(FcLayer::init(ps, &format!("{name}.m{i}"), in_dim, out, act, rng));
            in_dim = out;
        }
        let r = FcLayer::init(ps, &format!("{name}.r"), params.r_in(), params.r_layer, Activation::None, rng);
        Ok(SetMixer { params: params.clone(), norm, m, r })
    }

    pub fn m_layers(&self) -> &[FcLayer] {
        &self.m
    }

    pub fn r_layer(&self) -> &FcLayer {
        &self.r
    }

    pub fn norm_layer(&self) -> &NormLayer {
        &self.norm
    }

    /// `x` stacks `groups` ordered matrices of k × (n_sort·c_in); the result is groups × 2·c_in.
    pub fn apply(&self, tape: &mut Tape, ps: &ParamSet, x: Var, groups: usize, ctx: &mut ForwardCtx) -> Result<Var> {
        let p = &self.params;
        let width = p.n_sort * p.c_in;
        if tape.value(x).shape() != (groups * p.k, width) {
            return Err(Error::shape(
                "mixer",
                format!("input {:?}, expected {:?}", tape.value(x).shape(), (groups * p.k, width)),
            ));
        }
        let x = self.norm.apply(tape, ps, x, ctx.mode, &mut ctx.norm_updates)?;
        let mut h = tape.block_transpose(x, p.k)?;
        for (i, layer) in self.m.iter().enumerate() {
            h = layer.apply(tape, ps, h)?;
            if i < 2 {
                h = ctx.dropout(tape, h, p.dropout_rate)?;
            }
        }
        let h = tape.block_transpose(h, width)?;
        let flat = tape.reshape(h, groups, p.r_in())?;
        self.r.apply(tape, ps, flat)
    }
}

/// Aggregates one k × (n_sort·c_in) ordered matrix into a 2·c_in vector.
pub fn mixer_aggregate(mixer: &SetMixer, ps: &ParamSet, ordered: &Matrix, ctx: &mut ForwardCtx) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let x = tape.constant(ordered.clone());
    let y = mixer.apply(&mut tape, ps, x, 1, ctx)?;
    Ok(tape.value(y).data().to_vec())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PoolKind {
    Max,
    Mean,
}

/// Channel-wise max or mean over the rows of `feats`.
pub fn pool_aggregate(feats: &Matrix, kind: PoolKind) -> Vec<f64> {
    let mut out = match kind {
        PoolKind::Max => vec![f64::NEG_INFINITY; feats.cols()],
        PoolKind::Mean => vec![0.0; feats.cols()],
    };
    for r in 0..feats.rows() {
        for (o, &v) in out.iter_mut().zip(feats.row(r)) {
            match kind {
                PoolKind::Max => *o = o.max(v),
                PoolKind::Mean => *o += v,
            }
        }
    }
    if kind == PoolKind::Mean && feats.rows() > 0 {
        out.iter_mut().for_each(|v| *v /= feats.rows() as f64);
    }
    out
}

#[derive(Clone, Debug)]
struct SaLayer {
    cfg: SaLayerConfig,
    shared: Vec<(FcLayer, NormLayer)>,
    mixer: Option<SetMixer>,
}

/// Input to one set abstraction level for a batch.
enum LevelInput<'a> {
    /// Raw clouds: members contribute their coordinates (and features).
    Clouds(&'a [&'a PointCloud]),
    /// Previous level output with `per_sample` rows per batch item.
    Features { var: Var, per_sample: usize },
}

impl SaLayer {
    fn forward(
        &self,
        tape: &mut Tape,
        ps: &ParamSet,
        plans: &[&LevelPlan],
        input: LevelInput<'_>,
        ctx: &mut ForwardCtx,
    ) -> Result<Var> {
        let (m, k) = (self.cfg.m_sets, self.cfg.k);
        let legacy = self.cfg.legacy_centering;
        let relative = |plan: &LevelPlan, row: usize| -> Point3 {
            let p = plan.member_coords[row];
            if legacy {
                let q = plan.groups.centers[row / k];
                [p[0] - q[0], p[1] - q[1], p[2] - q[2]]
            } else {
                p
            }
        };
        let mut x = match input {
            LevelInput::Clouds(clouds) => {
                let extra = clouds.first().map_or(0, |c| c.feat_channels());
                let mut data = Vec::with_capacity(plans.len() * m * k * (3 + extra));
                for (plan, cloud) in plans.iter().zip(clouds) {
                    if cloud.feat_channels() != extra {
                        return Err(Error::shape("sa_forward", "clouds in a batch differ in feature channels"));
                    }
                    for (row, &src) in plan.groups.indices.iter().enumerate() {
                        data.extend_from_slice(&relative(plan, row));
                        if let Some(f) = cloud.feats() {
                            data.extend_from_slice(f.row(src));
                        }
                    }
                }
                tape.constant(Matrix::new(plans.len() * m * k, 3 + extra, data)?)
            }
            LevelInput::Features { var, per_sample } => {
                let idx = plans
                    .iter()
                    .enumerate()
                    .flat_map(|(b, plan)| plan.groups.indices.iter().map(move |&i| b * per_sample + i))
                    .collect();
                let gathered = tape.gather_rows(var, idx)?;
                if legacy {
                    let mut data = Vec::with_capacity(plans.len() * m * k * 3);
                    for plan in plans {
                        for row in 0..m * k {
                            data.extend_from_slice(&relative(plan, row));
                        }
                    }
                    let rel = tape.constant(Matrix::new(plans.len() * m * k, 3, data)?);
                    tape.concat_cols(&[gathered, rel])?
                } else {
                    gathered
                }
            }
        };
        for (fc, norm) in &self.shared {
            x = fc.apply(tape, ps, x)?;
            x = norm.apply(tape, ps, x, ctx.mode, &mut ctx.norm_updates)?;
            x = tape.relu(x)?;
        }
        let groups = plans.len() * m;
        match &self.cfg.aggregator {
            Aggregator::MaxPool => tape.segment_max(x, k),
            Aggregator::MeanPool => tape.segment_mean(x, k),
            Aggregator::SetMixer { .. } | Aggregator::MixerNoSort { .. } => {
                let mixer = self.mixer.as_ref().expect("mixer layer initialised");
                let blocks = plans[0].orders.len();
                let mut parts = Vec::with_capacity(blocks);
                for j in 0..blocks {
                    let idx = plans
                        .iter()
                        .enumerate()
                        .flat_map(|(b, plan)| {
                            plan.orders[j].iter().enumerate().map(move |(pos, &local)| (b * m + pos / k) * k + local)
                        })
                        .collect();
                    parts.push(tape.gather_rows(x, idx)?);
                }
                let ordered = if parts.len() == 1 { parts[0] } else { tape.concat_cols(&parts)? };
                mixer.apply(tape, ps, ordered, groups, ctx)
            }
        }
    }
}

/// Output of a batched forward pass.
pub struct ForwardOutput {
    pub logits: Var,
    /// Per-level features, `(batch · m_sets) × channels`.
    pub levels: Vec<Var>,
}

pub struct BatchLoss {
    pub loss: f64,
    /// Indexed like the model's parameter set; `None` for buffers.
    pub grads: Vec<Option<Matrix>>,
    pub logits: Matrix,
}

/// Hierarchical set abstraction classifier.
#[derive(Clone, Debug)]
pub struct Model {
    config: ModelConfig,
    params: ParamSet,
    layers: Vec<SaLayer>,
    head: Vec<FcLayer>,
}

impl Model {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ps = ParamSet::new();
        let mut layers = Vec::with_capacity(config.sa_layers.len());
        for (i, sa) in config.sa_layers.iter().enumerate() {
            let mut in_dim = config.level_in_channels(i);
            let mut shared = Vec::new();
            for (j, &w) in sa.t_channels.iter().enumerate() {
                let fc = FcLayer::init(&mut ps, &format!("sa{i}.t{j}"), in_dim, w, Activation::None, &mut rng);
                let bn = NormLayer::init(&mut ps, &format!("sa{i}.t{j}.bn"), NormKind::BatchNorm, w);
                shared.push((fc, bn));
                in_dim = w;
            }
            let mixer = match sa.aggregator.mixer() {
                Some(mp) => Some(SetMixer::init(&mut ps, &format!("sa{i}.mixer"), mp, &mut rng)?),
                None => None,
            };
            layers.push(SaLayer { cfg: sa.clone(), shared, mixer });
        }
        let mut head = Vec::new();
        let mut in_dim = config.global_channels();
        for (j, &w) in config.head.widths.iter().enumerate() {
            head.push(FcLayer::init(&mut ps, &format!("head.fc{j}"), in_dim, w, Activation::Relu, &mut rng));
            in_dim = w;
        }
        let n = config.head.widths.len();
        head.push(FcLayer::init(&mut ps, &format!("head.fc{n}"), in_dim, config.head.num_classes, Activation::None, &mut rng));
        Ok(Model { config, params: ps, layers, head })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    /// Mixer of a level, if the level aggregates with one.
    pub fn mixer(&self, level: usize) -> Option<&SetMixer> {
        self.layers.get(level).and_then(|l| l.mixer.as_ref())
    }

    pub fn plan(&self, cloud: &PointCloud) -> Result<CloudPlan> {
        plan_cloud(cloud.coords(), &self.config)
    }

    /// Records a forward pass over a batch on `tape`, using `params` in place of the model's own.
    pub fn forward_with(
        &self,
        params: &ParamSet,
        tape: &mut Tape,
        clouds: &[&PointCloud],
        plans: &[&CloudPlan],
        ctx: &mut ForwardCtx,
    ) -> Result<ForwardOutput> {
        if clouds.len() != plans.len() || clouds.is_empty() {
            return Err(Error::shape("model_forward", "need one plan per cloud and a non-empty batch"));
        }
        if let Some(c) = clouds.iter().find(|c| c.feat_channels() != self.config.input_feats) {
            return Err(Error::shape(
                "model_forward",
                format!("cloud has {} feature channels, model expects {}", c.feat_channels(), self.config.input_feats),
            ));
        }
        let mut levels = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let lp: Vec<&LevelPlan> = plans.iter().map(|p| &p.levels[i]).collect();
            let input = match levels.last() {
                None => LevelInput::Clouds(clouds),
                Some(&var) => LevelInput::Features { var, per_sample: self.config.sa_layers[i - 1].m_sets },
            };
            levels.push(layer.forward(tape, params, &lp, input, ctx)?);
        }
        let mut x = *levels.last().expect("at least one level");
        for (j, fc) in self.head.iter().enumerate() {
            x = fc.apply(tape, params, x)?;
            if let Some(&rate) = self.config.head.dropout.get(j) {
                x = ctx.dropout(tape, x, rate)?;
            }
        }
        Ok(ForwardOutput { logits: x, levels })
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        clouds: &[&PointCloud],
        plans: &[&CloudPlan],
        ctx: &mut ForwardCtx,
    ) -> Result<ForwardOutput> {
        self.forward_with(&self.params, tape, clouds, plans, ctx)
    }

    /// Eval-mode logits of one cloud.
    pub fn logits(&self, cloud: &PointCloud) -> Result<Vec<f64>> {
        let plan = self.plan(cloud)?;
        let mut tape = Tape::new();
        let out = self.forward(&mut tape, &[cloud], &[&plan], &mut ForwardCtx::eval())?;
        Ok(tape.value(out.logits).data().to_vec())
    }

    /// Eval-mode logits for a batch with precomputed plans, one row per cloud.
    pub fn logits_batch(&self, clouds: &[&PointCloud], plans: &[&CloudPlan]) -> Result<Matrix> {
        let mut tape = Tape::new();
        let out = self.forward(&mut tape, clouds, plans, &mut ForwardCtx::eval())?;
        Ok(tape.value(out.logits).clone())
    }

    /// Eval-mode features of `level` (m_sets × channels) under a given plan.
    pub fn level_features(&self, cloud: &PointCloud, plan: &CloudPlan, level: usize) -> Result<Matrix> {
        if level >= self.layers.len() {
            return Err(Error::BadCount { requested: level + 1, available: self.layers.len() });
        }
        let mut tape = Tape::new();
        let out = self.forward(&mut tape, &[cloud], &[plan], &mut ForwardCtx::eval())?;
        Ok(tape.value(out.levels[level]).clone())
    }

    /// Mean cross-entropy of a batch, the gradient of every parameter and the logits.
    pub fn loss_and_grads(
        &self,
        clouds: &[&PointCloud],
        plans: &[&CloudPlan],
        labels: &[usize],
        ctx: &mut ForwardCtx,
    ) -> Result<BatchLoss> {
        let mut tape = Tape::new();
        let out = self.forward(&mut tape, clouds, plans, ctx)?;
        let loss = tape.softmax_xent(out.logits, labels)?;
        let value = tape.value(loss).get(0, 0);
        let logits = tape.value(out.logits).clone();
        let grads = tape.backward(loss)?;
        Ok(BatchLoss { loss: value, grads: grads.into_param_grads(self.params.len()), logits })
    }

    /// One set abstraction level applied on its own to `points` with per-point `feats`.
    ///
    /// At level 0 `feats` holds the cloud's extra channels (or `None`); deeper
    /// levels take the previous level's centers and output features.
    pub fn sa_forward(
        &self,
        level: usize,
        points: &[Point3],
        feats: Option<&Matrix>,
        ctx: &mut ForwardCtx,
    ) -> Result<(Vec<Point3>, Matrix)> {
        let layer = self
            .layers
            .get(level)
            .ok_or(Error::BadCount { requested: level + 1, available: self.layers.len() })?;
        let sa = &layer.cfg;
        let groups = group(points, sa.m_sets, sa.k, sa.center_mode)?;
        let frozen = CloudPlan {
            levels: vec![LevelPlan { groups, orders: Vec::new(), member_coords: Vec::new() }],
        };
        let single = ModelConfig { sa_layers: vec![sa.clone()], ..self.config.clone() };
        let plan = super::plan::plan_with_frozen(points, &single, Some(&frozen))?.levels.remove(0);
        let mut tape = Tape::new();
        let out = if level == 0 {
            let cloud = PointCloud::new(points.to_vec(), feats.cloned(), None)?;
            layer.forward(&mut tape, &self.params, &[&plan], LevelInput::Clouds(&[&cloud]), ctx)?
        } else {
            let f = feats.ok_or_else(|| Error::shape("sa_forward", "deeper levels need input features"))?;
            if f.rows() != points.len() {
                return Err(Error::FeatureRows { points: points.len(), feats: f.rows() });
            }
            let var = tape.constant(f.clone());
            layer.forward(&mut tape, &self.params, &[&plan], LevelInput::Features { var, per_sample: points.len() }, ctx)?
        };
        Ok((plan.groups.output_centers().to_vec(), tape.value(out).clone()))
    }
}
