use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::CenterMode;
use crate::nn::NormKind;
use crate::rng::sha256_hex;
use crate::sort::SortPlan;

/// Mixer aggregation over one group of `k` sorted points with `c_in` channels.
///
/// `m_layers` lists the output widths `[h1, h2, d]` of the three token-mixing
/// layers applied across the point dimension; `r_layer` is the output width
/// of the channel reduction and must equal `2 · c_in`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixerParams {
    pub k: usize,
    pub c_in: usize,
    pub n_sort: usize,
    pub m_layers: Vec<usize>,
    pub r_layer: usize,
    pub norm: NormKind,
    pub dropout_rate: f64,
}

impl MixerParams {
    /// `h1 = h2 = k`, the given `d`, layer norm, `r` doubling the channels.
    pub fn new(c_in: usize, k: usize, n_sort: usize, d: usize, dropout_rate: f64) -> Self {
        MixerParams {
            k,
            c_in,
            n_sort,
            m_layers: vec![k, k, d],
            r_layer: 2 * c_in,
            norm: NormKind::LayerNorm,
            dropout_rate,
        }
    }

    pub fn d(&self) -> usize {
        self.m_layers.last().copied().unwrap_or(0)
    }

    /// Input width of `r`: `d · n_sort · c_in`.
    pub fn r_in(&self) -> usize {
        self.d() * self.n_sort * self.c_in
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.c_in == 0 || self.n_sort == 0 {
            return Err(Error::config("mixer k, c_in and n_sort must be positive"));
        }
        if self.m_layers.len() != 3 || self.m_layers.contains(&0) {
            return Err(Error::config("mixer m_layers must hold three positive widths"));
        }
        if self.r_layer != 2 * self.c_in {
            return Err(Error::config(format!(
                "mixer r_layer is {}, expected 2·c_in = {}",
                self.r_layer,
                2 * self.c_in
            )));
        }
        if self.norm == NormKind::BatchNorm {
            return Err(Error::config("mixer norm must be layer_norm or none"));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::config("mixer dropout_rate outside [0, 1)"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Aggregator {
    SetMixer { mixer: MixerParams, plan: SortPlan },
    MaxPool,
    MeanPool,
    /// The mixer fed in storage order instead of sorted order.
    MixerNoSort { mixer: MixerParams },
}

impl Aggregator {
    pub fn mixer(&self) -> Option<&MixerParams> {
        match self {
            Aggregator::SetMixer { mixer, .. } | Aggregator::MixerNoSort { mixer } => Some(mixer),
            _ => None,
        }
    }

    fn mixer_mut(&mut self) -> Option<&mut MixerParams> {
        match self {
            Aggregator::SetMixer { mixer, .. } | Aggregator::MixerNoSort { mixer } => Some(mixer),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregatorKind {
    SetMixer,
    MaxPool,
    MeanPool,
    MixerNoSort,
}

/// One set abstraction level: sample `m_sets` groups of `k` points, map every
/// member through the shared layers `t_channels`, aggregate each group.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SaLayerConfig {
    pub m_sets: usize,
    pub k: usize,
    pub t_channels: Vec<usize>,
    pub aggregator: Aggregator,
    #[serde(default)]
    pub center_mode: CenterMode,
    /// Feed member coordinates relative to the query point (at every level)
    /// instead of global coordinates at the first level only.
    #[serde(default)]
    pub legacy_centering: bool,
}

impl SaLayerConfig {
    pub fn out_channels(&self) -> usize {
        match &self.aggregator {
            Aggregator::SetMixer { mixer, .. } | Aggregator::MixerNoSort { mixer } => mixer.r_layer,
            Aggregator::MaxPool | Aggregator::MeanPool => *self.t_channels.last().unwrap_or(&0),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeadConfig {
    pub widths: Vec<usize>,
    pub dropout: Vec<f64>,
    pub num_classes: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub sa_layers: Vec<SaLayerConfig>,
    pub head: HeadConfig,
    /// Per-point feature channels carried by input clouds besides xyz.
    #[serde(default)]
    pub input_feats: usize,
}

impl ModelConfig {
    /// Input channels of the shared layers at `level`.
    pub fn level_in_channels(&self, level: usize) -> usize {
        let base = if level == 0 { 3 + self.input_feats } else { self.sa_layers[level - 1].out_channels() };
        let legacy = level > 0 && self.sa_layers[level].legacy_centering;
        base + if legacy { 3 } else { 0 }
    }

    pub fn global_channels(&self) -> usize {
        self.sa_layers.last().map_or(0, SaLayerConfig::out_channels)
    }

    pub fn validate(&self) -> Result<()> {
        if self.sa_layers.is_empty() {
            return Err(Error::config("at least one set abstraction layer is required"));
        }
        for (i, sa) in self.sa_layers.iter().enumerate() {
            let ctx = |msg: String| Error::config(format!("sa_layers[{i}]: {msg}"));
            if sa.m_sets == 0 || sa.k == 0 {
                return Err(ctx("m_sets and k must be positive".into()));
            }
            if sa.t_channels.is_empty() || sa.t_channels.contains(&0) {
                return Err(ctx("t_channels must be non-empty positive widths".into()));
            }
            if i > 0 {
                let prev = self.sa_layers[i - 1].m_sets;
                if sa.k > prev || sa.m_sets > prev {
                    return Err(ctx(format!("m_sets {} / k {} exceed the {prev} incoming sets", sa.m_sets, sa.k)));
                }
            }
            let c = *sa.t_channels.last().expect("non-empty");
            if let Some(mixer) = sa.aggregator.mixer() {
                mixer.validate().map_err(|e| ctx(e.to_string()))?;
                if mixer.c_in != c || mixer.k != sa.k {
                    return Err(ctx(format!(
                        "mixer (c_in {}, k {}) does not match layer (channels {c}, k {})",
                        mixer.c_in, mixer.k, sa.k
                    )));
                }
            }
            match &sa.aggregator {
                Aggregator::SetMixer { mixer, plan } => {
                    plan.validate().map_err(|e| ctx(e.to_string()))?;
                    if plan.len() != mixer.n_sort {
                        return Err(ctx(format!("n_sort {} but plan has {} strategies", mixer.n_sort, plan.len())));
                    }
                }
                Aggregator::MixerNoSort { mixer } if mixer.n_sort != 1 => {
                    return Err(ctx("mixer_no_sort uses a single storage-order block (n_sort = 1)".into()));
                }
                _ => {}
            }
        }
        if self.sa_layers.last().map(|s| s.m_sets) != Some(1) {
            return Err(Error::config("the last set abstraction layer must emit a single global set"));
        }
        let h = &self.head;
        if h.widths.len() != h.dropout.len() {
            return Err(Error::config("head widths and dropout rates differ in length"));
        }
        if h.num_classes == 0 || h.widths.contains(&0) {
            return Err(Error::config("head widths and class count must be positive"));
        }
        if h.dropout.iter().any(|r| !(0.0..1.0).contains(r)) {
            return Err(Error::config("head dropout outside [0, 1)"));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        sha256_hex(&serde_json::to_vec(self).expect("config serializes"))
    }

    /// Copy with every dropout rate set to zero.
    pub fn without_dropout(&self) -> ModelConfig {
        let mut cfg = self.clone();
        for sa in &mut cfg.sa_layers {
            if let Some(m) = sa.aggregator.mixer_mut() {
                m.dropout_rate = 0.0;
            }
        }
        cfg.head.dropout.iter_mut().for_each(|r| *r = 0.0);
        cfg
    }

    pub fn with_center_mode(mut self, mode: CenterMode) -> ModelConfig {
        self.sa_layers.iter_mut().for_each(|s| s.center_mode = mode);
        self
    }

    pub fn with_mixer_norm(mut self, norm: NormKind) -> ModelConfig {
        for sa in &mut self.sa_layers {
            if let Some(m) = sa.aggregator.mixer_mut() {
                m.norm = norm;
            }
        }
        self
    }

    pub fn with_sort_plan(mut self, plan: &SortPlan) -> ModelConfig {
        for sa in &mut self.sa_layers {
            if let Aggregator::SetMixer { mixer, plan: p } = &mut sa.aggregator {
                mixer.n_sort = plan.len();
                *p = plan.clone();
            }
        }
        self
    }
}

struct Level {
    m_sets: usize,
    k: usize,
    t: Vec<usize>,
    d: usize,
}

fn build(levels: &[Level], head: HeadConfig, kind: AggregatorKind, plan: &SortPlan, dropout: f64) -> ModelConfig {
    let sa_layers = levels
        .iter()
        .map(|l| {
            let c = *l.t.last().expect("widths");
            let (t_channels, aggregator) = match kind {
                AggregatorKind::SetMixer => (
                    l.t.clone(),
                    Aggregator::SetMixer { mixer: MixerParams::new(c, l.k, plan.len(), l.d, dropout), plan: plan.clone() },
                ),
                AggregatorKind::MixerNoSort => {
                    (l.t.clone(), Aggregator::MixerNoSort { mixer: MixerParams::new(c, l.k, 1, l.d, dropout) })
                }
                // Pooling keeps the channel chain of the mixer variant by widening
                // the last shared layer to the mixer's 2·c output.
                AggregatorKind::MaxPool | AggregatorKind::MeanPool => {
                    let mut t = l.t.clone();
                    *t.last_mut().expect("widths") = 2 * c;
                    let agg = if kind == AggregatorKind::MaxPool { Aggregator::MaxPool } else { Aggregator::MeanPool };
                    (t, agg)
                }
            };
            SaLayerConfig {
                m_sets: l.m_sets,
                k: l.k,
                t_channels,
                aggregator,
                center_mode: CenterMode::SpatialCenter,
                legacy_centering: false,
            }
        })
        .collect();
    ModelConfig { sa_layers, head, input_feats: 0 }
}

/// Full-size network: 512/128/1 sets of 32/64/128 points, 40 classes.
pub fn canonical_config() -> ModelConfig {
    canonical_variant(AggregatorKind::SetMixer)
}

pub fn canonical_variant(kind: AggregatorKind) -> ModelConfig {
    let levels = [
        Level { m_sets: 512, k: 32, t: vec![64, 64, 64], d: 8 },
        Level { m_sets: 128, k: 64, t: vec![128, 128, 128], d: 8 },
        Level { m_sets: 1, k: 128, t: vec![256, 512, 512], d: 8 },
    ];
    let head = HeadConfig { widths: vec![512, 256], dropout: vec![0.5, 0.5], num_classes: 40 };
    build(&levels, head, kind, &SortPlan::aps_xyz(), 0.2)
}

/// Scaled-down network for CPU training: 64/16/1 sets of 16 points.
pub fn desk_config(num_classes: usize) -> ModelConfig {
    desk_variant(num_classes, AggregatorKind::SetMixer)
}

pub fn desk_variant(num_classes: usize, kind: AggregatorKind) -> ModelConfig {
    let levels = [
        Level { m_sets: 64, k: 16, t: vec![16, 16, 16], d: 2 },
        Level { m_sets: 16, k: 16, t: vec![32, 32, 32], d: 2 },
        Level { m_sets: 1, k: 16, t: vec![64, 64, 64], d: 2 },
    ];
    let head = HeadConfig { widths: vec![64, 32], dropout: vec![0.5, 0.5], num_classes };
    build(&levels, head, kind, &SortPlan::aps_xyz(), 0.2)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_chain_matches_layer_table() {
        let cfg = canonical_config();
        cfg.validate().unwrap();
        let outs: Vec<usize> = cfg.sa_layers.iter().map(SaLayerConfig::out_channels).collect();
        assert_eq!(outs, vec![128, 256, 1024]);
        assert_eq!(cfg.level_in_channels(1), 128);
        let m = cfg.sa_layers[2].aggregator.mixer().unwrap();
        assert_eq!((m.c_in, m.k, m.dropout_rate), (512, 128, 0.2));
        assert_eq!(cfg.head.widths, vec![512, 256]);
    }

    #[test]
    fn variants_share_channel_chain() {
        for kind in [AggregatorKind::SetMixer, AggregatorKind::MaxPool, AggregatorKind::MeanPool, AggregatorKind::MixerNoSort] {
            let cfg = desk_variant(8, kind);
            cfg.validate().unwrap();
            assert_eq!(cfg.global_channels(), 128, "{kind:?}");
        }
    }

    #[test]
    fn json_round_trip_and_hash() {
        let cfg = desk_config(8);
        let json = serde_json::to_string(&cfg).unwrap();
        assert!(json.contains("\"sa_layers\""));
        assert!(json.contains("\"type\":\"set_mixer\""));
        assert!(json.contains("\"m_layers\":[16,16,2]"));
        let back: ModelConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
        assert_ne!(cfg.hash(), desk_config(9).hash());
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut cfg = desk_config(8);
        cfg.sa_layers[0].t_channels = vec![16, 16, 8];
        assert!(cfg.validate().is_err());
        let mut cfg = desk_config(8);
        cfg.sa_layers[2].m_sets = 2;
        assert!(cfg.validate().is_err());
        let mut cfg = desk_config(8);
        cfg.head.dropout = vec![0.5];
        assert!(cfg.validate().is_err());
        let mut cfg = desk_config(8);
        if let Aggregator::SetMixer { mixer, .. } = &mut cfg.sa_layers[0].aggregator {
            mixer.r_layer = 16;
        }
        assert!(cfg.validate().is_err());
    }
}
