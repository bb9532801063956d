//! The forecasting network: shared recurrent encoder with polyline attention,
//! a polyline-blind waypoint predictor, residual graph attention and an
//! autoregressive decoder with one prediction head per mixture.

mod forward;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diff::{checkpoint, ParamId, ParameterStore, Tensor};
use crate::error::{Error, Result};
use crate::lane_graph::{propose_polylines, LaneGraph, ProposalConfig};
use crate::scenario::Scenario;
use crate::{Point2, Polyline2};

pub use forward::{build_graph, prepare, social_fusion, GraphOutput, Mode, PreparedScene};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub hidden_size: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub attention_heads: usize,
    pub mixtures: usize,
    pub waypoint_horizon: usize,
    pub obs_len: usize,
    pub pred_len: usize,
    pub dropout_rate: f64,
    pub dropout_layers: usize,
    /// Width of the polyline-blind kinematic stream feeding the waypoint predictor.
    pub kin_hidden: usize,
    /// Normalized coordinates are divided by this many meters.
    pub position_scale: f64,
    pub use_map: bool,
    pub use_social: bool,
}

impl ModelConfig {
    pub fn desk() -> Self {
        ModelConfig {
            hidden_size: 32,
            encoder_layers: 2,
            decoder_layers: 2,
            attention_heads: 2,
            mixtures: 6,
            waypoint_horizon: 15,
            obs_len: 10,
            pred_len: 15,
            dropout_rate: 0.1,
            dropout_layers: 1,
            kin_hidden: 16,
            position_scale: 10.0,
            use_map: true,
            use_social: true,
        }
    }

    pub fn paper() -> Self {
        ModelConfig {
            hidden_size: 512,
            encoder_layers: 4,
            decoder_layers: 4,
            attention_heads: 4,
            mixtures: 6,
            waypoint_horizon: 30,
            obs_len: 20,
            pred_len: 30,
            dropout_rate: 0.5,
            dropout_layers: 3,
            kin_hidden: 64,
            position_scale: 10.0,
            use_map: true,
            use_social: true,
        }
    }

    /// Small enough for finite-difference checks of the whole network.
    pub fn tiny() -> Self {
        ModelConfig {
            hidden_size: 8,
            encoder_layers: 1,
            decoder_layers: 1,
            attention_heads: 2,
            mixtures: 2,
            waypoint_horizon: 3,
            obs_len: 4,
            pred_len: 3,
            dropout_rate: 0.0,
            dropout_layers: 0,
            kin_hidden: 4,
            position_scale: 10.0,
            use_map: true,
            use_social: true,
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "desk" => Ok(Self::desk()),
            "paper" => Ok(Self::paper()),
            "tiny" => Ok(Self::tiny()),
            other => Err(Error::InvalidConfig(format!("unknown preset `{other}`"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("hidden_size", self.hidden_size),
            ("encoder_layers", self.encoder_layers),
            ("decoder_layers", self.decoder_layers),
            ("attention_heads", self.attention_heads),
            ("mixtures", self.mixtures),
            ("waypoint_horizon", self.waypoint_horizon),
            ("obs_len", self.obs_len),
            ("pred_len", self.pred_len),
            ("kin_hidden", self.kin_hidden),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::InvalidConfig(format!("{name} must be at least 1")));
            }
        }
        if self.decoder_layers != self.encoder_layers {
            return Err(Error::InvalidConfig("decoder_layers must equal encoder_layers".into()));
        }
        if self.dropout_layers >= self.encoder_layers {
            return Err(Error::InvalidConfig("dropout_layers must be below encoder_layers".into()));
        }
        if self.waypoint_horizon > self.pred_len {
            return Err(Error::InvalidConfig("waypoint_horizon exceeds pred_len".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::InvalidConfig("dropout_rate must lie in [0, 1)".into()));
        }
        if !(self.position_scale > 0.0 && self.position_scale.is_finite()) {
            return Err(Error::InvalidConfig("position_scale must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
struct LstmIds {
    w_ih: ParamId,
    w_hh: ParamId,
    b: ParamId,
}

#[derive(Clone, Debug)]
struct AttentionIds {
    embed_w: ParamId,
    embed_b: ParamId,
    q: ParamId,
    k: ParamId,
    v: ParamId,
}

#[derive(Clone, Debug)]
struct ParamIds {
    kin: LstmIds,
    wp_w: ParamId,
    wp_b: ParamId,
    enc_attn: AttentionIds,
    enc: Vec<LstmIds>,
    gat: Vec<(ParamId, ParamId)>,
    dec_attn: AttentionIds,
    dec: Vec<LstmIds>,
    heads: Vec<(ParamId, ParamId)>,
}

fn lookup(store: &ParameterStore<f64>, name: &str) -> Result<ParamId> {
    store
        .id(name)
        .ok_or_else(|| Error::Checkpoint(format!("missing parameter `{name}`")))
}

impl ParamIds {
    fn resolve(store: &ParameterStore<f64>, cfg: &ModelConfig) -> Result<Self> {
        let lstm = |p: &str| -> Result<LstmIds> {
            Ok(LstmIds {
                w_ih: lookup(store, &format!("{p}.w_ih"))?,
                w_hh: lookup(store, &format!("{p}.w_hh"))?,
                b: lookup(store, &format!("{p}.b"))?,
            })
        };
        let attn = |p: &str| -> Result<AttentionIds> {
            Ok(AttentionIds {
                embed_w: lookup(store, &format!("{p}.embed.w"))?,
                embed_b: lookup(store, &format!("{p}.embed.b"))?,
                q: lookup(store, &format!("{p}.q"))?,
                k: lookup(store, &format!("{p}.k"))?,
                v: lookup(store, &format!("{p}.v"))?,
            })
        };
        Ok(ParamIds {
            kin: lstm("kin")?,
            wp_w: lookup(store, "wp.w")?,
            wp_b: lookup(store, "wp.b")?,
            enc_attn: attn("enc.attn")?,
            enc: (0..cfg.encoder_layers).map(|l| lstm(&format!("enc.{l}"))).collect::<Result<_>>()?,
            gat: (0..cfg.attention_heads)
                .map(|d| Ok((lookup(store, &format!("gat.{d}.w"))?, lookup(store, &format!("gat.{d}.a"))?)))
                .collect::<Result<_>>()?,
            dec_attn: attn("dec.attn")?,
            dec: (0..cfg.decoder_layers).map(|l| lstm(&format!("dec.{l}"))).collect::<Result<_>>()?,
            heads: (0..cfg.mixtures)
                .map(|m| Ok((lookup(store, &format!("pred.{m}.w"))?, lookup(store, &format!("pred.{m}.b"))?)))
                .collect::<Result<_>>()?,
        })
    }
}

fn add_lstm(store: &mut ParameterStore<f64>, p: &str, input: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Result<()> {
    store.add_glorot(format!("{p}.w_ih"), input, 4 * hidden, rng)?;
    store.add_glorot(format!("{p}.w_hh"), hidden, 4 * hidden, rng)?;
    // forget-gate bias starts at one
    let b = Tensor::from_fn(1, 4 * hidden, |_, c| if (hidden..2 * hidden).contains(&c) { 1.0 } else { 0.0 });
    store.add(format!("{p}.b"), b)?;
    Ok(())
}

fn add_attention(store: &mut ParameterStore<f64>, p: &str, h: usize, rng: &mut ChaCha8Rng) -> Result<()> {
    store.add_glorot(format!("{p}.embed.w"), 2, h, rng)?;
    store.add(format!("{p}.embed.b"), Tensor::zeros(1, h))?;
    for m in ["q", "k", "v"] {
        store.add_glorot(format!("{p}.{m}"), h, h, rng)?;
    }
    Ok(())
}

/// Network weights with their configuration and the validation ranking of mixtures.
#[derive(Clone, Debug)]
pub struct WimpModel {
    pub config: ModelConfig,
    pub params: ParameterStore<f64>,
    pub mixture_ranks: Vec<usize>,
    ids: ParamIds,
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    config: ModelConfig,
    mixture_ranks: Vec<usize>,
}

impl WimpModel {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (h, k) = (config.hidden_size, config.kin_hidden);
        let mut s = ParameterStore::new();
        add_lstm(&mut s, "kin", 2, k, &mut rng)?;
        // waypoint starts at the current position
        s.add("wp.w", Tensor::from_fn(2 + k, 2, |r, c| if r == c { 1.0 } else { 0.0 }))?;
        s.add("wp.b", Tensor::zeros(1, 2))?;
        add_attention(&mut s, "enc.attn", h, &mut rng)?;
        for l in 0..config.encoder_layers {
            add_lstm(&mut s, &format!("enc.{l}"), if l == 0 { 2 + h } else { h }, h, &mut rng)?;
        }
        for d in 0..config.attention_heads {
            s.add_glorot(format!("gat.{d}.w"), h, h, &mut rng)?;
            s.add_glorot(format!("gat.{d}.a"), 2 * h, 1, &mut rng)?;
        }
        add_attention(&mut s, "dec.attn", h, &mut rng)?;
        for l in 0..config.decoder_layers {
            add_lstm(&mut s, &format!("dec.{l}"), if l == 0 { 2 + h } else { h }, h, &mut rng)?;
        }
        for m in 0..config.mixtures {
            s.add_glorot(format!("pred.{m}.w"), h, 2, &mut rng)?;
            s.add(format!("pred.{m}.b"), Tensor::zeros(1, 2))?;
        }
        Self::from_parts(config, s, None)
    }

    pub fn from_parts(config: ModelConfig, params: ParameterStore<f64>, mixture_ranks: Option<Vec<usize>>) -> Result<Self> {
        config.validate()?;
        let ids = ParamIds::resolve(&params, &config)?;
        let ranks = mixture_ranks.unwrap_or_else(|| (0..config.mixtures).collect());
        let mut sorted = ranks.clone();
        sorted.sort_unstable();
        if sorted != (0..config.mixtures).collect::<Vec<_>>() {
            return Err(Error::InvalidConfig(format!("mixture ranks {ranks:?} are not a permutation")));
        }
        Ok(WimpModel {
            config,
            params,
            mixture_ranks: ranks,
            ids,
        })
    }

    /// Copy with every parameter set to zero.
    pub fn zeroed(&self) -> Self {
        let mut m = self.clone();
        for id in self.params.ids().collect::<Vec<_>>() {
            let t = m.params.value_mut(id);
            *t = Tensor::zeros(t.rows(), t.cols());
        }
        m
    }

    pub fn sidecar_path(ckpt: &Path) -> PathBuf {
        let mut s = ckpt.as_os_str().to_owned();
        s.push(".json");
        PathBuf::from(s)
    }

    /// Writes the weights to `path` and the configuration to `path.json`.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        checkpoint::save(&self.params, path)?;
        let side = Sidecar {
            config: self.config.clone(),
            mixture_ranks: self.mixture_ranks.clone(),
        };
        std::fs::write(Self::sidecar_path(path), serde_json::to_string_pretty(&side)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let params = checkpoint::load(path)?;
        let side: Sidecar = serde_json::from_str(&std::fs::read_to_string(Self::sidecar_path(path))?)?;
        Self::from_parts(side.config, params, Some(side.mixture_ranks))
    }

    /// Eval-mode prediction for the focal actor.
    pub fn predict(&self, scenario: &Scenario, polylines: &ActorPolylines) -> Result<PredictionSet> {
        let prep = prepare(scenario, polylines, &self.config)?;
        forward::predict_prepared(self, &prep)
    }
}

/// Conditioning polyline per actor id.
pub type ActorPolylines = BTreeMap<String, Polyline2>;

/// Which part of each track queries the polyline proposer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PolylineQuery {
    /// Observed history only, as at inference time.
    Observed,
    /// Observed plus ground-truth future where present, as during training.
    Full,
}

/// Top-ranked proposal for every actor.
pub fn condition_polylines(
    graph: &LaneGraph,
    scenario: &Scenario,
    query: PolylineQuery,
    cfg: &ProposalConfig,
) -> Result<ActorPolylines> {
    let mut out = ActorPolylines::new();
    for (id, track) in &scenario.actors {
        let pts = match query {
            PolylineQuery::Observed => track.observed.clone(),
            PolylineQuery::Full => track.full(),
        };
        let best = propose_polylines(graph, &pts, 1, cfg)?
            .into_iter()
            .next()
            .ok_or(Error::EmptyResult(cfg.max_expansions))?;
        out.insert(id.clone(), best.points);
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolylineAttentionTrace {
    pub current_index: usize,
    pub goal_index: usize,
    /// Weights over the inclusive index range between the two indices, in ascending order.
    pub weights: Vec<f64>,
    pub context: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SocialAttention {
    pub actor_id: String,
    /// Focal-row attention per head, top encoder layer.
    pub weights: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Traces {
    /// World-frame waypoint of the focal actor at the last observed step.
    pub waypoint: Option<Point2>,
    /// Focal polyline attention per observed step.
    pub encoder: Vec<PolylineAttentionTrace>,
    /// Per mixture, per predicted step.
    pub decoder: Vec<Vec<PolylineAttentionTrace>>,
    pub social: Vec<SocialAttention>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionSet {
    /// One world-frame trajectory per mixture, in head order.
    pub trajectories: Vec<Vec<Point2>>,
    pub mixture_ranks: Vec<usize>,
    pub traces: Traces,
}

impl PredictionSet {
    /// The `k` best-ranked trajectories.
    pub fn top_k(&self, k: usize) -> Vec<Vec<Point2>> {
        self.mixture_ranks
            .iter()
            .take(k)
            .map(|&m| self.trajectories[m].clone())
            .collect()
    }

    pub fn top(&self) -> &[Point2] {
        &self.trajectories[self.mixture_ranks[0]]
    }
}

/// Small hand-built scenes for tests and examples.
pub mod fixtures {
    use super::ActorPolylines;
    use crate::scenario::{ActorTrack, Scenario};
    use crate::{Point2, Polyline2};

    /// `n` actors on parallel east-bound lanes 3.5 m apart with slightly
    /// different speeds; futures included. The focal actor is "focal".
    pub fn parallel_scene(n: usize, obs_len: usize, pred_len: usize) -> (Scenario, ActorPolylines) {
        let mut actors = std::collections::BTreeMap::new();
        let mut lines = ActorPolylines::new();
        for i in 0..n {
            let id = if i == 0 { "focal".to_string() } else { format!("a{i}") };
            let y = 3.5 * i as f64;
            let v = 1.0 + 0.1 * i as f64;
            let x0 = -2.0 * i as f64;
            let pt = |t: usize| Point2::new(x0 + v * t as f64 + 0.05 * (t * t) as f64 * (i % 2) as f64, y + 0.02 * t as f64);
            actors.insert(
                id.clone(),
                ActorTrack {
                    observed: (0..obs_len).map(pt).collect(),
                    future: Some((obs_len..obs_len + pred_len).map(pt).collect()),
                },
            );
            let line = Polyline2::new((0..40).map(|k| Point2::new(x0 - 5.0 + k as f64, y)).collect()).expect("distinct points");
            lines.insert(id, line);
        }
        let sc = Scenario {
            id: "parallel".into(),
            map_id: "none".into(),
            focal_id: "focal".into(),
            actors,
            metadata: None,
        };
        (sc, lines)
    }
}

#[cfg(test)]
mod tests;
