use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};
use wimp_core::counterfactual::{counterfactual_predict, SceneEdit};
use wimp_core::evaluation::{evaluate, MetricsReport, Subset};
use wimp_core::lane_graph::{propose_polylines, LaneGraph, ProposalConfig};
use wimp_core::model::{condition_polylines, ModelConfig, PolylineQuery, WimpModel};
use wimp_core::scenario::generator::{generate_dataset, Dataset, GeneratorParams, Mix, Split};
use wimp_core::scenario::templates::map_templates;
use wimp_core::scenario::Scenario;
use wimp_core::training::{samples_for_split, train, TrainConfig};

use crate::service::{self, RankedPredictions, ServiceState};
use crate::CliError;

pub type CliResult<T> = Result<T, CliError>;

#[derive(Parser, Debug)]
#[command(name = "wimp", version, about = "Map-conditioned multimodal trajectory forecasting")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write a synthetic dataset (manifest, maps and scenarios).
    GenerateData(GenerateArgs),
    Train(TrainArgs),
    /// Print forecasting metrics as JSON.
    Eval(EvalArgs),
    /// Print ranked reference polylines for a scenario's focal actor.
    Propose(ProposeArgs),
    Predict(PredictArgs),
    /// Forecast a scenario before and after a list of edits.
    Whatif(WhatifArgs),
    /// Run the HTTP inference service.
    Serve(ServeArgs),
}

#[derive(Args, Debug)]
pub struct GenerateArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 100)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// e.g. `straight=0.3,left=0.2,right=0.2,lane=0.05,follow=0.25`
    #[arg(long)]
    pub mix: Option<String>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum Preset {
    Desk,
    Paper,
}

impl Preset {
    fn name(self) -> &'static str {
        match self {
            Preset::Desk => "desk",
            Preset::Paper => "paper",
        }
    }
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value = "desk")]
    pub preset: Preset,
    #[arg(long)]
    pub out: PathBuf,
    /// Zero the polyline context.
    #[arg(long)]
    pub no_map: bool,
    /// Skip the social graph attention.
    #[arg(long)]
    pub no_social: bool,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub patience: Option<usize>,
    /// JSONL epoch log; defaults to `<out>.log.jsonl`.
    #[arg(long)]
    pub log: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum SubsetArg {
    All,
    Bt,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum SplitArg {
    Train,
    Val,
    Test,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long, default_value_t = 6)]
    pub k: usize,
    #[arg(long, value_enum, default_value = "all")]
    pub subset: SubsetArg,
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitArg,
    /// Number of focal proposals the K forecasts are spread over.
    #[arg(long, default_value_t = 1)]
    pub polylines: usize,
}

#[derive(Args, Debug)]
pub struct ProposeArgs {
    #[arg(long)]
    pub map: PathBuf,
    #[arg(long)]
    pub scenario: PathBuf,
    #[arg(long, default_value_t = 6)]
    pub k: usize,
}

#[derive(Args, Debug)]
pub struct PredictArgs {
    #[arg(long)]
    pub scenario: PathBuf,
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long, default_value_t = 6)]
    pub k: usize,
    /// Map file; defaults to the built-in map named by the scenario.
    #[arg(long)]
    pub map: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct WhatifArgs {
    #[arg(long)]
    pub scenario: PathBuf,
    #[arg(long)]
    pub ckpt: PathBuf,
    /// JSON array of scene edits.
    #[arg(long)]
    pub edits: PathBuf,
    #[arg(long, default_value_t = 6)]
    pub k: usize,
    #[arg(long)]
    pub map: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ServeArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
}

/// Runs a command and returns the JSON it prints on stdout.
pub fn run(cmd: Command) -> CliResult<Value> {
    match cmd {
        Command::GenerateData(a) => generate(&a),
        Command::Train(a) => train_cmd(&a),
        Command::Eval(a) => Ok(serde_json::to_value(eval_cmd(&a)?)?),
        Command::Propose(a) => propose(&a),
        Command::Predict(a) => predict(&a),
        Command::Whatif(a) => whatif(&a),
        Command::Serve(a) => {
            serve(&a)?;
            Ok(Value::Null)
        }
    }
}

pub fn generate(a: &GenerateArgs) -> CliResult<Value> {
    let mix = match &a.mix {
        Some(s) => Mix::parse(s)?,
        None => Mix::default(),
    };
    let params = GeneratorParams {
        n_scenarios: a.n,
        seed: a.seed,
        mix,
        ..Default::default()
    };
    let ds = generate_dataset(&params)?;
    ds.write(&a.out)?;
    Ok(json!({"out": a.out, "n_scenarios": ds.scenarios.len(), "maps": ds.maps.keys().collect::<Vec<_>>()}))
}

/// Model config for a dataset: the preset with the dataset's horizons.
pub fn model_config(preset: &str, ds: &Dataset, no_map: bool, no_social: bool) -> CliResult<ModelConfig> {
    let mut cfg = ModelConfig::preset(preset)?;
    let p = &ds.manifest.params;
    cfg.obs_len = p.obs_len;
    cfg.pred_len = p.pred_len;
    cfg.waypoint_horizon = cfg.waypoint_horizon.min(p.pred_len);
    cfg.use_map = !no_map;
    cfg.use_social = !no_social;
    cfg.validate()?;
    Ok(cfg)
}

fn default_log_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".log.jsonl");
    PathBuf::from(s)
}

pub fn train_cmd(a: &TrainArgs) -> CliResult<Value> {
    let ds = Dataset::load(&a.data)?;
    let mcfg = model_config(a.preset.name(), &ds, a.no_map, a.no_social)?;
    let mut tcfg = TrainConfig::preset(a.preset.name())?;
    if let Some(e) = a.epochs {
        tcfg.max_epochs = e;
    }
    if let Some(lr) = a.lr {
        tcfg.lr = lr;
    }
    if let Some(s) = a.seed {
        tcfg.seed = s;
    }
    if let Some(p) = a.patience {
        tcfg.patience = p;
    }
    let proposal = ProposalConfig::default();
    let train_set = samples_for_split(&ds, Split::Train, PolylineQuery::Full, &mcfg, &proposal)?;
    let val_set = samples_for_split(&ds, Split::Val, PolylineQuery::Observed, &mcfg, &proposal)?;
    log::info!("{} training and {} validation samples", train_set.len(), val_set.len());
    let model = WimpModel::new(mcfg, tcfg.seed)?;
    let log_path = a.log.clone().unwrap_or_else(|| default_log_path(&a.out));
    let mut sink = BufWriter::new(File::create(&log_path)?);
    let outcome = train(model, &train_set, &val_set, &tcfg, Some(&mut sink))?;
    sink.flush()?;
    outcome.model.save(&a.out)?;
    Ok(json!({
        "checkpoint": a.out,
        "log": log_path,
        "epochs": outcome.log.len(),
        "best_epoch": outcome.best_epoch,
        "best_val_minFDE": outcome.best_val_min_fde,
        "mixture_ranks": outcome.model.mixture_ranks,
    }))
}

pub fn eval_cmd(a: &EvalArgs) -> CliResult<MetricsReport> {
    let ds = Dataset::load(&a.data)?;
    let model = WimpModel::load(&a.ckpt)?;
    let subset = match a.subset {
        SubsetArg::All => Subset::All,
        SubsetArg::Bt => Subset::Bt,
    };
    let split = match a.split {
        SplitArg::Train => Split::Train,
        SplitArg::Val => Split::Val,
        SplitArg::Test => Split::Test,
    };
    Ok(evaluate(&model, &ds, split, a.k, subset, a.polylines, &ProposalConfig::default())?)
}

pub fn propose(a: &ProposeArgs) -> CliResult<Value> {
    let g = LaneGraph::load(&a.map)?;
    let sc = Scenario::load(&a.scenario)?;
    let c = propose_polylines(&g, &sc.focal().observed, a.k, &ProposalConfig::default())?;
    Ok(serde_json::to_value(c)?)
}

/// The map given on the command line, else the built-in map the scenario names.
fn resolve_map(map: Option<&Path>, sc: &Scenario) -> CliResult<LaneGraph> {
    match map {
        Some(p) => Ok(LaneGraph::load(p)?),
        None => map_templates().remove(&sc.map_id).ok_or_else(|| {
            CliError::new("UnknownMap", format!("no built-in map `{}`; pass --map", sc.map_id))
        }),
    }
}

fn check_k(k: usize, model: &WimpModel) -> CliResult<()> {
    let m = model.config.mixtures;
    if k == 0 || k > m {
        return Err(CliError::new("InvalidArgument", format!("k must be in [1, {m}], got {k}")));
    }
    Ok(())
}

pub fn predict(a: &PredictArgs) -> CliResult<Value> {
    let model = WimpModel::load(&a.ckpt)?;
    check_k(a.k, &model)?;
    let sc = Scenario::load(&a.scenario)?;
    let g = resolve_map(a.map.as_deref(), &sc)?;
    let lines = condition_polylines(&g, &sc, PolylineQuery::Observed, &ProposalConfig::default())?;
    let ps = model.predict(&sc, &lines)?;
    Ok(json!({
        "top_k": RankedPredictions::new(&ps, a.k),
        "prediction_set": ps,
    }))
}

pub fn whatif(a: &WhatifArgs) -> CliResult<Value> {
    let model = WimpModel::load(&a.ckpt)?;
    check_k(a.k, &model)?;
    let sc = Scenario::load(&a.scenario)?;
    let g = resolve_map(a.map.as_deref(), &sc)?;
    let edits: Vec<SceneEdit> = serde_json::from_str(&std::fs::read_to_string(&a.edits)?)?;
    let cf = counterfactual_predict(&model, &g, &sc, &edits, None, &ProposalConfig::default())?;
    Ok(json!({
        "baseline": RankedPredictions::new(&cf.baseline, a.k),
        "edited": RankedPredictions::new(&cf.edited, a.k),
        "deltas": cf.deltas,
    }))
}

pub fn serve(a: &ServeArgs) -> CliResult<()> {
    let state = Arc::new(ServiceState {
        model: WimpModel::load(&a.ckpt)?,
        dataset: Dataset::load(&a.data)?,
        proposal: ProposalConfig::default(),
    });
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(service::serve(state, &a.host, a.port))?;
    Ok(())
}
