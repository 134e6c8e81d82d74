//! Statistical fault-injection campaigns: trial generation, classification,
//! AVF/PVF aggregation, per-PE heatmaps and export.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::fault::{sample_with, CycleWindow, FaultSpec, SignalKind};
use crate::mesh::{JobTiming, MeshConfig};
use crate::qnn::{
    apply_layer, forward_trace, gemm_operands, load_model, run_from, sw_inject_bit, synthetic_input, Inference,
    ModelSpec, OffloadHook, QuantTensor, INPUT_SEED,
};
use crate::tiling::{plan_tiles, GemmShape, TileCoord, TilePlan};
use crate::{Error, Result};

pub const DEFAULT_FAULTS: usize = 500;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Rtl,
    Sw,
}

fn default_faults() -> usize {
    DEFAULT_FAULTS
}

fn default_signals() -> Vec<SignalKind> {
    SignalKind::ALL.to_vec()
}

fn default_true() -> bool {
    true
}

fn default_input_seed() -> u64 {
    INPUT_SEED
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignConfig {
    pub model: PathBuf,
    /// Number of bundled inputs, ids `0..inputs`.
    pub inputs: usize,
    #[serde(default = "default_faults")]
    pub faults_per_layer_per_input: usize,
    #[serde(default = "default_signals")]
    pub signals: Vec<SignalKind>,
    #[serde(default)]
    pub dim: Option<usize>,
    #[serde(default = "default_true")]
    pub valid_propagates: bool,
    pub mode: Mode,
    pub master_seed: u64,
    pub out_dir: PathBuf,
    /// GEMM layers to inject; all of them when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layers: Option<Vec<usize>>,
    #[serde(default = "default_input_seed")]
    pub input_seed: u64,
}

impl CampaignConfig {
    /// Reads a config file. A relative model path is taken relative to the
    /// file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut cfg: CampaignConfig = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        if let Some(dir) = path.parent() {
            if cfg.model.is_relative() {
                cfg.model = dir.join(&cfg.model);
            }
            if cfg.out_dir.is_relative() {
                cfg.out_dir = dir.join(&cfg.out_dir);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.inputs == 0 {
            return Err(Error::Config("inputs must be at least 1".into()));
        }
        if self.faults_per_layer_per_input == 0 {
            return Err(Error::Config("faults_per_layer_per_input must be at least 1".into()));
        }
        if self.mode == Mode::Rtl {
            if self.signals.is_empty() {
                return Err(Error::Config("signal set is empty".into()));
            }
            self.mesh_config()?;
        }
        Ok(())
    }

    pub fn mesh_config(&self) -> Result<MeshConfig> {
        let dim = self.dim.ok_or_else(|| Error::Config("rtl mode needs a mesh dim".into()))?;
        let cfg = MeshConfig::square(dim).with_valid_propagates(self.valid_propagates);
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Masked,
    ExposedBenign,
    Critical,
}

impl Outcome {
    pub fn name(self) -> &'static str {
        match self {
            Outcome::Masked => "masked",
            Outcome::ExposedBenign => "exposed_benign",
            Outcome::Critical => "critical",
        }
    }
}

pub fn classify_trial(golden_top1: usize, faulty_top1: usize, tile_exposed: bool) -> Outcome {
    if !tile_exposed {
        Outcome::Masked
    } else if golden_top1 != faulty_top1 {
        Outcome::Critical
    } else {
        Outcome::ExposedBenign
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SwFlip {
    pub element: usize,
    pub bit: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: u64,
    pub layer: usize,
    pub input: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tile: Option<TileCoord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fault: Option<FaultSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sw_flip: Option<SwFlip>,
    pub exposed: bool,
    pub outcome: Outcome,
    pub golden_top1: usize,
    pub faulty_top1: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutcomeCounts {
    pub masked: u64,
    pub exposed_benign: u64,
    pub critical: u64,
}

impl OutcomeCounts {
    pub fn add(&mut self, o: Outcome) {
        match o {
            Outcome::Masked => self.masked += 1,
            Outcome::ExposedBenign => self.exposed_benign += 1,
            Outcome::Critical => self.critical += 1,
        }
    }

    pub fn total(&self) -> u64 {
        self.masked + self.exposed_benign + self.critical
    }

    pub fn critical_rate(&self) -> f64 {
        ratio(self.critical, self.total())
    }

    pub fn exposure_rate(&self) -> f64 {
        ratio(self.exposed_benign + self.critical, self.total())
    }
}

fn ratio(n: u64, d: u64) -> f64 {
    if d == 0 {
        0.0
    } else {
        n as f64 / d as f64
    }
}

/// Per-PE counts for trials that targeted one signal. Rates are `None` for
/// PEs that received no trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Heatmap {
    pub signal: SignalKind,
    pub trials: Vec<Vec<u64>>,
    pub exposed: Vec<Vec<u64>>,
    pub critical: Vec<Vec<u64>>,
    pub avf: Vec<Vec<Option<f64>>>,
    pub exposure: Vec<Vec<Option<f64>>>,
}

impl Heatmap {
    pub fn new(signal: SignalKind, dim: usize) -> Self {
        let z = vec![vec![0u64; dim]; dim];
        Self {
            signal,
            trials: z.clone(),
            exposed: z.clone(),
            critical: z,
            avf: vec![vec![None; dim]; dim],
            exposure: vec![vec![None; dim]; dim],
        }
    }

    pub fn record(&mut self, row: usize, col: usize, exposed: bool, critical: bool) {
        self.trials[row][col] += 1;
        self.exposed[row][col] += u64::from(exposed);
        self.critical[row][col] += u64::from(critical);
    }

    pub fn finish(&mut self) {
        for r in 0..self.trials.len() {
            for c in 0..self.trials[r].len() {
                let n = self.trials[r][c];
                if n > 0 {
                    self.avf[r][c] = Some(self.critical[r][c] as f64 / n as f64);
                    self.exposure[r][c] = Some(self.exposed[r][c] as f64 / n as f64);
                }
            }
        }
    }

    /// Pooled rate of each row: events over trials across its PEs.
    pub fn row_rates(&self, critical: bool) -> Vec<Option<f64>> {
        let src = if critical { &self.critical } else { &self.exposed };
        (0..self.trials.len())
            .map(|r| {
                let n: u64 = self.trials[r].iter().sum();
                (n > 0).then(|| src[r].iter().sum::<u64>() as f64 / n as f64)
            })
            .collect()
    }

    /// Pooled rate of each column.
    pub fn col_rates(&self, critical: bool) -> Vec<Option<f64>> {
        let src = if critical { &self.critical } else { &self.exposed };
        let dim = self.trials.len();
        (0..dim)
            .map(|c| {
                let n: u64 = (0..dim).map(|r| self.trials[r][c]).sum();
                (n > 0).then(|| (0..dim).map(|r| src[r][c]).sum::<u64>() as f64 / n as f64)
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSummary {
    pub layer: usize,
    pub kind: String,
    pub gemm: GemmShape,
    pub tiles: usize,
    /// Fraction of padded output-tile cells that belong to the real GEMM.
    /// Faults landing outside that share are masked by construction.
    pub effective_fraction: f64,
    pub counts: OutcomeCounts,
    /// AVF in rtl mode, PVF in sw mode.
    pub vulnerability: f64,
    pub exposure: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignReport {
    pub config: CampaignConfig,
    pub master_seed: u64,
    pub mode: Mode,
    pub total_trials: u64,
    pub counts: OutcomeCounts,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub avf: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pvf: Option<f64>,
    /// Unweighted mean of the per-layer vulnerability factors.
    pub mean_layer_vulnerability: f64,
    pub exposure_rate: f64,
    pub layers: Vec<LayerSummary>,
    pub heatmaps: Vec<Heatmap>,
    pub trials: Vec<TrialRecord>,
}

impl CampaignReport {
    pub fn heatmap(&self, signal: SignalKind) -> Option<&Heatmap> {
        self.heatmaps.iter().find(|h| h.signal == signal)
    }

    pub fn vulnerability(&self) -> f64 {
        self.avf.or(self.pvf).unwrap_or(0.0)
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of one trial; depends only on its coordinates.
pub fn trial_seed(master_seed: u64, layer: usize, input: usize, trial: usize) -> u64 {
    [layer as u64, input as u64, trial as u64]
        .into_iter()
        .fold(splitmix64(master_seed), |h, v| splitmix64(h ^ v))
}

/// Fault-free activations of one input, kept for resuming mid-network.
#[derive(Debug, Clone, PartialEq)]
pub struct GoldenRun {
    pub input: QuantTensor,
    pub trace: Vec<QuantTensor>,
    pub inference: Inference,
}

impl GoldenRun {
    /// Input of layer `idx`.
    pub fn layer_input(&self, idx: usize) -> &QuantTensor {
        if idx == 0 {
            &self.input
        } else {
            &self.trace[idx - 1]
        }
    }
}

pub fn golden_runs(model: &ModelSpec, inputs: &[QuantTensor]) -> Result<Vec<GoldenRun>> {
    inputs
        .iter()
        .map(|x| {
            let trace = forward_trace(model, x)?;
            let inference = Inference::from_output(trace.last().expect("validated model has layers"));
            Ok(GoldenRun { input: x.clone(), trace, inference })
        })
        .collect()
}

pub fn golden_run(model: &ModelSpec, inputs: &[QuantTensor]) -> Result<Vec<Inference>> {
    Ok(golden_runs(model, inputs)?.into_iter().map(|g| g.inference).collect())
}

pub fn bundled_inputs(model: &ModelSpec, seed: u64, count: usize) -> Vec<QuantTensor> {
    (0..count).map(|i| synthetic_input(model, seed, i)).collect()
}

/// Shared, read-only state of a campaign.
pub struct Campaign {
    pub config: CampaignConfig,
    pub model: ModelSpec,
    pub mesh: Option<MeshConfig>,
    pub layers: Vec<usize>,
    pub plans: BTreeMap<usize, TilePlan>,
    pub golden: Vec<GoldenRun>,
}

impl Campaign {
    pub fn new(config: CampaignConfig, model: ModelSpec) -> Result<Self> {
        config.validate()?;
        model.validate()?;
        let gemm = model.gemm_layers();
        let layers = match &config.layers {
            Some(ls) => {
                if let Some(bad) = ls.iter().find(|l| !gemm.contains(l)) {
                    return Err(Error::Config(format!("layer {bad} is not a GEMM layer (GEMM layers: {gemm:?})")));
                }
                ls.clone()
            }
            None => gemm,
        };
        let golden = golden_runs(&model, &bundled_inputs(&model, config.input_seed, config.inputs))?;
        let mesh = match config.mode {
            Mode::Rtl => Some(config.mesh_config()?),
            Mode::Sw => None,
        };
        let mut plans = BTreeMap::new();
        if let Some(m) = mesh {
            for &l in &layers {
                let ops = gemm_operands(&model, l, golden[0].layer_input(l))?;
                let shape = GemmShape::new(ops.a.rows(), ops.a.cols(), ops.b.cols())?;
                plans.insert(l, plan_tiles(shape, m.dim())?);
            }
        }
        Ok(Self { config, model, mesh, layers, plans, golden })
    }

    pub fn from_config(config: CampaignConfig) -> Result<Self> {
        let model = load_model(&config.model)?;
        Self::new(config, model)
    }

    /// Trial coordinates in report order.
    pub fn schedule(&self) -> Vec<(u64, usize, usize, usize)> {
        let n = self.config.faults_per_layer_per_input;
        let mut out = Vec::with_capacity(self.layers.len() * self.config.inputs * n);
        for &l in &self.layers {
            for i in 0..self.config.inputs {
                for t in 0..n {
                    out.push((out.len() as u64, l, i, t));
                }
            }
        }
        out
    }

    pub fn run_trial(&self, id: u64, layer: usize, input: usize, t: usize) -> Result<TrialRecord> {
        let wrap = |e: Error| Error::Trial { trial: id, layer, input, source: Box::new(e) };
        let mut rng = ChaCha8Rng::seed_from_u64(trial_seed(self.config.master_seed, layer, input, t));
        let g = &self.golden[input];
        let golden_top1 = g.inference.top1;
        match self.config.mode {
            Mode::Rtl => {
                let mesh = self.mesh.expect("rtl campaign has a mesh");
                let plan = &self.plans[&layer];
                let tile = plan.tiles[rng.gen_range(0..plan.len())];
                let timing = JobTiming::new(mesh.dim(), mesh.dim());
                let fault =
                    sample_with(&mut rng, &mesh, &timing, &self.config.signals, CycleWindow::Compute).map_err(wrap)?;
                let mut hook = OffloadHook::new(layer, mesh, tile, vec![fault]);
                let y = apply_layer(&self.model, layer, g.layer_input(layer), Some(&mut hook)).map_err(wrap)?;
                let exposed = hook.result.as_ref().is_some_and(|r| r.exposed);
                let faulty_top1 = if exposed {
                    Inference::from_output(&run_from(&self.model, layer + 1, y, None).map_err(wrap)?).top1
                } else {
                    golden_top1
                };
                Ok(TrialRecord {
                    trial: id,
                    layer,
                    input,
                    tile: Some(tile),
                    fault: Some(fault),
                    sw_flip: None,
                    exposed,
                    outcome: classify_trial(golden_top1, faulty_top1, exposed),
                    golden_top1,
                    faulty_top1,
                })
            }
            Mode::Sw => {
                let mut y = g.trace[layer].clone();
                let flip = SwFlip { element: rng.gen_range(0..y.len()), bit: rng.gen_range(0..8) };
                sw_inject_bit(&mut y.data, flip.element, flip.bit).map_err(wrap)?;
                let faulty_top1 = Inference::from_output(&run_from(&self.model, layer + 1, y, None).map_err(wrap)?).top1;
                Ok(TrialRecord {
                    trial: id,
                    layer,
                    input,
                    tile: None,
                    fault: None,
                    sw_flip: Some(flip),
                    exposed: true,
                    outcome: classify_trial(golden_top1, faulty_top1, true),
                    golden_top1,
                    faulty_top1,
                })
            }
        }
    }

    /// Runs every trial on `workers` threads (0 = rayon default) and
    /// aggregates. Output does not depend on the worker count.
    pub fn run(&self, workers: usize) -> Result<CampaignReport> {
        let schedule = self.schedule();
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
        let trials: Vec<TrialRecord> = pool.install(|| {
            schedule
                .par_iter()
                .map(|&(id, l, i, t)| self.run_trial(id, l, i, t))
                .collect::<Result<Vec<_>>>()
        })?;
        Ok(self.aggregate(trials))
    }

    pub fn aggregate(&self, trials: Vec<TrialRecord>) -> CampaignReport {
        let mut counts = OutcomeCounts::default();
        let mut per_layer: BTreeMap<usize, OutcomeCounts> = self.layers.iter().map(|&l| (l, Default::default())).collect();
        let dim = self.mesh.map(|m| m.dim());
        let mut heatmaps: Vec<Heatmap> = match dim {
            Some(d) => self.config.signals.iter().map(|&s| Heatmap::new(s, d)).collect(),
            None => Vec::new(),
        };
        for t in &trials {
            counts.add(t.outcome);
            per_layer.entry(t.layer).or_default().add(t.outcome);
            if let Some(f) = t.fault {
                if let Some(h) = heatmaps.iter_mut().find(|h| h.signal == f.signal) {
                    h.record(f.row, f.col, t.exposed, t.outcome == Outcome::Critical);
                }
            }
        }
        heatmaps.iter_mut().for_each(Heatmap::finish);

        let layers: Vec<LayerSummary> = self
            .layers
            .iter()
            .map(|&l| {
                let c = per_layer[&l];
                let ops = gemm_operands(&self.model, l, self.golden[0].layer_input(l)).expect("checked at setup");
                let gemm = GemmShape { m: ops.a.rows(), k: ops.a.cols(), n: ops.b.cols() };
                let (tiles, effective_fraction) = match self.plans.get(&l) {
                    Some(p) => (p.len(), (gemm.m * gemm.n) as f64 / (p.padded_m * p.padded_n) as f64),
                    None => (0, 1.0),
                };
                LayerSummary {
                    layer: l,
                    kind: self.model.layers[l].kind.to_string(),
                    gemm,
                    tiles,
                    effective_fraction,
                    counts: c,
                    vulnerability: c.critical_rate(),
                    exposure: c.exposure_rate(),
                }
            })
            .collect();
        let mean = if layers.is_empty() {
            0.0
        } else {
            layers.iter().map(|l| l.vulnerability).sum::<f64>() / layers.len() as f64
        };
        let rate = counts.critical_rate();
        CampaignReport {
            config: self.config.clone(),
            master_seed: self.config.master_seed,
            mode: self.config.mode,
            total_trials: counts.total(),
            counts,
            avf: (self.config.mode == Mode::Rtl).then_some(rate),
            pvf: (self.config.mode == Mode::Sw).then_some(rate),
            mean_layer_vulnerability: mean,
            exposure_rate: counts.exposure_rate(),
            layers,
            heatmaps,
            trials,
        }
    }
}

pub fn run_campaign(config: &CampaignConfig, workers: usize) -> Result<CampaignReport> {
    Campaign::from_config(config.clone())?.run(workers)
}

fn grid_csv(grid: &[Vec<Option<f64>>]) -> String {
    let mut s = String::new();
    for row in grid {
        let cells: Vec<String> = row.iter().map(|v| v.map(|x| x.to_string()).unwrap_or_default()).collect();
        s.push_str(&cells.join(","));
        s.push('\n');
    }
    s
}

pub const TRIALS_HEADER: &str =
    "trial,layer,input,tile_mi,tile_ki,tile_ni,row,col,signal,bit,cycle,site,element,sw_bit,exposed,golden_top1,faulty_top1,outcome";

pub fn trials_csv(trials: &[TrialRecord]) -> String {
    let mut s = String::from(TRIALS_HEADER);
    s.push('\n');
    let opt = |v: Option<String>| v.unwrap_or_default();
    for t in trials {
        let tile = t.tile.map(|c| format!("{},{},{}", c.mi, c.ki, c.ni)).unwrap_or_else(|| ",,".into());
        let fault = t
            .fault
            .map(|f| format!("{},{},{},{},{},{}", f.row, f.col, f.signal, f.bit, f.cycle, f.site))
            .unwrap_or_else(|| ",,,,,".into());
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{}",
            t.trial,
            t.layer,
            t.input,
            tile,
            fault,
            opt(t.sw_flip.map(|f| f.element.to_string())),
            opt(t.sw_flip.map(|f| f.bit.to_string())),
            t.exposed,
            t.golden_top1,
            t.faulty_top1,
            t.outcome.name()
        );
    }
    s
}

/// Writes report.json, trials.csv and, per injected signal,
/// heatmap_<signal>.csv (AVF) and exposure_<signal>.csv. Returns the paths.
pub fn export_report(report: &CampaignReport, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let mut put = |name: String, body: String| -> Result<()> {
        let p = dir.join(name);
        std::fs::write(&p, body)?;
        written.push(p);
        Ok(())
    };
    put("report.json".into(), serde_json::to_string_pretty(report)? + "\n")?;
    put("trials.csv".into(), trials_csv(&report.trials))?;
    for h in &report.heatmaps {
        put(format!("heatmap_{}.csv", h.signal), grid_csv(&h.avf))?;
        put(format!("exposure_{}.csv", h.signal), grid_csv(&h.exposure))?;
    }
    Ok(written)
}

pub fn load_report(path: impl AsRef<Path>) -> Result<CampaignReport> {
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}
