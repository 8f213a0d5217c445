//! The stages. Each one checks its upstream files, skips itself when the
//! manifest says its inputs are unchanged, and records what it wrote.

use std::fmt;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use obfusim_core::analysis::{
    adaptiveness, budget_sweep, stealth_eval, transferability_eval, write_adaptiveness_csv, write_personalization_csv, write_privacy_csv,
    write_stealth_csv, write_sweep_csv, AdaptivenessConfig, AdaptivenessMatrix, EvalConfig, PrivacyEntry, Report, StealthResult, SweepConfig,
    SweepRow,
};
use obfusim_core::baselines::{baseline_registry, estimate_bias_weights, BiasWeights};
use obfusim_core::envgen::{OracleSet, UrlUniverse};
use obfusim_core::metrics::{write_metric_rows, LossKind, RewardSpec};
use obfusim_core::persona::{fit_mc, generate_traces, read_traces_csv, write_traces_csv, McModel};
use obfusim_core::rlagent::{train, write_curve_csv, ActMode, ActorCritic, HarpoObfuscator, RlEnv, TrackerLoss};
use obfusim_core::rng::{derive_seed, stream};
use obfusim_core::selector::{Obfuscator, SelectorRegistry};
use obfusim_core::surrogate::{collect_dataset, select_top, train_surrogate_on, CollectedData, SurrogateModel, SurrogateSet, TargetKind};
use obfusim_core::tracker::Tracker;
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::{ExperimentConfig, HARPO};
use crate::error::{CliError, Result};
use crate::manifest::{sha256_file, RunManifest};

const AGENT_KIND: &str = "actor-critic";
const PERSONALIZED: &str = "harpo-personalized";

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, clap::ValueEnum)]
pub enum Stage {
    GenUniverse,
    FitMc,
    Collect,
    TrainSurrogates,
    TrainRl,
    TrainBaselines,
    Evaluate,
    Stealth,
    Adapt,
    Sweep,
    Report,
    /// Every stage in order.
    All,
}

impl Stage {
    pub const PIPELINE: [Stage; 11] = [
        Stage::GenUniverse,
        Stage::FitMc,
        Stage::Collect,
        Stage::TrainSurrogates,
        Stage::TrainRl,
        Stage::TrainBaselines,
        Stage::Evaluate,
        Stage::Stealth,
        Stage::Adapt,
        Stage::Sweep,
        Stage::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::GenUniverse => "gen-universe",
            Stage::FitMc => "fit-mc",
            Stage::Collect => "collect",
            Stage::TrainSurrogates => "train-surrogates",
            Stage::TrainRl => "train-rl",
            Stage::TrainBaselines => "train-baselines",
            Stage::Evaluate => "evaluate",
            Stage::Stealth => "stealth",
            Stage::Adapt => "adapt",
            Stage::Sweep => "sweep",
            Stage::Report => "report",
            Stage::All => "all",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Outcome {
    Ran,
    Skipped,
}

pub fn agent_file(kind: LossKind) -> String {
    format!("agent-{kind:?}.json")
}

pub fn bias_file(kind: LossKind) -> String {
    format!("bias-{kind:?}.json")
}

const UNIVERSE: &str = "universe.json";
const ORACLES: &str = "oracles.json";
const MC_MODEL: &str = "mc-model.json";
const DATASET: &str = "dataset.json";
const SURROGATES: &str = "surrogates.json";
const PERSONALIZED_AGENT: &str = "agent-L2-personalized.json";
const EVALUATE: &str = "evaluate.json";
const STEALTH: &str = "stealth.json";
const ADAPT: &str = "adapt.json";
const SWEEP: &str = "sweep.json";

fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)?).map_err(CliError::io(format!("write {}", path.display())))
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(CliError::io(format!("read {}", path.display())))?;
    Ok(serde_json::from_str(&text)?)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).map_err(CliError::io(format!("create {}", path.display())))?))
}

/// Owns the run directory and its manifest.
pub struct Runner {
    pub config: ExperimentConfig,
    dir: PathBuf,
    config_hash: String,
    manifest: RunManifest,
    /// Rerun stages even when their inputs are unchanged.
    pub force: bool,
}

impl Runner {
    pub fn new(config: ExperimentConfig, dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(CliError::io(format!("create {}", dir.display())))?;
        let config_hash = config.hash();
        let manifest = RunManifest::load_or_new(&dir, &config_hash, config.seed, config.scale)?;
        Ok(Self { config, dir, config_hash, manifest, force: false })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn manifest(&self) -> &RunManifest {
        &self.manifest
    }

    /// Runs `stage`, or every stage for [`Stage::All`].
    pub fn run(&mut self, stage: Stage) -> Result<Vec<(Stage, Outcome)>> {
        if stage == Stage::All {
            return Stage::PIPELINE.iter().map(|s| Ok((*s, self.run_one(*s)?))).collect();
        }
        Ok(vec![(stage, self.run_one(stage)?)])
    }

    fn run_one(&mut self, stage: Stage) -> Result<Outcome> {
        let inputs = self.inputs(stage)?;
        let input_hash = self.input_hash(stage, &inputs)?;
        if !self.force && self.manifest.is_current(&self.dir, stage.name(), &input_hash) {
            log::info!("{stage}: inputs unchanged, skipping");
            return Ok(Outcome::Skipped);
        }
        log::info!("{stage}: running");
        let start = Instant::now();
        let outputs = match stage {
            Stage::GenUniverse => self.gen_universe()?,
            Stage::FitMc => self.fit_mc()?,
            Stage::Collect => self.collect()?,
            Stage::TrainSurrogates => self.train_surrogates()?,
            Stage::TrainRl => self.train_rl()?,
            Stage::TrainBaselines => self.train_baselines()?,
            Stage::Evaluate => self.evaluate()?,
            Stage::Stealth => self.stealth()?,
            Stage::Adapt => self.adapt()?,
            Stage::Sweep => self.sweep()?,
            Stage::Report => self.report()?,
            Stage::All => unreachable!("expanded by run"),
        };
        let secs = start.elapsed().as_secs_f64();
        log::info!("{stage}: wrote {} files in {secs:.1}s", outputs.len());
        self.manifest.record(&self.dir, stage.name(), input_hash, secs, &outputs)?;
        self.manifest.save(&self.dir)?;
        Ok(Outcome::Ran)
    }

    /// Upstream files of `stage`, each paired with the stage that writes it.
    fn requirements(&self, stage: Stage) -> Vec<(String, Stage)> {
        let c = &self.config;
        let base = |names: &[(&str, Stage)]| names.iter().map(|(n, s)| (n.to_string(), *s)).collect::<Vec<_>>();
        let agents = || {
            let mut v: Vec<(String, Stage)> = c.rewards.iter().map(|k| (agent_file(*k), Stage::TrainRl)).collect();
            if c.personalization.is_some() {
                v.push((PERSONALIZED_AGENT.to_string(), Stage::TrainRl));
            }
            v
        };
        let biases = || c.rewards.iter().map(|k| (bias_file(*k), Stage::TrainBaselines)).collect::<Vec<_>>();
        match stage {
            Stage::GenUniverse | Stage::All => Vec::new(),
            Stage::FitMc => base(&[(UNIVERSE, Stage::GenUniverse)]),
            Stage::Collect => base(&[(UNIVERSE, Stage::GenUniverse), (ORACLES, Stage::GenUniverse), (MC_MODEL, Stage::FitMc)]),
            Stage::TrainSurrogates => base(&[(UNIVERSE, Stage::GenUniverse), (DATASET, Stage::Collect)]),
            Stage::TrainRl | Stage::TrainBaselines => {
                base(&[(UNIVERSE, Stage::GenUniverse), (MC_MODEL, Stage::FitMc), (SURROGATES, Stage::TrainSurrogates)])
            }
            Stage::Evaluate => {
                let mut v = base(&[(UNIVERSE, Stage::GenUniverse), (ORACLES, Stage::GenUniverse), (MC_MODEL, Stage::FitMc), (SURROGATES, Stage::TrainSurrogates)]);
                v.extend(agents());
                v.extend(biases());
                v
            }
            Stage::Stealth | Stage::Adapt => {
                let kind = if stage == Stage::Stealth { c.stealth.reward } else { c.adapt.reward };
                let mut v = base(&[(UNIVERSE, Stage::GenUniverse), (MC_MODEL, Stage::FitMc)]);
                v.push((agent_file(kind), Stage::TrainRl));
                v.push((bias_file(kind), Stage::TrainBaselines));
                v
            }
            Stage::Sweep => {
                let mut v = base(&[(UNIVERSE, Stage::GenUniverse), (ORACLES, Stage::GenUniverse), (MC_MODEL, Stage::FitMc), (SURROGATES, Stage::TrainSurrogates)]);
                v.push((agent_file(c.sweep.reward), Stage::TrainRl));
                v.push((bias_file(c.sweep.reward), Stage::TrainBaselines));
                v
            }
            Stage::Report => base(&[(EVALUATE, Stage::Evaluate)]),
        }
    }

    /// Existing upstream files; a missing one names the stage that makes it.
    fn inputs(&self, stage: Stage) -> Result<Vec<String>> {
        let mut found = Vec::new();
        for (name, producer) in self.requirements(stage) {
            let path = self.dir.join(&name);
            if !path.is_file() {
                return Err(CliError::MissingArtifact { stage: producer.name(), path });
            }
            found.push(name);
        }
        if stage == Stage::Report {
            // the other tables join the report when their stages have run
            found.extend([STEALTH, ADAPT, SWEEP].iter().filter(|n| self.dir.join(n).is_file()).map(|n| n.to_string()));
        }
        Ok(found)
    }

    fn input_hash(&self, stage: Stage, inputs: &[String]) -> Result<String> {
        let mut h = Sha256::new();
        h.update(self.config_hash.as_bytes());
        h.update(stage.name().as_bytes());
        for name in inputs {
            h.update(name.as_bytes());
            h.update(sha256_file(&self.dir.join(name))?.0.as_bytes());
        }
        if stage == Stage::FitMc {
            if let Some(path) = &self.config.trace_csv {
                if !path.is_file() {
                    return Err(CliError::Config(format!("trace file {} does not exist", path.display())));
                }
                h.update(sha256_file(path)?.0.as_bytes());
            }
        }
        Ok(hex::encode(h.finalize()))
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn seed(&self, label: &str, index: u64) -> u64 {
        derive_seed(self.config.seed, label, index)
    }

    fn universe(&self) -> Result<UrlUniverse> {
        Ok(UrlUniverse::load(&self.path(UNIVERSE))?)
    }

    fn oracles(&self) -> Result<OracleSet> {
        Ok(OracleSet::load(&self.path(ORACLES))?)
    }

    fn mc(&self) -> Result<McModel> {
        read_json(&self.path(MC_MODEL))
    }

    fn surrogates(&self) -> Result<SurrogateSet> {
        Ok(SurrogateSet::load(&self.path(SURROGATES))?)
    }

    fn agent(&self, name: &str) -> Result<Arc<ActorCritic>> {
        Ok(Arc::new(obfusim_nn::load_checkpoint(&self.path(name), AGENT_KIND).map_err(obfusim_core::CoreError::from)?))
    }

    fn bias(&self, kind: LossKind) -> Result<BiasWeights> {
        Ok(BiasWeights::load(&self.path(&bias_file(kind)))?)
    }

    /// Oracles restricted to the targets that have surrogates, in surrogate order.
    fn truth(&self, surrogates: &SurrogateSet) -> Result<OracleSet> {
        Ok(self.oracles()?.subset(&surrogates.segment_ids(), &surrogates.bidder_ids())?)
    }

    /// Baselines with `kind`'s bias weights, plus the agent trained on `kind`.
    fn registry(&self, kind: LossKind) -> Result<SelectorRegistry> {
        let mut r = baseline_registry(Some(self.bias(kind)?));
        r.insert(Arc::new(HarpoObfuscator::new(HARPO, self.agent(&agent_file(kind))?, ActMode::Sample)));
        Ok(r)
    }

    fn gen_universe(&self) -> Result<Vec<String>> {
        let u = UrlUniverse::build(&self.config.universe, self.seed("universe", 0))?;
        let o = OracleSet::build(&u, &self.config.oracles, self.seed("oracles", 0))?;
        u.save(&self.path(UNIVERSE))?;
        o.save(&self.path(ORACLES))?;
        Ok(vec![UNIVERSE.into(), ORACLES.into()])
    }

    fn fit_mc(&self) -> Result<Vec<String>> {
        let u = self.universe()?;
        let categories = u.user_category_count();
        let traces = match &self.config.trace_csv {
            Some(path) => {
                let file = File::open(path).map_err(|e| CliError::Config(format!("cannot open trace file {}: {e}", path.display())))?;
                read_traces_csv(BufReader::new(file), categories)?
            }
            None => generate_traces(&u, &self.config.traces, self.seed("traces", 0))?,
        };
        write_traces_csv(create(&self.path("traces.csv"))?, &traces)?;
        let (model, diagnostics) = fit_mc(&traces, categories, &self.config.fit)?;
        write_json(&self.path(MC_MODEL), &model)?;
        write_json(&self.path("mc-diagnostics.json"), &diagnostics)?;
        Ok(vec!["traces.csv".into(), MC_MODEL.into(), "mc-diagnostics.json".into()])
    }

    fn collect(&self) -> Result<Vec<String>> {
        let (u, o, mc) = (self.universe()?, self.oracles()?, self.mc()?);
        let data = collect_dataset(&u, &o, &mc, &self.config.collect, self.seed("collect", 0))?;
        let dropped = data.targets.iter().filter(|t| t.dropped).count();
        if dropped > 0 {
            log::warn!("{dropped} targets fall below the minimum positive rate and get no surrogate");
        }
        data.save(&self.path(DATASET))?;
        Ok(vec![DATASET.into()])
    }

    fn train_surrogates(&self) -> Result<Vec<String>> {
        let u = self.universe()?;
        let data = CollectedData::load(&self.path(DATASET))?;
        let matrices = data.matrices(&u);
        let seed = self.seed("surrogates", 0);
        let kept: Vec<_> = data.kept().collect();
        let models = kept
            .par_iter()
            .map(|t| train_surrogate_on(&matrices, data.window, t, &self.config.surrogate, seed))
            .collect::<obfusim_core::Result<Vec<SurrogateModel>>>()?;
        let (segments, bidders): (Vec<_>, Vec<_>) = models.into_iter().partition(|m| m.target.kind == TargetKind::Segment);
        let (segments, _) = select_top(segments, self.config.selection.segments);
        let (bidders, _) = select_top(bidders, self.config.selection.bidders);
        let set = SurrogateSet { window: data.window, segments, bidders };

        let chosen: Vec<_> = set.segments.iter().chain(&set.bidders).map(|m| m.target).collect();
        let mut w = csv::Writer::from_writer(create(&self.path("surrogate-candidates.csv"))?);
        w.write_record(["target", "positive_rate", "dropped", "tpr", "fpr", "balanced_accuracy", "selected"]).map_err(csv_err)?;
        let mut trained = set.segments.iter().chain(&set.bidders).map(|m| (m.target, m.metrics)).collect::<Vec<_>>();
        trained.sort_by_key(|(t, _)| *t);
        for t in &data.targets {
            let metrics = trained.iter().find(|(id, _)| *id == t.target).map(|(_, m)| *m);
            let field = |f: fn(&obfusim_core::surrogate::HeldOutMetrics) -> f64| metrics.as_ref().map(|m| f(m).to_string()).unwrap_or_default();
            w.write_record([
                t.target.to_string(),
                t.positive_rate.to_string(),
                u8::from(t.dropped).to_string(),
                field(|m| m.tpr),
                field(|m| m.fpr),
                field(|m| m.balanced_accuracy()),
                u8::from(chosen.contains(&t.target)).to_string(),
            ])
            .map_err(csv_err)?;
        }
        w.flush().map_err(CliError::io("write surrogate-candidates.csv"))?;
        set.save(&self.path(SURROGATES))?;
        Ok(vec![SURROGATES.into(), "surrogate-candidates.csv".into()])
    }

    /// Trains one agent from scratch against the surrogates.
    fn train_agent(&self, u: &UrlUniverse, mc: &McModel, tracker: Arc<dyn Tracker>, reward: RewardSpec, alpha: f64, index: u64) -> Result<(ActorCritic, Vec<u8>)> {
        let cfg = &self.config;
        let a2c = obfusim_core::rlagent::A2cConfig { reward: reward.clone(), alpha, ..cfg.a2c.clone() };
        let loss = TrackerLoss { tracker, spec: reward };
        let env = RlEnv { universe: u, model: mc, loss: &loss };
        let mut agent = ActorCritic::new(cfg.agent.clone(), &mut stream(cfg.seed, "agent", index))?;
        let curve = train(&mut agent, &env, &a2c, self.seed("train-rl", index))?;
        let mut buf = Vec::new();
        write_curve_csv(&mut buf, &curve)?;
        Ok((agent, buf))
    }

    fn save_agent(&self, name: &str, agent: &ActorCritic, curve: &[u8], curve_name: &str) -> Result<()> {
        obfusim_nn::save_checkpoint(&self.path(name), AGENT_KIND, agent).map_err(obfusim_core::CoreError::from)?;
        fs::write(self.path(curve_name), curve).map_err(CliError::io(format!("write {curve_name}")))
    }

    fn train_rl(&self) -> Result<Vec<String>> {
        let cfg = &self.config;
        let (u, mc) = (self.universe()?, self.mc()?);
        let tracker: Arc<dyn Tracker> = Arc::new(self.surrogates()?);
        if let Some(p) = &cfg.personalization {
            p.validate(Some(tracker.segment_count()))?;
        }
        let delta = cfg.a2c.reward.delta;
        let mut jobs: Vec<(String, String, RewardSpec)> = cfg
            .rewards
            .iter()
            .map(|k| (agent_file(*k), format!("curve-{k:?}.csv"), RewardSpec::new(*k, delta)))
            .collect();
        if let Some(p) = &cfg.personalization {
            let spec = RewardSpec { personalization: Some(p.clone()), ..RewardSpec::new(LossKind::L2, delta) };
            jobs.push((PERSONALIZED_AGENT.into(), "curve-L2-personalized.csv".into(), spec));
        }
        let mut outputs = Vec::new();
        for (i, (name, curve_name, spec)) in jobs.into_iter().enumerate() {
            log::info!("training {name}");
            let (agent, curve) = self.train_agent(&u, &mc, tracker.clone(), spec, cfg.a2c.alpha, i as u64)?;
            self.save_agent(&name, &agent, &curve, &curve_name)?;
            outputs.extend([name, curve_name]);
        }
        Ok(outputs)
    }

    fn train_baselines(&self) -> Result<Vec<String>> {
        let cfg = &self.config;
        let (u, mc) = (self.universe()?, self.mc()?);
        let tracker: Arc<dyn Tracker> = Arc::new(self.surrogates()?);
        let mut outputs = Vec::new();
        for (i, kind) in cfg.rewards.iter().enumerate() {
            let loss = TrackerLoss { tracker: tracker.clone(), spec: RewardSpec::new(*kind, 0.0) };
            let w = estimate_bias_weights(&u, &mc, &loss, &cfg.bias, self.seed("bias", i as u64))?;
            let name = bias_file(*kind);
            w.save(&self.path(&name))?;
            outputs.push(name);
        }
        Ok(outputs)
    }

    fn evaluate(&self) -> Result<Vec<String>> {
        let cfg = &self.config;
        let (u, mc) = (self.universe()?, self.mc()?);
        let truth = self.truth(&self.surrogates()?)?;
        let pers = cfg.personalization.as_ref();
        let seed = self.seed("evaluate", 0);
        let per_reward = |name: &str| name == HARPO || name == "bias-intent";

        let mut runs: Vec<(Arc<dyn Obfuscator>, String)> = Vec::new();
        let plain = baseline_registry(None);
        for name in cfg.approaches.iter().filter(|n| !per_reward(n)) {
            runs.push((plain.get(name)?, String::new()));
        }
        for kind in &cfg.rewards {
            let registry = self.registry(*kind)?;
            for name in cfg.approaches.iter().filter(|n| per_reward(n)) {
                runs.push((registry.get(name)?, format!("{kind:?}")));
            }
        }
        if cfg.personalization.is_some() {
            runs.push((Arc::new(HarpoObfuscator::new(PERSONALIZED, self.agent(PERSONALIZED_AGENT)?, ActMode::Sample)), "L2".into()));
        }

        let mut entries = Vec::new();
        let mut rows = Vec::new();
        for (selector, trained_on) in &runs {
            let report = transferability_eval(selector.as_ref(), &truth, &u, &mc, &cfg.eval, pers, seed)?;
            let run_id = if trained_on.is_empty() { report.approach.clone() } else { format!("{}-{trained_on}", report.approach) };
            log::info!("{run_id}: L1 {:.4} L2 {:.3} L3 {:.4}", report.summary.l1_mean, report.summary.l2_mean, report.summary.l3_mean);
            rows.extend(report.metric_rows(&run_id));
            entries.push(PrivacyEntry { approach: report.approach, trained_on: trained_on.clone(), alpha: report.alpha, summary: report.summary });
        }
        let mut outputs = vec!["privacy.csv".to_string()];
        write_privacy_csv(&self.path("privacy.csv"), &entries)?;
        if pers.is_some() {
            write_personalization_csv(&self.path("personalization.csv"), &entries)?;
            outputs.push("personalization.csv".into());
        }
        write_metric_rows(create(&self.path("metrics.csv"))?, &rows)?;
        write_json(&self.path(EVALUATE), &entries)?;
        outputs.extend(["metrics.csv".into(), EVALUATE.into()]);
        Ok(outputs)
    }

    fn stealth(&self) -> Result<Vec<String>> {
        let cfg = &self.config;
        let (u, mc) = (self.universe()?, self.mc()?);
        let registry = self.registry(cfg.stealth.reward)?;
        let eval = EvalConfig { personas: cfg.stealth.personas, persona: cfg.eval.persona };
        let mut results: Vec<StealthResult> = Vec::new();
        for name in cfg.approaches.iter().filter(|n| *n != "control") {
            let r = stealth_eval(registry.get(name)?.as_ref(), &u, &mc, &eval, &cfg.detector, self.seed("stealth", 0))?;
            log::info!("{name}: detection error {:.3}", r.detection_error);
            results.push(r);
        }
        write_stealth_csv(&self.path("stealth.csv"), &results)?;
        write_json(&self.path(STEALTH), &results)?;
        Ok(vec!["stealth.csv".into(), STEALTH.into()])
    }

    fn adapt(&self) -> Result<Vec<String>> {
        let cfg = &self.config;
        let (u, mc) = (self.universe()?, self.mc()?);
        let registry = self.registry(cfg.adapt.reward)?;
        let types = cfg.adapt.types.min(mc.user_types.len());
        if types < cfg.adapt.types {
            log::warn!("the fitted model has only {types} user types");
        }
        let ac = AdaptivenessConfig { types: (0..types).collect(), personas_per_type: cfg.adapt.personas_per_type, persona: cfg.eval.persona };
        let mut matrices: Vec<AdaptivenessMatrix> = Vec::new();
        let mut outputs = Vec::new();
        for name in &cfg.approaches {
            let selector = registry.get(name)?;
            if !selector.selects_intents() {
                continue;
            }
            let m = adaptiveness(selector.as_ref(), &u, &mc, &ac, self.seed("adapt", 0))?;
            log::info!("{name}: adaptiveness {:.4}", m.mean_off_diagonal);
            let file = format!("adaptiveness-{name}.csv");
            write_adaptiveness_csv(&self.path(&file), &m)?;
            outputs.push(file);
            matrices.push(m);
        }
        write_json(&self.path(ADAPT), &matrices)?;
        outputs.push(ADAPT.into());
        Ok(outputs)
    }

    fn sweep(&self) -> Result<Vec<String>> {
        let cfg = &self.config;
        let (u, mc) = (self.universe()?, self.mc()?);
        let surrogates = self.surrogates()?;
        let truth = self.truth(&surrogates)?;
        let tracker: Arc<dyn Tracker> = Arc::new(surrogates);
        let kind = cfg.sweep.reward;
        let registry = self.registry(kind)?;
        let main_agent = self.agent(&agent_file(kind))?;
        let mut outputs = Vec::new();
        let mut k = 0u64;
        let mut approaches = |alpha: f64| -> obfusim_core::Result<Vec<Arc<dyn Obfuscator>>> {
            k += 1;
            let mut list = Vec::new();
            for name in &cfg.sweep.approaches {
                if name != HARPO {
                    list.push(registry.get(name)?);
                    continue;
                }
                let agent = if cfg.sweep.retrain && alpha != cfg.a2c.alpha {
                    let (agent, curve) = self
                        .train_agent(&u, &mc, tracker.clone(), RewardSpec::new(kind, cfg.a2c.reward.delta), alpha, 1000 + k)
                        .map_err(|e| obfusim_core::CoreError::InvalidInput(e.to_string()))?;
                    let (name, curve_name) = (format!("agent-sweep-{kind:?}-{alpha}.json"), format!("curve-sweep-{kind:?}-{alpha}.csv"));
                    self.save_agent(&name, &agent, &curve, &curve_name).map_err(|e| obfusim_core::CoreError::InvalidInput(e.to_string()))?;
                    outputs.extend([name, curve_name]);
                    Arc::new(agent)
                } else {
                    main_agent.clone()
                };
                list.push(Arc::new(HarpoObfuscator::new(HARPO, agent, ActMode::Sample)));
            }
            Ok(list)
        };
        let sc = SweepConfig {
            alphas: cfg.sweep.alphas.clone(),
            eval: EvalConfig { personas: cfg.sweep.personas, persona: cfg.eval.persona },
            detector: cfg.sweep.stealth.then(|| cfg.detector.clone()),
            stealth_personas: cfg.stealth.personas,
        };
        let rows: Vec<SweepRow> = budget_sweep(&mut approaches, &truth, &u, &mc, &sc, self.seed("sweep", 0))?;
        write_sweep_csv(&self.path("sweep.csv"), &rows)?;
        write_json(&self.path(SWEEP), &rows)?;
        outputs.extend(["sweep.csv".into(), SWEEP.into()]);
        Ok(outputs)
    }

    fn report(&self) -> Result<Vec<String>> {
        let optional = |name: &str| self.path(name).is_file();
        let report = Report {
            privacy: read_json(&self.path(EVALUATE))?,
            sweep: if optional(SWEEP) { read_json(&self.path(SWEEP))? } else { Vec::new() },
            stealth: if optional(STEALTH) { read_json(&self.path(STEALTH))? } else { Vec::new() },
            adaptiveness: if optional(ADAPT) { read_json(&self.path(ADAPT))? } else { Vec::new() },
        };
        let files = report.write_all(&self.path("report"))?;
        Ok(files.into_iter().map(|f| format!("report/{f}")).collect())
    }
}

fn csv_err(e: csv::Error) -> CliError {
    CliError::Core(e.into())
}
