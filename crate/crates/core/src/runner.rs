//! The full timeline: pretrain on the labeled initial stage, then grow and
//! merge at every later stage, evaluating after each.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{save_checkpoint, Checkpoint};
use crate::count::{default_range, estimate_novel_count};
use crate::error::{GmError, Result};
use crate::grow::{augment, detect_novelty, run_growing, GrowConfig};
use crate::kernel::{l2_normalize, mean, squared_euclidean, Metric, Vec64};
use crate::memory::ExemplarStore;
use crate::merge::{run_merging, sift_pseudo_labeled, unify_branches, unify_categories, MergeConfig};
use crate::metrics::{evaluate_timestep, MetricsLedger, Summary};
use crate::model::{backward, BranchPair, ClusterHead, Encoder, LossContext, LossWeights, OptState, PllTerm};
use crate::report::{write_report, Report};
use crate::scenario::{build_stream, generate_synthetic, load_csv, Sample, ScenarioSpec, Stream};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DataSource {
    /// Gaussian blobs; `per_class` counts train and test together.
    Synthetic { classes: usize, per_class: usize, dim: usize, separation: f64 },
    Csv { path: PathBuf },
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::Synthetic { classes: 10, per_class: 250, dim: 16, separation: 8.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub hidden: Vec<usize>,
    pub embedding_dim: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { hidden: vec![64], embedding_dim: 32 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub tau: f64,
    pub augment_sigma: f64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self { epochs: 50, batch_size: 32, tau: 0.1, augment_sigma: 0.05 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub decay_every: usize,
    pub decay_factor: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self { learning_rate: 0.1, momentum: 0.9, weight_decay: 1e-4, decay_every: 60, decay_factor: 0.1 }
    }
}

impl OptimizerConfig {
    pub fn state(&self) -> Result<OptState> {
        let mut s = OptState::new(self.learning_rate, self.momentum, self.weight_decay)?;
        s.decay_every = self.decay_every;
        s.decay_factor = self.decay_factor;
        Ok(s)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NovelCount {
    /// Use the number of classes the stream actually introduces.
    #[default]
    Given,
    Estimate,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    #[default]
    GrowMerge,
    /// Ablation: growing and category unification only, no merge training
    /// and no branch averaging.
    GrowOnly,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// `scenario.seed` is replaced by `seed` when the run starts.
    pub scenario: ScenarioSpec,
    pub data: DataSource,
    pub model: ModelConfig,
    pub pretrain: PretrainConfig,
    pub grow: GrowConfig,
    pub merge: MergeConfig,
    pub weights: LossWeights,
    pub optimizer: OptimizerConfig,
    pub budget: usize,
    pub metric: Metric,
    pub novel_count: NovelCount,
    /// Inclusive candidate range for estimated counts; by default derived
    /// from the stream's true count.
    pub count_range: Option<(usize, usize)>,
    pub variant: Variant,
    pub seed: u64,
    pub out_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            scenario: ScenarioSpec::default(),
            data: DataSource::default(),
            model: ModelConfig::default(),
            pretrain: PretrainConfig::default(),
            grow: GrowConfig::default(),
            merge: MergeConfig::default(),
            weights: LossWeights::default(),
            optimizer: OptimizerConfig::default(),
            budget: 200,
            metric: Metric::default(),
            novel_count: NovelCount::default(),
            count_range: None,
            variant: Variant::default(),
            seed: 0,
            out_dir: None,
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        self.grow.validate(self.model.embedding_dim)?;
        self.merge.validate()?;
        self.weights.validate()?;
        self.optimizer.state()?;
        if self.budget == 0 || self.model.embedding_dim == 0 || self.model.hidden.contains(&0) {
            return Err(GmError::Config("budget and layer widths must be positive".into()));
        }
        if self.pretrain.batch_size == 0 || !(self.pretrain.tau > 0.0) || !(self.pretrain.augment_sigma >= 0.0) {
            return Err(GmError::Config("pretrain needs batch_size >= 1, tau > 0, augment_sigma >= 0".into()));
        }
        if let Some((a, b)) = self.count_range {
            if a == 0 || a > b {
                return Err(GmError::Config(format!("count_range ({a}, {b}) must satisfy 1 <= low <= high")));
            }
        }
        Ok(())
    }

    pub fn samples(&self) -> Result<Vec<Sample>> {
        match &self.data {
            DataSource::Synthetic { classes, per_class, dim, separation } => {
                generate_synthetic(*classes, *per_class, *dim, *separation, self.seed)
            }
            DataSource::Csv { path } => load_csv(path),
        }
    }

    pub fn stream(&self) -> Result<Stream> {
        let mut spec = self.scenario.clone();
        spec.seed = self.seed;
        build_stream(&self.samples()?, &spec)
    }
}

/// Independent generator for stage `t` (the initial stage is 0).
pub fn stage_rng(seed: u64, t: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(t as u64 + 1);
    rng
}

fn labeled(samples: &[Sample]) -> Result<BTreeMap<usize, Vec<Vec64>>> {
    let mut by_class: BTreeMap<usize, Vec<Vec64>> = BTreeMap::new();
    for s in samples {
        let label = s.label.ok_or(GmError::UnlabeledInitial { id: s.id })?;
        by_class.entry(label).or_default().push(s.x.clone());
    }
    if by_class.is_empty() {
        return Err(GmError::Empty("initial training set"));
    }
    Ok(by_class)
}

/// Trains a fresh encoder on the labeled initial stage with the prototype
/// loss against per-class mean embeddings (refreshed every epoch) plus the
/// consistency loss, copies it into both branches and stores exemplars and
/// prototypes for every initial class. Class ids in the store are the
/// ground-truth labels.
pub fn pretrain_initial(train: &[Sample], cfg: &RunConfig, rng: &mut ChaCha8Rng) -> Result<(BranchPair, ExemplarStore)> {
    let by_class = labeled(train)?;
    let input_dim = train[0].x.len();
    let mut dims = vec![input_dim];
    dims.extend(&cfg.model.hidden);
    dims.push(cfg.model.embedding_dim);
    let encoder = Encoder::random(&dims, rng)?;
    let head = ClusterHead::zeros(cfg.model.embedding_dim, 1);
    let mut pair = BranchPair::from_pretrained(encoder, head)?;

    let classes: Vec<&Vec<Vec64>> = by_class.values().collect();
    let per_step = (cfg.pretrain.batch_size / classes.len()).max(1);
    let steps = classes.iter().map(|c| c.len().div_ceil(per_step)).max().unwrap_or(0);
    let weights = LossWeights { bce: 0.0, sd: 0.0, pll: 1.0, mse: cfg.weights.mse };
    let mut opt = cfg.optimizer.state()?;
    let mut orders: Vec<Vec<usize>> = classes.iter().map(|c| (0..c.len()).collect()).collect();
    for _ in 0..cfg.pretrain.epochs {
        let prototypes: Vec<Vec64> = classes
            .iter()
            .map(|c| Ok(l2_normalize(&mean(&pair.dynamic_branch.encode_all(c)?).expect("non-empty class"))))
            .collect::<Result<_>>()?;
        orders.iter_mut().for_each(|o| o.shuffle(rng));
        for step in 0..steps {
            // every class contributes to every step, cycling when it runs out
            let exemplars: Vec<Vec<Vec64>> = classes
                .iter()
                .zip(&orders)
                .map(|(c, o)| (0..per_step).map(|i| c[o[(step * per_step + i) % o.len()]].clone()).collect())
                .collect();
            let mse_pairs = exemplars
                .iter()
                .flatten()
                .map(|x| (x.clone(), augment(x, cfg.pretrain.augment_sigma, rng)))
                .collect();
            let ctx = LossContext {
                pll: Some(PllTerm { exemplars, prototypes: prototypes.clone(), tau: cfg.pretrain.tau }),
                mse_pairs,
                ..Default::default()
            };
            let (_, grads) = backward(&pair, &ctx, &weights)?;
            opt.step(&mut pair.dynamic_branch, &mut pair.head, &grads)?;
        }
        opt.end_epoch();
    }
    pair.static_branch = pair.dynamic_branch.clone();

    let mut store = ExemplarStore::new(cfg.budget, cfg.metric)?;
    let quota = cfg.budget / by_class.len();
    if quota == 0 {
        return Err(GmError::Config(format!("budget {} is below the {} initial classes", cfg.budget, by_class.len())));
    }
    for (&label, samples) in &by_class {
        store.build_class(label, samples, &pair.static_branch, quota, 0)?;
    }
    Ok((pair, store))
}

/// Mean over classes of the mean pairwise euclidean distance between
/// embeddings of the same class. Classes with fewer than two samples are
/// skipped.
pub fn intra_class_distance(encoder: &Encoder, samples: &[Sample]) -> Result<f64> {
    let mut by_class: BTreeMap<usize, Vec<Vec64>> = BTreeMap::new();
    for s in samples {
        if let Some(l) = s.label {
            by_class.entry(l).or_default().push(encoder.encode(&s.x)?);
        }
    }
    let mut total = 0.0;
    let mut counted = 0usize;
    for z in by_class.values().filter(|z| z.len() > 1) {
        let mut sum = 0.0;
        for i in 0..z.len() {
            for j in i + 1..z.len() {
                sum += squared_euclidean(&z[i], &z[j]).sqrt();
            }
        }
        total += sum / (z.len() * (z.len() - 1) / 2) as f64;
        counted += 1;
    }
    Ok(if counted == 0 { 0.0 } else { total / counted as f64 })
}

/// Intra-class distance on a stage's test set at the phase boundaries.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseDistances {
    pub t: usize,
    pub before_grow: f64,
    pub after_grow: f64,
    pub after_merge: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunOutcome {
    pub ledger: MetricsLedger,
    pub summary: Summary,
    /// Novel-class counts used at stages `1..=T`.
    pub novel_counts: Vec<usize>,
    pub estimated: bool,
    /// Only for stages run in this call.
    pub distances: Vec<PhaseDistances>,
    pub checkpoint: Checkpoint,
}

impl RunOutcome {
    pub fn report(&self, cfg: &RunConfig) -> Report {
        Report::new(cfg.scenario.kind, cfg.seed, &self.ledger, self.estimated.then(|| self.novel_counts.clone()))
    }
}

/// Accuracy on known and novel classes of stage `t`'s test set with the
/// nearest-prototype classifier.
pub fn evaluate_stage(encoder: &Encoder, store: &ExemplarStore, stream: &Stream, t: usize) -> Result<(f64, Option<f64>)> {
    let test = &stream.batches[t].test;
    if test.is_empty() {
        return Err(GmError::Empty("stage test set"));
    }
    let pred: Vec<usize> = test.iter().map(|s| store.classify(encoder, &s.x)).collect::<Result<_>>()?;
    let truth: Vec<usize> = test.iter().map(|s| s.label.expect("stream test samples are labeled")).collect();
    evaluate_timestep(&pred, &truth, &stream.class_origin, t)
}

/// Runs the whole configured timeline and, when `out_dir` is set, writes the
/// report, the resolved config and the final checkpoint there.
pub fn run_experiment(cfg: &RunConfig) -> Result<RunOutcome> {
    let outcome = run_stages(cfg, None, None)?;
    if let Some(dir) = &cfg.out_dir {
        write_outputs(cfg, &outcome, dir)?;
    }
    Ok(outcome)
}

/// Continues a run from a checkpoint taken after stage `ckpt.timestep`.
pub fn resume_experiment(cfg: &RunConfig, ckpt: Checkpoint) -> Result<RunOutcome> {
    if ckpt.seed != cfg.seed {
        return Err(GmError::Checkpoint(format!("checkpoint seed {} differs from config seed {}", ckpt.seed, cfg.seed)));
    }
    let outcome = run_stages(cfg, Some(ckpt), None)?;
    if let Some(dir) = &cfg.out_dir {
        write_outputs(cfg, &outcome, dir)?;
    }
    Ok(outcome)
}

/// Runs stages up to and including `last` (all stages when `None`),
/// optionally starting from a checkpoint.
pub fn run_stages(cfg: &RunConfig, from: Option<Checkpoint>, last: Option<usize>) -> Result<RunOutcome> {
    cfg.validate()?;
    let stream = cfg.stream()?;
    let t_max = last.unwrap_or(stream.timesteps()).min(stream.timesteps());

    let mut state = match from {
        Some(c) => {
            if c.timestep > stream.timesteps() {
                return Err(GmError::Checkpoint(format!(
                    "checkpoint is at stage {} but the stream has {}",
                    c.timestep,
                    stream.timesteps()
                )));
            }
            c
        }
        None => {
            let mut rng = stage_rng(cfg.seed, 0);
            let (pair, store) = pretrain_initial(&stream.batches[0].train, cfg, &mut rng).map_err(|e| e.at(0))?;
            let (acc, _) = evaluate_stage(&pair.dynamic_branch, &store, &stream, 0).map_err(|e| e.at(0))?;
            let mut ledger = MetricsLedger::default();
            ledger.push(0, acc, None);
            Checkpoint { seed: cfg.seed, timestep: 0, pair, store, ledger, novel_counts: Vec::new() }
        }
    };

    let mut distances = Vec::new();
    for t in state.timestep + 1..=t_max {
        let d = run_stage(cfg, &stream, &mut state, t).map_err(|e| e.at(t))?;
        distances.push(d);
    }
    let summary = state.ledger.finalize()?;
    Ok(RunOutcome {
        ledger: state.ledger.clone(),
        summary,
        novel_counts: state.novel_counts.clone(),
        estimated: cfg.novel_count == NovelCount::Estimate,
        distances,
        checkpoint: state,
    })
}

fn run_stage(cfg: &RunConfig, stream: &Stream, state: &mut Checkpoint, t: usize) -> Result<PhaseDistances> {
    let mut rng = stage_rng(cfg.seed, t);
    let batch = &stream.batches[t];
    let pair = &mut state.pair;
    let store = &mut state.store;
    let before_grow = intra_class_distance(&pair.dynamic_branch, &batch.test)?;

    store.refresh_prototypes(&pair.dynamic_branch)?;
    let (novel, _) = detect_novelty(&batch.train, store, &pair.dynamic_branch, cfg.grow.epsilon)?;
    let novel_x: Vec<Vec64> = novel.iter().map(|s| s.x.clone()).collect();
    let truth = batch.novel_classes.len();
    let count = match cfg.novel_count {
        NovelCount::Given => truth,
        NovelCount::Estimate => {
            let range = match cfg.count_range {
                Some((a, b)) => a..=b,
                None => default_range((truth > 0).then_some(truth)),
            };
            let z = pair.dynamic_branch.encode_all(&novel_x)?;
            estimate_novel_count(&z, store, &pair.dynamic_branch, range, rng.random())?
        }
    };
    state.novel_counts.push(count);
    log::info!("stage {t}: {} of {} samples novel, {count} novel classes", novel.len(), batch.train.len());

    let after_grow;
    if count > 0 {
        pair.head = ClusterHead::random(cfg.model.embedding_dim, count, &mut rng)?;
        let mut opt = cfg.optimizer.state()?;
        run_growing(pair, &novel_x, &cfg.grow, &cfg.weights, &mut opt, &mut rng)?;
        after_grow = intra_class_distance(&pair.dynamic_branch, &batch.test)?;
        let pseudo: Vec<usize> = pair
            .dynamic_branch
            .encode_all(&novel_x)?
            .iter()
            .map(|z| pair.head.assign(z))
            .collect::<Result<_>>()?;
        let sifted = sift_pseudo_labeled(&pair.dynamic_branch, &novel_x, &pseudo, &cfg.merge)?;
        unify_categories(&pair.dynamic_branch, &sifted, store, t)?;
    } else {
        after_grow = before_grow;
    }

    if cfg.variant == Variant::GrowMerge {
        let mut opt = cfg.optimizer.state()?;
        run_merging(pair, store, &novel_x, &cfg.merge, &cfg.weights, &mut opt, &mut rng)?;
        unify_branches(pair, cfg.merge.alpha)?;
    }
    let after_merge = intra_class_distance(&pair.dynamic_branch, &batch.test)?;

    store.refresh_prototypes(&pair.dynamic_branch)?;
    let (acc_known, acc_novel) = evaluate_stage(&pair.dynamic_branch, store, stream, t)?;
    state.ledger.push(t, acc_known, acc_novel);
    state.timestep = t;
    Ok(PhaseDistances { t, before_grow, after_grow, after_merge })
}

pub fn write_outputs(cfg: &RunConfig, outcome: &RunOutcome, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_report(&outcome.report(cfg), dir)?;
    fs::write(dir.join("config.json"), serde_json::to_string_pretty(cfg)? + "\n")?;
    save_checkpoint(dir.join("checkpoint.gmck"), &outcome.checkpoint)
}
