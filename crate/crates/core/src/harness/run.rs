use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::{EditorKind, ExperimentConfig, Protocol};
use crate::benchdata::{load_benchmark, load_corpus, CorpusPair, EditInstance, Vocab};
use crate::editors::{
    estimate_key_covariance, ftl_edit, rome_edit, sample_key_prompts, FtlConfig, KeyCovariance, RomeConfig,
};
use crate::error::{usage, Result};
use crate::grace::{grace_edit, matched_value, Codebook, EncoderWeights, GraceOptions};
use crate::metrics::{fluency_entropy, MetricRow};
use crate::numcore::memtrack::PeakScope;
use crate::toymodel::{generate, DecodeMode, KeyMode, Steering, TokenPair, ToyDecoder};

/// Prompts drawn from the covariance corpus for rank-one editing.
pub const COVARIANCE_PROMPTS: usize = 1000;
pub const COVARIANCE_RIDGE: f64 = 1e-4;

/// A fully resolved editor: kind, layer and any trained artifacts.
#[derive(Debug, Clone)]
pub struct EditorSetup {
    pub kind: EditorKind,
    pub layer: usize,
    pub encoder: Option<EncoderWeights>,
    pub covariance: Option<KeyCovariance>,
    pub grace: GraceOptions,
    pub ftl: FtlConfig,
    pub rome: RomeConfig,
}

impl EditorSetup {
    /// Defaults for `model`; encoders and covariances are attached separately.
    pub fn new(kind: EditorKind, model: &ToyDecoder) -> Self {
        let layer = match kind {
            EditorKind::Ftl => model.config.ftl_layer(),
            EditorKind::Rome => model.config.rome_layer(),
            _ => model.config.grace_layer(),
        };
        Self {
            kind,
            layer,
            encoder: None,
            covariance: None,
            grace: GraceOptions::default(),
            ftl: FtlConfig::for_model(model),
            rome: RomeConfig::for_model(model),
        }
    }

    pub fn with_layer(mut self, layer: usize) -> Self {
        self.layer = layer;
        self
    }

    pub fn with_encoder(mut self, encoder: EncoderWeights) -> Self {
        self.encoder = Some(encoder);
        self
    }

    pub fn with_covariance(mut self, cov: KeyCovariance) -> Self {
        self.covariance = Some(cov);
        self
    }

    fn check(&self, model: &ToyDecoder) -> Result<()> {
        model.check_layer(self.layer)?;
        if self.kind.needs_encoder() && self.encoder.is_none() {
            return usage(format!("editor {} needs an encoder", self.kind));
        }
        if self.kind == EditorKind::Rome && self.covariance.is_none() {
            return usage("rome needs a key covariance");
        }
        Ok(())
    }

    fn key_mode(&self) -> KeyMode {
        self.kind.key_mode().unwrap_or(KeyMode::Last)
    }

    fn empty_codebook(&self) -> Codebook {
        let encoder = if self.kind.needs_encoder() { self.encoder.clone() } else { None };
        Codebook::new(self.layer, self.key_mode(), encoder)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunOptions {
    pub protocol: Protocol,
    pub seed: u64,
    pub max_new_tokens: usize,
    pub fluency_tokens: usize,
    pub fluency_top_k: usize,
    pub decode: DecodeMode,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            protocol: Protocol::ResetPerEdit,
            seed: 0,
            max_new_tokens: 16,
            fluency_tokens: 64,
            fluency_top_k: 5,
            decode: DecodeMode::Greedy,
        }
    }
}

impl RunOptions {
    pub fn from_config(cfg: &ExperimentConfig) -> Self {
        Self {
            protocol: cfg.protocol,
            seed: cfg.seed,
            max_new_tokens: cfg.max_new_tokens,
            fluency_tokens: cfg.fluency_tokens,
            fluency_top_k: cfg.fluency_top_k,
            decode: cfg.decode,
        }
    }
}

/// Scores of one edited instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowScores {
    pub effectiveness: MetricRow,
    pub generalization: MetricRow,
    /// Against the cached unedited outputs of the neighbors.
    pub specificity: MetricRow,
    pub fluency: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub id: String,
    /// `None` when the edit failed; `error` then says why.
    pub scores: Option<RowScores>,
    pub error: Option<String>,
    pub edit_time_ms: f64,
    pub peak_mem_bytes: u64,
}

impl EvalRow {
    pub fn failed(&self) -> bool {
        self.scores.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub editor: String,
    pub protocol: Protocol,
    pub seed: u64,
    pub model_digest: String,
    pub benchmark_digest: String,
    pub rows: Vec<EvalRow>,
}

/// Means over the rows that did not fail.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub n_ok: usize,
    pub n_failed: usize,
    pub effectiveness: MetricRow,
    pub generalization: MetricRow,
    pub specificity: MetricRow,
    pub fluency: f64,
    pub edit_time_ms: f64,
    pub peak_mem_bytes: f64,
}

impl EvalReport {
    pub fn failed_count(&self) -> usize {
        self.rows.iter().filter(|r| r.failed()).count()
    }

    pub fn aggregate(&self) -> Aggregate {
        let ok: Vec<&EvalRow> = self.rows.iter().filter(|r| !r.failed()).collect();
        let scores: Vec<&RowScores> = ok.iter().filter_map(|r| r.scores.as_ref()).collect();
        let n = ok.len() as f64;
        let axis = |f: fn(&RowScores) -> MetricRow| MetricRow::mean(&scores.iter().map(|s| f(s)).collect::<Vec<_>>());
        Aggregate {
            n_ok: ok.len(),
            n_failed: self.rows.len() - ok.len(),
            effectiveness: axis(|s| s.effectiveness),
            generalization: axis(|s| s.generalization),
            specificity: axis(|s| s.specificity),
            fluency: scores.iter().map(|s| s.fluency).sum::<f64>() / n,
            edit_time_ms: ok.iter().map(|r| r.edit_time_ms).sum::<f64>() / n,
            peak_mem_bytes: ok.iter().map(|r| r.peak_mem_bytes as f64).sum::<f64>() / n,
        }
    }
}

pub fn benchmark_digest(instances: &[EditInstance]) -> String {
    let bytes = serde_json::to_vec(instances).expect("instances serialize");
    hex::encode(&Sha256::digest(&bytes)[..16])
}

/// Per-instance sampling seed: the run seed mixed with a hash of the id.
pub fn instance_seed(seed: u64, id: &str) -> u64 {
    let h = Sha256::digest(id.as_bytes());
    seed ^ u64::from_le_bytes(h[..8].try_into().expect("8 bytes"))
}

/// What the edited model looks like to the evaluator.
enum Edited {
    Model(ToyDecoder),
    Book(Codebook),
}

impl Edited {
    fn generate(&self, base: &ToyDecoder, prompt: &[u32], max_new: usize, mode: DecodeMode, seed: u64) -> Result<Vec<u32>> {
        match self {
            Edited::Model(m) => generate(m, prompt, max_new, mode, seed, None),
            Edited::Book(book) => {
                let value = matched_value(base, book, prompt)?;
                let steering = value.map(|value| Steering { layer: book.edit_layer, value });
                generate(base, prompt, max_new, mode, seed, steering)
            }
        }
    }
}

fn fresh_state(setup: &EditorSetup, base: &ToyDecoder) -> Edited {
    match setup.kind.key_mode() {
        Some(_) => Edited::Book(setup.empty_codebook()),
        None => Edited::Model(base.clone()),
    }
}

/// Applies one edit to `state` in place; on failure `state` is unchanged.
fn apply(setup: &EditorSetup, base: &ToyDecoder, state: &mut Edited, inst: &EditInstance) -> Result<()> {
    match state {
        Edited::Book(book) => {
            grace_edit(book, base, inst, setup.grace)?;
        }
        Edited::Model(m) => match setup.kind {
            EditorKind::Identity => *m = m.clone(),
            EditorKind::Ftl => {
                let cfg = FtlConfig { edit_layer: setup.layer, ..setup.ftl };
                *m = ftl_edit(m, inst, cfg)?.model;
            }
            EditorKind::Rome => {
                let cov = setup.covariance.as_ref().expect("checked before the run");
                let cfg = RomeConfig { layer: setup.layer, ..setup.rome };
                *m = rome_edit(m, inst, cov, cfg)?.model;
            }
            _ => unreachable!("codebook editors keep a codebook state"),
        },
    }
    Ok(())
}

fn score(base: &ToyDecoder, state: &Edited, inst: &EditInstance, opts: &RunOptions) -> Result<RowScores> {
    let v = Vocab::standard();
    let seed = instance_seed(opts.seed, &inst.id);
    let run = |text: &str, max_new: usize, mode: DecodeMode, seed: u64| {
        state.generate(base, &v.prompt(text), max_new, mode, seed).map(|t| v.decode(&t))
    };
    let effectiveness = MetricRow::score(&run(&inst.x, opts.max_new_tokens, opts.decode, seed)?, &inst.y);
    let generalization = MetricRow::mean(
        &inst
            .rewrites
            .iter()
            .map(|r| Ok(MetricRow::score(&run(r, opts.max_new_tokens, opts.decode, seed)?, &inst.y)))
            .collect::<Result<Vec<_>>>()?,
    );
    let specificity = MetricRow::mean(
        &inst
            .neighbors
            .iter()
            .map(|n| Ok(MetricRow::score(&run(&n.x_u, opts.max_new_tokens, opts.decode, seed)?, &n.y_orig)))
            .collect::<Result<Vec<_>>>()?,
    );
    let free = DecodeMode::TopK { k: opts.fluency_top_k };
    let mut fluency = 0.0;
    for (j, text) in [&inst.x, &inst.rewrites[0]].into_iter().enumerate() {
        let out = run(text, opts.fluency_tokens, free, seed.wrapping_add(j as u64 + 1))?;
        fluency += fluency_entropy(&out.split_whitespace().collect::<Vec<_>>())? / 2.0;
    }
    Ok(RowScores { effectiveness, generalization, specificity, fluency })
}

/// Runs `setup` over `instances` under `opts.protocol`. Editing failures are
/// recorded in their row and the run continues.
pub fn run_edits(
    base: &ToyDecoder,
    instances: &[EditInstance],
    setup: &EditorSetup,
    opts: &RunOptions,
) -> Result<EvalReport> {
    setup.check(base)?;
    if opts.fluency_tokens < 3 {
        return usage("fluency needs at least 3 sampled tokens");
    }
    let mut shared = fresh_state(setup, base);
    let mut rows = Vec::with_capacity(instances.len());
    for inst in instances {
        let scope = PeakScope::start();
        let clock = Instant::now();
        let outcome = match opts.protocol {
            Protocol::ResetPerEdit => {
                let mut s = fresh_state(setup, base);
                apply(setup, base, &mut s, inst).map(|_| Some(s))
            }
            Protocol::Sequential => apply(setup, base, &mut shared, inst).map(|_| None),
        };
        let edit_time_ms = clock.elapsed().as_secs_f64() * 1e3;
        let peak_mem_bytes = scope.peak_bytes() as u64;
        let scored = outcome.and_then(|own| score(base, own.as_ref().unwrap_or(&shared), inst, opts));
        let (scores, error) = match scored {
            Ok(s) => (Some(s), None),
            Err(e) => (None, Some(e.to_string())),
        };
        rows.push(EvalRow { id: inst.id.clone(), scores, error, edit_time_ms, peak_mem_bytes });
    }
    Ok(EvalReport {
        editor: setup.kind.name().to_string(),
        protocol: opts.protocol,
        seed: opts.seed,
        model_digest: base.weights_digest(),
        benchmark_digest: benchmark_digest(instances),
        rows,
    })
}

/// Loads the model, benchmark and editor artifacts named by `cfg` and runs it.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<EvalReport> {
    cfg.validate()?;
    let model = ToyDecoder::load(&cfg.model)?;
    let mut instances = load_benchmark(&cfg.benchmark)?;
    if let Some(n) = cfg.limit {
        instances.truncate(n);
    }
    let mut setup = EditorSetup::new(cfg.editor, &model);
    if let Some(l) = cfg.edit_layer {
        setup = setup.with_layer(l);
    }
    if let (true, Some(p)) = (cfg.editor.needs_encoder(), &cfg.encoder) {
        setup = setup.with_encoder(EncoderWeights::load(p)?);
    }
    if cfg.editor == EditorKind::Rome {
        let sequences: Vec<TokenPair> = match &cfg.cov_corpus {
            Some(p) => load_corpus(p)?.iter().map(CorpusPair::tokens).collect(),
            // fall back to the neighbors and their cached outputs, which
            // never overlap the edits
            None => {
                let v = Vocab::standard();
                instances
                    .iter()
                    .flat_map(|i| i.neighbors.iter().map(|n| (v.prompt(&n.x_u), v.target(&n.y_orig))))
                    .collect()
            }
        };
        let prompts = sample_key_prompts(&sequences, COVARIANCE_PROMPTS, cfg.seed);
        let cov = estimate_key_covariance(&model, &prompts, setup.layer, COVARIANCE_RIDGE)?;
        setup = setup.with_covariance(cov);
    }
    run_edits(&model, &instances, &setup, &RunOptions::from_config(cfg))
}
