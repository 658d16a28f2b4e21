//! Experiment orchestration: gold loading, prompt dispatch through the
//! gateway, scoring against gold and report emission.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use log::{info, warn};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::boosters::{decorate, self_refine, select_exemplars, Decoration, ExemplarSet, RefinementTranscript};
use crate::codebook::{normalize_name, parse_label_list, Codebook, Coarse, CoarseClass, Polarity};
use crate::corpus::AnnotationTarget;
use crate::error::{Error, Result};
use crate::gateway::{Gateway, GatewayConfig, HttpTransport, Mode, ResponseCache};
use crate::metrics::{binary_macro_f1, distribution_baseline, macro_f1, mutual_upper_bound, BaselineEstimate};
use crate::prompts::{
    retry_instruction, Format, Message, PromptConfig, PromptFactory, Task, Verdict, VerdictKind,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoldRecord {
    pub target: AnnotationTarget,
    pub labels_a: BTreeSet<String>,
    pub labels_b: BTreeSet<String>,
    /// Labels both annotators applied.
    pub agreed: BTreeSet<String>,
    /// The stored dataset class; authoritative for coarse scoring.
    pub coarse: CoarseClass,
    pub codebook_version: u32,
}

impl GoldRecord {
    pub fn union(&self) -> BTreeSet<String> {
        self.labels_a.union(&self.labels_b).cloned().collect()
    }

    /// Checks label validity, `agreed ⊆ a ∩ b`, and that the stored coarse
    /// class equals the aggregate over the union of both annotators' labels.
    pub fn check(&self, codebook: &Codebook) -> Result<()> {
        let id = &self.target.target_id;
        for l in self.labels_a.iter().chain(&self.labels_b) {
            if codebook.label(l).is_none() {
                return Err(Error::Integrity(format!("{id}: unknown label `{l}`")));
            }
        }
        if !self.agreed.iter().all(|l| self.labels_a.contains(l) && self.labels_b.contains(l)) {
            return Err(Error::Integrity(format!("{id}: agreed labels are not held by both annotators")));
        }
        let union = self.union();
        let derived = codebook.aggregate_coarse(union.iter().map(String::as_str))?;
        if derived.value != self.coarse.value {
            return Err(Error::Integrity(format!(
                "{id}: stored coarse class {} but labels {:?} aggregate to {}",
                self.coarse.value, union, derived.value
            )));
        }
        Ok(())
    }
}

const COLUMN_ALIASES: [(&str, &[&str]); 7] = [
    ("id", &["id", "target_id", "target id"]),
    ("title", &["title", "post title", "post_title"]),
    ("content", &["content", "post content", "post_content", "submission", "submission_text"]),
    ("first_comment", &["first comment", "first_comment"]),
    ("target", &["target comment", "target_comment", "comment", "target_text"]),
    ("labels_1", &["labels_1", "labels 1", "labels1", "annotator_a"]),
    ("labels_2", &["labels_2", "labels 2", "labels2", "annotator_b"]),
];
const COARSE_ALIASES: &[&str] = &["coarse", "ih/ia/neutral", "ih/ia/ne", "class"];

fn find_column(headers: &csv::StringRecord, names: &[&str]) -> Option<usize> {
    headers.iter().position(|h| {
        let h = normalize_name(h.trim_start_matches('\u{feff}'));
        names.iter().any(|n| *n == h)
    })
}

/// Loads dual-annotated gold from CSV (released-dataset columns) or JSONL
/// (serialized [`GoldRecord`]s). Label strings may be names or abbrevs.
pub fn load_gold(path: impl AsRef<Path>, codebook: &Codebook) -> Result<Vec<GoldRecord>> {
    let path = path.as_ref();
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("").to_ascii_lowercase();
    let records = if ext == "jsonl" || ext == "json" {
        crate::corpus::read_jsonl::<GoldRecord>(path)?
    } else {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        parse_gold_csv(&text, codebook)?
    };
    let mut seen = BTreeSet::new();
    for r in &records {
        if !seen.insert(r.target.target_id.clone()) {
            return Err(Error::Integrity(format!("duplicate target id `{}`", r.target.target_id)));
        }
        r.check(codebook)?;
    }
    Ok(records)
}

pub fn parse_gold_csv(text: &str, codebook: &Codebook) -> Result<Vec<GoldRecord>> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(text.as_bytes());
    let headers = rdr.headers()?.clone();
    let mut cols = BTreeMap::new();
    for (key, names) in COLUMN_ALIASES {
        if let Some(i) = find_column(&headers, names) {
            cols.insert(key, i);
        }
    }
    let coarse_col = find_column(&headers, COARSE_ALIASES);
    for required in ["target", "labels_1", "labels_2"] {
        if !cols.contains_key(required) {
            return Err(Error::InvalidInput(format!("gold file lacks a `{required}` column")));
        }
    }
    let coarse_col = coarse_col.ok_or_else(|| Error::InvalidInput("gold file lacks a coarse column".into()))?;
    let mut out = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = row + 2;
        let get = |k: &str| cols.get(k).and_then(|&i| rec.get(i)).unwrap_or("").to_string();
        let labels = |k: &str| {
            parse_label_list(codebook, &get(k)).map_err(|e| Error::Integrity(format!("row {line}: {e}")))
        };
        let labels_a = labels("labels_1")?;
        let labels_b = labels("labels_2")?;
        let stored = rec.get(coarse_col).unwrap_or("");
        let coarse = Coarse::parse_label(stored)
            .ok_or_else(|| Error::Integrity(format!("row {line}: unknown coarse class `{stored}`")))?;
        let id = match get("id") {
            s if s.trim().is_empty() => format!("row-{:04}", row + 1),
            s => s.trim().to_string(),
        };
        let first = get("first_comment");
        let first = (!first.trim().is_empty()).then_some(first);
        let target = AnnotationTarget::new(id, "", get("title"), get("content"), first, get("target"));
        out.push(GoldRecord {
            agreed: labels_a.intersection(&labels_b).cloned().collect(),
            labels_a,
            labels_b,
            coarse: CoarseClass::plain(coarse),
            codebook_version: codebook.version,
            target,
        });
    }
    Ok(out)
}

/// Serializes gold back to the CSV column layout read by [`parse_gold_csv`].
pub fn gold_to_csv(records: &[GoldRecord], codebook: &Codebook) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["id", "title", "content", "first_comment", "target_comment", "Labels_1", "Labels_2", "coarse"])?;
    let names = |s: &BTreeSet<String>| -> String {
        codebook
            .labels
            .iter()
            .filter(|l| s.contains(&l.abbrev))
            .map(|l| l.name.clone())
            .collect::<Vec<_>>()
            .join(", ")
    };
    for r in records {
        let t = &r.target;
        w.write_record([
            t.target_id.as_str(),
            &t.title,
            &t.submission_text,
            t.first_comment.as_deref().unwrap_or(""),
            &t.target_text,
            &names(&r.labels_a),
            &names(&r.labels_b),
            r.coarse.value.short(),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Parse(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GoldRule {
    #[default]
    Intersection,
    Union,
    PerAnnotatorMean,
}

impl std::str::FromStr for GoldRule {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "intersection" => Ok(GoldRule::Intersection),
            "union" => Ok(GoldRule::Union),
            "per-annotator-mean" => Ok(GoldRule::PerAnnotatorMean),
            _ => Err(Error::InvalidInput(format!("unknown gold rule `{s}`"))),
        }
    }
}

impl GoldRule {
    /// Gold-positive vectors for `label`; two for the per-annotator rule.
    pub fn label_gold(self, gold: &[&GoldRecord], label: &str) -> Vec<Vec<bool>> {
        let v = |f: &dyn Fn(&GoldRecord) -> bool| gold.iter().map(|r| f(r)).collect::<Vec<bool>>();
        match self {
            GoldRule::Intersection => vec![v(&|r| r.agreed.contains(label))],
            GoldRule::Union => vec![v(&|r| r.labels_a.contains(label) || r.labels_b.contains(label))],
            GoldRule::PerAnnotatorMean => vec![v(&|r| r.labels_a.contains(label)), v(&|r| r.labels_b.contains(label))],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoosterKind {
    #[default]
    None,
    FewShot,
    Cot,
    FewShotCot,
    SelfRefine,
    Optimized,
}

impl std::str::FromStr for BoosterKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(BoosterKind::None),
            "few-shot" => Ok(BoosterKind::FewShot),
            "cot" => Ok(BoosterKind::Cot),
            "few-shot-cot" => Ok(BoosterKind::FewShotCot),
            "self-refine" => Ok(BoosterKind::SelfRefine),
            "optimized" => Ok(BoosterKind::Optimized),
            _ => Err(Error::InvalidInput(format!("unknown booster `{s}`"))),
        }
    }
}

fn default_model() -> String {
    GatewayConfig::default().model_id
}
fn default_prompt() -> String {
    "C&D-BQ".into()
}
fn default_mode() -> Mode {
    Mode::Replay
}
fn default_rounds() -> usize {
    2
}
fn default_shots() -> usize {
    3
}
fn default_in_flight() -> usize {
    4
}
fn default_trials() -> usize {
    100_000
}
fn default_output() -> PathBuf {
    PathBuf::from("out")
}

/// Experiment description, read from TOML. Relative paths resolve against
/// the directory of the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub codebook: Option<PathBuf>,
    #[serde(default = "default_model")]
    pub model_id: String,
    /// Short name such as `C&D-BQ`, `D-MS` or `C-coarse`.
    #[serde(default = "default_prompt")]
    pub prompt: String,
    #[serde(default)]
    pub booster: BoosterKind,
    #[serde(default = "default_shots")]
    pub shots: usize,
    #[serde(default = "default_rounds")]
    pub refine_rounds: usize,
    /// JSON object of label abbrev to optimized system prompt.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub optimized_prompts: Option<PathBuf>,
    #[serde(default = "default_mode")]
    pub mode: Mode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cache: Option<PathBuf>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub gold_rule: GoldRule,
    #[serde(default = "default_in_flight")]
    pub max_in_flight: usize,
    #[serde(default = "default_trials")]
    pub baseline_trials: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub limit: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shuffle_labels: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_tokens: Option<u32>,
}

impl ExperimentConfig {
    pub fn new(dataset: impl Into<PathBuf>, prompt: &str) -> Self {
        ExperimentConfig {
            dataset: dataset.into(),
            codebook: None,
            model_id: default_model(),
            prompt: prompt.to_string(),
            booster: BoosterKind::None,
            shots: default_shots(),
            refine_rounds: default_rounds(),
            optimized_prompts: None,
            mode: default_mode(),
            cache: None,
            seed: 0,
            output_dir: default_output(),
            gold_rule: GoldRule::Intersection,
            max_in_flight: default_in_flight(),
            baseline_trials: default_trials(),
            limit: None,
            shuffle_labels: None,
            max_tokens: None,
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: ExperimentConfig = toml::from_str(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut cfg.dataset);
        fix(&mut cfg.output_dir);
        for p in [&mut cfg.codebook, &mut cfg.cache, &mut cfg.optimized_prompts].into_iter().flatten() {
            fix(p);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn prompt_config(&self) -> Result<PromptConfig> {
        self.prompt.parse()
    }

    pub fn validate(&self) -> Result<()> {
        let pc = self.prompt_config()?;
        let bq = pc.task == Task::LabelWise && pc.format == Format::BinaryQuestion;
        match self.booster {
            BoosterKind::FewShot | BoosterKind::FewShotCot | BoosterKind::Optimized if !bq => {
                return Err(Error::InvalidInput(format!("{:?} applies to binary-question prompts only", self.booster)))
            }
            BoosterKind::SelfRefine if pc.task == Task::LabelWise && !bq => {
                return Err(Error::InvalidInput("self-refinement does not support multiple selection".into()))
            }
            BoosterKind::Optimized if self.optimized_prompts.is_none() => {
                return Err(Error::InvalidInput("booster `optimized` needs `optimized_prompts`".into()))
            }
            _ => {}
        }
        if self.mode != Mode::Live && self.cache.is_none() {
            return Err(Error::InvalidInput(format!("{:?} mode requires a cache path", self.mode)));
        }
        if self.baseline_trials == 0 {
            return Err(Error::InvalidInput("baseline_trials must be at least 1".into()));
        }
        Ok(())
    }

    /// sha256 over the canonical JSON of the config.
    pub fn hash(&self) -> String {
        let v = serde_json::to_value(self).expect("config serializes");
        hex::encode(Sha256::digest(v.to_string().as_bytes()))
    }

    pub fn load_codebook(&self) -> Result<Codebook> {
        match &self.codebook {
            Some(p) => Codebook::load(p),
            None => Ok(Codebook::default_codebook()),
        }
    }

    /// Gateway for this config; live and record modes read credentials from
    /// the environment.
    pub fn build_gateway(&self) -> Result<Gateway> {
        let gw_config = GatewayConfig {
            model_id: self.model_id.clone(),
            max_in_flight: self.max_in_flight,
            max_tokens: self.max_tokens,
            ..GatewayConfig::default()
        };
        let cache = match &self.cache {
            Some(p) => Some(Arc::new(ResponseCache::open(p)?)),
            None => None,
        };
        let transport: Option<Arc<dyn crate::gateway::Transport>> = match self.mode {
            Mode::Replay => None,
            _ => Some(Arc::new(HttpTransport::from_env()?)),
        };
        Gateway::new(self.mode, gw_config, transport, cache)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictionStatus {
    Ok,
    /// Parsed after the single retry.
    Retried,
    Unparseable,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub target_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    pub status: PredictionStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verdict: Option<Verdict>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub cache_keys: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transcript: Option<RefinementTranscript>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub config: ExperimentConfig,
    pub config_hash: String,
    pub prompt: PromptConfig,
    pub codebook_version: u32,
    pub target_ids: Vec<String>,
    /// Gold records used as few-shot exemplars and therefore not evaluated.
    pub exemplar_ids: BTreeSet<String>,
    pub predictions: Vec<Prediction>,
    /// Calls issued by the run, retries included.
    pub gateway_calls: usize,
    pub retries: usize,
    pub unparseable: usize,
    pub failed: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cache_digest: Option<String>,
}

impl RunResult {
    /// Calls the run makes before any parse retries.
    pub fn expected_calls(prompt: &PromptConfig, booster: BoosterKind, n_targets: usize, n_labels: usize, refine_rounds: usize) -> usize {
        let task = match (prompt.task, prompt.format) {
            (Task::LabelWise, Format::BinaryQuestion) => n_labels,
            _ => 1,
        };
        let boost = if booster == BoosterKind::SelfRefine { 3 * refine_rounds } else { 1 };
        n_targets * task * boost
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

pub fn file_digest(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

struct WorkItem<'a> {
    record: &'a GoldRecord,
    label: Option<&'a str>,
}

/// Runs `config` over `gold` through `gateway`.
///
/// Work items (one per target, or per target and label for binary
/// questions) are dispatched on up to `max_in_flight` threads; results are
/// stored in item order so the output does not depend on scheduling.
pub fn run_experiment(
    config: &ExperimentConfig,
    codebook: &Codebook,
    gold: &[GoldRecord],
    gateway: &Gateway,
) -> Result<RunResult> {
    config.validate()?;
    let prompt = config.prompt_config()?;
    let factory = match config.shuffle_labels {
        Some(seed) => PromptFactory::shuffled(codebook, seed),
        None => PromptFactory::new(codebook),
    };
    let mut pool: Vec<&GoldRecord> = gold.iter().collect();
    if let Some(n) = config.limit {
        pool.truncate(n);
    }
    let labels: Vec<&str> = codebook.abbrevs().collect();

    let mut exemplars: BTreeMap<&str, ExemplarSet> = BTreeMap::new();
    if matches!(config.booster, BoosterKind::FewShot | BoosterKind::FewShotCot) {
        for &l in &labels {
            exemplars.insert(l, select_exemplars(gold, l, config.shots, config.shots, config.seed, &BTreeSet::new())?);
        }
    }
    let exemplar_ids: BTreeSet<String> =
        exemplars.values().flat_map(|e| e.target_ids().map(str::to_string)).collect();
    pool.retain(|r| !exemplar_ids.contains(&r.target.target_id));

    let optimized: BTreeMap<String, String> = match (&config.booster, &config.optimized_prompts) {
        (BoosterKind::Optimized, Some(p)) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            serde_json::from_str(&text)?
        }
        _ => BTreeMap::new(),
    };

    let bq = prompt.task == Task::LabelWise && prompt.format == Format::BinaryQuestion;
    let mut items = Vec::new();
    for r in &pool {
        if bq {
            items.extend(labels.iter().map(|&l| WorkItem { record: r, label: Some(l) }));
        } else {
            items.push(WorkItem { record: r, label: None });
        }
    }
    info!("{} work items for {} targets ({})", items.len(), pool.len(), prompt);

    let slots: Vec<Mutex<Option<(Prediction, usize, usize)>>> = items.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let workers = config.max_in_flight.max(1).min(items.len().max(1));
    let first_error: Mutex<Option<Error>> = Mutex::new(None);
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= items.len() {
                    break;
                }
                match run_item(config, &factory, &prompt, &items[i], gateway, &exemplars, &optimized) {
                    Ok(out) => *slots[i].lock().expect("slot lock") = Some(out),
                    Err(e) => {
                        first_error.lock().expect("error lock").get_or_insert(e);
                        break;
                    }
                }
            });
        }
    });
    if let Some(e) = first_error.into_inner().expect("error lock") {
        return Err(e);
    }

    let mut predictions = Vec::with_capacity(items.len());
    let (mut calls, mut retries, mut unparseable, mut failed) = (0, 0, 0, 0);
    for slot in slots {
        let (p, c, r) = slot.into_inner().expect("slot lock").expect("every item ran");
        calls += c;
        retries += r;
        match p.status {
            PredictionStatus::Unparseable => unparseable += 1,
            PredictionStatus::Failed => failed += 1,
            _ => {}
        }
        predictions.push(p);
    }
    if failed > 0 {
        warn!("{failed} prediction(s) failed at the gateway");
    }
    let cache_digest = match (&config.cache, config.mode) {
        (Some(p), _) if p.exists() => Some(file_digest(p)?),
        _ => None,
    };
    Ok(RunResult {
        config: config.clone(),
        config_hash: config.hash(),
        prompt,
        codebook_version: codebook.version,
        target_ids: pool.iter().map(|r| r.target.target_id.clone()).collect(),
        exemplar_ids,
        predictions,
        gateway_calls: calls,
        retries,
        unparseable,
        failed,
        cache_digest,
    })
}

/// Runs one work item; returns the prediction, calls made and retries made.
/// Only setup errors (bad prompts, unknown labels) propagate; gateway
/// failures are recorded on the prediction.
fn run_item(
    config: &ExperimentConfig,
    factory: &PromptFactory<'_>,
    prompt: &PromptConfig,
    item: &WorkItem<'_>,
    gateway: &Gateway,
    exemplars: &BTreeMap<&str, ExemplarSet>,
    optimized: &BTreeMap<String, String>,
) -> Result<(Prediction, usize, usize)> {
    let target = &item.record.target;
    let mut pred = Prediction {
        target_id: target.target_id.clone(),
        label: item.label.map(str::to_string),
        status: PredictionStatus::Ok,
        verdict: None,
        error: None,
        cache_keys: Vec::new(),
        transcript: None,
    };
    if config.booster == BoosterKind::SelfRefine {
        match self_refine(factory, prompt, target, item.label, gateway, config.refine_rounds) {
            Ok(t) => {
                let calls = t.calls;
                pred.cache_keys = t.cache_keys.clone();
                pred.verdict = Some(t.final_verdict.clone());
                if t.flagged {
                    pred.status = PredictionStatus::Unparseable;
                }
                pred.transcript = Some(t);
                return Ok((pred, calls, 0));
            }
            Err(e @ (Error::Transport { .. } | Error::CacheMiss { .. })) => {
                pred.status = PredictionStatus::Failed;
                pred.error = Some(e.to_string());
                return Ok((pred, 3 * config.refine_rounds, 0));
            }
            Err(e) => return Err(e),
        }
    }
    let mut conv = factory.build_prompt(target, prompt, item.label)?;
    if let (Some(l), BoosterKind::Optimized) = (item.label, config.booster) {
        if let Some(p) = optimized.get(l) {
            conv.messages[0].content = p.clone();
        }
    }
    let decoration = match (config.booster, item.label.and_then(|l| exemplars.get(l))) {
        (BoosterKind::Cot, _) => Decoration::CoT,
        (BoosterKind::FewShot, Some(e)) => Decoration::FewShot(e),
        (BoosterKind::FewShotCot, Some(e)) => Decoration::FewShotCoT(e),
        _ => Decoration::None,
    };
    let cot = matches!(decoration, Decoration::CoT | Decoration::FewShotCoT(_));
    let mut conv = decorate(factory, prompt, &conv, &decoration)?;

    let mut calls = 0;
    for attempt in 0..2 {
        let req = gateway.request(conv.clone());
        pred.cache_keys.push(req.cache_key());
        calls += 1;
        let text = match gateway.complete(&req) {
            Ok(r) => r.text,
            Err(e) => {
                pred.status = PredictionStatus::Failed;
                pred.error = Some(e.to_string());
                return Ok((pred, calls, attempt));
            }
        };
        match factory.parse_reply(prompt, &text) {
            Ok(kind) => {
                pred.status = if attempt == 0 { PredictionStatus::Ok } else { PredictionStatus::Retried };
                pred.verdict = Some(Verdict { kind, rationale: cot.then(|| text.clone()), raw_text: text });
                return Ok((pred, calls, attempt));
            }
            Err(_) if attempt == 0 => {
                conv.push(Message::assistant(text));
                conv.push(Message::user(retry_instruction(prompt)));
            }
            Err(_) => {
                pred.status = PredictionStatus::Unparseable;
                pred.error = Some(format!("unparseable reply: {text:?}"));
            }
        }
    }
    Ok((pred, calls, 1))
}

/// Predicted label set and coarse class per target.
pub fn aggregate_predictions(
    run: &RunResult,
    codebook: &Codebook,
) -> Result<BTreeMap<String, (BTreeSet<String>, Coarse)>> {
    let mut sets: BTreeMap<String, (BTreeSet<String>, Option<Coarse>)> = BTreeMap::new();
    for id in &run.target_ids {
        sets.insert(id.clone(), (BTreeSet::new(), None));
    }
    for p in &run.predictions {
        let entry = sets
            .get_mut(&p.target_id)
            .ok_or_else(|| Error::Integrity(format!("prediction for unknown target `{}`", p.target_id)))?;
        match p.verdict.as_ref().map(|v| &v.kind) {
            Some(VerdictKind::YesNo(true)) => {
                entry.0.insert(p.label.clone().ok_or_else(|| Error::Integrity("yes/no verdict without label".into()))?);
            }
            Some(VerdictKind::LabelSet(s)) => entry.0.extend(s.iter().cloned()),
            Some(VerdictKind::Coarse(c)) => entry.1 = Some(c.value),
            Some(VerdictKind::YesNo(false)) | None => {}
        }
    }
    let mut out = BTreeMap::new();
    for (id, (set, direct)) in sets {
        let coarse = match (run.prompt.task, direct) {
            (Task::Coarse, Some(c)) => c,
            (Task::Coarse, None) => Coarse::Neutral,
            (Task::LabelWise, _) => codebook.aggregate_coarse(set.iter().map(String::as_str))?.value,
        };
        out.insert(id, (set, coarse));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelScore {
    pub label: String,
    pub polarity: Polarity,
    /// Absent for the coarse task, which makes no per-label predictions.
    pub f1: Option<f64>,
    pub baseline: f64,
    pub upper_bound: f64,
    pub gold_positives: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub config: ExperimentConfig,
    pub config_hash: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cache_digest: Option<String>,
    pub codebook_version: u32,
    pub model_id: String,
    pub prompt: String,
    pub booster: BoosterKind,
    pub gold_rule: GoldRule,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub provenance: Provenance,
    pub n_targets: usize,
    pub per_label: Vec<LabelScore>,
    pub ih_mean: Option<f64>,
    pub ia_mean: Option<f64>,
    pub all_mean: Option<f64>,
    pub coarse_f1: f64,
    pub coarse_baseline: BaselineEstimate,
    pub coarse_upper_bound: f64,
    pub label_baseline_mean: f64,
    pub label_upper_bound_mean: f64,
    pub gateway_calls: usize,
    pub retries: usize,
    pub unparseable: usize,
    pub failed: usize,
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Coarse class of one annotator's labels.
fn annotator_coarse(codebook: &Codebook, labels: &BTreeSet<String>) -> Result<Coarse> {
    Ok(codebook.aggregate_coarse(labels.iter().map(String::as_str))?.value)
}

/// Coarse-class mutual upper bound over dual annotations.
pub fn coarse_upper_bound(gold: &[&GoldRecord], codebook: &Codebook) -> Result<f64> {
    let a: Vec<Coarse> = gold.iter().map(|r| annotator_coarse(codebook, &r.labels_a)).collect::<Result<_>>()?;
    let b: Vec<Coarse> = gold.iter().map(|r| annotator_coarse(codebook, &r.labels_b)).collect::<Result<_>>()?;
    mutual_upper_bound(&a, &b, &Coarse::ALL)
}

/// Per-label binary mutual upper bounds, in codebook order.
pub fn label_upper_bounds(gold: &[&GoldRecord], codebook: &Codebook) -> Result<Vec<(String, f64)>> {
    codebook
        .abbrevs()
        .map(|l| {
            let a: Vec<bool> = gold.iter().map(|r| r.labels_a.contains(l)).collect();
            let b: Vec<bool> = gold.iter().map(|r| r.labels_b.contains(l)).collect();
            Ok((l.to_string(), mutual_upper_bound(&a, &b, &[false, true])?))
        })
        .collect()
}

/// Texts fed to the classical baseline, optionally prefixed by the thread context.
pub fn feature_texts(gold: &[GoldRecord], with_context: bool) -> Vec<String> {
    gold.iter()
        .map(|r| {
            if with_context {
                format!("{}\n\n{}", r.target.context_text, r.target.target_text)
            } else {
                r.target.target_text.clone()
            }
        })
        .collect()
}

/// Coarse gold class short names, aligned with `gold`.
pub fn coarse_labels(gold: &[GoldRecord]) -> Vec<String> {
    gold.iter().map(|r| r.coarse.value.short().to_string()).collect()
}

pub fn coarse_counts(gold: &[&GoldRecord]) -> BTreeMap<Coarse, u64> {
    let mut counts: BTreeMap<Coarse, u64> = Coarse::ALL.iter().map(|c| (*c, 0)).collect();
    for r in gold {
        *counts.entry(r.coarse.value).or_default() += 1;
    }
    counts
}

pub fn score_run(run: &RunResult, gold: &[GoldRecord], codebook: &Codebook) -> Result<MetricReport> {
    let by_id: BTreeMap<&str, &GoldRecord> = gold.iter().map(|r| (r.target.target_id.as_str(), r)).collect();
    let mut scored: Vec<&GoldRecord> = Vec::with_capacity(run.target_ids.len());
    for id in &run.target_ids {
        let r = by_id
            .get(id.as_str())
            .ok_or_else(|| Error::Integrity(format!("run target `{id}` is not in the gold set")))?;
        scored.push(r);
    }
    if scored.is_empty() {
        return Err(Error::InvalidInput("run and gold share no targets".into()));
    }
    let preds = aggregate_predictions(run, codebook)?;
    let rule = run.config.gold_rule;
    let trials = run.config.baseline_trials;
    let seed = run.config.seed;
    let per_label_task = run.prompt.task == Task::LabelWise;
    let uppers = label_upper_bounds(&scored, codebook)?;

    let mut per_label = Vec::new();
    for (l, upper) in codebook.labels.iter().zip(uppers) {
        let golds = rule.label_gold(&scored, &l.abbrev);
        let pred: Vec<bool> =
            scored.iter().map(|r| preds[&r.target.target_id].0.contains(&l.abbrev)).collect();
        let mut f1s = Vec::new();
        let mut baselines = Vec::new();
        for g in &golds {
            if per_label_task {
                f1s.push(binary_macro_f1(g, &pred)?);
            }
            let pos = g.iter().filter(|b| **b).count() as u64;
            let counts: BTreeMap<bool, u64> = [(true, pos), (false, g.len() as u64 - pos)].into();
            baselines.push(distribution_baseline(&counts, trials, seed)?.mean);
        }
        per_label.push(LabelScore {
            label: l.abbrev.clone(),
            polarity: l.polarity,
            f1: mean(&f1s),
            baseline: mean(&baselines).expect("at least one gold vector"),
            upper_bound: upper.1,
            gold_positives: golds[0].iter().filter(|b| **b).count(),
        });
    }
    let group = |p: Option<Polarity>| -> Option<f64> {
        let v: Vec<f64> =
            per_label.iter().filter(|s| p.is_none_or(|p| s.polarity == p)).filter_map(|s| s.f1).collect();
        if per_label_task { mean(&v) } else { None }
    };
    let gold_coarse: Vec<Coarse> = scored.iter().map(|r| r.coarse.value).collect();
    let pred_coarse: Vec<Coarse> = scored.iter().map(|r| preds[&r.target.target_id].1).collect();
    let coarse_f1 = macro_f1(&gold_coarse, &pred_coarse, &Coarse::ALL)?;
    let coarse_baseline = distribution_baseline(&coarse_counts(&scored), trials, seed)?;
    let label_baselines: Vec<f64> = per_label.iter().map(|s| s.baseline).collect();
    let label_uppers: Vec<f64> = per_label.iter().map(|s| s.upper_bound).collect();
    Ok(MetricReport {
        provenance: Provenance {
            config: run.config.clone(),
            config_hash: run.config_hash.clone(),
            cache_digest: run.cache_digest.clone(),
            codebook_version: run.codebook_version,
            model_id: run.config.model_id.clone(),
            prompt: run.prompt.short_name(),
            booster: run.config.booster,
            gold_rule: rule,
        },
        n_targets: scored.len(),
        ih_mean: group(Some(Polarity::IH)),
        ia_mean: group(Some(Polarity::IA)),
        all_mean: group(None),
        per_label,
        coarse_f1,
        coarse_baseline,
        coarse_upper_bound: coarse_upper_bound(&scored, codebook)?,
        label_baseline_mean: mean(&label_baselines).expect("codebook has labels"),
        label_upper_bound_mean: mean(&label_uppers).expect("codebook has labels"),
        gateway_calls: run.gateway_calls,
        retries: run.retries,
        unparseable: run.unparseable,
        failed: run.failed,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Json,
    Csv,
    Markdown,
}

impl ReportFormat {
    pub const ALL: [ReportFormat; 3] = [ReportFormat::Json, ReportFormat::Csv, ReportFormat::Markdown];

    fn file_name(self) -> &'static str {
        match self {
            ReportFormat::Json => "report.json",
            ReportFormat::Csv => "report.csv",
            ReportFormat::Markdown => "report.md",
        }
    }
}

impl std::str::FromStr for ReportFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            "md" | "markdown" => Ok(ReportFormat::Markdown),
            _ => Err(Error::InvalidInput(format!("unknown report format `{s}`"))),
        }
    }
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.4}")).unwrap_or_default()
}

/// Label-wise table rows: (row name, cells per label + IH Mean, IA Mean, All, IH/IA/NE).
fn table_rows(report: &MetricReport) -> Vec<(String, Vec<Option<f64>>)> {
    let model_row = format!("{} {} {}", report.provenance.model_id, report.provenance.prompt, booster_name(report.provenance.booster));
    let mut rows = Vec::new();
    let mut model: Vec<Option<f64>> = report.per_label.iter().map(|s| s.f1).collect();
    model.extend([report.ih_mean, report.ia_mean, report.all_mean, Some(report.coarse_f1)]);
    rows.push((model_row.trim().to_string(), model));
    let group_mean = |f: &dyn Fn(&LabelScore) -> f64, p: Option<Polarity>| -> Option<f64> {
        mean(&report.per_label.iter().filter(|s| p.is_none_or(|p| s.polarity == p)).map(f).collect::<Vec<_>>())
    };
    for (name, f, coarse) in [
        ("Baseline Distribution", &(|s: &LabelScore| s.baseline) as &dyn Fn(&LabelScore) -> f64, report.coarse_baseline.mean),
        ("Upper bound Mutual", &|s: &LabelScore| s.upper_bound, report.coarse_upper_bound),
    ] {
        let mut cells: Vec<Option<f64>> = report.per_label.iter().map(|s| Some(f(s))).collect();
        cells.extend([
            group_mean(f, Some(Polarity::IH)),
            group_mean(f, Some(Polarity::IA)),
            group_mean(f, None),
            Some(coarse),
        ]);
        rows.push((name.to_string(), cells));
    }
    rows
}

fn booster_name(b: BoosterKind) -> &'static str {
    match b {
        BoosterKind::None => "",
        BoosterKind::FewShot => "few-shot",
        BoosterKind::Cot => "CoT",
        BoosterKind::FewShotCot => "few-shot+CoT",
        BoosterKind::SelfRefine => "self-refine",
        BoosterKind::Optimized => "auto-optimized",
    }
}

fn table_header(report: &MetricReport) -> Vec<String> {
    let mut h = vec!["Setting".to_string()];
    h.extend(report.per_label.iter().map(|s| s.label.clone()));
    h.extend(["IH Mean", "IA Mean", "All", "IH/IA/NE"].map(String::from));
    h
}

pub fn report_csv(report: &MetricReport) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(table_header(report))?;
    for (name, cells) in table_rows(report) {
        let mut rec = vec![name];
        rec.extend(cells.into_iter().map(cell));
        w.write_record(rec)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Parse(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn report_markdown(report: &MetricReport) -> String {
    let p = &report.provenance;
    let mut out = String::new();
    let _ = writeln!(out, "# {} {}\n", p.model_id, p.prompt);
    let _ = writeln!(out, "- config hash: `{}`", p.config_hash);
    let _ = writeln!(out, "- cache digest: `{}`", p.cache_digest.as_deref().unwrap_or("none"));
    let _ = writeln!(out, "- codebook version: {}", p.codebook_version);
    let _ = writeln!(out, "- gold rule: {:?}", p.gold_rule);
    let _ = writeln!(out, "- targets: {}", report.n_targets);
    let _ = writeln!(
        out,
        "- gateway calls: {} (retries {}, unparseable {}, failed {})\n",
        report.gateway_calls, report.retries, report.unparseable, report.failed
    );
    let rows = table_rows(report);
    let n = report.per_label.len();

    let _ = writeln!(out, "## Summary\n");
    let _ = writeln!(out, "| Setting | All | IH/IA/NE |");
    let _ = writeln!(out, "|---|---|---|");
    for (name, cells) in &rows {
        let _ = writeln!(out, "| {} | {} | {} |", name, cell(cells[n + 2]), cell(cells[n + 3]));
    }
    let _ = writeln!(out, "\n## Per label\n");
    let header = table_header(report);
    let _ = writeln!(out, "| {} |", header.join(" | "));
    let _ = writeln!(out, "|{}", "---|".repeat(header.len()));
    for (name, cells) in &rows {
        let cells: Vec<String> = cells.iter().map(|c| cell(*c)).collect();
        let _ = writeln!(out, "| {} | {} |", name, cells.join(" | "));
    }
    out
}

/// Writes the requested formats into `dir`; returns the written paths.
pub fn emit_report(report: &MetricReport, dir: &Path, formats: &[ReportFormat]) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    for f in formats {
        let body = match f {
            ReportFormat::Json => serde_json::to_string_pretty(report)? + "\n",
            ReportFormat::Csv => report_csv(report)?,
            ReportFormat::Markdown => report_markdown(report),
        };
        let path = dir.join(f.file_name());
        std::fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
        written.push(path);
    }
    Ok(written)
}
