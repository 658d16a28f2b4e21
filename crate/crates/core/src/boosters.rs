//! Strategies layered on the base prompts: few-shot exemplars, chain of
//! thought, automatic prompt optimization, self-refinement, and few-shot
//! sample generation.

use std::collections::BTreeSet;

use log::warn;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::codebook::{Coarse, CoarseClass};
use crate::corpus::AnnotationTarget;
use crate::error::{Error, Result};
use crate::gateway::Gateway;
use crate::metrics::binary_macro_f1;
use crate::prompts::template::{render, Vars};
use crate::prompts::{
    cot_instruction, render_code, resources, Content, Conversation, Format, Message, PromptConfig, PromptFactory,
    Role, Task, Verdict, VerdictKind,
};
use crate::rng;
use crate::runner::GoldRecord;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExemplarSet {
    pub label: String,
    pub positives: Vec<AnnotationTarget>,
    pub negatives: Vec<AnnotationTarget>,
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl ExemplarSet {
    pub fn len(&self) -> usize {
        self.positives.len() + self.negatives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn target_ids(&self) -> impl Iterator<Item = &str> {
        self.positives.iter().chain(&self.negatives).map(|t| t.target_id.as_str())
    }

    /// Exemplars in presentation order: positives and negatives alternate.
    pub fn interleaved(&self) -> Vec<(&AnnotationTarget, bool)> {
        let mut out = Vec::with_capacity(self.len());
        for i in 0..self.positives.len().max(self.negatives.len()) {
            if let Some(p) = self.positives.get(i) {
                out.push((p, true));
            }
            if let Some(n) = self.negatives.get(i) {
                out.push((n, false));
            }
        }
        out
    }
}

/// Seeded draw of agreed positives and agreed negatives for `label`.
///
/// A positive carries the label in the agreed set; a negative carries it in
/// neither annotator's set. Records in `exclude` are never drawn.
pub fn select_exemplars(
    gold: &[GoldRecord],
    label: &str,
    n_pos: usize,
    n_neg: usize,
    seed: u64,
    exclude: &BTreeSet<String>,
) -> Result<ExemplarSet> {
    if gold.is_empty() {
        return Err(Error::InvalidInput("no gold records to draw exemplars from".into()));
    }
    let mut pos: Vec<&GoldRecord> = Vec::new();
    let mut neg: Vec<&GoldRecord> = Vec::new();
    for r in gold.iter().filter(|r| !exclude.contains(&r.target.target_id)) {
        if r.agreed.contains(label) {
            pos.push(r);
        } else if !r.labels_a.contains(label) && !r.labels_b.contains(label) {
            neg.push(r);
        }
    }
    if pos.is_empty() {
        return Err(Error::InvalidInput(format!("no agreed positives for `{label}`; few-shot is impossible")));
    }
    pos.sort_by(|a, b| a.target.target_id.cmp(&b.target.target_id));
    neg.sort_by(|a, b| a.target.target_id.cmp(&b.target.target_id));
    let mut rng = rng::scoped(seed, &format!("exemplars/{label}"));
    pos.shuffle(&mut rng);
    neg.shuffle(&mut rng);
    let mut warnings = Vec::new();
    for (kind, have, want) in [("positive", pos.len(), n_pos), ("negative", neg.len(), n_neg)] {
        if have < want {
            let msg = format!("`{label}`: only {have} {kind} exemplar(s) available, {want} requested");
            warn!("{msg}");
            warnings.push(msg);
        }
    }
    let take = |v: Vec<&GoldRecord>, n: usize| v.into_iter().take(n).map(|r| r.target.clone()).collect();
    Ok(ExemplarSet {
        label: label.to_string(),
        positives: take(pos, n_pos),
        negatives: take(neg, n_neg),
        warnings,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub enum Decoration<'e> {
    None,
    FewShot(&'e ExemplarSet),
    CoT,
    FewShotCoT(&'e ExemplarSet),
}

/// Rationale shown for an exemplar answer when few-shot and CoT combine.
fn exemplar_rationale(code: &str, positive: bool) -> String {
    if positive {
        format!("The Target Text shows the characteristics described as `{code}`. Therefore, the answer is `Yes`.")
    } else {
        format!("The Target Text does not show the characteristics described as `{code}`. Therefore, the answer is `No`.")
    }
}

/// Applies a booster to a label-wise binary-question conversation.
///
/// Few-shot turns are inserted before the final user message; CoT appends the
/// explain-first sentence to the system message. The final user message is
/// never modified.
pub fn decorate(
    factory: &PromptFactory<'_>,
    config: &PromptConfig,
    base: &Conversation,
    decoration: &Decoration<'_>,
) -> Result<Conversation> {
    base.validate()?;
    let (shots, cot) = match decoration {
        Decoration::None => return Ok(base.clone()),
        Decoration::CoT => (None, true),
        Decoration::FewShot(e) => (Some(*e), false),
        Decoration::FewShotCoT(e) => (Some(*e), true),
    };
    let mut out = base.clone();
    if cot {
        let sys = &mut out.messages[0].content;
        sys.push('\n');
        sys.push_str(cot_instruction());
    }
    if let Some(set) = shots {
        if config.task != Task::LabelWise || config.format != Format::BinaryQuestion {
            return Err(Error::InvalidInput("few-shot exemplars apply to binary-question prompts only".into()));
        }
        let phrase = factory.label_phrase(config, Some(&set.label))?;
        let code = phrase.clone();
        let last_user = out
            .messages
            .iter()
            .rposition(|m| m.role == Role::User)
            .expect("validated conversation has a user message");
        let mut turns = Vec::with_capacity(set.len() * 2);
        for (target, positive) in set.interleaved() {
            turns.push(Message::user(factory.user_prompt(target, &phrase)?));
            let answer = if cot {
                exemplar_rationale(&code, positive)
            } else {
                (if positive { "Yes" } else { "No" }).to_string()
            };
            turns.push(Message::assistant(answer));
        }
        out.messages.splice(last_user..last_user, turns);
    }
    Ok(out)
}

// Auto-optimization

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExampleOutcome {
    pub input: String,
    pub output: String,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub score: f64,
    /// Per-example results shown to the optimizer in the analysis step.
    pub examples: Vec<ExampleOutcome>,
}

/// Scores a candidate system prompt.
pub trait Scorer: Sync {
    fn evaluate(&self, prompt: &str) -> Result<Evaluation>;
}

pub const DEV_SIZE: usize = 6;

/// Seeded per-label dev/eval split: up to three agreed positives and three
/// agreed negatives go to dev, topped up from the remainder when one side is
/// short. Everything else is eval.
pub fn dev_split(gold: &[GoldRecord], label: &str, seed: u64) -> (Vec<GoldRecord>, Vec<GoldRecord>) {
    let mut idx: Vec<usize> = (0..gold.len()).collect();
    idx.sort_by(|a, b| gold[*a].target.target_id.cmp(&gold[*b].target.target_id));
    idx.shuffle(&mut rng::scoped(seed, &format!("dev/{label}")));
    let is_pos = |i: usize| gold[i].agreed.contains(label);
    let is_neg = |i: usize| !gold[i].labels_a.contains(label) && !gold[i].labels_b.contains(label);
    let half = DEV_SIZE / 2;
    let mut dev: Vec<usize> = idx.iter().copied().filter(|i| is_pos(*i)).take(half).collect();
    dev.extend(idx.iter().copied().filter(|i| is_neg(*i)).take(half));
    for i in &idx {
        if dev.len() >= DEV_SIZE.min(gold.len()) {
            break;
        }
        if !dev.contains(i) {
            dev.push(*i);
        }
    }
    let chosen: BTreeSet<usize> = dev.iter().copied().collect();
    let eval = idx.iter().filter(|i| !chosen.contains(i)).map(|i| gold[*i].clone()).collect();
    (dev.into_iter().map(|i| gold[i].clone()).collect(), eval)
}

/// Binary macro-F1 of a label-wise binary-question prompt on dev records.
pub struct DevScorer<'a> {
    pub factory: &'a PromptFactory<'a>,
    pub content: Content,
    pub label: &'a str,
    pub dev: &'a [GoldRecord],
    pub gateway: &'a Gateway,
}

impl Scorer for DevScorer<'_> {
    fn evaluate(&self, prompt: &str) -> Result<Evaluation> {
        let config = PromptConfig::new(Task::LabelWise, self.content, Format::BinaryQuestion)?;
        let phrase = self.factory.label_phrase(&config, Some(self.label))?;
        let mut gold = Vec::with_capacity(self.dev.len());
        let mut pred = Vec::with_capacity(self.dev.len());
        let mut examples = Vec::with_capacity(self.dev.len());
        for r in self.dev {
            let user = self.factory.user_prompt(&r.target, &phrase)?;
            let reply = self.gateway.chat(Conversation::new(prompt, user.clone()))?;
            let p = crate::prompts::parse_binary(&reply.text).unwrap_or(false);
            let g = r.agreed.contains(self.label);
            gold.push(g);
            pred.push(p);
            examples.push(ExampleOutcome {
                input: user,
                output: reply.text,
                label: (if g { "Yes" } else { "No" }).to_string(),
            });
        }
        Ok(Evaluation { score: binary_macro_f1(&gold, &pred)?, examples })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateRecord {
    pub prompt: String,
    pub score: f64,
    pub change_summary: String,
    /// Set when the reply held no usable prompt; the score is then 0.
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub candidates: Vec<CandidateRecord>,
    pub chosen: usize,
    pub incumbent_score: f64,
    pub replaced_incumbent: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizationHistory {
    pub label: String,
    pub seed_score: f64,
    pub rounds: Vec<RoundRecord>,
}

impl OptimizationHistory {
    pub fn candidate_evaluations(&self) -> usize {
        self.rounds.iter().map(|r| r.candidates.len()).sum()
    }

    pub fn incumbent_scores(&self) -> Vec<f64> {
        self.rounds.iter().map(|r| r.incumbent_score).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OptimizeParams {
    pub rounds: usize,
    pub per_round: usize,
    pub seed: u64,
}

impl Default for OptimizeParams {
    fn default() -> Self {
        OptimizeParams { rounds: 10, per_round: 3, seed: 0 }
    }
}

fn format_examples(examples: &[&ExampleOutcome]) -> String {
    examples
        .iter()
        .enumerate()
        .map(|(i, e)| format!("### Example {}\nInput: {}\nOutput: {}\nLabel: {}", i + 1, e.input, e.output, e.label))
        .collect::<Vec<_>>()
        .join("\n\n")
}

fn format_history(rounds: &[RoundRecord]) -> String {
    let lines: Vec<String> = rounds
        .iter()
        .map(|r| {
            let c = &r.candidates[r.chosen];
            format!("{} Accuracy: {:.4}", c.change_summary.trim(), c.score)
        })
        .collect();
    if lines.is_empty() {
        "None".to_string()
    } else {
        lines.join("\n")
    }
}

fn clean_candidate(text: &str) -> Option<String> {
    let t = text.trim();
    let t = t.strip_prefix("```").map(|s| s.trim_start_matches(|c: char| c.is_alphanumeric())).unwrap_or(t);
    let t = t.strip_suffix("```").unwrap_or(t).trim();
    (!t.is_empty()).then(|| t.to_string())
}

/// Iteratively rewrites `seed_prompt` through the analysis / refinement /
/// summary conversation, keeping a candidate only if it strictly beats the
/// incumbent on `scorer`.
///
/// The seed prompt is evaluated once up front; each round then generates and
/// evaluates `per_round` candidates, so the scorer sees
/// `1 + rounds * per_round` calls when `rounds > 0`. Candidates within a
/// round differ by a seeded permutation of the examples shown.
pub fn auto_optimize(
    label: &str,
    system_prompt: &str,
    seed_prompt: &str,
    gateway: &Gateway,
    scorer: &dyn Scorer,
    params: OptimizeParams,
) -> Result<(String, OptimizationHistory)> {
    let mut history = OptimizationHistory { label: label.to_string(), seed_score: 0.0, rounds: Vec::new() };
    if params.rounds == 0 {
        return Ok((seed_prompt.to_string(), history));
    }
    let mut incumbent = seed_prompt.to_string();
    let mut incumbent_eval = scorer.evaluate(&incumbent)?;
    history.seed_score = incumbent_eval.score;
    let system = render(resources::OPTIMIZE_SYSTEM, &Vars::new().set("System_prompt", system_prompt))?;
    for round in 1..=params.rounds {
        let mut candidates = Vec::with_capacity(params.per_round);
        for j in 0..params.per_round {
            let mut shown: Vec<&ExampleOutcome> = incumbent_eval.examples.iter().collect();
            if j > 0 {
                shown.shuffle(&mut rng::scoped(params.seed, &format!("optimize/{label}/{round}/{j}")));
            }
            let history_text = format_history(&history.rounds);
            let intro = render(resources::OPTIMIZE_INTRO, &Vars::new().set("n_examples", shown.len().to_string()))?;
            let mut conv = Conversation::new(system.clone(), intro);
            conv.push(Message::assistant(resources::OPTIMIZE_ACK.trim()));
            conv.push(Message::user(render(
                resources::OPTIMIZE_ANALYZE,
                &Vars::new()
                    .set("Curr_prompt", incumbent.clone())
                    .set("Examples", format_examples(&shown))
                    .set("history_performance", history_text.clone()),
            )?));
            let analysis = gateway.chat(conv.clone())?.text;
            conv.push(Message::assistant(analysis));
            conv.push(Message::user(render(
                resources::OPTIMIZE_REFINE,
                &Vars::new().set("Curr_prompt", incumbent.clone()).set("history_performance", history_text),
            )?));
            let reply = gateway.chat(conv.clone())?.text;
            conv.push(Message::assistant(reply.clone()));
            conv.push(Message::user(render(
                resources::OPTIMIZE_SUMMARIZE,
                &Vars::new().set("step", round.to_string()),
            )?));
            let change_summary = gateway.chat(conv)?.text;
            match clean_candidate(&reply) {
                Some(prompt) => {
                    let eval = scorer.evaluate(&prompt)?;
                    candidates.push((CandidateRecord { prompt, score: eval.score, change_summary, flagged: false }, Some(eval)));
                }
                None => {
                    warn!("round {round} candidate {j} for `{label}` was empty");
                    candidates.push((
                        CandidateRecord { prompt: String::new(), score: 0.0, change_summary, flagged: true },
                        None,
                    ));
                }
            }
        }
        let (chosen, replaced, eval) = choose(&candidates, incumbent_eval.score);
        if replaced {
            incumbent = candidates[chosen].0.prompt.clone();
            incumbent_eval = eval.expect("replacing candidate was evaluated");
        }
        history.rounds.push(RoundRecord {
            round,
            candidates: candidates.into_iter().map(|(c, _)| c).collect(),
            chosen,
            incumbent_score: incumbent_eval.score,
            replaced_incumbent: replaced,
        });
    }
    Ok((incumbent, history))
}

/// Round winner by score, earliest index on ties; it replaces the incumbent
/// only when strictly better and not flagged.
fn choose(candidates: &[(CandidateRecord, Option<Evaluation>)], incumbent: f64) -> (usize, bool, Option<Evaluation>) {
    let mut best = 0;
    for (i, (c, _)) in candidates.iter().enumerate() {
        if c.score > candidates[best].0.score {
            best = i;
        }
    }
    let (c, eval) = &candidates[best];
    let replaced = !c.flagged && c.score > incumbent;
    (best, replaced, eval.clone())
}

// Self-refinement

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefineCycle {
    pub prediction: Verdict,
    pub feedback: String,
    pub reconsidered: Verdict,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinementTranscript {
    pub target_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    pub cycles: Vec<RefineCycle>,
    #[serde(rename = "final")]
    pub final_verdict: Verdict,
    /// Set when any reply could not be parsed and a fallback verdict was used.
    pub flagged: bool,
    pub calls: usize,
    /// Cache key of every gateway call, in issue order.
    #[serde(default)]
    pub cache_keys: Vec<String>,
}

fn keyed_chat(gateway: &Gateway, conv: Conversation, keys: &mut Vec<String>) -> Result<String> {
    let req = gateway.request(conv);
    keys.push(req.cache_key());
    Ok(gateway.complete(&req)?.text)
}

fn fallback_kind(label: Option<&str>) -> VerdictKind {
    match label {
        Some(_) => VerdictKind::YesNo(false),
        None => VerdictKind::Coarse(CoarseClass::plain(Coarse::Neutral)),
    }
}

fn describe_kind(kind: &VerdictKind) -> String {
    match kind {
        VerdictKind::YesNo(true) => "Yes".into(),
        VerdictKind::YesNo(false) => "No".into(),
        VerdictKind::Coarse(c) => match c.value {
            Coarse::IH => "intellectual humility".into(),
            Coarse::IA => "intellectual arrogance".into(),
            Coarse::Neutral => "neutral".into(),
        },
        VerdictKind::LabelSet(s) => s.iter().cloned().collect::<Vec<_>>().join(", "),
    }
}

/// Prediction, feedback and reconsider cycles for one target, three gateway
/// calls per cycle.
///
/// `label` is required for the label-wise binary-question task and must be
/// absent for the coarse task. Cycles after the first re-ask the original
/// question with the previous reconsidered reply as context.
pub fn self_refine(
    factory: &PromptFactory<'_>,
    config: &PromptConfig,
    target: &AnnotationTarget,
    label: Option<&str>,
    gateway: &Gateway,
    rounds: usize,
) -> Result<RefinementTranscript> {
    if config.task == Task::LabelWise && config.format == Format::MultipleSelection {
        return Err(Error::InvalidInput("self-refinement supports the coarse and binary-question tasks".into()));
    }
    let base = decorate(factory, config, &factory.build_prompt(target, config, label)?, &Decoration::CoT)?;
    let user_prompt = base.last_user().expect("built prompt has a user turn").content.clone();
    let phrase = factory.label_phrase(config, label)?;
    let reconsider_system = match label {
        Some(l) => factory.reconsider_label_system(l)?,
        None => format!("{}\n{}", factory.system_prompt(config, None)?, cot_instruction()),
    };
    let feedback_system = factory.feedback_system(label)?;

    let mut cycles: Vec<RefineCycle> = Vec::with_capacity(rounds);
    let mut flagged = false;
    let mut current = Verdict { kind: fallback_kind(label), raw_text: String::new(), rationale: None };
    let mut calls = 0;
    let mut keys = Vec::with_capacity(rounds * 3);
    for _ in 0..rounds {
        let mut ask = base.clone();
        if let Some(prev) = cycles.last() {
            ask.push(Message::assistant(prev.reconsidered.raw_text.clone()));
            ask.push(Message::user(user_prompt.clone()));
        }
        let text = keyed_chat(gateway, ask, &mut keys)?;
        calls += 1;
        let prediction = match factory.parse_reply(config, &text) {
            Ok(kind) => Verdict { kind, raw_text: text.clone(), rationale: Some(text) },
            Err(_) => {
                flagged = true;
                Verdict { kind: current.kind.clone(), raw_text: text.clone(), rationale: Some(text) }
            }
        };

        let fb_user = factory.feedback_user(&user_prompt, &describe_kind(&prediction.kind))?;
        let feedback = keyed_chat(gateway, Conversation::new(feedback_system.clone(), fb_user), &mut keys)?;
        calls += 1;

        let re_user = factory.reconsider_user(target, &phrase, &feedback)?;
        let text = keyed_chat(gateway, Conversation::new(reconsider_system.clone(), re_user), &mut keys)?;
        calls += 1;
        let reconsidered = match factory.parse_reply(config, &text) {
            Ok(kind) => Verdict { kind, raw_text: text.clone(), rationale: Some(text) },
            Err(_) => {
                flagged = true;
                Verdict { kind: prediction.kind.clone(), raw_text: text.clone(), rationale: Some(text) }
            }
        };
        current = reconsidered.clone();
        cycles.push(RefineCycle { prediction, feedback, reconsidered });
    }
    Ok(RefinementTranscript {
        target_id: target.target_id.clone(),
        label: label.map(str::to_string),
        cycles,
        final_verdict: current,
        flagged,
        calls,
        cache_keys: keys,
    })
}

// Sample generation

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntheticSample {
    pub label: String,
    pub index: usize,
    pub title: String,
    pub content: String,
    pub target_comment: String,
    pub synthetic: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationReport {
    pub samples: Vec<SyntheticSample>,
    pub requested: usize,
    pub shortfall: usize,
}

pub const GENERATION_SHOTS: usize = 3;

fn format_sample(title: &str, content: &str, comment: &str) -> String {
    format!("Post Title: {title}\nContent: {content}\nTarget Comment: {comment}")
}

/// Parses the `Post Title:` / `Content:` / `Target Comment:` layout.
pub fn parse_generated(text: &str) -> Option<(String, String, String)> {
    const KEYS: [&str; 3] = ["post title:", "content:", "target comment:"];
    let mut fields: [Option<String>; 3] = [None, None, None];
    let mut current: Option<usize> = None;
    for line in text.lines() {
        let lower = line.trim_start().to_lowercase();
        let lower = lower.trim_start_matches(['*', '#', ' ']);
        if let Some(k) = KEYS.iter().position(|k| lower.starts_with(k)) {
            let start = line.to_lowercase().find(KEYS[k]).expect("key present") + KEYS[k].len();
            fields[k] = Some(line[start..].trim_start_matches(['*', ' ']).trim().to_string());
            current = Some(k);
        } else if let Some(k) = current {
            let f = fields[k].get_or_insert_with(String::new);
            if !f.is_empty() {
                f.push('\n');
            }
            f.push_str(line.trim_end());
        }
    }
    match fields {
        [Some(t), Some(c), Some(tc)] if !tc.trim().is_empty() => Some((t, c.trim().to_string(), tc.trim().to_string())),
        _ => None,
    }
}

/// Few-shot generation of `n` synthetic samples for `label`, one call each.
/// Replies that do not follow the layout are skipped and counted.
pub fn generate_samples(
    factory: &PromptFactory<'_>,
    label: &str,
    exemplars: &[AnnotationTarget],
    gateway: &Gateway,
    n: usize,
) -> Result<GenerationReport> {
    if exemplars.len() < GENERATION_SHOTS {
        return Err(Error::InvalidInput(format!(
            "generation needs {GENERATION_SHOTS} exemplars for `{label}`, got {}",
            exemplars.len()
        )));
    }
    let l = factory.codebook().label(label).ok_or_else(|| Error::UnknownLabel(label.to_string()))?;
    let system = render(
        resources::GENERATE_SYSTEM,
        &Vars::new().set("Code", render_code(l, Content::CodeAndDescription)),
    )?;
    let examples = exemplars[..GENERATION_SHOTS]
        .iter()
        .map(|t| format_sample(&t.title, &t.submission_text, &t.target_text))
        .collect::<Vec<_>>()
        .join("\n\n");
    let mut samples = Vec::new();
    for index in 1..=n {
        let user = render(
            resources::GENERATE_USER,
            &Vars::new()
                .set("n_examples", GENERATION_SHOTS.to_string())
                .set("Label", l.name.clone())
                .set("Examples", examples.clone())
                .set("index", index.to_string()),
        )?;
        let reply = gateway.chat(Conversation::new(system.clone(), user))?;
        match parse_generated(&reply.text) {
            Some((title, content, target_comment)) => samples.push(SyntheticSample {
                label: label.to_string(),
                index,
                title,
                content,
                target_comment,
                synthetic: true,
            }),
            None => warn!("generated sample #{index} for `{label}` did not follow the layout; skipped"),
        }
    }
    let shortfall = n - samples.len();
    Ok(GenerationReport { samples, requested: n, shortfall })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codebook::Codebook;

    fn gold(id: &str, a: &[&str], b: &[&str]) -> GoldRecord {
        let sa: BTreeSet<String> = a.iter().map(|s| s.to_string()).collect();
        let sb: BTreeSet<String> = b.iter().map(|s| s.to_string()).collect();
        GoldRecord {
            target: AnnotationTarget::new(id, "p", "title", "body", None, &format!("comment {id}")),
            agreed: sa.intersection(&sb).cloned().collect(),
            labels_a: sa,
            labels_b: sb,
            coarse: CoarseClass::plain(Coarse::Neutral),
            codebook_version: 1,
        }
    }

    fn pool() -> Vec<GoldRecord> {
        let mut v = Vec::new();
        for i in 0..10 {
            v.push(gold(&format!("p{i}"), &["RL"], &["RL"]));
            v.push(gold(&format!("n{i}"), &[], &[]));
        }
        v.push(gold("dp1", &["DP"], &["DP"]));
        v.push(gold("dp2", &["DP"], &["DP"]));
        v.push(gold("half", &["RL"], &[]));
        v
    }

    #[test]
    fn exemplars_ample_and_scarce() {
        let g = pool();
        let none = BTreeSet::new();
        let e = select_exemplars(&g, "RL", 3, 3, 7, &none).unwrap();
        assert_eq!((e.positives.len(), e.negatives.len()), (3, 3));
        assert!(e.warnings.is_empty());
        assert!(e.target_ids().all(|id| id != "half"));
        let again = select_exemplars(&g, "RL", 3, 3, 7, &none).unwrap();
        assert_eq!(e, again);

        let dp = select_exemplars(&g, "DP", 3, 3, 7, &none).unwrap();
        assert_eq!(dp.positives.len(), 2);
        assert_eq!(dp.warnings.len(), 1);

        let excl: BTreeSet<String> = ["dp1".to_string(), "dp2".to_string()].into();
        assert!(select_exemplars(&g, "DP", 3, 3, 7, &excl).is_err());
        assert!(select_exemplars(&g, "UC", 3, 3, 7, &none).is_err());
    }

    #[test]
    fn decorate_shapes() {
        let cb = Codebook::default_codebook();
        let f = PromptFactory::new(&cb);
        let cfg: PromptConfig = "C&D-BQ".parse().unwrap();
        let t = AnnotationTarget::new("t", "p", "title", "body", None, "target");
        let base = f.build_prompt(&t, &cfg, Some("RL")).unwrap();
        assert_eq!(decorate(&f, &cfg, &base, &Decoration::None).unwrap(), base);

        let cot = decorate(&f, &cfg, &base, &Decoration::CoT).unwrap();
        assert!(cot.system().ends_with(cot_instruction()));
        assert_eq!(cot.last_user(), base.last_user());

        let e = select_exemplars(&pool(), "RL", 3, 3, 1, &BTreeSet::new()).unwrap();
        let fs = decorate(&f, &cfg, &base, &Decoration::FewShot(&e)).unwrap();
        assert_eq!(fs.messages.len(), base.messages.len() + 12);
        assert_eq!(fs.messages.last(), base.messages.last());
        assert_eq!(fs.messages[2].content, "Yes");
        assert_eq!(fs.messages[4].content, "No");

        let fsc = decorate(&f, &cfg, &base, &Decoration::FewShotCoT(&e)).unwrap();
        assert!(fsc.messages[2].content.ends_with("the answer is `Yes`."));
        assert!(crate::prompts::parse_binary(&fsc.messages[4].content).is_ok_and(|v| !v));

        let ms: PromptConfig = "C&D-MS".parse().unwrap();
        let ms_base = f.build_prompt(&t, &ms, None).unwrap();
        assert!(decorate(&f, &ms, &ms_base, &Decoration::FewShot(&e)).is_err());
    }

    #[test]
    fn generated_layout_parses() {
        let text = "Post Title: On doubt\nContent: I wonder.\nMore lines.\nTarget Comment: I may be wrong here.";
        let (t, c, tc) = parse_generated(text).unwrap();
        assert_eq!((t.as_str(), c.as_str(), tc.as_str()), ("On doubt", "I wonder.\nMore lines.", "I may be wrong here."));
        assert_eq!(parse_generated("**Post Title:** A\n**Content:** B\n**Target Comment:** C").unwrap().2, "C");
        assert!(parse_generated("I cannot help with that.").is_none());
    }

    #[test]
    fn choose_keeps_incumbent_on_ties() {
        let c = |s: f64| (CandidateRecord { prompt: "x".into(), score: s, change_summary: String::new(), flagged: false }, None);
        let (i, replaced, _) = choose(&[c(0.4), c(0.9), c(0.9)], 0.5);
        assert_eq!((i, replaced), (1, true));
        let (_, replaced, _) = choose(&[c(0.5), c(0.5), c(0.2)], 0.5);
        assert!(!replaced);
    }
}
