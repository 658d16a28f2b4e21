//! Prompt rendering for the six content x format configurations and the coarse
//! task, plus parsers that turn model replies back into labels.

mod parse;
pub mod template;

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::codebook::{Codebook, CodebookLabel, CoarseClass, Polarity};
use crate::corpus::{AnnotationTarget, TargetPosition};
use crate::error::{Error, Result};
use crate::rng;
use template::{render, Vars};

pub use parse::{parse_binary, parse_coarse, parse_multiselect};

pub(crate) mod resources {
    pub const COARSE_SYSTEM: &str = include_str!("../../templates/coarse_system.txt");
    pub const COARSE_SYSTEM_CODE_ONLY: &str = include_str!("../../templates/coarse_system_code_only.txt");
    pub const MS_SYSTEM: &str = include_str!("../../templates/labelwise_ms_system.txt");
    pub const BQ_SYSTEM: &str = include_str!("../../templates/labelwise_bq_system.txt");
    pub const USER: &str = include_str!("../../templates/user.txt");
    pub const COT: &str = include_str!("../../templates/cot.txt");
    pub const FEEDBACK_COARSE_SYSTEM: &str = include_str!("../../templates/feedback_coarse_system.txt");
    pub const FEEDBACK_LABEL_SYSTEM: &str = include_str!("../../templates/feedback_label_system.txt");
    pub const FEEDBACK_USER: &str = include_str!("../../templates/feedback_user.txt");
    pub const RECONSIDER_LABEL_SYSTEM: &str = include_str!("../../templates/reconsider_label_system.txt");
    pub const RECONSIDER_USER: &str = include_str!("../../templates/reconsider_user.txt");
    pub const OPTIMIZE_SYSTEM: &str = include_str!("../../templates/optimize_system.txt");
    pub const OPTIMIZE_INTRO: &str = include_str!("../../templates/optimize_intro.txt");
    pub const OPTIMIZE_ACK: &str = include_str!("../../templates/optimize_ack.txt");
    pub const OPTIMIZE_ANALYZE: &str = include_str!("../../templates/optimize_analyze.txt");
    pub const OPTIMIZE_REFINE: &str = include_str!("../../templates/optimize_refine.txt");
    pub const OPTIMIZE_SUMMARIZE: &str = include_str!("../../templates/optimize_summarize.txt");
    pub const GENERATE_SYSTEM: &str = include_str!("../../templates/generate_system.txt");
    pub const GENERATE_USER: &str = include_str!("../../templates/generate_user.txt");
}

/// The CoT instruction sentence appended to system messages.
pub fn cot_instruction() -> &'static str {
    resources::COT.trim()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Content {
    CodeOnly,
    DescriptionOnly,
    CodeAndDescription,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    MultipleSelection,
    BinaryQuestion,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Coarse,
    LabelWise,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PromptConfig {
    pub content: Content,
    pub format: Format,
    pub task: Task,
}

impl PromptConfig {
    pub fn new(task: Task, content: Content, format: Format) -> Result<Self> {
        let cfg = PromptConfig { content, format, task };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.task == Task::Coarse && self.format == Format::BinaryQuestion {
            return Err(Error::InvalidInput("the coarse task has no binary-question format".into()));
        }
        Ok(())
    }

    /// Short name such as `C&D-BQ` or `D-MS`.
    pub fn short_name(&self) -> String {
        let c = match self.content {
            Content::CodeOnly => "C",
            Content::DescriptionOnly => "D",
            Content::CodeAndDescription => "C&D",
        };
        let f = match self.format {
            Format::MultipleSelection => "MS",
            Format::BinaryQuestion => "BQ",
        };
        match self.task {
            Task::Coarse => format!("{c}-coarse"),
            Task::LabelWise => format!("{c}-{f}"),
        }
    }

    /// Every legal configuration: three coarse and six label-wise.
    pub fn all() -> Vec<PromptConfig> {
        let contents = [Content::CodeOnly, Content::DescriptionOnly, Content::CodeAndDescription];
        let mut out: Vec<PromptConfig> = contents
            .iter()
            .map(|&content| PromptConfig { content, format: Format::MultipleSelection, task: Task::Coarse })
            .collect();
        for &content in &contents {
            for format in [Format::MultipleSelection, Format::BinaryQuestion] {
                out.push(PromptConfig { content, format, task: Task::LabelWise });
            }
        }
        out
    }
}

impl FromStr for PromptConfig {
    type Err = Error;

    /// Accepts `C-BQ`, `D-MS`, `C&D-BQ`, `CD-MS`, `C-coarse`, `C&D-coarse`.
    fn from_str(s: &str) -> Result<Self> {
        let (c, f) = s
            .rsplit_once('-')
            .ok_or_else(|| Error::InvalidInput(format!("prompt config `{s}` is not CONTENT-FORMAT")))?;
        let content = match c.to_ascii_uppercase().as_str() {
            "C" => Content::CodeOnly,
            "D" => Content::DescriptionOnly,
            "C&D" | "CD" => Content::CodeAndDescription,
            _ => return Err(Error::InvalidInput(format!("unknown content `{c}`"))),
        };
        let (task, format) = match f.to_ascii_uppercase().as_str() {
            "MS" => (Task::LabelWise, Format::MultipleSelection),
            "BQ" => (Task::LabelWise, Format::BinaryQuestion),
            "COARSE" => (Task::Coarse, Format::MultipleSelection),
            _ => return Err(Error::InvalidInput(format!("unknown format `{f}`"))),
        };
        PromptConfig::new(task, content, format)
    }
}

impl fmt::Display for PromptConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.short_name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

impl Message {
    pub fn system(content: impl Into<String>) -> Self {
        Message { role: Role::System, content: content.into() }
    }
    pub fn user(content: impl Into<String>) -> Self {
        Message { role: Role::User, content: content.into() }
    }
    pub fn assistant(content: impl Into<String>) -> Self {
        Message { role: Role::Assistant, content: content.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Conversation {
    pub messages: Vec<Message>,
}

impl Conversation {
    pub fn new(system: impl Into<String>, user: impl Into<String>) -> Self {
        Conversation { messages: vec![Message::system(system), Message::user(user)] }
    }

    pub fn validate(&self) -> Result<()> {
        if self.messages.first().map(|m| m.role) != Some(Role::System) {
            return Err(Error::InvalidInput("conversation must start with a system message".into()));
        }
        if !self.messages.iter().any(|m| m.role == Role::User) {
            return Err(Error::InvalidInput("conversation has no user message".into()));
        }
        Ok(())
    }

    pub fn system(&self) -> &str {
        &self.messages[0].content
    }

    pub fn last_user(&self) -> Option<&Message> {
        self.messages.iter().rev().find(|m| m.role == Role::User)
    }

    pub fn push(&mut self, m: Message) {
        self.messages.push(m);
    }

    /// `### role` headed blocks; the layout of the golden prompt files.
    pub fn to_transcript(&self) -> String {
        let mut out = String::new();
        for m in &self.messages {
            let role = match m.role {
                Role::System => "system",
                Role::User => "user",
                Role::Assistant => "assistant",
            };
            out.push_str(&format!("### {role}\n{}\n", m.content));
        }
        out
    }
}

/// Parsed model decision for one prompt.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value")]
pub enum VerdictKind {
    YesNo(bool),
    LabelSet(BTreeSet<String>),
    Coarse(CoarseClass),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub kind: VerdictKind,
    pub raw_text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rationale: Option<String>,
}

/// Terse follow-up sent once when a reply cannot be parsed.
pub fn retry_instruction(config: &PromptConfig) -> &'static str {
    match (config.task, config.format) {
        (Task::Coarse, _) => "Answer with neutral, intellectual humility, or intellectual arrogance only.",
        (Task::LabelWise, Format::BinaryQuestion) => "Answer with Yes or No only.",
        (Task::LabelWise, Format::MultipleSelection) => {
            "Answer with the matching labels only, separated by commas, or None."
        }
    }
}

const MS_LABEL_PHRASE: &str = "one or more of the listed labels";
const COARSE_LABEL_PHRASE: &str = "intellectual humility, intellectual arrogance, or neutral";
const LIST_SEPARATOR: &str = "; ";

/// Renders a label the way the configured content variation presents it.
pub fn render_code(label: &CodebookLabel, content: Content) -> String {
    match content {
        Content::CodeOnly => label.name.clone(),
        Content::DescriptionOnly => label.definition.clone(),
        Content::CodeAndDescription => format!("{}: {}", label.name, label.definition),
    }
}

/// Builds conversations against one codebook. Labels are listed in codebook
/// order unless [`PromptFactory::shuffled`] was used.
#[derive(Debug, Clone)]
pub struct PromptFactory<'a> {
    codebook: &'a Codebook,
    order: Vec<usize>,
}

impl<'a> PromptFactory<'a> {
    pub fn new(codebook: &'a Codebook) -> Self {
        PromptFactory { codebook, order: (0..codebook.labels.len()).collect() }
    }

    /// Seeded permutation of the label listing order, for primacy experiments.
    pub fn shuffled(codebook: &'a Codebook, seed: u64) -> Self {
        let mut order: Vec<usize> = (0..codebook.labels.len()).collect();
        order.shuffle(&mut rng::scoped(seed, "label-order"));
        PromptFactory { codebook, order }
    }

    pub fn codebook(&self) -> &'a Codebook {
        self.codebook
    }

    fn ordered(&self) -> impl Iterator<Item = &'a CodebookLabel> + '_ {
        self.order.iter().map(|&i| &self.codebook.labels[i])
    }

    fn code_list(&self, content: Content, polarity: Option<Polarity>) -> String {
        self.ordered()
            .filter(|l| polarity.is_none_or(|p| l.polarity == p))
            .map(|l| render_code(l, content))
            .collect::<Vec<_>>()
            .join(LIST_SEPARATOR)
    }

    fn lookup(&self, abbrev: &str) -> Result<&'a CodebookLabel> {
        self.codebook.label(abbrev).ok_or_else(|| Error::UnknownLabel(abbrev.to_string()))
    }

    pub fn system_prompt(&self, config: &PromptConfig, label: Option<&str>) -> Result<String> {
        config.validate()?;
        match (config.task, config.format) {
            (Task::Coarse, _) => {
                let tpl = match config.content {
                    Content::CodeOnly => resources::COARSE_SYSTEM_CODE_ONLY,
                    _ => resources::COARSE_SYSTEM,
                };
                render(tpl, &self.polarity_vars(config.content))
            }
            (Task::LabelWise, Format::MultipleSelection) => render(
                resources::MS_SYSTEM,
                &Vars::new().set("Code_list", self.code_list(config.content, None)),
            ),
            (Task::LabelWise, Format::BinaryQuestion) => {
                let label = label.ok_or_else(|| {
                    Error::InvalidInput("binary-question prompts need a label".into())
                })?;
                let l = self.lookup(label)?;
                render(resources::BQ_SYSTEM, &Vars::new().set("Code", render_code(l, config.content)))
            }
        }
    }

    fn polarity_vars(&self, content: Content) -> Vars {
        Vars::new()
            .set("IH_code", self.code_list(content, Some(Polarity::IH)))
            .set("IA_code", self.code_list(content, Some(Polarity::IA)))
    }

    /// The phrase asked about at the end of the user message.
    pub fn label_phrase(&self, config: &PromptConfig, label: Option<&str>) -> Result<String> {
        Ok(match (config.task, config.format) {
            (Task::Coarse, _) => COARSE_LABEL_PHRASE.to_string(),
            (Task::LabelWise, Format::MultipleSelection) => MS_LABEL_PHRASE.to_string(),
            (Task::LabelWise, Format::BinaryQuestion) => {
                let label = label.ok_or_else(|| Error::InvalidInput("binary-question prompts need a label".into()))?;
                render_code(self.lookup(label)?, config.content)
            }
        })
    }

    pub fn user_prompt(&self, target: &AnnotationTarget, label_phrase: &str) -> Result<String> {
        render(resources::USER, &target_vars(target).set("Label", label_phrase))
    }

    pub fn build_prompt(
        &self,
        target: &AnnotationTarget,
        config: &PromptConfig,
        label: Option<&str>,
    ) -> Result<Conversation> {
        config.validate()?;
        let is_bq = config.task == Task::LabelWise && config.format == Format::BinaryQuestion;
        match (is_bq, label) {
            (true, None) => return Err(Error::InvalidInput("binary-question prompts need a label".into())),
            (false, Some(l)) => {
                return Err(Error::InvalidInput(format!("label `{l}` given for a non-binary prompt")))
            }
            _ => {}
        }
        let system = self.system_prompt(config, label)?;
        let user = self.user_prompt(target, &self.label_phrase(config, label)?)?;
        Ok(Conversation::new(system, user))
    }

    /// Parses a reply according to the configuration that produced the prompt.
    pub fn parse_reply(&self, config: &PromptConfig, text: &str) -> Result<VerdictKind> {
        Ok(match (config.task, config.format) {
            (Task::Coarse, _) => VerdictKind::Coarse(CoarseClass::plain(parse_coarse(text)?)),
            (Task::LabelWise, Format::BinaryQuestion) => VerdictKind::YesNo(parse_binary(text)?),
            (Task::LabelWise, Format::MultipleSelection) => {
                VerdictKind::LabelSet(parse_multiselect(text, self.codebook))
            }
        })
    }

    // Self-refinement and optimization prompts.

    pub fn feedback_system(&self, label: Option<&str>) -> Result<String> {
        match label {
            None => render(resources::FEEDBACK_COARSE_SYSTEM, &self.polarity_vars(Content::CodeAndDescription)),
            Some(l) => render(
                resources::FEEDBACK_LABEL_SYSTEM,
                &Vars::new().set("Code", render_code(self.lookup(l)?, Content::CodeAndDescription)),
            ),
        }
    }

    pub fn feedback_user(&self, user_prompt: &str, prediction: &str) -> Result<String> {
        render(
            resources::FEEDBACK_USER,
            &Vars::new().set("User_prompt", user_prompt).set("Prediction", prediction.trim()),
        )
    }

    pub fn reconsider_label_system(&self, label: &str) -> Result<String> {
        render(
            resources::RECONSIDER_LABEL_SYSTEM,
            &Vars::new().set("Code", render_code(self.lookup(label)?, Content::CodeAndDescription)),
        )
    }

    pub fn reconsider_user(&self, target: &AnnotationTarget, label_phrase: &str, feedback: &str) -> Result<String> {
        render(
            resources::RECONSIDER_USER,
            &target_vars(target).set("Label", label_phrase).set("Feedback", feedback.trim()),
        )
    }
}

fn target_vars(target: &AnnotationTarget) -> Vars {
    let second = target.target_position == TargetPosition::Second;
    let first_comment = match (&target.first_comment, second) {
        (Some(fc), true) => fc.clone(),
        _ => target.target_text.clone(),
    };
    Vars::new()
        .set("Post_title", target.title.clone())
        .set("Post_content", target.submission_text.clone())
        .set("First_comment", first_comment)
        .set("Second_comment", target.target_text.clone())
        .set("Focal_comment", target.target_text.clone())
        .flag("focus_on_second_comment", second)
}
