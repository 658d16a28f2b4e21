//! Versioned label taxonomy and the coarse IH / IA / Neutral aggregation rule.
//!
//! A [`Codebook`] is an immutable value. Revisions never mutate a codebook in
//! place; [`Codebook::apply_revision`] returns the next version together with a
//! [`RemapTable`] that re-expresses labels of the previous version.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const DEFAULT_CODEBOOK: &str = include_str!("../resources/codebook.toml");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Polarity {
    IH,
    IA,
}

impl Polarity {
    pub fn opposite(self) -> Self {
        match self {
            Polarity::IH => Polarity::IA,
            Polarity::IA => Polarity::IH,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CodebookLabel {
    pub name: String,
    pub abbrev: String,
    pub polarity: Polarity,
    pub definition: String,
}

/// One edit within a [`Revision`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Change {
    /// Drop labels outright. Historical annotations map to nothing.
    Eliminate { labels: Vec<String> },
    /// Fold `sources` into the retained label `into`.
    Merge { sources: Vec<String>, into: String },
    Redefine { label: String, definition: String },
    Add { label: CodebookLabel },
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Revision {
    #[serde(default)]
    pub changes: Vec<Change>,
    #[serde(default)]
    pub rationale: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChangelogEntry {
    /// Version produced by this revision.
    pub version: u32,
    pub revision: Revision,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Codebook {
    pub version: u32,
    pub labels: Vec<CodebookLabel>,
    #[serde(default)]
    pub changelog: Vec<ChangelogEntry>,
}

/// Old abbrev to retained abbrev, or `None` when the label was eliminated.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RemapTable {
    pub from_version: u32,
    pub to_version: u32,
    pub entries: BTreeMap<String, Option<String>>,
}

impl RemapTable {
    pub fn map(&self, abbrev: &str) -> Option<&str> {
        self.entries.get(abbrev).and_then(|v| v.as_deref())
    }

    /// `old,new` rows; an eliminated label has an empty `new` cell.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["old", "new"])?;
        for (old, new) in &self.entries {
            w.write_record([old.as_str(), new.as_deref().unwrap_or("")])?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Parse(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Coarse {
    IH,
    IA,
    Neutral,
}

impl Coarse {
    pub const ALL: [Coarse; 3] = [Coarse::IH, Coarse::IA, Coarse::Neutral];

    pub fn short(self) -> &'static str {
        match self {
            Coarse::IH => "IH",
            Coarse::IA => "IA",
            Coarse::Neutral => "NE",
        }
    }

    pub fn parse_label(s: &str) -> Option<Coarse> {
        match s.trim().to_ascii_lowercase().as_str() {
            "ih" | "intellectual humility" => Some(Coarse::IH),
            "ia" | "intellectual arrogance" => Some(Coarse::IA),
            "ne" | "neutral" | "" => Some(Coarse::Neutral),
            _ => None,
        }
    }
}

impl fmt::Display for Coarse {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CoarseClass {
    pub value: Coarse,
    /// Set when IH and IA counts were equal and nonzero; `value` is then Neutral.
    pub tie_flag: bool,
}

impl CoarseClass {
    pub fn plain(value: Coarse) -> Self {
        CoarseClass { value, tie_flag: false }
    }
}

/// Lowercase and fold typographic apostrophes so names match across sources.
pub fn normalize_name(s: &str) -> String {
    s.trim()
        .chars()
        .map(|c| match c {
            '\u{2019}' | '\u{2018}' | '`' => '\'',
            c => c,
        })
        .collect::<String>()
        .to_lowercase()
}

impl Codebook {
    /// The 13-label final codebook shipped with the crate.
    pub fn default_codebook() -> Self {
        Self::from_toml_str(DEFAULT_CODEBOOK).expect("shipped codebook is valid")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cb: Codebook = toml::from_str(text)?;
        cb.validate()?;
        Ok(cb)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let mut abbrevs = HashSet::new();
        let mut names = HashSet::new();
        for l in &self.labels {
            if l.abbrev.trim().is_empty() {
                return Err(Error::Codebook(format!("label `{}` has an empty abbrev", l.name)));
            }
            if !abbrevs.insert(l.abbrev.as_str()) {
                return Err(Error::Codebook(format!("duplicate abbrev `{}`", l.abbrev)));
            }
            if !names.insert(normalize_name(&l.name)) {
                return Err(Error::Codebook(format!("duplicate name `{}`", l.name)));
            }
            if l.definition.trim().is_empty() {
                return Err(Error::Codebook(format!("label `{}` has an empty definition", l.abbrev)));
            }
        }
        for p in [Polarity::IH, Polarity::IA] {
            if !self.labels.iter().any(|l| l.polarity == p) {
                return Err(Error::Codebook(format!("codebook has no {p:?} labels")));
            }
        }
        let mut last = 0;
        for entry in &self.changelog {
            if entry.version <= last || entry.version > self.version {
                return Err(Error::Codebook("changelog versions must strictly increase".into()));
            }
            last = entry.version;
        }
        Ok(())
    }

    pub fn label(&self, abbrev: &str) -> Option<&CodebookLabel> {
        self.labels.iter().find(|l| l.abbrev == abbrev)
    }

    /// Looks a label up by abbrev or by (normalized) name.
    pub fn resolve(&self, key: &str) -> Option<&CodebookLabel> {
        let key = key.trim();
        if let Some(l) = self.label(key) {
            return Some(l);
        }
        let norm = normalize_name(key);
        self.labels
            .iter()
            .find(|l| normalize_name(&l.name) == norm || l.abbrev.eq_ignore_ascii_case(key))
    }

    pub fn abbrevs(&self) -> impl Iterator<Item = &str> {
        self.labels.iter().map(|l| l.abbrev.as_str())
    }

    pub fn with_polarity(&self, p: Polarity) -> impl Iterator<Item = &CodebookLabel> {
        self.labels.iter().filter(move |l| l.polarity == p)
    }

    pub fn polarity_of(&self, abbrev: &str) -> Result<Polarity> {
        self.label(abbrev)
            .map(|l| l.polarity)
            .ok_or_else(|| Error::UnknownLabel(abbrev.to_string()))
    }

    /// Coarse class from the counts of IH and IA labels in `labels`.
    pub fn aggregate_coarse<'a, I>(&self, labels: I) -> Result<CoarseClass>
    where
        I: IntoIterator<Item = &'a str>,
    {
        let mut polarities = Vec::new();
        for abbrev in labels {
            polarities.push(self.polarity_of(abbrev)?);
        }
        Ok(aggregate_polarities(&polarities))
    }

    /// Applies `revision`, returning version + 1 and the remap from this version.
    pub fn apply_revision(&self, revision: &Revision) -> Result<(Codebook, RemapTable)> {
        let mut labels = self.labels.clone();
        let mut remap: BTreeMap<String, Option<String>> =
            self.labels.iter().map(|l| (l.abbrev.clone(), Some(l.abbrev.clone()))).collect();

        let find = |labels: &[CodebookLabel], key: &str| -> Option<usize> {
            let norm = normalize_name(key);
            labels
                .iter()
                .position(|l| l.abbrev == key.trim() || normalize_name(&l.name) == norm)
        };

        for change in &revision.changes {
            match change {
                Change::Eliminate { labels: targets } => {
                    if targets.is_empty() {
                        return Err(Error::Codebook("eliminate must name at least one label".into()));
                    }
                    for t in targets {
                        let idx = find(&labels, t)
                            .ok_or_else(|| Error::Codebook(format!("cannot eliminate unknown label `{t}`")))?;
                        let removed = labels.remove(idx);
                        redirect(&mut remap, &removed.abbrev, None);
                    }
                }
                Change::Merge { sources, into } => {
                    if sources.is_empty() {
                        return Err(Error::Codebook("merge must name at least one source label".into()));
                    }
                    let target_idx = find(&labels, into)
                        .ok_or_else(|| Error::Codebook(format!("merge target `{into}` does not exist")))?;
                    let target = labels[target_idx].abbrev.clone();
                    for s in sources {
                        let idx = find(&labels, s)
                            .ok_or_else(|| Error::Codebook(format!("cannot merge unknown label `{s}`")))?;
                        if labels[idx].abbrev == target {
                            return Err(Error::Codebook(format!("cannot merge `{s}` into itself")));
                        }
                        let removed = labels.remove(idx);
                        redirect(&mut remap, &removed.abbrev, Some(target.clone()));
                    }
                }
                Change::Redefine { label, definition } => {
                    let idx = find(&labels, label)
                        .ok_or_else(|| Error::Codebook(format!("cannot redefine unknown label `{label}`")))?;
                    labels[idx].definition = definition.clone();
                }
                Change::Add { label } => {
                    labels.push(label.clone());
                }
            }
        }

        let mut changelog = self.changelog.clone();
        changelog.push(ChangelogEntry { version: self.version + 1, revision: revision.clone() });
        let next = Codebook { version: self.version + 1, labels, changelog };
        next.validate()?;
        Ok((
            next,
            RemapTable { from_version: self.version, to_version: self.version + 1, entries: remap },
        ))
    }
}

/// Points every old abbrev currently mapped to `abbrev` at `to` instead.
fn redirect(remap: &mut BTreeMap<String, Option<String>>, abbrev: &str, to: Option<String>) {
    for v in remap.values_mut() {
        if v.as_deref() == Some(abbrev) {
            *v = to.clone();
        }
    }
}

/// Majority of polarities; equal nonzero counts give a flagged Neutral.
pub fn aggregate_polarities(polarities: &[Polarity]) -> CoarseClass {
    let ih = polarities.iter().filter(|p| **p == Polarity::IH).count();
    let ia = polarities.len() - ih;
    match ih.cmp(&ia) {
        std::cmp::Ordering::Greater => CoarseClass::plain(Coarse::IH),
        std::cmp::Ordering::Less => CoarseClass::plain(Coarse::IA),
        std::cmp::Ordering::Equal if ih == 0 => CoarseClass::plain(Coarse::Neutral),
        std::cmp::Ordering::Equal => CoarseClass { value: Coarse::Neutral, tie_flag: true },
    }
}

/// Parses a free-form list of label names or abbrevs ("A, B; C").
pub fn parse_label_list(codebook: &Codebook, text: &str) -> Result<BTreeSet<String>> {
    let mut out = BTreeSet::new();
    for part in text.split([',', ';', '\n', '|']) {
        let part = part.trim().trim_matches(|c| c == '"' || c == '\'' || c == '[' || c == ']');
        if part.is_empty() {
            continue;
        }
        let lower = part.to_ascii_lowercase();
        if matches!(lower.as_str(), "none" | "neutral" | "n/a" | "na") {
            continue;
        }
        let label = codebook.resolve(part).ok_or_else(|| Error::UnknownLabel(part.to_string()))?;
        out.insert(label.abbrev.clone());
    }
    Ok(out)
}
