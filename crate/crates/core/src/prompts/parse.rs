use std::collections::BTreeSet;
use std::sync::OnceLock;

use log::debug;
use regex::Regex;

use crate::codebook::{normalize_name, Codebook, Coarse};
use crate::error::{Error, Result};

fn yes_no() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)\b(yes|no)\b").expect("static regex"))
}

/// Last `yes`/`no` token wins; chain-of-thought replies end with the verdict.
pub fn parse_binary(text: &str) -> Result<bool> {
    yes_no()
        .find_iter(text)
        .last()
        .map(|m| m.as_str().eq_ignore_ascii_case("yes"))
        .ok_or_else(|| Error::Unparseable { raw_text: text.to_string() })
}

/// Labels whose name, abbrev, or definition occurs in the reply.
///
/// Names and definitions match case-insensitively as substrings; abbrevs only
/// as whole upper-case words, since short abbrevs like `CA` occur inside
/// ordinary words.
pub fn parse_multiselect(text: &str, codebook: &Codebook) -> BTreeSet<String> {
    let norm = normalize_name(text);
    let mut out = BTreeSet::new();
    for l in &codebook.labels {
        let definition = normalize_name(&l.definition);
        let hit = norm.contains(&normalize_name(&l.name))
            || norm.contains(definition.trim_end_matches('.'))
            || contains_word(text, &l.abbrev);
        if hit {
            out.insert(l.abbrev.clone());
        }
    }
    if out.is_empty() {
        debug!("multi-selection reply matched no labels: {text:?}");
    }
    out
}

fn contains_word(text: &str, word: &str) -> bool {
    text.match_indices(word).any(|(i, _)| {
        let before = text[..i].chars().next_back();
        let after = text[i + word.len()..].chars().next();
        !before.is_some_and(char::is_alphanumeric) && !after.is_some_and(char::is_alphanumeric)
    })
}

const COARSE_PHRASES: [(&str, Coarse); 5] = [
    ("intellectual humility", Coarse::IH),
    ("intellectually humble", Coarse::IH),
    ("intellectual arrogan", Coarse::IA),
    ("intellectually arrogan", Coarse::IA),
    ("neutral", Coarse::Neutral),
];

/// Coarse class named last in the reply.
pub fn parse_coarse(text: &str) -> Result<Coarse> {
    let lower = text.to_lowercase();
    COARSE_PHRASES
        .iter()
        .filter_map(|(phrase, class)| lower.rfind(phrase).map(|pos| (pos, *class)))
        .max_by_key(|(pos, _)| *pos)
        .map(|(_, class)| class)
        .ok_or_else(|| Error::Unparseable { raw_text: text.to_string() })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(items: &[&str]) -> BTreeSet<String> {
        items.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn binary_examples() {
        assert!(parse_binary("Yes").unwrap());
        assert!(parse_binary("The comment asks questions. Therefore, the answer is **Yes**.").unwrap());
        assert!(!parse_binary("There is no doubt about it. Therefore, the answer is `No`.").unwrap());
        assert!(!parse_binary("no").unwrap());
        assert!(parse_binary("Nothing here.").is_err());
        assert!(parse_binary("Notably, yesterday").is_err());
    }

    #[test]
    fn multiselect_examples() {
        let cb = Codebook::default_codebook();
        assert_eq!(
            parse_multiselect("Seeks out new information, Mindful of others’ feelings", &cb),
            set(&["SO", "MF"])
        );
        assert_eq!(parse_multiselect("Labels: Acknowledges Personal Beliefs.", &cb), set(&["APB"]));
        assert!(parse_multiselect("None of the labels apply.", &cb).is_empty());
        assert_eq!(parse_multiselect("because of a CA pattern", &cb), set(&["CA"]));
        assert!(parse_multiselect("because the cases differ", &cb).is_empty());
        assert_eq!(
            parse_multiselect("mindful of others' feelings; ad hominem", &cb),
            set(&["MF", "AH"])
        );
    }

    #[test]
    fn multiselect_matches_descriptions() {
        let cb = Codebook::default_codebook();
        let l = cb.label("EM").unwrap();
        assert_eq!(parse_multiselect(&l.definition, &cb), set(&["EM"]));
    }

    #[test]
    fn coarse_examples() {
        assert_eq!(parse_coarse("intellectual humility").unwrap(), Coarse::IH);
        assert_eq!(parse_coarse("This is neutral.").unwrap(), Coarse::Neutral);
        assert_eq!(
            parse_coarse("It is not neutral and not humble at all; intellectual arrogance.").unwrap(),
            Coarse::IA
        );
        assert_eq!(parse_coarse("Intellectually arrogant").unwrap(), Coarse::IA);
        assert!(parse_coarse("no idea").is_err());
    }

    #[test]
    fn round_trip_every_label_name() {
        let cb = Codebook::default_codebook();
        for l in &cb.labels {
            assert_eq!(parse_multiselect(&l.name, &cb), set(&[&l.abbrev]), "{}", l.name);
        }
    }
}
