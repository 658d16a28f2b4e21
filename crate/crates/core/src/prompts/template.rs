//! Minimal `{{var}}` / `{{#if flag}}...{{/if}}` renderer for the prompt resources.
//!
//! Rendering is two-phase: conditional blocks are resolved and runs of blank
//! lines collapsed on the template text itself, then variables are spliced in.
//! Substituted values are never re-scanned or reformatted.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default)]
pub struct Vars {
    values: BTreeMap<&'static str, String>,
    flags: BTreeMap<&'static str, bool>,
}

impl Vars {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(mut self, key: &'static str, value: impl Into<String>) -> Self {
        self.values.insert(key, value.into());
        self
    }

    pub fn flag(mut self, key: &'static str, on: bool) -> Self {
        self.flags.insert(key, on);
        self
    }
}

pub fn render(template: &str, vars: &Vars) -> Result<String> {
    let resolved = resolve_conditionals(template, vars)?;
    let shaped = collapse_blank_lines(&resolved);
    substitute(&shaped, vars)
}

fn resolve_conditionals(template: &str, vars: &Vars) -> Result<String> {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(start) = rest.find("{{#if ") {
        out.push_str(&rest[..start]);
        let after = &rest[start + 6..];
        let close = after
            .find("}}")
            .ok_or_else(|| Error::Parse("unterminated {{#if".into()))?;
        let flag = after[..close].trim();
        let body_and_rest = &after[close + 2..];
        let end = body_and_rest
            .find("{{/if}}")
            .ok_or_else(|| Error::Parse(format!("missing {{{{/if}}}} for `{flag}`")))?;
        let on = *vars
            .flags
            .get(flag)
            .ok_or_else(|| Error::Parse(format!("template flag `{flag}` not set")))?;
        if on {
            out.push_str(body_and_rest[..end].trim_matches('\n'));
        }
        rest = &body_and_rest[end + 7..];
    }
    out.push_str(rest);
    Ok(out)
}

fn collapse_blank_lines(text: &str) -> String {
    let mut out: Vec<&str> = Vec::new();
    for line in text.trim().lines() {
        let line = line.trim_end();
        if line.is_empty() && out.last().is_some_and(|l| l.is_empty()) {
            continue;
        }
        out.push(line);
    }
    out.join("\n")
}

fn substitute(text: &str, vars: &Vars) -> Result<String> {
    let mut out = String::with_capacity(text.len());
    let mut rest = text;
    while let Some(start) = rest.find("{{") {
        out.push_str(&rest[..start]);
        let after = &rest[start + 2..];
        let close = after
            .find("}}")
            .ok_or_else(|| Error::Parse("unterminated placeholder".into()))?;
        let key = after[..close].trim();
        let value = vars
            .values
            .get(key)
            .ok_or_else(|| Error::Parse(format!("template variable `{key}` not set")))?;
        out.push_str(value);
        rest = &after[close + 2..];
    }
    out.push_str(rest);
    Ok(out)
}
