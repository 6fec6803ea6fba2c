//! The five-section skill document and its post-checks.

use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SectionName {
    Trigger,
    Workflow,
    StopRules,
    ArtifactChecklist,
    CostControl,
}

impl SectionName {
    pub const ALL: [SectionName; 5] = [
        SectionName::Trigger,
        SectionName::Workflow,
        SectionName::StopRules,
        SectionName::ArtifactChecklist,
        SectionName::CostControl,
    ];

    pub fn heading(self) -> &'static str {
        match self {
            SectionName::Trigger => "Trigger",
            SectionName::Workflow => "Workflow",
            SectionName::StopRules => "Stop rules",
            SectionName::ArtifactChecklist => "Artifact checklist",
            SectionName::CostControl => "Cost control",
        }
    }
}

impl fmt::Display for SectionName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.heading())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkillRule {
    pub text: String,
    /// Ids of the patches this rule came from.
    pub provenance: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Section {
    pub name: SectionName,
    pub rules: Vec<SkillRule>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkillDocument {
    pub title: String,
    pub sections: Vec<Section>,
}

impl SkillDocument {
    /// A document with all five sections, empty.
    pub fn empty(title: impl Into<String>) -> Self {
        Self {
            title: title.into(),
            sections: SectionName::ALL
                .iter()
                .map(|&name| Section { name, rules: Vec::new() })
                .collect(),
        }
    }

    pub fn section(&self, name: SectionName) -> Option<&Section> {
        self.sections.iter().find(|s| s.name == name)
    }

    pub fn section_mut(&mut self, name: SectionName) -> Option<&mut Section> {
        self.sections.iter_mut().find(|s| s.name == name)
    }

    pub fn rules(&self, name: SectionName) -> Vec<&str> {
        self.section(name)
            .map(|s| s.rules.iter().map(|r| r.text.as_str()).collect())
            .unwrap_or_default()
    }

    pub fn rule_count(&self) -> usize {
        self.sections.iter().map(|s| s.rules.len()).sum()
    }

    pub fn to_markdown(&self) -> String {
        let mut out = format!("# {}\n", self.title);
        for s in &self.sections {
            out.push_str(&format!("\n## {}\n", s.name.heading()));
            if !s.rules.is_empty() {
                out.push('\n');
            }
            for r in &s.rules {
                out.push_str(&format!("- {}\n", r.text));
            }
        }
        out
    }

    pub fn to_yaml(&self) -> String {
        serde_yaml::to_string(self).expect("skill documents serialize")
    }
}

/// Size ceiling for a skill document, in estimated tokens.
pub const TOKEN_CEILING: usize = 1200;

/// Tokenizer-free size estimate: one token per four characters, rounded up.
pub fn token_estimate(text: &str) -> usize {
    text.chars().count().div_ceil(4)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Violation {
    MissingHeading(String),
    TokenCeiling { tokens: usize, limit: usize },
    Leakage { identifier: String },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::MissingHeading(h) => write!(f, "missing section heading {h:?}"),
            Violation::TokenCeiling { tokens, limit } => write!(f, "{tokens} tokens exceeds the {limit}-token ceiling"),
            Violation::Leakage { identifier } => write!(f, "task identifier {identifier:?} appears in the document"),
        }
    }
}

/// Checks rendered skill markdown: every heading present, size under the
/// ceiling, no denylisted identifier (case-insensitive substring).
pub fn post_check_markdown(markdown: &str, denylist: &[String], ceiling: usize) -> Vec<Violation> {
    let mut out = Vec::new();
    for name in SectionName::ALL {
        let heading = format!("## {}", name.heading());
        if !markdown.lines().any(|l| l.trim_end() == heading) {
            out.push(Violation::MissingHeading(name.heading().to_string()));
        }
    }
    let tokens = token_estimate(markdown);
    if tokens > ceiling {
        out.push(Violation::TokenCeiling { tokens, limit: ceiling });
    }
    let lower = markdown.to_lowercase();
    for id in denylist {
        let needle = id.trim().to_lowercase();
        if !needle.is_empty() && lower.contains(&needle) {
            out.push(Violation::Leakage { identifier: id.clone() });
        }
    }
    out
}

pub fn post_check(doc: &SkillDocument, denylist: &[String], ceiling: usize) -> Vec<Violation> {
    post_check_markdown(&doc.to_markdown(), denylist, ceiling)
}
