//! Prompt rendering for every pipeline stage.
//!
//! Templates live in `templates/<strategy>/<stage>.txt`. Each file has a
//! `[system]` section and a `[user]` section and may use the placeholders
//! `{title}`, `{demonstrations}`, `{attributes}`, `{n}`, `{title_noun}` and
//! `{output_format}`. Substitution is a single pass, so braces inside
//! substituted text (JSON examples, titles) are never re-expanded.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::PairSet;
use crate::retrieval::{Demonstration, SelectorKind};

#[derive(Debug, thiserror::Error)]
pub enum PromptError {
    #[error("template {name}: {message}")]
    Template { name: String, message: String },
    #[error("reading template {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("stage 2 needs at least one attribute")]
    NoAttributes,
    #[error("self-generation needs n >= 1")]
    InvalidCount,
    #[error("invalid strategy: {0}")]
    InvalidStrategy(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    OneStep,
    TwoStep,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContextKind {
    None,
    SelfGenerated,
    Titles,
    Demonstrations,
}

/// How the model is asked to format pairs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputGrammar {
    #[default]
    Lines,
    Json,
}

impl FromStr for OutputGrammar {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "lines" => Ok(OutputGrammar::Lines),
            "json" => Ok(OutputGrammar::Json),
            other => Err(format!("unknown output grammar {other:?} (expected lines or json)")),
        }
    }
}

impl OutputGrammar {
    fn instruction(self) -> &'static str {
        match self {
            OutputGrammar::Lines => {
                "Answer only with the attribute-value pairs, one per line, in the form \
                 \"attribute: value\". Do not add any other text."
            }
            OutputGrammar::Json => {
                "Answer only with a single JSON object that maps each attribute to its value, \
                 for example {\"attribute\": \"value\"}. Use a list of strings when an attribute \
                 has several values. Do not add any other text."
            }
        }
    }

    /// Serialise a pair set in this grammar. Lines are sorted by attribute
    /// then value; JSON groups repeated attributes into lists.
    pub fn serialize_pairs(self, pairs: &PairSet) -> String {
        match self {
            OutputGrammar::Lines => pairs
                .iter()
                .map(|p| format!("{}: {}", p.attribute(), p.value()))
                .collect::<Vec<_>>()
                .join("\n"),
            OutputGrammar::Json => {
                let mut map = serde_json::Map::new();
                for p in pairs {
                    match map.get_mut(p.attribute()) {
                        None => {
                            map.insert(p.attribute().to_string(), p.value().into());
                        }
                        Some(serde_json::Value::Array(values)) => values.push(p.value().into()),
                        Some(existing) => {
                            let first = existing.take();
                            *existing = serde_json::Value::Array(vec![first, p.value().into()]);
                        }
                    }
                }
                serde_json::Value::Object(map).to_string()
            }
        }
    }
}

/// An experiment's prompting strategy.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Strategy {
    pub mode: Mode,
    pub context: ContextKind,
    /// Number of retrieved titles or demonstrations.
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub selector: Option<SelectorKind>,
    /// Pseudo titles requested when `context` is `self_generated`.
    #[serde(default = "default_self_gen_count")]
    pub self_gen_count: usize,
    /// Also show labeled demonstrations in the two-step value stage.
    #[serde(default)]
    pub stage2_demonstrations: bool,
}

fn default_k() -> usize {
    3
}

fn default_self_gen_count() -> usize {
    3
}

impl Default for Strategy {
    fn default() -> Self {
        Strategy {
            mode: Mode::OneStep,
            context: ContextKind::None,
            k: default_k(),
            selector: None,
            self_gen_count: default_self_gen_count(),
            stage2_demonstrations: false,
        }
    }
}

impl Strategy {
    pub fn zero_shot(mode: Mode) -> Self {
        Strategy {
            mode,
            ..Default::default()
        }
    }

    pub fn self_generated(mode: Mode, n: usize) -> Self {
        Strategy {
            mode,
            context: ContextKind::SelfGenerated,
            self_gen_count: n,
            ..Default::default()
        }
    }

    pub fn retrieved(mode: Mode, context: ContextKind, selector: SelectorKind, k: usize) -> Self {
        Strategy {
            mode,
            context,
            k,
            selector: Some(selector),
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<(), PromptError> {
        let bad = |m: String| Err(PromptError::InvalidStrategy(m));
        match self.context {
            ContextKind::None => {}
            ContextKind::SelfGenerated => {
                if self.self_gen_count == 0 {
                    return bad("self_generated context needs self_gen_count >= 1".into());
                }
            }
            ContextKind::Titles | ContextKind::Demonstrations => {
                if self.selector.is_none() {
                    return bad("retrieved context needs a selector".into());
                }
                if ![1, 3, 5].contains(&self.k) {
                    return bad(format!("k must be 1, 3 or 5 (got {})", self.k));
                }
            }
        }
        if self.stage2_demonstrations
            && (self.mode != Mode::TwoStep || self.context != ContextKind::Demonstrations)
        {
            return bad("stage2_demonstrations needs two_step mode with demonstrations".into());
        }
        Ok(())
    }

    /// Short label used in report tables.
    pub fn label(&self) -> String {
        let mode = match self.mode {
            Mode::OneStep => "one-step",
            Mode::TwoStep => "two-step",
        };
        let selector = self.selector.map(|s| s.to_string()).unwrap_or_default();
        match self.context {
            ContextKind::None => format!("{mode} zero-shot"),
            ContextKind::SelfGenerated => format!("{mode} self-generated (n={})", self.self_gen_count),
            ContextKind::Titles => format!("{mode} titles ({selector}, k={})", self.k),
            ContextKind::Demonstrations => {
                let extra = if self.stage2_demonstrations { ", stage 2" } else { "" };
                format!("{mode} demonstrations ({selector}, k={}{extra})", self.k)
            }
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Single,
    AttrId,
    ValueExt,
    SelfGen,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Single => "single",
            Stage::AttrId => "attr_id",
            Stage::ValueExt => "value_ext",
            Stage::SelfGen => "self_gen",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    System,
    User,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::System => "system",
            Role::User => "user",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

/// A rendered chat prompt plus the metadata needed to audit it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub strategy: Strategy,
    pub stage: Stage,
    pub messages: Vec<Message>,
    pub demo_ids: Vec<String>,
    pub query_id: String,
}

impl PromptBundle {
    /// All message text joined, for substring checks.
    pub fn text(&self) -> String {
        self.messages
            .iter()
            .map(|m| m.content.as_str())
            .collect::<Vec<_>>()
            .join("\n")
    }
}

const PLACEHOLDERS: [&str; 6] = [
    "title",
    "demonstrations",
    "attributes",
    "n",
    "title_noun",
    "output_format",
];

#[derive(Debug, Clone, PartialEq, Eq)]
struct Template {
    system: String,
    user: String,
}

impl Template {
    fn parse(name: &str, text: &str) -> Result<Self, PromptError> {
        let err = |message: &str| PromptError::Template {
            name: name.to_string(),
            message: message.to_string(),
        };
        let text = text.replace("\r\n", "\n");
        let rest = text
            .trim_start()
            .strip_prefix("[system]\n")
            .ok_or_else(|| err("must start with a [system] line"))?;
        let (system, user) = rest
            .split_once("\n[user]\n")
            .ok_or_else(|| err("missing [user] section"))?;
        let template = Template {
            system: system.trim().to_string(),
            user: user.trim().to_string(),
        };
        if template.system.is_empty() || template.user.is_empty() {
            return Err(err("empty section"));
        }
        let title_uses = count_placeholder(&template.system, "title") + count_placeholder(&template.user, "title");
        if title_uses != 1 {
            return Err(err("{title} must appear exactly once"));
        }
        Ok(template)
    }

    fn render(&self, values: &[(&str, &str)]) -> Vec<Message> {
        vec![
            Message {
                role: Role::System,
                content: tidy(&substitute(&self.system, values)),
            },
            Message {
                role: Role::User,
                content: tidy(&substitute(&self.user, values)),
            },
        ]
    }
}

fn count_placeholder(text: &str, name: &str) -> usize {
    text.matches(&format!("{{{name}}}")).count()
}

/// Replace `{name}` for known placeholder names in one left-to-right pass.
fn substitute(template: &str, values: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let replaced = after.find('}').and_then(|close| {
            let name = &after[..close];
            PLACEHOLDERS.contains(&name).then(|| {
                let value = values.iter().find(|(k, _)| *k == name).map_or("", |(_, v)| *v);
                (value, close)
            })
        });
        match replaced {
            Some((value, close)) => {
                out.push_str(value);
                rest = &after[close + 1..];
            }
            None => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    out
}

/// Trim and collapse runs of blank lines left by empty placeholders.
fn tidy(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut blank_run = 0;
    for line in text.trim().lines() {
        let line = line.trim_end();
        if line.is_empty() {
            blank_run += 1;
            if blank_run > 1 {
                continue;
            }
        } else {
            blank_run = 0;
        }
        out.push_str(line);
        out.push('\n');
    }
    out.trim_end().to_string()
}

/// The four stage templates plus their version tag.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemplateSet {
    version: String,
    single: Template,
    attr_id: Template,
    value_ext: Template,
    self_gen: Template,
}

const TEMPLATE_FILES: [(&str, &str); 4] = [
    ("single", "one_step/single.txt"),
    ("attr_id", "two_step/attr_id.txt"),
    ("value_ext", "two_step/value_ext.txt"),
    ("self_gen", "self_generation/self_gen.txt"),
];

impl TemplateSet {
    /// Templates compiled into the binary.
    pub fn builtin() -> Self {
        Self::from_sources(
            include_str!("../templates/VERSION"),
            [
                include_str!("../templates/one_step/single.txt"),
                include_str!("../templates/two_step/attr_id.txt"),
                include_str!("../templates/two_step/value_ext.txt"),
                include_str!("../templates/self_generation/self_gen.txt"),
            ],
        )
        .expect("built-in templates are valid")
    }

    /// Load a template directory laid out like `templates/` in this crate.
    pub fn load(dir: &Path) -> Result<Self, PromptError> {
        let read = |rel: &str| {
            let path = dir.join(rel);
            fs::read_to_string(&path).map_err(|source| PromptError::Io {
                path: path.display().to_string(),
                source,
            })
        };
        let version = read("VERSION")?;
        let mut sources = Vec::new();
        for (_, rel) in TEMPLATE_FILES {
            sources.push(read(rel)?);
        }
        let sources: [String; 4] = sources.try_into().expect("four templates");
        Self::from_sources(&version, sources.each_ref().map(String::as_str))
    }

    fn from_sources(version: &str, sources: [&str; 4]) -> Result<Self, PromptError> {
        let version = version.trim().to_string();
        if version.is_empty() {
            return Err(PromptError::Template {
                name: "VERSION".into(),
                message: "empty version tag".into(),
            });
        }
        let [single, attr_id, value_ext, self_gen] = sources;
        Ok(TemplateSet {
            version,
            single: Template::parse(TEMPLATE_FILES[0].1, single)?,
            attr_id: Template::parse(TEMPLATE_FILES[1].1, attr_id)?,
            value_ext: Template::parse(TEMPLATE_FILES[2].1, value_ext)?,
            self_gen: Template::parse(TEMPLATE_FILES[3].1, self_gen)?,
        })
    }

    pub fn version(&self) -> &str {
        &self.version
    }

    /// SHA-256 over all template bodies, to detect edited templates that
    /// kept their version tag.
    pub fn digest(&self) -> String {
        let mut hasher = Sha256::new();
        for t in [&self.single, &self.attr_id, &self.value_ext, &self.self_gen] {
            hasher.update(t.system.as_bytes());
            hasher.update([0]);
            hasher.update(t.user.as_bytes());
            hasher.update([0]);
        }
        hex::encode(hasher.finalize())
    }
}

/// A title line followed by the pairs in `grammar`. Title-only
/// demonstrations render as the title line alone.
pub fn format_demonstration(demo: &Demonstration, grammar: OutputGrammar) -> String {
    let title = format!("Title: {}", demo.title.trim());
    if demo.pairs.is_empty() {
        title
    } else {
        format!("{title}\n{}", grammar.serialize_pairs(&demo.pairs))
    }
}

/// Most similar first when every demonstration carries a score; otherwise
/// the given order (random draws).
fn ordered(demos: &[Demonstration]) -> Vec<&Demonstration> {
    let mut refs: Vec<&Demonstration> = demos.iter().collect();
    if refs.iter().all(|d| d.score.is_some()) {
        refs.sort_by(|a, b| b.score.unwrap().total_cmp(&a.score.unwrap()));
    }
    refs
}

fn demonstration_block(demos: &[&Demonstration], grammar: OutputGrammar) -> String {
    if demos.is_empty() {
        return String::new();
    }
    let labeled = demos.iter().any(|d| !d.pairs.is_empty());
    let header = if labeled {
        "Here are example products with their attribute-value pairs:"
    } else {
        "Here are titles of related products:"
    };
    let sep = if labeled { "\n\n" } else { "\n" };
    let body = demos
        .iter()
        .map(|d| format_demonstration(d, grammar))
        .collect::<Vec<_>>()
        .join(sep);
    format!("{header}\n\n{body}")
}

/// Renders prompts for one strategy with one template set.
#[derive(Debug, Clone)]
pub struct Prompter {
    templates: TemplateSet,
    grammar: OutputGrammar,
    strategy: Strategy,
}

impl Prompter {
    pub fn new(templates: TemplateSet, grammar: OutputGrammar, strategy: Strategy) -> Self {
        Prompter {
            templates,
            grammar,
            strategy,
        }
    }

    pub fn templates(&self) -> &TemplateSet {
        &self.templates
    }

    pub fn grammar(&self) -> OutputGrammar {
        self.grammar
    }

    pub fn strategy(&self) -> &Strategy {
        &self.strategy
    }

    fn bundle(&self, stage: Stage, query_id: &str, messages: Vec<Message>, demos: &[&Demonstration]) -> PromptBundle {
        PromptBundle {
            strategy: self.strategy.clone(),
            stage,
            messages,
            demo_ids: demos.iter().map(|d| d.product_id.clone()).collect(),
            query_id: query_id.to_string(),
        }
    }

    /// Direct extraction of all pairs, optionally with context (labeled
    /// demonstrations or title-only examples).
    pub fn render_one_step(&self, query_id: &str, title: &str, demos: &[Demonstration]) -> PromptBundle {
        let demos = ordered(demos);
        let block = demonstration_block(&demos, self.grammar);
        let messages = self.templates.single.render(&[
            ("title", title),
            ("demonstrations", &block),
            ("output_format", self.grammar.instruction()),
        ]);
        self.bundle(Stage::Single, query_id, messages, &demos)
    }

    /// Stage 1: ask for attribute names only. Context entries contribute
    /// their titles, in the order given.
    pub fn render_two_step_stage1(&self, query_id: &str, title: &str, context: &[Demonstration]) -> PromptBundle {
        let titles: Vec<Demonstration> = context.iter().cloned().map(Demonstration::without_labels).collect();
        let refs: Vec<&Demonstration> = titles.iter().collect();
        let block = demonstration_block(&refs, self.grammar);
        let messages = self
            .templates
            .attr_id
            .render(&[("title", title), ("demonstrations", &block)]);
        self.bundle(Stage::AttrId, query_id, messages, &refs)
    }

    /// Stage 2: one prompt asking for the values of all identified
    /// attributes. Duplicate names are dropped, keeping first occurrences.
    pub fn render_two_step_stage2(
        &self,
        query_id: &str,
        title: &str,
        attributes: &[String],
        demos: &[Demonstration],
    ) -> Result<PromptBundle, PromptError> {
        let mut unique: Vec<&str> = Vec::new();
        for a in attributes.iter().map(|a| a.trim()).filter(|a| !a.is_empty()) {
            if !unique.contains(&a) {
                unique.push(a);
            }
        }
        if unique.is_empty() {
            return Err(PromptError::NoAttributes);
        }
        let list = unique.iter().map(|a| format!("- {a}")).collect::<Vec<_>>().join("\n");
        let demos = ordered(demos);
        let block = demonstration_block(&demos, self.grammar);
        let messages = self.templates.value_ext.render(&[
            ("title", title),
            ("attributes", &list),
            ("demonstrations", &block),
            ("output_format", self.grammar.instruction()),
        ]);
        Ok(self.bundle(Stage::ValueExt, query_id, messages, &demos))
    }

    /// Ask the model for `n` unlabeled titles similar to the query.
    pub fn render_self_generation(&self, query_id: &str, title: &str, n: usize) -> Result<PromptBundle, PromptError> {
        if n == 0 {
            return Err(PromptError::InvalidCount);
        }
        let count = n.to_string();
        let noun = if n == 1 { "title" } else { "titles" };
        let messages = self
            .templates
            .self_gen
            .render(&[("title", title), ("n", &count), ("title_noun", noun)]);
        Ok(self.bundle(Stage::SelfGen, query_id, messages, &[]))
    }
}
