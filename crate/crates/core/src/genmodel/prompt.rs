//! Prompt templates and placeholder-aware embedding assembly.

use serde::{Deserialize, Serialize};

use super::vocab::{special, Vocabulary};
use crate::autodiff::{Tape, Var};
use crate::corpus::Task;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Rerank,
    Fullrank,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Rerank => "rerank",
            Mode::Fullrank => "fullrank",
        }
    }

    /// Feature vectors inserted into the prompt.
    pub fn insertions(self) -> usize {
        match self {
            Mode::Rerank => 4,
            Mode::Fullrank => 2,
        }
    }
}

pub const QUERY_MARKER: &str = "{query}";

const SEARCH_RERANK: &str = include_str!("../../templates/search_rerank.txt");
const REC_RERANK: &str = include_str!("../../templates/rec_rerank.txt");
const SEARCH_FULLRANK: &str = include_str!("../../templates/search_fullrank.txt");
const REC_FULLRANK: &str = include_str!("../../templates/rec_fullrank.txt");

pub fn template_text(task: Task, mode: Mode) -> &'static str {
    match (task, mode) {
        (Task::Search, Mode::Rerank) => SEARCH_RERANK,
        (Task::Rec, Mode::Rerank) => REC_RERANK,
        (Task::Search, Mode::Fullrank) => SEARCH_FULLRANK,
        (Task::Rec, Mode::Fullrank) => REC_FULLRANK,
    }
}

/// Template words in file order, placeholders and the query marker excluded.
pub fn template_words() -> Vec<String> {
    let mut out = Vec::new();
    for mode in [Mode::Rerank, Mode::Fullrank] {
        for task in Task::ALL {
            for w in body(template_text(task, mode)).split_whitespace() {
                if w != QUERY_MARKER && !special::NAMES[..4].contains(&w) {
                    out.push(w.to_string());
                }
            }
        }
    }
    out
}

fn body(text: &str) -> String {
    text.lines().filter(|l| !l.trim_start().starts_with('#')).collect::<Vec<_>>().join(" ")
}

/// Text segments between placeholders: five when re-ranking, three in
/// full-ranking mode.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PromptTemplate {
    pub task: Task,
    pub mode: Mode,
    pub segments: Vec<Vec<String>>,
}

/// Splits template text on `⟨PH1⟩..⟨PHk⟩`, which must appear once each, in order.
pub fn parse_template(task: Task, mode: Mode, text: &str) -> Result<PromptTemplate> {
    let k = mode.insertions();
    let mut segments: Vec<Vec<String>> = vec![Vec::new()];
    for w in body(text).split_whitespace() {
        if let Some(p) = special::NAMES[..4].iter().position(|n| *n == w) {
            if p + 1 != segments.len() {
                return Err(Error::Config(format!("placeholder {w} out of order in {} template", task.name())));
            }
            segments.push(Vec::new());
        } else {
            segments.last_mut().expect("non-empty").push(w.to_string());
        }
    }
    if segments.len() != k + 1 {
        return Err(Error::Config(format!("{} {} template has {} placeholders, expected {k}", task.name(), mode.name(), segments.len() - 1)));
    }
    if segments.iter().any(Vec::is_empty) {
        return Err(Error::Config(format!("{} {} template has an empty text segment", task.name(), mode.name())));
    }
    Ok(PromptTemplate { task, mode, segments })
}

/// The task's template with query tokens substituted into the first segment.
pub fn build_prompt(task: Task, mode: Mode, query: Option<&[String]>) -> Result<PromptTemplate> {
    let mut t = parse_template(task, mode, template_text(task, mode))?;
    match (task, query) {
        (Task::Search, None) => return Err(Error::Config("search prompt requires a query".into())),
        (Task::Rec, Some(_)) => return Err(Error::Config("recommendation prompt takes no query".into())),
        (Task::Search, Some(q)) => {
            if q.is_empty() {
                return Err(Error::Config("search prompt requires a non-empty query".into()));
            }
            let pos = t.segments[0]
                .iter()
                .position(|w| w == QUERY_MARKER)
                .ok_or_else(|| Error::Config("search template lacks a {query} marker".into()))?;
            t.segments[0].splice(pos..=pos, q.iter().cloned());
        }
        (Task::Rec, None) => {}
    }
    Ok(t)
}

impl PromptTemplate {
    pub fn segment_ids(&self, vocab: &Vocabulary) -> Vec<Vec<usize>> {
        self.segments.iter().map(|s| vocab.words(s)).collect()
    }
}

/// Origin of one assembled position.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Slot {
    Text(usize),
    Inserted(usize),
}

/// Segment map for `segments` interleaved with one vector after each of the
/// first `segments.len() - 1` segments.
pub fn layout(segments: &[Vec<usize>]) -> Vec<Slot> {
    let mut out = Vec::new();
    for (k, seg) in segments.iter().enumerate() {
        out.extend(seg.iter().map(|&t| Slot::Text(t)));
        if k + 1 < segments.len() {
            out.push(Slot::Inserted(k));
        }
    }
    out
}

pub struct Assembled {
    pub embeddings: Var,
    pub map: Vec<Slot>,
}

/// `[emb(p_1), v_1, emb(p_2), v_2, ..., emb(p_last)]`.
pub fn assemble_embeddings(t: &mut Tape<'_>, token_table: Var, segments: &[Vec<usize>], inserted: &[Var]) -> Result<Assembled> {
    if inserted.len() + 1 != segments.len() {
        return Err(Error::Shape(format!("{} segments need {} insertions, got {}", segments.len(), segments.len() - 1, inserted.len())));
    }
    let width = t.value(token_table).cols();
    for &v in inserted {
        if t.value(v).shape() != (1, width) {
            return Err(Error::Shape(format!("inserted vector {:?} does not match model width {width}", t.value(v).shape())));
        }
    }
    let mut parts = Vec::with_capacity(2 * segments.len());
    for (k, seg) in segments.iter().enumerate() {
        parts.push(t.gather_rows(token_table, seg));
        if let Some(&v) = inserted.get(k) {
            parts.push(v);
        }
    }
    Ok(Assembled { embeddings: t.concat_rows(&parts), map: layout(segments) })
}
