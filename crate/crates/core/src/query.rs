//! Two-stage open-vocabulary retrieval.
//!
//! Stage one ranks every instance by cosine similarity between the query's
//! core-object embedding and the fused object-channel embeddings, and keeps
//! the instances scoring within `[α·s_top1, s_top1]`. Stage two re-ranks that
//! candidate band by cosine similarity between the full-query context
//! embedding and each candidate's fused environment embedding.

use serde::{Deserialize, Serialize};

use crate::cache::GlobalSemantics;
use crate::error::{Error, Result};
use crate::InstanceId;

pub const DEFAULT_ALPHA: f64 = 0.8;

/// Score given to instances that cannot be scored (zero norm, missing channel).
pub const UNSCORED: f64 = -1.0;

const DETERMINERS: &[&str] = &[
    "the", "a", "an", "this", "that", "these", "those", "some", "any", "my", "your", "his", "her",
    "its", "our", "their",
];

const LEADING_FILLER: &[&str] = &[
    "find", "show", "locate", "select", "highlight", "get", "give", "point", "me", "to", "where",
    "is", "are", "which", "what", "please", "one",
];

/// Spatial prepositions and clause openers that end the head noun phrase.
/// Multi-word entries are matched before single words.
const PHRASE_BREAKS: &[&[&str]] = &[
    &["in", "front", "of"],
    &["next", "to"],
    &["close", "to"],
    &["left", "of"],
    &["right", "of"],
    &["on", "top", "of"],
    &["near"],
    &["by"],
    &["beside"],
    &["under"],
    &["underneath"],
    &["beneath"],
    &["below"],
    &["above"],
    &["over"],
    &["on"],
    &["in"],
    &["inside"],
    &["behind"],
    &["between"],
    &["against"],
    &["at"],
    &["with"],
    &["of"],
    &["to"],
    &["opposite"],
    &["facing"],
    &["that"],
    &["which"],
    &["who"],
    &["where"],
];

/// Rule-based head-noun extraction: drop leading command words and
/// determiners, cut at the first spatial preposition or clause opener, and
/// return the last word of what remains.
pub fn extract_core_object(text: &str) -> Result<String> {
    let tokens: Vec<String> = text
        .split(|c: char| !c.is_alphanumeric() && c != '-' && c != '\'')
        .filter(|t| t.chars().any(char::is_alphabetic))
        .map(|t| t.to_lowercase())
        .collect();
    if tokens.is_empty() {
        return Err(Error::UnparseableQuery(text.to_string()));
    }

    let mut start = 0;
    while start < tokens.len()
        && (LEADING_FILLER.contains(&tokens[start].as_str()) || DETERMINERS.contains(&tokens[start].as_str()))
    {
        start += 1;
    }
    if start == tokens.len() {
        // Only filler words: fall back to the last alphabetic token.
        return Ok(tokens.last().expect("non-empty").clone());
    }

    let mut end = tokens.len();
    'scan: for i in (start + 1)..tokens.len() {
        for brk in PHRASE_BREAKS {
            if tokens.len() - i >= brk.len() && brk.iter().zip(&tokens[i..]).all(|(a, b)| a == b) {
                end = i;
                break 'scan;
            }
        }
    }
    Ok(tokens[end - 1].clone())
}

/// Cosine similarity in f64; `None` when either vector has zero norm or the
/// dimensions differ.
pub fn cosine(a: &[f32], b: &[f32]) -> Option<f64> {
    if a.len() != b.len() {
        return None;
    }
    let (mut dot, mut na, mut nb) = (0.0f64, 0.0f64, 0.0f64);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (x as f64, y as f64);
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return None;
    }
    Some(dot / (na.sqrt() * nb.sqrt()))
}

fn nonzero(v: &[f32]) -> bool {
    v.iter().any(|&x| x != 0.0)
}

/// Cosine of `query` against each embedding, in input order. Unscoreable
/// embeddings get [`UNSCORED`].
pub fn similarity_scores<'a>(
    query: &[f32],
    embeddings: impl IntoIterator<Item = (InstanceId, &'a [f32])>,
) -> Result<Vec<(InstanceId, f64)>> {
    if !nonzero(query) {
        return Err(Error::InvalidArgument("query embedding has zero norm".into()));
    }
    Ok(embeddings
        .into_iter()
        .map(|(id, e)| (id, cosine(query, e).unwrap_or(UNSCORED)))
        .collect())
}

/// Index of the best score; ties go to the smaller id.
fn argmax(scores: &[(InstanceId, f64)]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &(id, s)) in scores.iter().enumerate() {
        match best {
            None => best = Some(i),
            Some(b) => {
                let (bid, bs) = scores[b];
                if s > bs || (s == bs && id < bid) {
                    best = Some(i);
                }
            }
        }
    }
    best
}

/// Ids whose score lies in `[α·s_top1, s_top1]`, in input order. When the top
/// score is not positive the band is undefined and only the argmax is kept.
pub fn candidate_set(scores: &[(InstanceId, f64)], alpha: f64) -> Result<Vec<InstanceId>> {
    validate_alpha(alpha)?;
    let top = argmax(scores).ok_or_else(|| Error::InvalidArgument("no scores".into()))?;
    let s_top = scores[top].1;
    if s_top <= 0.0 {
        return Ok(vec![scores[top].0]);
    }
    let threshold = alpha * s_top;
    Ok(scores.iter().filter(|(_, s)| *s >= threshold).map(|(id, _)| *id).collect())
}

fn validate_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("alpha must lie in (0, 1), got {alpha}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuerySpec {
    pub text: String,
    /// Pre-extracted core noun; overrides the rule-based extractor.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub core_object: Option<String>,
    pub object_embedding: Vec<f32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub context_embedding: Option<Vec<f32>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    /// Ground-truth target, carried through by synthetic query files.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryMode {
    #[default]
    TwoStage,
    /// Stage one only: the object-channel argmax.
    ObjectOnly,
    /// Rank every instance by the environment channel, skipping stage one.
    EnvironmentOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoredId {
    pub id: InstanceId,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QueryResult {
    pub text: String,
    pub core_object: String,
    pub alpha: f64,
    /// Object-channel scores of every instance, best first.
    pub stage1: Vec<ScoredId>,
    pub candidates: Vec<InstanceId>,
    /// Environment-channel scores of the re-ranked set, best first.
    pub stage2: Vec<ScoredId>,
    pub chosen: InstanceId,
    /// Re-ranked instances that had no environment embedding.
    pub missing_context: Vec<InstanceId>,
}

fn ranked(mut scores: Vec<(InstanceId, f64)>) -> Vec<ScoredId> {
    scores.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    scores.into_iter().map(|(id, score)| ScoredId { id, score }).collect()
}

pub fn resolve_query(
    spec: &QuerySpec,
    semantics: &GlobalSemantics,
    default_alpha: f64,
    mode: QueryMode,
) -> Result<QueryResult> {
    if semantics.is_empty() {
        return Err(Error::EmptyMap);
    }
    let alpha = spec.alpha.unwrap_or(default_alpha);
    validate_alpha(alpha)?;
    let core_object = match &spec.core_object {
        Some(c) => c.clone(),
        None => extract_core_object(&spec.text)?,
    };

    let object_views: Vec<(InstanceId, &[f32])> = semantics
        .iter()
        .map(|(id, g)| (id, g.object.as_deref().unwrap_or(&[])))
        .collect();
    let stage1 = similarity_scores(&spec.object_embedding, object_views.iter().copied())?;
    let top1 = stage1[argmax(&stage1).expect("non-empty")].0;

    let pool: Vec<InstanceId> = match mode {
        QueryMode::TwoStage => candidate_set(&stage1, alpha)?,
        QueryMode::ObjectOnly => vec![top1],
        QueryMode::EnvironmentOnly => semantics.iter().map(|(id, _)| id).collect(),
    };

    let mut missing_context = Vec::new();
    let (stage2, chosen) = match (&spec.context_embedding, mode) {
        (Some(ctx), QueryMode::TwoStage | QueryMode::EnvironmentOnly) if nonzero(ctx) => {
            let scores: Vec<(InstanceId, f64)> = pool
                .iter()
                .map(|&id| {
                    let env = semantics.get(id).and_then(|g| g.environment.as_deref());
                    let score = match env.and_then(|e| cosine(ctx, e)) {
                        Some(s) => s,
                        None => {
                            missing_context.push(id);
                            UNSCORED
                        }
                    };
                    (id, score)
                })
                .collect();
            let chosen = scores[argmax(&scores).expect("pool is non-empty")].0;
            (ranked(scores), chosen)
        }
        _ => (Vec::new(), top1),
    };

    Ok(QueryResult {
        text: spec.text.clone(),
        core_object,
        alpha,
        stage1: ranked(stage1),
        candidates: pool,
        stage2,
        chosen,
        missing_context,
    })
}
