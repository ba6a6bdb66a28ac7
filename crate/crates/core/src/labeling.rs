//! Cluster labels: TF-IDF top terms, and short summaries from an external language model.

use std::collections::{BTreeMap, HashMap};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::ClusterLabels;
use crate::stopwords::is_stopword;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LabelError {
    #[error("cluster has no documents")]
    EmptyCluster,
    #[error("corpus has no documents")]
    EmptyCorpus,
    #[error("labeling service unavailable: {0}")]
    ServiceUnavailable(String),
    #[error("labeling service returned an unusable response: {0}")]
    BadResponse(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum LabelSource {
    TfIdf {
        #[serde(default = "default_m")]
        m: usize,
    },
    ExternalModel {
        #[serde(default = "default_sample_size")]
        sample_size: usize,
        #[serde(default = "default_max_label_chars")]
        max_label_chars: usize,
        /// Term count for the TF-IDF label every cluster also gets.
        #[serde(default = "default_m")]
        m: usize,
        #[serde(default)]
        backend: LabelBackend,
    },
}

/// Which client answers external label requests.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelBackend {
    /// A remote service configured through the environment.
    #[default]
    Http,
    /// [`MockLabelClient`].
    Mock,
}

fn default_m() -> usize {
    3
}
fn default_sample_size() -> usize {
    12
}
fn default_max_label_chars() -> usize {
    60
}

impl Default for LabelSource {
    fn default() -> Self {
        LabelSource::TfIdf { m: default_m() }
    }
}

impl LabelSource {
    pub fn m(&self) -> usize {
        match self {
            LabelSource::TfIdf { m } | LabelSource::ExternalModel { m, .. } => *m,
        }
    }
}

/// Lowercased alphanumeric runs of at least two characters, stopwords removed.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .filter(|t| t.chars().count() >= 2 && !is_stopword(t))
        .collect()
}

/// Document frequencies over a tokenized corpus.
#[derive(Debug, Clone, Default)]
pub struct TfIdfIndex {
    n_docs: usize,
    df: HashMap<String, usize>,
}

impl TfIdfIndex {
    pub fn new<'a, I>(corpus: I) -> Self
    where
        I: IntoIterator<Item = &'a [String]>,
    {
        let mut df: HashMap<String, usize> = HashMap::new();
        let mut n_docs = 0;
        for doc in corpus {
            n_docs += 1;
            let mut terms: Vec<&String> = doc.iter().collect();
            terms.sort();
            terms.dedup();
            for t in terms {
                *df.entry(t.clone()).or_default() += 1;
            }
        }
        TfIdfIndex { n_docs, df }
    }

    pub fn n_docs(&self) -> usize {
        self.n_docs
    }

    /// Scores every term of the cluster's concatenated documents as
    /// `tf * ln(n_docs / df)`, highest first, ties broken lexicographically.
    pub fn rank<'a, I>(&self, cluster_docs: I) -> Vec<(String, f64)>
    where
        I: IntoIterator<Item = &'a [String]>,
    {
        let mut tf: BTreeMap<&str, usize> = BTreeMap::new();
        for doc in cluster_docs {
            for t in doc {
                *tf.entry(t.as_str()).or_default() += 1;
            }
        }
        let n = self.n_docs as f64;
        let mut scored: Vec<(String, f64)> = tf
            .into_iter()
            .map(|(term, count)| {
                let df = self.df.get(term).copied().unwrap_or(0).max(1) as f64;
                (term.to_string(), count as f64 * (n / df).ln())
            })
            .collect();
        scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(std::cmp::Ordering::Equal).then_with(|| a.0.cmp(&b.0)));
        scored
    }

    pub fn top_terms<'a, I>(&self, cluster_docs: I, m: usize) -> Vec<String>
    where
        I: IntoIterator<Item = &'a [String]>,
    {
        self.rank(cluster_docs).into_iter().take(m).map(|(t, _)| t).collect()
    }
}

/// Top `m` TF-IDF terms of a cluster relative to its corpus. Fewer than `m` terms come back
/// when the cluster's vocabulary is smaller.
pub fn tfidf_label(cluster_docs: &[&str], corpus_docs: &[&str], m: usize) -> Result<Vec<String>, LabelError> {
    if cluster_docs.is_empty() {
        return Err(LabelError::EmptyCluster);
    }
    if corpus_docs.is_empty() {
        return Err(LabelError::EmptyCorpus);
    }
    let corpus: Vec<Vec<String>> = corpus_docs.iter().map(|d| tokenize(d)).collect();
    let cluster: Vec<Vec<String>> = cluster_docs.iter().map(|d| tokenize(d)).collect();
    let index = TfIdfIndex::new(corpus.iter().map(Vec::as_slice));
    Ok(index.top_terms(cluster.iter().map(Vec::as_slice), m))
}

pub fn render_terms(terms: &[String]) -> String {
    terms.join("-")
}

/// Instruction sent ahead of the sampled documents.
pub const PROMPT_TEMPLATE: &str = "The following texts were grouped together because they are \
semantically similar. Reply with one short, interpretable topic label (at most a few words) \
that summarizes what they have in common. Reply with the label only.";

/// What an external labeling client receives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelRequest {
    pub prompt: String,
    pub documents: Vec<String>,
}

impl LabelRequest {
    pub fn new(documents: Vec<String>) -> Self {
        let mut prompt = String::from(PROMPT_TEMPLATE);
        prompt.push_str("\n\n");
        for (i, d) in documents.iter().enumerate() {
            prompt.push_str(&format!("{}. {}\n", i + 1, d.replace('\n', " ")));
        }
        LabelRequest { prompt, documents }
    }
}

pub trait LabelClient: Send + Sync {
    /// Returns the raw service reply.
    fn complete(&self, request: &LabelRequest) -> Result<String, LabelError>;
}

/// Deterministic stand-in: replies `MOCK: ` followed by the first three tokens of the
/// sampled documents.
#[derive(Debug, Clone, Copy, Default)]
pub struct MockLabelClient;

impl LabelClient for MockLabelClient {
    fn complete(&self, request: &LabelRequest) -> Result<String, LabelError> {
        let tokens: Vec<String> = request.documents.iter().flat_map(|d| tokenize(d)).take(3).collect();
        Ok(format!("MOCK: {}", tokens.join(" ")))
    }
}

/// Always unavailable, for exercising the TF-IDF fallback.
#[derive(Debug, Clone, Copy, Default)]
pub struct OfflineLabelClient;

impl LabelClient for OfflineLabelClient {
    fn complete(&self, _: &LabelRequest) -> Result<String, LabelError> {
        Err(LabelError::ServiceUnavailable("client disabled".into()))
    }
}

/// Samples `min(sample_size, |docs|)` documents with a seeded RNG and asks the client for a
/// label. The reply's first non-empty line is trimmed and cut to `max_label_chars`.
pub fn llm_label(
    cluster_docs: &[&str],
    client: &dyn LabelClient,
    sample_size: usize,
    max_label_chars: usize,
    seed: u64,
) -> Result<String, LabelError> {
    if cluster_docs.is_empty() {
        return Err(LabelError::EmptyCluster);
    }
    let amount = sample_size.max(1).min(cluster_docs.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = rand::seq::index::sample(&mut rng, cluster_docs.len(), amount).into_vec();
    picked.sort_unstable();
    let request = LabelRequest::new(picked.iter().map(|&i| cluster_docs[i].to_string()).collect());
    let reply = client.complete(&request)?;
    let line = reply
        .lines()
        .map(|l| l.trim().trim_matches('"').trim())
        .find(|l| !l.is_empty())
        .ok_or_else(|| LabelError::BadResponse("empty reply".into()))?;
    Ok(line.chars().take(max_label_chars).collect::<String>().trim_end().to_string())
}

/// Labels one cluster. The TF-IDF terms are always filled in; the external label is attempted
/// only for [`LabelSource::ExternalModel`] with a client, and left empty if the call fails.
pub fn label_cluster(
    cluster_tokens: &[&[String]],
    cluster_docs: &[&str],
    index: &TfIdfIndex,
    source: &LabelSource,
    client: Option<&dyn LabelClient>,
    seed: u64,
) -> ClusterLabels {
    let tfidf = index.top_terms(cluster_tokens.iter().copied(), source.m());
    let llm = match (source, client) {
        (
            LabelSource::ExternalModel {
                sample_size,
                max_label_chars,
                ..
            },
            Some(client),
        ) => llm_label(cluster_docs, client, *sample_size, *max_label_chars, seed).ok(),
        _ => None,
    };
    ClusterLabels { tfidf, llm }
}
