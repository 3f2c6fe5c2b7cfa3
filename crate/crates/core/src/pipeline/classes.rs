use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::vecstore::{Embedder, EmbeddingMatrix};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassLabel {
    pub label_id: u32,
    pub name: String,
    #[serde(default)]
    pub prompt: Option<String>,
}

impl ClassLabel {
    pub fn new(label_id: u32, name: &str) -> Self {
        Self {
            label_id,
            name: name.to_string(),
            prompt: None,
        }
    }

    /// The explicit prompt, or "a photo of {name}".
    pub fn prompt_text(&self) -> String {
        self.prompt.clone().unwrap_or_else(|| format!("a photo of {}", self.name))
    }
}

/// Class labels with one normalized text embedding each.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassSet {
    labels: Vec<ClassLabel>,
    embeddings: EmbeddingMatrix,
}

impl ClassSet {
    pub fn new(labels: Vec<ClassLabel>, embeddings: EmbeddingMatrix) -> Result<Self, PipelineError> {
        if labels.len() != embeddings.count() {
            return Err(PipelineError::InvalidParameter(format!(
                "{} class labels for {} class embeddings",
                labels.len(),
                embeddings.count()
            )));
        }
        let mut seen = HashSet::new();
        for l in &labels {
            if !seen.insert(l.label_id) {
                return Err(PipelineError::InvalidParameter(format!("duplicate label_id {}", l.label_id)));
            }
        }
        let embeddings = if embeddings.is_normalized() { embeddings } else { embeddings.normalized()? };
        Ok(Self { labels, embeddings })
    }

    /// Embeds every class prompt with `embedder`.
    pub fn embed(labels: Vec<ClassLabel>, embedder: &dyn Embedder) -> Result<Self, PipelineError> {
        let prompts: Vec<String> = labels.iter().map(ClassLabel::prompt_text).collect();
        let embeddings = embedder.embed(&prompts)?;
        Self::new(labels, embeddings)
    }

    pub fn labels(&self) -> &[ClassLabel] {
        &self.labels
    }

    pub fn embeddings(&self) -> &EmbeddingMatrix {
        &self.embeddings
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.embeddings.dim()
    }

    /// Row position of `label_id`.
    pub fn position(&self, label_id: u32) -> Option<usize> {
        self.labels.iter().position(|l| l.label_id == label_id)
    }
}

/// Parses a JSON array of `{"label_id", "name", "prompt"?}` objects.
pub fn read_class_file(path: impl AsRef<Path>) -> Result<Vec<ClassLabel>, PipelineError> {
    let path = path.as_ref();
    let err = |message: String| PipelineError::ClassFile {
        path: path.display().to_string(),
        message,
    };
    let text = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
    let labels: Vec<ClassLabel> = serde_json::from_str(&text).map_err(|e| err(e.to_string()))?;
    if labels.is_empty() {
        return Err(err("no classes".into()));
    }
    Ok(labels)
}
