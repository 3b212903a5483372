use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use super::tokenize::tokenize;
use super::EncoderError;
use crate::plot_synth::DatasetManifest;

pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;
pub const CLS_ID: usize = 2;
pub const SEP_ID: usize = 3;
pub const SPECIAL_TOKENS: [&str; 4] = ["[PAD]", "[UNK]", "[CLS]", "[SEP]"];

/// Dense token → id map with four reserved ids.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Vocabulary {
    token_to_id: BTreeMap<String, usize>,
}

/// Padded id sequence with its attention mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    pub ids: Vec<usize>,
    pub length: usize,
    pub attention_mask: Vec<u8>,
}

impl TokenSequence {
    /// Ids of the non-pad prefix.
    pub fn active(&self) -> &[usize] {
        &self.ids[..self.length]
    }

    /// Builds a sequence from raw ids, padding to `max_len`.
    pub fn from_ids(ids: &[usize], max_len: usize) -> Self {
        let length = ids.len().min(max_len);
        let mut padded = ids[..length].to_vec();
        padded.resize(max_len, PAD_ID);
        let attention_mask = (0..max_len).map(|i| u8::from(i < length)).collect();
        Self {
            ids: padded,
            length,
            attention_mask,
        }
    }
}

impl Vocabulary {
    /// Vocabulary holding only the special tokens.
    pub fn specials_only() -> Self {
        Self {
            token_to_id: SPECIAL_TOKENS
                .iter()
                .enumerate()
                .map(|(i, t)| (t.to_string(), i))
                .collect(),
        }
    }

    /// Builds from tokenized questions; tokens seen at least `min_count`
    /// times get ids ordered by descending frequency, then lexicographically.
    pub fn from_questions<'a>(
        questions: impl IntoIterator<Item = &'a str>,
        min_count: usize,
    ) -> Result<Self, EncoderError> {
        let mut counts: HashMap<String, usize> = HashMap::new();
        let mut seen_any = false;
        for q in questions {
            seen_any = true;
            for t in tokenize(q)? {
                *counts.entry(t).or_insert(0) += 1;
            }
        }
        if !seen_any {
            return Err(EncoderError::EmptyManifest);
        }
        let mut kept: Vec<(String, usize)> = counts
            .into_iter()
            .filter(|(t, c)| *c >= min_count.max(1) && !SPECIAL_TOKENS.contains(&t.as_str()))
            .collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let mut vocab = Self::specials_only();
        for (i, (t, _)) in kept.into_iter().enumerate() {
            vocab.token_to_id.insert(t, SPECIAL_TOKENS.len() + i);
        }
        Ok(vocab)
    }

    pub fn len(&self) -> usize {
        self.token_to_id.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_to_id.is_empty()
    }

    pub fn id(&self, token: &str) -> usize {
        self.token_to_id.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.token_to_id.contains_key(token)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, usize)> {
        self.token_to_id.iter().map(|(t, i)| (t.as_str(), *i))
    }

    /// Tokenizes and maps to ids, truncating to `max_len` and padding.
    pub fn encode(&self, question: &str, max_len: usize) -> Result<TokenSequence, EncoderError> {
        let ids: Vec<usize> = tokenize(question)?.iter().map(|t| self.id(t)).collect();
        Ok(TokenSequence::from_ids(&ids, max_len))
    }

    pub fn save(&self, path: &Path) -> Result<(), EncoderError> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, EncoderError> {
        let vocab: Vocabulary = serde_json::from_str(&fs::read_to_string(path)?)?;
        vocab.check_dense()?;
        Ok(vocab)
    }

    fn check_dense(&self) -> Result<(), EncoderError> {
        let mut ids: Vec<usize> = self.token_to_id.values().copied().collect();
        ids.sort_unstable();
        let dense = ids.iter().enumerate().all(|(i, id)| i == *id);
        let specials = SPECIAL_TOKENS
            .iter()
            .enumerate()
            .all(|(i, t)| self.token_to_id.get(*t) == Some(&i));
        if dense && specials {
            Ok(())
        } else {
            Err(EncoderError::InvalidVocabulary(
                "ids must be dense with reserved specials".into(),
            ))
        }
    }
}

/// Builds the vocabulary from a training manifest.
pub fn build_vocab(manifest: &DatasetManifest, min_count: usize) -> Result<Vocabulary, EncoderError> {
    Vocabulary::from_questions(manifest.items.iter().map(|i| i.question.as_str()), min_count)
}
