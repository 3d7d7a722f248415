//! TF-IDF featurization of merged interval texts with a fixed-dimension
//! vocabulary. The fitted model is immutable and safe to share across
//! threads; fitting must only ever see training texts.

use std::collections::{BTreeMap, HashMap};

use ndarray::Array1;
use serde::{Deserialize, Serialize};

use crate::error::{HeardError, Result};

/// Dense feature vector of a single text; zero or unit L2 norm.
pub type FeatureVector = Array1<f64>;

/// Fitted TF-IDF vocabulary and inverse document frequencies.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TfidfModel {
    pub vocabulary: BTreeMap<String, usize>,
    pub idf: Vec<f64>,
    pub dims: usize,
}

pub const DEFAULT_DIMS: usize = 1000;

/// Lowercase and split on non-alphanumeric runs, dropping tokens shorter
/// than two characters.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| t.chars().count() >= 2)
        .map(str::to_string)
        .collect()
}

/// Build a vocabulary of the `dims` most document-frequent tokens (ties
/// broken lexicographically) and smoothed idf weights
/// `ln((1 + N) / (1 + df)) + 1`.
pub fn fit_tfidf(texts: &[String], dims: usize) -> Result<TfidfModel> {
    if texts.is_empty() {
        return Err(HeardError::Validation("cannot fit TF-IDF on an empty corpus".into()));
    }
    if dims == 0 {
        return Err(HeardError::Validation("feature dims must be >= 1".into()));
    }
    let mut df: HashMap<String, usize> = HashMap::new();
    for text in texts {
        let mut seen: Vec<String> = tokenize(text);
        seen.sort();
        seen.dedup();
        for tok in seen {
            *df.entry(tok).or_default() += 1;
        }
    }
    if df.is_empty() {
        return Err(HeardError::Validation("no tokens survive tokenization".into()));
    }
    let mut ranked: Vec<(String, usize)> = df.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked.truncate(dims);

    let n = texts.len() as f64;
    let mut vocabulary = BTreeMap::new();
    let mut idf = vec![0.0; dims];
    for (index, (word, doc_freq)) in ranked.into_iter().enumerate() {
        idf[index] = ((1.0 + n) / (1.0 + doc_freq as f64)).ln() + 1.0;
        vocabulary.insert(word, index);
    }
    Ok(TfidfModel {
        vocabulary,
        idf,
        dims,
    })
}

/// Map a text to its L2-normalized tf-idf vector. Out-of-vocabulary tokens
/// are ignored; a text with no in-vocabulary tokens maps to the zero vector.
pub fn transform(model: &TfidfModel, text: &str) -> FeatureVector {
    let mut values: FeatureVector = Array1::zeros(model.dims);
    for tok in tokenize(text) {
        if let Some(&idx) = model.vocabulary.get(&tok) {
            values[idx] += model.idf[idx];
        }
    }
    let norm = values.dot(&values).sqrt();
    if norm > 0.0 {
        values /= norm;
    }
    values
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn corpus() -> Vec<String> {
        vec!["aa bb".to_string(), "aa cc".to_string()]
    }

    #[test]
    fn fit_computes_smoothed_idf() {
        let model = fit_tfidf(&corpus(), 3).unwrap();
        // df(aa) = 2, df(bb) = df(cc) = 1, N = 2.
        let ia = model.idf[model.vocabulary["aa"]];
        let ib = model.idf[model.vocabulary["bb"]];
        assert_abs_diff_eq!(ia, (3.0_f64 / 3.0).ln() + 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(ib, (3.0_f64 / 2.0).ln() + 1.0, epsilon = 1e-12);
    }

    #[test]
    fn fit_top_one_keeps_most_frequent() {
        let model = fit_tfidf(&corpus(), 1).unwrap();
        assert_eq!(model.vocabulary.len(), 1);
        assert!(model.vocabulary.contains_key("aa"));
    }

    #[test]
    fn fit_breaks_df_ties_lexicographically() {
        let model = fit_tfidf(&corpus(), 2).unwrap();
        assert!(model.vocabulary.contains_key("aa"));
        assert!(model.vocabulary.contains_key("bb"));
        assert!(!model.vocabulary.contains_key("cc"));
    }

    #[test]
    fn transform_oov_only_gives_zero_vector() {
        let model = fit_tfidf(&corpus(), 3).unwrap();
        let v = transform(&model, "zz qq");
        assert!(v.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn transform_normalizes_counts() {
        let model = fit_tfidf(&corpus(), 2).unwrap();
        // "aa aa" hits a single dimension twice; after L2 normalization the
        // vector is the corresponding unit axis.
        let v = transform(&model, "aa aa");
        let idx = model.vocabulary["aa"];
        assert_abs_diff_eq!(v[idx], 1.0, epsilon = 1e-12);
        assert_eq!(v.iter().filter(|&&x| x != 0.0).count(), 1);
    }

    #[test]
    fn transform_is_pure() {
        let model = fit_tfidf(&corpus(), 3).unwrap();
        let a = transform(&model, "aa bb zz");
        let b = transform(&model, "aa bb zz");
        assert_eq!(a, b);
    }

    #[test]
    fn norm_is_zero_or_one() {
        let model = fit_tfidf(&corpus(), 3).unwrap();
        for text in ["", "aa", "aa bb cc", "bb cc", "qq"] {
            let v = transform(&model, text);
            let norm = v.dot(&v).sqrt();
            assert!(norm.abs() < 1e-12 || (norm - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn tokenizer_drops_short_tokens_and_splits_punctuation() {
        assert_eq!(tokenize("A big, RED-ish fox! x"), vec!["big", "red", "ish", "fox"]);
    }

    #[test]
    fn fit_rejects_empty_inputs() {
        assert!(fit_tfidf(&[], 10).is_err());
        assert!(fit_tfidf(&["! ?".to_string()], 10).is_err());
    }

    #[test]
    fn model_serializes_round_trip() {
        let model = fit_tfidf(&corpus(), 3).unwrap();
        let json = serde_json::to_string(&model).unwrap();
        let back: TfidfModel = serde_json::from_str(&json).unwrap();
        assert_eq!(model.vocabulary, back.vocabulary);
        assert_eq!(model.idf, back.idf);
        assert_eq!(transform(&model, "aa bb"), transform(&back, "aa bb"));
    }
}
