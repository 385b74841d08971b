//! TF-IDF vectors over lowercase word tokens, with cosine scoring.

use std::collections::BTreeMap;

pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric() && c != '.')
        .map(|t| t.trim_matches('.').to_lowercase())
        .filter(|t| !t.is_empty())
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TfIdf {
    vocab: BTreeMap<String, usize>,
    idf: Vec<f64>,
    docs: Vec<BTreeMap<usize, f64>>,
}

impl TfIdf {
    pub fn fit<S: AsRef<str>>(docs: &[S]) -> Self {
        let tokenized: Vec<Vec<String>> = docs.iter().map(|d| tokenize(d.as_ref())).collect();
        let mut vocab = BTreeMap::new();
        for t in tokenized.iter().flatten() {
            let n = vocab.len();
            vocab.entry(t.clone()).or_insert(n);
        }
        let mut df = vec![0usize; vocab.len()];
        for toks in &tokenized {
            let mut seen: Vec<usize> = toks.iter().map(|t| vocab[t]).collect();
            seen.sort_unstable();
            seen.dedup();
            for i in seen {
                df[i] += 1;
            }
        }
        let n = docs.len() as f64;
        // Smoothed so that terms present in every document keep some weight.
        let idf: Vec<f64> = df.iter().map(|&d| ((1.0 + n) / (1.0 + d as f64)).ln() + 1.0).collect();
        let mut model = Self {
            vocab,
            idf,
            docs: Vec::new(),
        };
        model.docs = tokenized.iter().map(|t| model.vector(t)).collect();
        model
    }

    fn vector(&self, tokens: &[String]) -> BTreeMap<usize, f64> {
        let mut v = BTreeMap::new();
        for t in tokens {
            if let Some(&i) = self.vocab.get(t) {
                *v.entry(i).or_insert(0.0) += self.idf[i];
            }
        }
        v
    }

    /// Cosine similarity of `query` against every fitted document.
    pub fn scores(&self, query: &str) -> Vec<f64> {
        let q = self.vector(&tokenize(query));
        let qn = q.values().map(|x| x * x).sum::<f64>().sqrt();
        self.docs
            .iter()
            .map(|d| {
                let dn = d.values().map(|x| x * x).sum::<f64>().sqrt();
                if qn == 0.0 || dn == 0.0 {
                    return 0.0;
                }
                let dot: f64 = q.iter().filter_map(|(i, a)| d.get(i).map(|b| a * b)).sum();
                (dot / (qn * dn)).min(1.0)
            })
            .collect()
    }
}

/// Indices ordered by descending score, ties broken by `names`.
pub fn rank(scores: &[f64], names: &[&str]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then_with(|| names[a].cmp(names[b])));
    idx
}
