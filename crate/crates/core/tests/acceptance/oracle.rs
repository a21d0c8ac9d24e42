//! Second implementations used as oracles. None of these call into the
//! library's scoring, ranking or BM25 code.

use std::collections::{HashMap, HashSet};

/// Bigram model with in-context count boosting, written directly from the
/// probability formula:
///
/// `p(w | prev) = (c(prev, w) + icl(prev, w) + alpha) / (c(prev) + icl(prev) + |V| alpha)`
///
/// where `icl` counts bigrams of the context and of the completion prefix
/// with weight `w`, skipping bigrams whose second token is unknown.
pub struct BigramOracle {
    pairs: HashMap<(String, String), f64>,
    rows: HashMap<String, f64>,
    vocab: HashSet<String>,
    alpha: f64,
    weight: f64,
}

impl BigramOracle {
    pub fn from_sentences(sentences: &[String], alpha: f64, weight: f64) -> Self {
        let mut pairs = HashMap::new();
        let mut rows = HashMap::new();
        let mut vocab: HashSet<String> = HashSet::new();
        vocab.insert("</s>".into());
        for s in sentences {
            let mut prev = "<s>".to_string();
            let toks: Vec<String> = s
                .split_whitespace()
                .map(str::to_owned)
                .chain(std::iter::once("</s>".to_string()))
                .collect();
            for t in toks {
                vocab.insert(t.clone());
                *pairs.entry((prev.clone(), t.clone())).or_insert(0.0) += 1.0;
                *rows.entry(prev.clone()).or_insert(0.0) += 1.0;
                prev = t;
            }
        }
        Self {
            pairs,
            rows,
            vocab,
            alpha,
            weight,
        }
    }

    fn map(&self, tok: &str) -> String {
        if self.vocab.contains(tok) {
            tok.to_owned()
        } else {
            "<unk>".to_owned()
        }
    }

    pub fn logprob(&self, context: &str, completion: &str) -> f64 {
        let v = self.vocab.len() as f64;
        let mut icl_pairs: HashMap<(String, String), f64> = HashMap::new();
        let mut icl_rows: HashMap<String, f64> = HashMap::new();
        let mut prev = "<s>".to_string();
        let observe = |pairs: &mut HashMap<(String, String), f64>,
                       rows: &mut HashMap<String, f64>,
                       prev: &str,
                       tok: &str| {
            if tok != "<unk>" {
                *pairs
                    .entry((prev.to_owned(), tok.to_owned()))
                    .or_insert(0.0) += self.weight;
                *rows.entry(prev.to_owned()).or_insert(0.0) += self.weight;
            }
        };
        for tok in context.split_whitespace() {
            let t = self.map(tok);
            observe(&mut icl_pairs, &mut icl_rows, &prev, &t);
            prev = t;
        }
        let mut total = 0.0;
        for tok in completion.split_whitespace() {
            let t = self.map(tok);
            assert_ne!(t, "<unk>", "oracle completions are in-vocabulary");
            let key = (prev.clone(), t.clone());
            let num = self.pairs.get(&key).copied().unwrap_or(0.0)
                + icl_pairs.get(&key).copied().unwrap_or(0.0)
                + self.alpha;
            let den = self.rows.get(&prev).copied().unwrap_or(0.0)
                + icl_rows.get(&prev).copied().unwrap_or(0.0)
                + v * self.alpha;
            total += (num / den).ln();
            observe(&mut icl_pairs, &mut icl_rows, &prev, &t);
            prev = t;
        }
        total
    }
}

/// Index of the first maximal value; values within 1e-9 count as equal.
pub fn first_argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for i in 1..xs.len() {
        if xs[i] > xs[best] + 1e-9 {
            best = i;
        }
    }
    best
}

/// Reciprocal rank of candidate `best` by counting the candidates ordered
/// before it: strictly higher scores, or equal scores at a lower index.
pub fn brute_force_rr(scores: &[f64], best: usize) -> f64 {
    let ahead = (0..scores.len())
        .filter(|&j| scores[j] > scores[best] || (scores[j] == scores[best] && j < best))
        .count();
    1.0 / (ahead + 1) as f64
}

/// Lowercased alphanumeric tokens.
pub fn words(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for c in text.chars() {
        if c.is_alphanumeric() {
            cur.extend(c.to_lowercase());
        } else if !cur.is_empty() {
            out.push(std::mem::take(&mut cur));
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

/// BM25 by scanning every document for every query term.
pub fn bm25_direct(docs: &[Vec<String>], query: &[String], doc: usize, k1: f64, b: f64) -> f64 {
    let n = docs.len() as f64;
    let avgdl = docs.iter().map(|d| d.len() as f64).sum::<f64>() / n;
    let dl = docs[doc].len() as f64;
    let mut score = 0.0;
    for term in query {
        let df = docs.iter().filter(|d| d.contains(term)).count() as f64;
        let tf = docs[doc].iter().filter(|t| *t == term).count() as f64;
        if tf == 0.0 {
            continue;
        }
        let idf = (1.0 + (n - df + 0.5) / (df + 0.5)).ln();
        score += idf * tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * dl / avgdl));
    }
    score
}
