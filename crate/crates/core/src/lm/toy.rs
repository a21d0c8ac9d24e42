//! Deterministic add-alpha n-gram model.
//!
//! The model conditions on the whole context, not only on the last
//! `order - 1` tokens: every n-gram that occurs in the context (and in the
//! completion generated so far) is added to the trained counts with weight
//! `icl_weight`. Demonstrations placed in a context therefore shift the
//! next-token distribution, which is the effect the contrastive scores
//! measure. With `icl_weight = 0` it is a plain smoothed n-gram model.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::sampling;
use super::{Capabilities, GenerationParams, LmBackend, SequenceScore, TokenLogprob};
use crate::error::{Error, Result};

pub const EOS: &str = "</s>";
pub const BOS: &str = "<s>";
pub const UNK: &str = "<unk>";

/// Upper bound on the number of sequences [`enumerate_distribution`] visits.
pub const MAX_ENUMERATION: u128 = 1_000_000;

type Sym = u32;
const BOS_SYM: Sym = u32::MAX;
const UNK_SYM: Sym = u32::MAX - 1;

#[derive(Debug, Clone)]
pub struct ToyNgramLm {
    id: String,
    order: usize,
    vocab: Vec<String>,
    index: HashMap<String, Sym>,
    eos: Sym,
    counts: HashMap<Vec<Sym>, Vec<f64>>,
    alpha: f64,
    icl_weight: f64,
}

/// On-disk form. Rows are sorted so the file is byte-stable.
#[derive(Debug, Serialize, Deserialize)]
struct ModelFile {
    order: usize,
    alpha: f64,
    icl_weight: f64,
    vocab: Vec<String>,
    counts: Vec<CountRow>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CountRow {
    context: Vec<String>,
    next: BTreeMap<String, f64>,
}

fn valid_token(tok: &str) -> bool {
    !tok.is_empty() && !tok.chars().any(char::is_whitespace) && tok != BOS && tok != UNK
}

impl ToyNgramLm {
    /// Empty model over `vocab` (the end-of-sequence token is added if absent).
    pub fn new(order: usize, vocab: &[&str], alpha: f64) -> Result<Self> {
        if order == 0 {
            return Err(Error::InvalidArgument(
                "n-gram order must be at least 1".into(),
            ));
        }
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "smoothing alpha must be positive, got {alpha}"
            )));
        }
        let mut words: Vec<String> = Vec::with_capacity(vocab.len() + 1);
        for &tok in vocab {
            if !valid_token(tok) {
                return Err(Error::InvalidArgument(format!(
                    "invalid vocabulary token `{tok}`"
                )));
            }
            if tok != EOS && !words.iter().any(|w| w == tok) {
                words.push(tok.to_owned());
            }
        }
        words.push(EOS.to_owned());
        let index = words
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i as Sym))
            .collect();
        let mut lm = Self {
            id: String::new(),
            order,
            eos: (words.len() - 1) as Sym,
            vocab: words,
            index,
            counts: HashMap::new(),
            alpha,
            icl_weight: 0.0,
        };
        lm.refresh_id();
        Ok(lm)
    }

    /// Counts n-grams over whitespace-tokenized sentences. Each sentence is
    /// left-padded with `<s>` and terminated with `</s>`.
    pub fn train<'a, I>(order: usize, sentences: I, alpha: f64) -> Result<Self>
    where
        I: IntoIterator<Item = &'a str>,
    {
        let sentences: Vec<&str> = sentences.into_iter().collect();
        let mut vocab: Vec<&str> = sentences
            .iter()
            .flat_map(|s| s.split_whitespace())
            .filter(|t| *t != EOS)
            .collect();
        vocab.sort_unstable();
        vocab.dedup();
        let mut lm = Self::new(order, &vocab, alpha)?;
        let ctx = order - 1;
        for sentence in sentences {
            let mut syms = vec![BOS_SYM; ctx];
            syms.extend(sentence.split_whitespace().map(|t| lm.context_sym(t)));
            syms.push(lm.eos);
            for pos in ctx..syms.len() {
                let gram = syms[pos - ctx..pos].to_vec();
                let v = lm.vocab.len();
                lm.counts.entry(gram).or_insert_with(|| vec![0.0; v])[syms[pos] as usize] += 1.0;
            }
        }
        lm.refresh_id();
        Ok(lm)
    }

    /// Adds `count` observations of `next` after `context` (`order - 1` tokens;
    /// `<s>` is allowed as padding).
    pub fn add_count(&mut self, context: &[&str], next: &str, count: f64) -> Result<()> {
        if context.len() + 1 != self.order {
            return Err(Error::InvalidArgument(format!(
                "context must have {} tokens for an order-{} model",
                self.order - 1,
                self.order
            )));
        }
        if !(count >= 0.0 && count.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "count must be non-negative, got {count}"
            )));
        }
        let next = self.vocab_sym(next)?;
        let gram: Vec<Sym> = context.iter().map(|t| self.context_sym(t)).collect();
        let v = self.vocab.len();
        self.counts.entry(gram).or_insert_with(|| vec![0.0; v])[next as usize] += count;
        self.refresh_id();
        Ok(())
    }

    pub fn with_icl_weight(mut self, weight: f64) -> Self {
        assert!(
            weight >= 0.0 && weight.is_finite(),
            "icl weight must be non-negative"
        );
        self.icl_weight = weight;
        self.refresh_id();
        self
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn icl_weight(&self) -> f64 {
        self.icl_weight
    }

    /// Vocabulary in id order; the last entry is `</s>`.
    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    /// Raw trained count of `next` after `context`; zero when unseen.
    pub fn count(&self, context: &[&str], next: &str) -> f64 {
        let Some(&next) = self.index.get(next) else {
            return 0.0;
        };
        let gram: Vec<Sym> = context.iter().map(|t| self.context_sym(t)).collect();
        self.counts.get(&gram).map_or(0.0, |row| row[next as usize])
    }

    /// Next-token distribution after `context`, in vocabulary order.
    pub fn next_token_probs(&self, context: &str) -> Vec<f64> {
        Session::new(self, context).distribution()
    }

    fn context_sym(&self, tok: &str) -> Sym {
        if tok == BOS {
            return BOS_SYM;
        }
        self.index.get(tok).copied().unwrap_or(UNK_SYM)
    }

    fn vocab_sym(&self, tok: &str) -> Result<Sym> {
        self.index
            .get(tok)
            .copied()
            .ok_or_else(|| Error::OutOfVocabulary(tok.to_owned()))
    }

    fn to_file(&self) -> ModelFile {
        let name = |s: Sym| match s {
            BOS_SYM => BOS.to_owned(),
            UNK_SYM => UNK.to_owned(),
            s => self.vocab[s as usize].clone(),
        };
        let mut counts: Vec<CountRow> = self
            .counts
            .iter()
            .map(|(gram, row)| CountRow {
                context: gram.iter().map(|&s| name(s)).collect(),
                next: row
                    .iter()
                    .enumerate()
                    .filter(|(_, &c)| c != 0.0)
                    .map(|(i, &c)| (self.vocab[i].clone(), c))
                    .collect(),
            })
            .collect();
        counts.sort_by(|a, b| a.context.cmp(&b.context));
        ModelFile {
            order: self.order,
            alpha: self.alpha,
            icl_weight: self.icl_weight,
            vocab: self.vocab.clone(),
            counts,
        }
    }

    fn from_file(file: ModelFile) -> Result<Self> {
        let vocab: Vec<&str> = file.vocab.iter().map(String::as_str).collect();
        let mut lm = Self::new(file.order, &vocab, file.alpha)?;
        if !(file.icl_weight >= 0.0 && file.icl_weight.is_finite()) {
            return Err(Error::Data(format!(
                "invalid icl_weight {}",
                file.icl_weight
            )));
        }
        lm.icl_weight = file.icl_weight;
        for row in file.counts {
            if row.context.len() + 1 != lm.order {
                return Err(Error::Data(format!(
                    "count row context {:?} does not match order {}",
                    row.context, lm.order
                )));
            }
            let gram: Vec<Sym> = row.context.iter().map(|t| lm.context_sym(t)).collect();
            let v = lm.vocab.len();
            let entry = lm.counts.entry(gram).or_insert_with(|| vec![0.0; v]);
            for (tok, c) in row.next {
                let s = lm
                    .index
                    .get(&tok)
                    .copied()
                    .ok_or(Error::OutOfVocabulary(tok))?;
                entry[s as usize] += c;
            }
        }
        lm.refresh_id();
        Ok(lm)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_file()).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Self::from_file(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    fn refresh_id(&mut self) {
        let digest = Sha256::digest(serde_json::to_vec(&self.to_file()).expect("model serializes"));
        self.id = format!("toy-ngram-{}-{}", self.order, &hex::encode(digest)[..12]);
    }
}

/// Incremental conditioning state: the padded history plus the in-context
/// n-gram counts it has accumulated.
#[derive(Clone)]
struct Session<'a> {
    lm: &'a ToyNgramLm,
    history: Vec<Sym>,
    icl: HashMap<Vec<Sym>, Vec<f64>>,
}

impl<'a> Session<'a> {
    fn new(lm: &'a ToyNgramLm, context: &str) -> Self {
        let mut s = Self {
            lm,
            history: vec![BOS_SYM; lm.order - 1],
            icl: HashMap::new(),
        };
        for tok in context.split_whitespace() {
            s.push(lm.context_sym(tok));
        }
        s
    }

    fn gram(&self) -> &[Sym] {
        &self.history[self.history.len() + 1 - self.lm.order..]
    }

    fn push(&mut self, sym: Sym) {
        if self.lm.icl_weight > 0.0 && sym != BOS_SYM && sym != UNK_SYM {
            let v = self.lm.vocab.len();
            let gram = self.gram().to_vec();
            self.icl.entry(gram).or_insert_with(|| vec![0.0; v])[sym as usize] +=
                self.lm.icl_weight;
        }
        self.history.push(sym);
    }

    fn rows(&self) -> (Option<&Vec<f64>>, Option<&Vec<f64>>) {
        let gram = self.gram();
        (self.lm.counts.get(gram), self.icl.get(gram))
    }

    fn numerator(base: Option<&Vec<f64>>, icl: Option<&Vec<f64>>, alpha: f64, sym: usize) -> f64 {
        base.map_or(0.0, |r| r[sym]) + icl.map_or(0.0, |r| r[sym]) + alpha
    }

    fn denominator(&self, base: Option<&Vec<f64>>, icl: Option<&Vec<f64>>) -> f64 {
        let v = self.lm.vocab.len() as f64;
        base.map_or(0.0, |r| r.iter().sum::<f64>())
            + icl.map_or(0.0, |r| r.iter().sum::<f64>())
            + v * self.lm.alpha
    }

    fn distribution(&self) -> Vec<f64> {
        let (base, icl) = self.rows();
        let den = self.denominator(base, icl);
        (0..self.lm.vocab.len())
            .map(|i| Self::numerator(base, icl, self.lm.alpha, i) / den)
            .collect()
    }

    fn logprob(&self, sym: Sym) -> f64 {
        let (base, icl) = self.rows();
        Self::numerator(base, icl, self.lm.alpha, sym as usize).ln()
            - self.denominator(base, icl).ln()
    }
}

impl LmBackend for ToyNgramLm {
    fn backend_id(&self) -> &str {
        &self.id
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities {
            deterministic_sampling: true,
            prompt_logprobs: true,
        }
    }

    fn complete(&self, context: &str, params: &GenerationParams) -> Result<Vec<String>> {
        let problems = params.validate();
        if !problems.is_empty() {
            return Err(Error::Config(problems));
        }
        let start = Session::new(self, context);
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        let mut out = Vec::with_capacity(params.n);
        for _ in 0..params.n {
            let mut session = start.clone();
            let mut tokens: Vec<&str> = Vec::new();
            for _ in 0..params.max_tokens {
                let dist = session.distribution();
                let next = if params.greedy {
                    argmax(&dist)
                } else {
                    let kept = sampling::nucleus(&dist, params.top_p, params.temperature);
                    sampling::draw(&kept, rng.random::<f64>())
                } as Sym;
                if next == self.eos {
                    break;
                }
                tokens.push(&self.vocab[next as usize]);
                session.push(next);
            }
            out.push(tokens.join(" "));
        }
        Ok(out)
    }

    fn score(&self, context: &str, completion: &str) -> Result<SequenceScore> {
        let mut session = Session::new(self, context);
        let mut token_logprobs = Vec::new();
        for tok in completion.split_whitespace() {
            let sym = self.vocab_sym(tok)?;
            token_logprobs.push(TokenLogprob {
                token: tok.to_owned(),
                logprob: session.logprob(sym),
            });
            session.push(sym);
        }
        Ok(SequenceScore::from_tokens(token_logprobs))
    }
}

fn argmax(dist: &[f64]) -> usize {
    let mut best = 0;
    for (i, &p) in dist.iter().enumerate() {
        if p > dist[best] {
            best = i;
        }
    }
    best
}

/// Probabilities of every completion of `context` that ends with `</s>`
/// within `max_len` non-terminal tokens. Keys are the space-joined tokens
/// including the trailing `</s>`, so they can be passed back to `score`.
pub fn enumerate_distribution(
    lm: &ToyNgramLm,
    context: &str,
    max_len: usize,
) -> Result<BTreeMap<String, f64>> {
    let branching = (lm.vocab.len() - 1) as u128;
    let mut total: u128 = 0;
    let mut level: u128 = 1;
    for _ in 0..=max_len {
        total = total.saturating_add(level);
        level = level.saturating_mul(branching);
    }
    if total > MAX_ENUMERATION {
        return Err(Error::EnumerationTooLarge {
            sequences: total,
            limit: MAX_ENUMERATION,
        });
    }

    let mut out = BTreeMap::new();
    let mut prefix = Vec::new();
    walk(
        lm,
        Session::new(lm, context),
        &mut prefix,
        0.0,
        max_len,
        &mut out,
    );
    Ok(out)
}

fn walk<'a>(
    lm: &'a ToyNgramLm,
    session: Session<'a>,
    prefix: &mut Vec<&'a str>,
    logp: f64,
    remaining: usize,
    out: &mut BTreeMap<String, f64>,
) {
    prefix.push(EOS);
    out.insert(prefix.join(" "), (logp + session.logprob(lm.eos)).exp());
    prefix.pop();
    if remaining == 0 {
        return;
    }
    for sym in 0..lm.eos {
        let lp = session.logprob(sym);
        let mut child = session.clone();
        child.push(sym);
        prefix.push(&lm.vocab[sym as usize]);
        walk(lm, child, prefix, logp + lp, remaining - 1, out);
        prefix.pop();
    }
}
