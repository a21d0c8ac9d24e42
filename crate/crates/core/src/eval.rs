//! Scorer evaluation: reciprocal rank of the gold-best candidate, agreement
//! between scorers, and mean per-token loss of responses.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lm::LmBackend;
use crate::pipeline::RunRecord;
use crate::scoring::{normalized_policy_score, rank_order};

/// Candidates of one query with a gold ordering and predicted scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedQuery {
    pub query_id: String,
    pub candidates: Vec<String>,
    /// Candidate indices, best first.
    pub gold_ranking: Vec<usize>,
    pub predicted_scores: Vec<f64>,
}

impl RankedQuery {
    pub fn validate(&self) -> Result<()> {
        let n = self.candidates.len();
        if n == 0 {
            return Err(Error::Data(format!(
                "query {}: no candidates",
                self.query_id
            )));
        }
        if self.predicted_scores.len() != n {
            return Err(Error::Data(format!(
                "query {}: {} scores for {n} candidates",
                self.query_id,
                self.predicted_scores.len()
            )));
        }
        check_permutation(&self.query_id, &self.gold_ranking, n)
    }

    /// Candidate indices, best first, under the predicted scores.
    pub fn predicted_order(&self) -> Vec<usize> {
        rank_order(&self.predicted_scores)
    }

    /// `1 / r` where `r` is the 1-based predicted position of the gold-best candidate.
    pub fn reciprocal_rank(&self) -> Result<f64> {
        self.validate()?;
        let best = self.gold_ranking[0];
        let pos = self
            .predicted_order()
            .iter()
            .position(|&i| i == best)
            .expect("predicted order is a permutation");
        Ok(1.0 / (pos + 1) as f64)
    }

    /// Kendall tau-a between predicted and gold orders; 1.0 for one candidate.
    pub fn kendall_tau(&self) -> Result<f64> {
        self.validate()?;
        let n = self.candidates.len();
        if n < 2 {
            return Ok(1.0);
        }
        let mut gold_pos = vec![0; n];
        for (p, &i) in self.gold_ranking.iter().enumerate() {
            gold_pos[i] = p;
        }
        let pred = self.predicted_order();
        let mut net = 0i64;
        for a in 0..n {
            for b in a + 1..n {
                // pred[a] is ranked above pred[b]
                net += if gold_pos[pred[a]] < gold_pos[pred[b]] {
                    1
                } else {
                    -1
                };
            }
        }
        Ok(net as f64 / (n * (n - 1) / 2) as f64)
    }

    fn top1(&self) -> usize {
        self.predicted_order()[0]
    }
}

fn check_permutation(query_id: &str, ranking: &[usize], n: usize) -> Result<()> {
    let mut seen = vec![false; n];
    if ranking.len() != n {
        return Err(Error::Data(format!(
            "query {query_id}: gold ranking has {} entries for {n} candidates",
            ranking.len()
        )));
    }
    for &i in ranking {
        if i >= n || std::mem::replace(&mut seen[i], true) {
            return Err(Error::Data(format!(
                "query {query_id}: gold ranking is not a permutation of 0..{n}"
            )));
        }
    }
    Ok(())
}

pub fn mean_reciprocal_rank(queries: &[RankedQuery]) -> Result<f64> {
    if queries.is_empty() {
        return Err(Error::InvalidArgument("no queries to evaluate".into()));
    }
    let mut total = 0.0;
    for q in queries {
        total += q.reciprocal_rank()?;
    }
    Ok(total / queries.len() as f64)
}

/// One line of a gold-ranking file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldRanking {
    pub query_id: String,
    pub candidates: Vec<String>,
    pub gold_ranking: Vec<usize>,
}

fn read_jsonl_lines<T, R>(reader: R) -> Result<Vec<T>>
where
    T: for<'de> Deserialize<'de>,
    R: BufRead,
{
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io("<jsonl>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line).map_err(|e| Error::MalformedLine {
                line: i + 1,
                message: e.to_string(),
            })?,
        );
    }
    Ok(out)
}

fn open(path: &Path) -> Result<BufReader<std::fs::File>> {
    Ok(BufReader::new(
        std::fs::File::open(path).map_err(|e| Error::io(path, e))?,
    ))
}

pub fn load_gold(path: &Path) -> Result<Vec<GoldRanking>> {
    let gold: Vec<GoldRanking> = read_jsonl_lines(open(path)?)?;
    for g in &gold {
        check_permutation(&g.query_id, &g.gold_ranking, g.candidates.len())?;
    }
    Ok(gold)
}

pub fn load_run_records(path: &Path) -> Result<Vec<RunRecord>> {
    read_jsonl_lines(open(path)?)
}

/// Pairs each run with its gold entry by id. Candidate scores are looked up
/// by text, so the run must have scored every gold candidate.
pub fn join_runs_with_gold(runs: &[RunRecord], gold: &[GoldRanking]) -> Result<Vec<RankedQuery>> {
    let by_id: BTreeMap<&str, &RunRecord> = runs.iter().map(|r| (r.input_id.as_str(), r)).collect();
    gold.iter()
        .map(|g| {
            let run = by_id.get(g.query_id.as_str()).ok_or_else(|| {
                Error::Data(format!("no run record for gold query {}", g.query_id))
            })?;
            let predicted_scores = g
                .candidates
                .iter()
                .map(|text| {
                    run.candidates
                        .iter()
                        .find(|c| &c.text == text)
                        .map(|c| c.score)
                        .ok_or_else(|| {
                            Error::Data(format!(
                                "query {}: run has no score for candidate {text:?}",
                                g.query_id
                            ))
                        })
                })
                .collect::<Result<_>>()?;
            Ok(RankedQuery {
                query_id: g.query_id.clone(),
                candidates: g.candidates.clone(),
                gold_ranking: g.gold_ranking.clone(),
                predicted_scores,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScorerSummary {
    pub scorer: String,
    pub queries: usize,
    pub mrr: f64,
    /// Mean Kendall tau-a against the full gold order (auxiliary column).
    pub kendall_tau_aux: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairAgreement {
    pub a: String,
    pub b: String,
    /// Fraction of queries where both scorers rank the same candidate first.
    pub top1_agreement: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    pub scorers: Vec<ScorerSummary>,
    pub agreement: Vec<PairAgreement>,
}

impl ConsistencyReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_table(&self) -> String {
        let width = self
            .scorers
            .iter()
            .map(|s| s.scorer.len())
            .chain(self.agreement.iter().map(|p| p.a.len() + p.b.len() + 4))
            .max()
            .unwrap_or(6)
            .max(6);
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<width$}  {:>7}  {:>6}  {:>13}",
            "scorer", "queries", "MRR", "tau (aux)"
        );
        for s in &self.scorers {
            let _ = writeln!(
                out,
                "{:<width$}  {:>7}  {:>6.4}  {:>13.4}",
                s.scorer, s.queries, s.mrr, s.kendall_tau_aux
            );
        }
        if !self.agreement.is_empty() {
            let _ = writeln!(out);
            let _ = writeln!(out, "{:<width$}  {:>6}", "pair", "top-1");
            for p in &self.agreement {
                let _ = writeln!(
                    out,
                    "{:<width$}  {:>6.4}",
                    format!("{} vs {}", p.a, p.b),
                    p.top1_agreement
                );
            }
        }
        out
    }
}

/// MRR per scorer and pairwise top-1 agreement. Every scorer must cover
/// the same query ids.
pub fn consistency_report(runs: &BTreeMap<String, Vec<RankedQuery>>) -> Result<ConsistencyReport> {
    let mut reference: Option<(&str, BTreeSet<&str>)> = None;
    for (name, queries) in runs {
        let ids: BTreeSet<&str> = queries.iter().map(|q| q.query_id.as_str()).collect();
        if ids.len() != queries.len() {
            return Err(Error::Data(format!("scorer {name}: duplicate query ids")));
        }
        match &reference {
            None => reference = Some((name, ids)),
            Some((first, expected)) if *expected != ids => {
                return Err(Error::Data(format!(
                    "scorers {first} and {name} were evaluated on different queries"
                )))
            }
            Some(_) => {}
        }
    }

    let mut scorers = Vec::new();
    for (name, queries) in runs {
        let mut tau = 0.0;
        for q in queries {
            tau += q.kendall_tau()?;
        }
        scorers.push(ScorerSummary {
            scorer: name.clone(),
            queries: queries.len(),
            mrr: mean_reciprocal_rank(queries)?,
            kendall_tau_aux: tau / queries.len() as f64,
        });
    }

    let top1: BTreeMap<&str, BTreeMap<&str, usize>> = runs
        .iter()
        .map(|(name, qs)| {
            (
                name.as_str(),
                qs.iter().map(|q| (q.query_id.as_str(), q.top1())).collect(),
            )
        })
        .collect();
    let names: Vec<&str> = runs.keys().map(String::as_str).collect();
    let mut agreement = Vec::new();
    for (i, a) in names.iter().enumerate() {
        for b in &names[i + 1..] {
            let (ta, tb) = (&top1[a], &top1[b]);
            let same = ta.iter().filter(|(id, pick)| tb[*id] == **pick).count();
            agreement.push(PairAgreement {
                a: a.to_string(),
                b: b.to_string(),
                top1_agreement: same as f64 / ta.len() as f64,
            });
        }
    }
    Ok(ConsistencyReport { scorers, agreement })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    /// `-sum_logprob / token_count` per record.
    pub per_record: Vec<f64>,
    pub mean: f64,
}

/// Mean per-token negative log-likelihood of each response given its context.
pub fn nll_mean_loss(backend: &dyn LmBackend, records: &[(String, String)]) -> Result<LossReport> {
    if records.is_empty() {
        return Err(Error::InvalidArgument("no records to analyze".into()));
    }
    let per_record = records
        .par_iter()
        .map(|(context, response)| {
            if response.is_empty() {
                return Err(Error::EmptySequence);
            }
            Ok(-normalized_policy_score(
                &backend.score(context, response)?,
            )?)
        })
        .collect::<Result<Vec<f64>>>()?;
    let mean = per_record.iter().sum::<f64>() / per_record.len() as f64;
    Ok(LossReport { per_record, mean })
}
