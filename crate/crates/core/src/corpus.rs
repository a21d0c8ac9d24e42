//! Preference-pair datasets: JSONL loading, length filtering and persistence.
//!
//! The same record format is used for demonstration pools, test sets and the
//! filtered artifacts written back out.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Where the responses of a record came from.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    #[default]
    Original,
    Teacher,
}

/// One prompt with a preferred and a dispreferred response.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreferenceRecord {
    pub id: String,
    pub prompt: String,
    pub chosen: String,
    pub rejected: String,
    #[serde(default)]
    pub source: Source,
}

impl PreferenceRecord {
    pub fn new(
        id: impl Into<String>,
        prompt: impl Into<String>,
        chosen: impl Into<String>,
        rejected: impl Into<String>,
    ) -> Self {
        Self {
            id: id.into(),
            prompt: prompt.into(),
            chosen: chosen.into(),
            rejected: rejected.into(),
            source: Source::Original,
        }
    }
}

/// Token budgets applied before a dataset is used.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LengthFilter {
    pub max_prompt_tokens: usize,
    pub max_response_tokens: usize,
    pub tokenizer_id: String,
}

pub const WHITESPACE_TOKENIZER: &str = "whitespace";

impl LengthFilter {
    /// 320 prompt / 128 response tokens, the HH-RLHF budget.
    pub fn hh_rlhf() -> Self {
        Self {
            max_prompt_tokens: 320,
            max_response_tokens: 128,
            tokenizer_id: WHITESPACE_TOKENIZER.to_owned(),
        }
    }

    /// 128 prompt / 200 response tokens, the SyntheticGPT budget.
    pub fn synthetic_gpt() -> Self {
        Self {
            max_prompt_tokens: 128,
            max_response_tokens: 200,
            tokenizer_id: WHITESPACE_TOKENIZER.to_owned(),
        }
    }

    pub fn validate(&self) -> Vec<String> {
        let mut problems = Vec::new();
        if self.max_prompt_tokens == 0 {
            problems.push("length_filter.max_prompt_tokens must be positive".to_owned());
        }
        if self.max_response_tokens == 0 {
            problems.push("length_filter.max_response_tokens must be positive".to_owned());
        }
        problems
    }
}

impl Default for LengthFilter {
    fn default() -> Self {
        Self::hh_rlhf()
    }
}

pub fn whitespace_token_count(text: &str) -> usize {
    text.split_whitespace().count()
}

/// Keeps records whose prompt and both responses fit the budgets (inclusive).
pub fn filter_by_length<F>(
    records: &[PreferenceRecord],
    filter: &LengthFilter,
    count_tokens: F,
) -> Vec<PreferenceRecord>
where
    F: Fn(&str) -> usize,
{
    records
        .iter()
        .filter(|r| {
            count_tokens(&r.prompt) <= filter.max_prompt_tokens
                && count_tokens(&r.chosen) <= filter.max_response_tokens
                && count_tokens(&r.rejected) <= filter.max_response_tokens
        })
        .cloned()
        .collect()
}

/// Input formats accepted by [`load_preference_records`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum RecordFormat {
    #[default]
    Jsonl,
}

pub fn load_preference_records(path: &Path, format: RecordFormat) -> Result<Vec<PreferenceRecord>> {
    match format {
        RecordFormat::Jsonl => {
            let file = File::open(path).map_err(|e| Error::io(path, e))?;
            read_jsonl(BufReader::new(file)).map_err(|e| match e {
                Error::Io { source, .. } => Error::io(path, source),
                other => other,
            })
        }
    }
}

/// Parses JSONL records from any reader. Blank lines are skipped; line numbers
/// in errors and default ids are 1-based.
pub fn read_jsonl<R: BufRead>(reader: R) -> Result<Vec<PreferenceRecord>> {
    let mut records = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::io("<reader>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        records.push(parse_record(&line, line_no)?);
    }
    Ok(records)
}

fn parse_record(line: &str, line_no: usize) -> Result<PreferenceRecord> {
    let value: serde_json::Value =
        serde_json::from_str(line).map_err(|e| Error::MalformedLine {
            line: line_no,
            message: e.to_string(),
        })?;
    let obj = value.as_object().ok_or_else(|| Error::MalformedLine {
        line: line_no,
        message: "expected a JSON object".to_owned(),
    })?;

    let text_field = |field: &'static str| -> Result<String> {
        match obj.get(field) {
            None | Some(serde_json::Value::Null) => Err(Error::MissingField {
                line: line_no,
                field,
            }),
            Some(serde_json::Value::String(s)) => Ok(s.clone()),
            Some(_) => Err(Error::MalformedLine {
                line: line_no,
                message: format!("field `{field}` must be a string"),
            }),
        }
    };

    let prompt = text_field("prompt")?;
    if prompt.is_empty() {
        return Err(Error::MalformedLine {
            line: line_no,
            message: "prompt is empty".to_owned(),
        });
    }
    let chosen = text_field("chosen")?;
    let rejected = text_field("rejected")?;

    let id = match obj.get("id") {
        None | Some(serde_json::Value::Null) => line_no.to_string(),
        Some(serde_json::Value::String(s)) => s.clone(),
        Some(serde_json::Value::Number(n)) => n.to_string(),
        Some(_) => {
            return Err(Error::MalformedLine {
                line: line_no,
                message: "field `id` must be a string or number".to_owned(),
            })
        }
    };
    let source = match obj.get("source") {
        None | Some(serde_json::Value::Null) => Source::Original,
        Some(v) => serde_json::from_value(v.clone()).map_err(|e| Error::MalformedLine {
            line: line_no,
            message: format!("field `source`: {e}"),
        })?,
    };

    Ok(PreferenceRecord {
        id,
        prompt,
        chosen,
        rejected,
        source,
    })
}

pub fn write_jsonl<W: Write>(mut writer: W, records: &[PreferenceRecord]) -> Result<()> {
    for record in records {
        serde_json::to_writer(&mut writer, record)?;
        writer
            .write_all(b"\n")
            .map_err(|e| Error::io("<writer>", e))?;
    }
    writer.flush().map_err(|e| Error::io("<writer>", e))
}

pub fn save_preference_records(path: &Path, records: &[PreferenceRecord]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_jsonl(BufWriter::new(file), records).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })
}
