//! Plain-text in-context prompts.
//!
//! Layout of a rendered positive prompt with two demonstrations:
//!
//! ```text
//! #You are asked to generate a response for each given dialogue context. The last response is generated by you, which should be as polite as possible:
//!
//! ##
//! <demo 1 context>
//! ###Generate a polite response: <demo 1 chosen response>
//!
//! ##
//! <demo 2 context>
//! ###Generate a polite response: <demo 2 chosen response>
//!
//! ##
//! <test context>
//! ###Generate a polite response:
//! ```
//!
//! The negative prompt swaps in the opposite style word and the rejected
//! responses. The zero-shot prompt is the bare `##` block with the test
//! context, no header and no trigger line. Golden copies live in
//! `templates/` at the repository root.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::PreferenceRecord;
use crate::error::{Error, Result};

/// Style pair used in the instruction header and trigger lines.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Style {
    #[default]
    Polite,
    Harmless,
    Helpful,
    Honest,
}

impl Style {
    pub const ALL: [Style; 4] = [
        Style::Polite,
        Style::Harmless,
        Style::Helpful,
        Style::Honest,
    ];

    pub fn positive_word(self) -> &'static str {
        match self {
            Style::Polite => "polite",
            Style::Harmless => "harmless",
            Style::Helpful => "helpful",
            Style::Honest => "honest",
        }
    }

    pub fn negative_word(self) -> &'static str {
        match self {
            Style::Polite => "offensive",
            Style::Harmless => "harmful",
            Style::Helpful => "helpless",
            Style::Honest => "misleading",
        }
    }

    fn positive_article(self) -> &'static str {
        match self {
            Style::Honest => "an",
            _ => "a",
        }
    }

    fn negative_article(self) -> &'static str {
        match self {
            Style::Polite => "an",
            _ => "a",
        }
    }

    /// Default style for a dataset domain name such as `harmless-base`.
    pub fn for_domain(domain: &str) -> Style {
        let d = domain.to_ascii_lowercase();
        if d.contains("harmless") {
            Style::Harmless
        } else if d.contains("helpful") {
            Style::Helpful
        } else {
            Style::Polite
        }
    }
}

impl fmt::Display for Style {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.positive_word())
    }
}

impl FromStr for Style {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Style::ALL
            .into_iter()
            .find(|st| st.positive_word().eq_ignore_ascii_case(s))
            .ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "unknown style `{s}` (expected polite, harmless, helpful or honest)"
                ))
            })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Demonstration {
    pub id: String,
    pub context: String,
    pub positive_response: Option<String>,
    pub negative_response: Option<String>,
}

impl From<&PreferenceRecord> for Demonstration {
    fn from(r: &PreferenceRecord) -> Self {
        Self {
            id: r.id.clone(),
            context: r.prompt.clone(),
            positive_response: Some(r.chosen.clone()),
            negative_response: Some(r.rejected.clone()),
        }
    }
}

#[derive(Clone, Copy)]
enum Polarity {
    Positive,
    Negative,
}

fn header(style: Style, polarity: Polarity) -> String {
    let word = match polarity {
        Polarity::Positive => style.positive_word(),
        Polarity::Negative => style.negative_word(),
    };
    format!(
        "#You are asked to generate a response for each given dialogue context. \
         The last response is generated by you, which should be as {word} as possible:"
    )
}

fn trigger(style: Style, polarity: Polarity) -> String {
    let (article, word) = match polarity {
        Polarity::Positive => (style.positive_article(), style.positive_word()),
        Polarity::Negative => (style.negative_article(), style.negative_word()),
    };
    format!("###Generate {article} {word} response:")
}

fn render(demos: &[Demonstration], x: &str, style: Style, polarity: Polarity) -> Result<String> {
    let trig = trigger(style, polarity);
    let mut out = header(style, polarity);
    for demo in demos {
        let response = match polarity {
            Polarity::Positive => {
                demo.positive_response
                    .as_deref()
                    .ok_or(Error::MissingResponse {
                        id: demo.id.clone(),
                        side: "positive",
                    })?
            }
            Polarity::Negative => {
                demo.negative_response
                    .as_deref()
                    .ok_or(Error::MissingResponse {
                        id: demo.id.clone(),
                        side: "negative",
                    })?
            }
        };
        out.push_str("\n\n##\n");
        out.push_str(&demo.context);
        out.push('\n');
        out.push_str(&trig);
        out.push(' ');
        out.push_str(response);
    }
    out.push_str("\n\n");
    out.push_str(&render_zero_shot(x));
    out.push('\n');
    out.push_str(&trig);
    Ok(out)
}

/// `[d+; x]`: chosen responses under the positive instruction.
pub fn render_positive_context(demos: &[Demonstration], x: &str, style: Style) -> Result<String> {
    render(demos, x, style, Polarity::Positive)
}

/// `[d-; x]`: rejected responses under the negative instruction.
pub fn render_negative_context(demos: &[Demonstration], x: &str, style: Style) -> Result<String> {
    render(demos, x, style, Polarity::Negative)
}

/// The reference context: the test dialogue with no header and no demonstrations.
pub fn render_zero_shot(x: &str) -> String {
    format!("##\n{x}")
}

/// All contexts needed to score candidates for one test prompt.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub expert_context: String,
    pub negative_context: Option<String>,
    pub zero_shot_context: String,
    pub demo_ids: Vec<String>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BundleOptions {
    pub style: Style,
    /// Render the negative context as well (needed by the promoted score).
    pub with_negative: bool,
    /// Give the reference context the instruction header and trigger line.
    pub zero_shot_header: bool,
}

impl PromptBundle {
    /// Renders the bundle. With no demonstrations the expert (and negative)
    /// context collapse to the zero-shot context, so the policy with and
    /// without demonstrations is the same distribution.
    pub fn build(demos: &[Demonstration], x: &str, opts: BundleOptions) -> Result<Self> {
        let zero_shot_context = if opts.zero_shot_header {
            render_positive_context(&[], x, opts.style)?
        } else {
            render_zero_shot(x)
        };
        let demo_ids = demos.iter().map(|d| d.id.clone()).collect();
        if demos.is_empty() {
            return Ok(Self {
                expert_context: zero_shot_context.clone(),
                negative_context: opts.with_negative.then(|| zero_shot_context.clone()),
                zero_shot_context,
                demo_ids,
            });
        }
        Ok(Self {
            expert_context: render_positive_context(demos, x, opts.style)?,
            negative_context: if opts.with_negative {
                Some(render_negative_context(demos, x, opts.style)?)
            } else {
                None
            },
            zero_shot_context,
            demo_ids,
        })
    }
}
