//! Re-ranking prompt templates.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::LlmError;
use crate::corpus::ItemCatalog;
use crate::ids::ItemId;
use crate::mf::CandidateList;

const PLOT_GUIDELINE: &str = "Guidelines to perform the re-ranking are: \
Use the plot summary information of each item attached in curly bracket";

/// What, if anything, is appended to each candidate line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureMode {
    None,
    Genres,
    Description,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum PromptTemplate {
    T1,
    T2,
    T3,
    T4,
    T5,
    T6,
    T7,
    T8,
}

impl PromptTemplate {
    pub const ALL: [PromptTemplate; 8] = [
        PromptTemplate::T1,
        PromptTemplate::T2,
        PromptTemplate::T3,
        PromptTemplate::T4,
        PromptTemplate::T5,
        PromptTemplate::T6,
        PromptTemplate::T7,
        PromptTemplate::T8,
    ];

    pub fn id(self) -> &'static str {
        match self {
            PromptTemplate::T1 => "T1",
            PromptTemplate::T2 => "T2",
            PromptTemplate::T3 => "T3",
            PromptTemplate::T4 => "T4",
            PromptTemplate::T5 => "T5",
            PromptTemplate::T6 => "T6",
            PromptTemplate::T7 => "T7",
            PromptTemplate::T8 => "T8",
        }
    }

    /// Re-ranking goal substituted into the instruction sentence.
    pub fn goal_string(self) -> String {
        match self {
            PromptTemplate::T1 | PromptTemplate::T5 => "balance relevance and diversity".into(),
            PromptTemplate::T2 => "maximize the items' diversity in the list".into(),
            PromptTemplate::T3 => "maximize the items' genre-based diversity in the list".into(),
            PromptTemplate::T4 | PromptTemplate::T6 => {
                "balance relevance and genre-based diversity".into()
            }
            PromptTemplate::T7 => format!("balance relevance and diversity. {PLOT_GUIDELINE}"),
            PromptTemplate::T8 => {
                format!("maximize the books' diversity in the list. {PLOT_GUIDELINE}")
            }
        }
    }

    /// Greedy trade-off the goal corresponds to.
    pub fn lambda(self) -> f64 {
        match self {
            PromptTemplate::T2 | PromptTemplate::T3 | PromptTemplate::T8 => 0.0,
            _ => 0.5,
        }
    }

    pub fn feature_mode(self) -> FeatureMode {
        match self {
            PromptTemplate::T5 | PromptTemplate::T6 => FeatureMode::Genres,
            PromptTemplate::T7 | PromptTemplate::T8 => FeatureMode::Description,
            _ => FeatureMode::None,
        }
    }
}

impl fmt::Display for PromptTemplate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for PromptTemplate {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PromptTemplate::ALL
            .into_iter()
            .find(|t| t.id().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| format!("unknown prompt template `{s}` (expected T1..T8)"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptText {
    pub body: String,
    pub token_estimate: u64,
}

/// Rough token count used when the endpoint reports no usage.
pub fn estimate_tokens(text: &str) -> u64 {
    (text.chars().count() as u64).div_ceil(4)
}

fn output_format(n: usize, noun: &str) -> String {
    let line = |k: usize| format!("{k}-> <{noun} name>");
    let mut lines: Vec<String> = Vec::new();
    if n <= 3 {
        lines.extend((1..=n).map(line));
    } else {
        lines.push(line(1));
        lines.push(line(2));
        lines.push("...".into());
        lines.push(line(n));
    }
    lines.join("\n")
}

/// Instantiates `template` for a candidate list, naming entries "item" in the format block.
pub fn build_prompt(
    template: PromptTemplate,
    cl: &CandidateList,
    n: usize,
    catalog: &ItemCatalog,
) -> Result<PromptText, LlmError> {
    build_prompt_for(template, cl, n, catalog, "item")
}

/// As [`build_prompt`], with the noun used in the output-format lines (`<anime name>`).
pub fn build_prompt_for(
    template: PromptTemplate,
    cl: &CandidateList,
    n: usize,
    catalog: &ItemCatalog,
    noun: &str,
) -> Result<PromptText, LlmError> {
    let mode = template.feature_mode();
    let mut missing: Vec<ItemId> = Vec::new();
    let mut lines = Vec::with_capacity(cl.len());
    for e in &cl.entries {
        let Some(item) = catalog.get(e.item) else {
            missing.push(e.item);
            continue;
        };
        let features = match mode {
            FeatureMode::None => None,
            FeatureMode::Genres => {
                if item.genres.is_empty() {
                    missing.push(e.item);
                }
                Some(format!(
                    "[{}]",
                    item.genres.iter().cloned().collect::<Vec<_>>().join(", ")
                ))
            }
            FeatureMode::Description => match &item.description {
                Some(d) if !d.trim().is_empty() => Some(format!("{{{}}}", d.trim())),
                _ => {
                    missing.push(e.item);
                    None
                }
            },
        };
        lines.push(match features {
            Some(f) => format!("{}. {} {}", e.rank, item.title, f),
            None => format!("{}. {}", e.rank, item.title),
        });
    }
    if !missing.is_empty() {
        return Err(LlmError::FeatureMissing(missing));
    }

    let body = format!(
        "You are given a ranked recommendation list of {m} items for a user, \
delimited by triple backticks.\n\
Your task is to re-rank this candidate list and provide a final top-{n} \
recommendation list where the goal is to {goal}. Strictly use the following \
format for the output, and don't provide additional information.\n\
\n\
{format}\n\
\n\
```\n\
{list}\n\
```",
        m = cl.len(),
        goal = template.goal_string(),
        format = output_format(n, noun),
        list = lines.join("\n"),
    );
    let token_estimate = estimate_tokens(&body);
    Ok(PromptText {
        body,
        token_estimate,
    })
}

/// Prompt asking for a one-sentence item description.
pub fn description_prompt(title: &str) -> String {
    format!("Please provide a one-sentence description of the following item: {title}")
}
