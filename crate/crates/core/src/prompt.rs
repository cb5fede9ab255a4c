//! User-instruction text for a question.
//!
//! ```text
//! what did the lady do?
//! A. ...
//! B. ...
//! Answer with the option's letter from the given choices directly.
//! ```

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::QaItem;
use crate::letter::{letters_in_play, OptionLetter};

pub const DIRECT_SUFFIX: &str = "Answer with the option's letter from the given choices directly.";
pub const EXPLAIN_SUFFIX: &str = "Answer with the option's letter from the given choices, then explain your answer.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PromptMode {
    #[default]
    Direct,
    Explain,
}

impl PromptMode {
    pub fn suffix(self) -> &'static str {
        match self {
            PromptMode::Direct => DIRECT_SUFFIX,
            PromptMode::Explain => EXPLAIN_SUFFIX,
        }
    }
}

impl FromStr for PromptMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "direct" => Ok(PromptMode::Direct),
            "explain" => Ok(PromptMode::Explain),
            _ => Err(format!("unknown prompt mode {s:?} (expected direct or explain)")),
        }
    }
}

impl fmt::Display for PromptMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PromptMode::Direct => "direct",
            PromptMode::Explain => "explain",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptText {
    pub text: String,
    pub letters_in_play: Vec<OptionLetter>,
    pub mode: PromptMode,
}

/// Question line followed by one `X. option` line per option, no suffix.
pub fn body(question: &str, options: &[String]) -> String {
    let mut out = String::from(question);
    for (letter, option) in letters_in_play(options.len()).iter().zip(options) {
        out.push('\n');
        out.push(letter.as_char());
        out.push_str(". ");
        out.push_str(option);
    }
    out
}

pub fn build(item: &QaItem, mode: PromptMode) -> PromptText {
    build_parts(&item.question, &item.options, mode)
}

pub fn build_parts(question: &str, options: &[String], mode: PromptMode) -> PromptText {
    let mut text = body(question, options);
    text.push('\n');
    text.push_str(mode.suffix());
    PromptText {
        text,
        letters_in_play: letters_in_play(options.len()),
        mode,
    }
}
