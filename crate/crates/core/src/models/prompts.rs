use crate::classes::WeatherClass;
use crate::error::{Error, Result};

/// Whitespace vocabulary of the text tower. Index 0 pads.
pub const VOCABULARY: [&str; 20] = [
    "<pad>",
    "clear",
    "road",
    "no",
    "precipitation",
    "rain",
    "on",
    "snow",
    "wet",
    "dry",
    "heavy",
    "light",
    "falling",
    "weather",
    "day",
    "night",
    "camera",
    "traffic",
    "a",
    "the",
];

pub const PROMPT_LEN: usize = 6;

pub const PROMPT_TEXT: [&str; 3] = [
    "clear road no precipitation",
    "rain on road",
    "snow on road",
];

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClassPrompt {
    pub class: WeatherClass,
    pub token_ids: Vec<usize>,
}

impl ClassPrompt {
    /// Tokenizes on whitespace and pads to `max_len`.
    pub fn tokenize(class: WeatherClass, text: &str, max_len: usize) -> Result<Self> {
        let mut token_ids = text
            .split_whitespace()
            .map(|w| {
                VOCABULARY
                    .iter()
                    .position(|v| *v == w)
                    .ok_or_else(|| Error::Input(format!("word `{w}` is not in the vocabulary")))
            })
            .collect::<Result<Vec<_>>>()?;
        if token_ids.len() > max_len {
            return Err(Error::Input(format!(
                "prompt has {} tokens, maximum is {max_len}",
                token_ids.len()
            )));
        }
        token_ids.resize(max_len, 0);
        Ok(Self { class, token_ids })
    }

    /// The three built-in prompts in class-index order.
    pub fn builtin() -> Vec<ClassPrompt> {
        WeatherClass::ALL
            .iter()
            .map(|&c| {
                Self::tokenize(c, PROMPT_TEXT[c.index()], PROMPT_LEN).expect("built-in prompt")
            })
            .collect()
    }
}
