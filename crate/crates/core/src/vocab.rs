//! Closed vocabulary of the synthetic bimodal world.
//!
//! Four scene attributes with four values each. Every value token belongs to
//! exactly one attribute, so "which attribute does this token talk about" is
//! always answerable.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::fmt;

/// Serialized as its name.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Token(u8);

const TOKEN_NAMES: [&str; 22] = [
    "<eos>", "color", "shape", "size", "place", // names
    "red", "green", "blue", "brown", // color
    "cube", "ball", "cone", "ring", // shape
    "tiny", "small", "big", "huge", // size
    "left", "right", "top", "bottom", // place
    "what",
];

/// Tokens a policy can emit: end token, attribute names, attribute values.
pub const ANSWER_VOCAB: usize = 21;
pub const EOS: Token = Token(0);
/// Prompt-only question word.
pub const WHAT: Token = Token(21);

pub const N_ATTRIBUTES: usize = 4;
pub const N_VALUES: usize = 4;

impl Token {
    pub fn id(self) -> usize {
        self.0 as usize
    }

    pub fn from_id(id: usize) -> Result<Token> {
        if id < TOKEN_NAMES.len() {
            Ok(Token(id as u8))
        } else {
            Err(Error::UnknownToken(format!("#{id}")))
        }
    }

    pub fn parse(s: &str) -> Result<Token> {
        TOKEN_NAMES
            .iter()
            .position(|&n| n == s)
            .map(|i| Token(i as u8))
            .ok_or_else(|| Error::UnknownToken(s.to_string()))
    }

    pub fn as_str(self) -> &'static str {
        TOKEN_NAMES[self.0 as usize]
    }

    pub fn is_answer(self) -> bool {
        self.id() < ANSWER_VOCAB
    }

    /// Attribute this token names or takes a value of, if any.
    pub fn attribute(self) -> Option<Attribute> {
        match self.0 {
            1..=4 => Some(Attribute::ALL[self.0 as usize - 1]),
            5..=20 => Some(Attribute::ALL[(self.0 as usize - 5) / N_VALUES]),
            _ => None,
        }
    }

    pub fn is_value(self) -> bool {
        (5..=20).contains(&self.0)
    }
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl TryFrom<String> for Token {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        Token::parse(&s)
    }
}

impl From<Token> for String {
    fn from(t: Token) -> String {
        t.as_str().to_string()
    }
}

/// Every token of the answer vocabulary in id order.
pub fn answer_tokens() -> impl Iterator<Item = Token> {
    (0..ANSWER_VOCAB).map(|i| Token(i as u8))
}

pub fn parse_tokens<S: AsRef<str>>(items: &[S]) -> Result<Vec<Token>> {
    items.iter().map(|s| Token::parse(s.as_ref())).collect()
}

pub fn token_strings(tokens: &[Token]) -> Vec<String> {
    tokens.iter().map(|t| t.as_str().to_string()).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Attribute {
    Color,
    Shape,
    Size,
    Place,
}

impl Attribute {
    pub const ALL: [Attribute; N_ATTRIBUTES] = [
        Attribute::Color,
        Attribute::Shape,
        Attribute::Size,
        Attribute::Place,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name_token(self) -> Token {
        Token(1 + self as u8)
    }

    pub fn value(self, i: usize) -> Token {
        assert!(i < N_VALUES);
        Token(5 + (self as u8) * N_VALUES as u8 + i as u8)
    }

    pub fn values(self) -> [Token; N_VALUES] {
        std::array::from_fn(|i| self.value(i))
    }

    /// Index of `tok` within this attribute's domain.
    pub fn value_index(self, tok: Token) -> Option<usize> {
        self.values().iter().position(|&v| v == tok)
    }

    /// Most probable value under the skewed prior: brown, ball, small, left.
    pub fn mode_index(self) -> usize {
        match self {
            Attribute::Color => 3,
            Attribute::Shape => 1,
            Attribute::Size => 1,
            Attribute::Place => 0,
        }
    }

    pub fn mode(self) -> Token {
        self.value(self.mode_index())
    }
}

impl fmt::Display for Attribute {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name_token().as_str())
    }
}
