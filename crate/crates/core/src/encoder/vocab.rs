use std::collections::HashMap;
use std::path::Path;

use crate::error::{DseError, Result};

pub type TokenId = u32;

pub const PAD: TokenId = 0;
pub const CLS: TokenId = 1;
pub const SEP: TokenId = 2;
pub const UNK: TokenId = 3;
pub const RESERVED_TOKENS: usize = 4;

/// Token-to-id map. Ids `0..4` are reserved for PAD, CLS, SEP and UNK; the
/// `i`-th listed token gets id `i + 4`.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
}

impl Vocabulary {
    pub fn from_tokens<I, S>(tokens: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let tokens: Vec<String> = tokens.into_iter().map(Into::into).collect();
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, tok) in tokens.iter().enumerate() {
            if tok.is_empty() || tok.chars().any(char::is_whitespace) {
                return Err(DseError::Input(format!(
                    "vocabulary entry {} is empty or contains whitespace",
                    i + 1
                )));
            }
            let id = (i + RESERVED_TOKENS) as TokenId;
            if index.insert(tok.clone(), id).is_some() {
                return Err(DseError::Input(format!("duplicate vocabulary token {tok:?}")));
            }
        }
        Ok(Self { tokens, index })
    }

    /// `tok4 … tok{size-1}`: the naming used by the synthetic data generator,
    /// so that a token's text encodes its id.
    pub fn synthetic(size: usize) -> Self {
        let tokens = (RESERVED_TOKENS..size.max(RESERVED_TOKENS)).map(|i| format!("tok{i}"));
        Self::from_tokens(tokens).expect("synthetic tokens are unique")
    }

    /// One token per line.
    pub fn parse(text: &str) -> Result<Self> {
        Self::from_tokens(text.lines())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn to_file_string(&self) -> String {
        let mut out = String::new();
        for t in &self.tokens {
            out.push_str(t);
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_file_string())?;
        Ok(())
    }

    /// Total id range, reserved ids included.
    pub fn size(&self) -> usize {
        self.tokens.len() + RESERVED_TOKENS
    }

    pub fn id(&self, token: &str) -> TokenId {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        match id {
            PAD => Some("[PAD]"),
            CLS => Some("[CLS]"),
            SEP => Some("[SEP]"),
            UNK => Some("[UNK]"),
            _ => self.tokens.get(id as usize - RESERVED_TOKENS).map(String::as_str),
        }
    }
}

/// Whitespace split, unknown tokens map to UNK.
pub fn tokenize(text: &str, vocab: &Vocabulary) -> Vec<TokenId> {
    text.split_whitespace().map(|t| vocab.id(t)).collect()
}
