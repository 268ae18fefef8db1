//! Identifier grammar shared by graphs, nodes, ports and user names.
//!
//! Every name must match `[A-Za-z0-9_]{1,64}`. Anything else (dots, dashes,
//! spaces, non-ASCII letters) is rejected up front so that names can be used
//! verbatim as file names inside job sandboxes.

use std::fmt;

use serde::{Deserialize, Serialize};

pub const MAX_IDENT_LEN: usize = 64;

pub fn is_valid_ident(name: &str) -> bool {
    !name.is_empty()
        && name.len() <= MAX_IDENT_LEN
        && name.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'_')
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid identifier {0:?}: expected [A-Za-z0-9_]{{1,64}}")]
pub struct InvalidIdent(pub String);

/// A validated identifier.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Ident(String);

impl Ident {
    pub fn new(name: impl Into<String>) -> Result<Self, InvalidIdent> {
        let name = name.into();
        if is_valid_ident(&name) {
            Ok(Ident(name))
        } else {
            Err(InvalidIdent(name))
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for Ident {
    type Error = InvalidIdent;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        Ident::new(value)
    }
}

impl From<Ident> for String {
    fn from(value: Ident) -> Self {
        value.0
    }
}

impl fmt::Display for Ident {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}
