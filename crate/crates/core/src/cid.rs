//! Code unique identifiers: SHA-256 of the agent code bytes, as lowercase hex.

use std::fmt;
use std::str::FromStr;

use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("`{0}` is not a 64-character lowercase hex digest")]
pub struct InvalidCid(pub String);

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Cid(String);

impl Cid {
    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// True when `code` hashes to this identifier.
    pub fn matches(&self, code: &[u8]) -> bool {
        compute_cid(code) == *self
    }
}

pub fn compute_cid(code: &[u8]) -> Cid {
    Cid(hex::encode(Sha256::digest(code)))
}

pub fn is_valid_cid(s: &str) -> bool {
    s.len() == 64 && s.bytes().all(|b| matches!(b, b'0'..=b'9' | b'a'..=b'f'))
}

impl FromStr for Cid {
    type Err = InvalidCid;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if is_valid_cid(s) {
            Ok(Cid(s.to_string()))
        } else {
            Err(InvalidCid(s.to_string()))
        }
    }
}

impl fmt::Display for Cid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}
