use thiserror::Error;

use crate::cid::{compute_cid, Cid};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PackageError {
    #[error("agent data must be non-empty")]
    EmptyData,
    #[error("cid {expected} does not match the code (hashes to {actual})")]
    CidMismatch { expected: Cid, actual: Cid },
}

/// Code, data and optional state of an agent in transit.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AgentPackage {
    code: Vec<u8>,
    data: Vec<u8>,
    state: Option<Vec<u8>>,
    cid: Cid,
}

impl AgentPackage {
    pub fn new(code: Vec<u8>, data: Vec<u8>, state: Option<Vec<u8>>) -> Result<Self, PackageError> {
        let cid = compute_cid(&code);
        Self::from_parts(code, data, state, cid)
    }

    /// Assembles a package from received parts, checking `cid` against the code.
    pub fn from_parts(code: Vec<u8>, data: Vec<u8>, state: Option<Vec<u8>>, cid: Cid) -> Result<Self, PackageError> {
        if data.is_empty() {
            return Err(PackageError::EmptyData);
        }
        let actual = compute_cid(&code);
        if actual != cid {
            return Err(PackageError::CidMismatch { expected: cid, actual });
        }
        Ok(Self { code, data, state, cid })
    }

    pub fn code(&self) -> &[u8] {
        &self.code
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn state(&self) -> Option<&[u8]> {
        self.state.as_deref()
    }

    pub fn cid(&self) -> &Cid {
        &self.cid
    }
}
