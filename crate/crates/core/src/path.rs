//! Normalized vault-relative paths.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PathError {
    #[error("path component {0:?} is not allowed")]
    BadComponent(String),
    #[error("path contains a forbidden character")]
    BadCharacter,
}

/// A path relative to the vault root. The root itself is the empty path.
///
/// Parsing accepts an optional leading `/` and rejects `..`, `.`, empty
/// components, backslashes and control characters, so a `VaultPath` can
/// never escape the vault directory.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct VaultPath(String);

impl VaultPath {
    pub fn root() -> Self {
        Self(String::new())
    }

    pub fn parse(s: &str) -> Result<Self, PathError> {
        let trimmed = s.strip_prefix('/').unwrap_or(s);
        if trimmed.is_empty() {
            return Ok(Self::root());
        }
        if trimmed.chars().any(|c| c == '\\' || c.is_control()) {
            return Err(PathError::BadCharacter);
        }
        for comp in trimmed.split('/') {
            if comp.is_empty() || comp == "." || comp == ".." {
                return Err(PathError::BadComponent(comp.into()));
            }
        }
        Ok(Self(trimmed.into()))
    }

    pub fn is_root(&self) -> bool {
        self.0.is_empty()
    }

    /// Path without the leading slash; empty for the root.
    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn components(&self) -> impl Iterator<Item = &str> {
        self.0.split('/').filter(|c| !c.is_empty())
    }

    pub fn file_name(&self) -> Option<&str> {
        self.components().last()
    }

    pub fn parent(&self) -> Option<VaultPath> {
        if self.is_root() {
            return None;
        }
        match self.0.rfind('/') {
            Some(i) => Some(Self(self.0[..i].into())),
            None => Some(Self::root()),
        }
    }

    pub fn join(&self, name: &str) -> Result<VaultPath, PathError> {
        if self.is_root() {
            Self::parse(name)
        } else {
            let mut s = self.0.clone();
            s.push('/');
            s.push_str(name);
            Self::parse(&s)
        }
    }

    /// Every prefix of this path from the root down to the path itself.
    pub fn lineage(&self) -> Vec<VaultPath> {
        let mut out = Vec::new();
        out.push(Self::root());
        let mut acc = String::new();
        for comp in self.components() {
            if !acc.is_empty() {
                acc.push('/');
            }
            acc.push_str(comp);
            out.push(Self(acc.clone()));
        }
        out
    }

    pub fn starts_with(&self, ancestor: &VaultPath) -> bool {
        ancestor.is_root()
            || self.0 == ancestor.0
            || (self.0.starts_with(&ancestor.0) && self.0.as_bytes().get(ancestor.0.len()) == Some(&b'/'))
    }
}

impl fmt::Display for VaultPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "/{}", self.0)
    }
}

impl core::str::FromStr for VaultPath {
    type Err = PathError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::parse(s)
    }
}

impl Serialize for VaultPath {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for VaultPath {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Self::parse(&s).map_err(D::Error::custom)
    }
}
