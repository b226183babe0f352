//! In-memory index of a vault: every file and folder with its size and
//! local policy, and the accessible-subtree computation built on it.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::path::VaultPath;
use crate::policy::{
    evaluate, AccessMode, AttributeBag, EvalContext, Policy, PolicySource, UnknownPath,
};
use crate::token::DirectoryTree;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntryKind {
    File,
    Folder,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub kind: EntryKind,
    pub size: u64,
    pub policy: Policy,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum IndexError {
    #[error("no entry at {0}")]
    NotFound(VaultPath),
    #[error("{0} is a file")]
    NotAFolder(VaultPath),
    #[error("{0} exists as a different kind of entry")]
    KindConflict(VaultPath),
    #[error("the vault root cannot be replaced or removed")]
    Root,
}

/// Always contains the root folder.
#[derive(Debug, Clone, PartialEq)]
pub struct VaultIndex {
    entries: BTreeMap<VaultPath, IndexEntry>,
}

impl Default for VaultIndex {
    fn default() -> Self {
        Self::new()
    }
}

impl VaultIndex {
    pub fn new() -> Self {
        let root = IndexEntry {
            kind: EntryKind::Folder,
            size: 0,
            policy: Policy::default(),
        };
        Self {
            entries: BTreeMap::from([(VaultPath::root(), root)]),
        }
    }

    pub fn get(&self, path: &VaultPath) -> Option<&IndexEntry> {
        self.entries.get(path)
    }

    pub fn entries(&self) -> impl Iterator<Item = (&VaultPath, &IndexEntry)> {
        self.entries.iter()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.len() == 1
    }

    fn ensure_folders(&mut self, path: &VaultPath) -> Result<(), IndexError> {
        for p in path.lineage() {
            match self.entries.get(&p) {
                Some(e) if e.kind == EntryKind::File => return Err(IndexError::NotAFolder(p)),
                Some(_) => {}
                None => {
                    self.entries.insert(
                        p,
                        IndexEntry {
                            kind: EntryKind::Folder,
                            size: 0,
                            policy: Policy::default(),
                        },
                    );
                }
            }
        }
        Ok(())
    }

    /// Creates the folder and any missing ancestors; existing folders are
    /// left as they are.
    pub fn insert_folder(&mut self, path: &VaultPath) -> Result<(), IndexError> {
        self.ensure_folders(path)
    }

    /// Creates or resizes a file, creating missing ancestor folders. An
    /// existing file keeps its policy.
    pub fn insert_file(&mut self, path: &VaultPath, size: u64) -> Result<(), IndexError> {
        let parent = path.parent().ok_or(IndexError::Root)?;
        self.ensure_folders(&parent)?;
        match self.entries.get_mut(path) {
            Some(e) if e.kind == EntryKind::Folder => Err(IndexError::KindConflict(path.clone())),
            Some(e) => {
                e.size = size;
                Ok(())
            }
            None => {
                self.entries.insert(
                    path.clone(),
                    IndexEntry {
                        kind: EntryKind::File,
                        size,
                        policy: Policy::default(),
                    },
                );
                Ok(())
            }
        }
    }

    /// Removes an entry and everything below it; returns the removed paths.
    pub fn remove(&mut self, path: &VaultPath) -> Result<Vec<VaultPath>, IndexError> {
        if path.is_root() {
            return Err(IndexError::Root);
        }
        if !self.entries.contains_key(path) {
            return Err(IndexError::NotFound(path.clone()));
        }
        let doomed: Vec<VaultPath> = self
            .entries
            .range(path.clone()..)
            .take_while(|(p, _)| p.starts_with(path) || p.as_str().starts_with(path.as_str()))
            .filter(|(p, _)| p.starts_with(path))
            .map(|(p, _)| p.clone())
            .collect();
        for p in &doomed {
            self.entries.remove(p);
        }
        Ok(doomed)
    }

    pub fn set_policy(&mut self, path: &VaultPath, policy: Policy) -> Result<(), IndexError> {
        let entry = self
            .entries
            .get_mut(path)
            .ok_or_else(|| IndexError::NotFound(path.clone()))?;
        entry.policy = policy;
        Ok(())
    }

    pub fn children(&self, path: &VaultPath) -> impl Iterator<Item = (&VaultPath, &IndexEntry)> {
        let parent = path.clone();
        self.entries
            .iter()
            .filter(move |(p, _)| p.parent().as_ref() == Some(&parent))
    }

    /// The whole vault as a directory tree.
    pub fn tree(&self) -> DirectoryTree {
        let mut t = DirectoryTree::new();
        for (path, e) in &self.entries {
            add(&mut t, path, e);
        }
        t
    }

    /// Every entry whose global policy for `mode` is satisfied by `bags`.
    /// Each local policy is evaluated once and a failing folder prunes
    /// everything below it. An empty tree means nothing is accessible.
    pub fn accessible_subtree(
        &self,
        bags: &[AttributeBag],
        mode: AccessMode,
        ctx: &EvalContext,
    ) -> DirectoryTree {
        let mut tree = DirectoryTree::new();
        // entries iterate in path order, so a folder precedes its contents
        let mut denied: Vec<&VaultPath> = Vec::new();
        for (path, e) in &self.entries {
            if denied.iter().any(|d| path.starts_with(d)) {
                continue;
            }
            let ok = e
                .policy
                .for_mode(mode)
                .is_none_or(|node| !evaluate(node, bags, ctx).is_empty());
            if !ok {
                if path.is_root() {
                    return DirectoryTree::new();
                }
                denied.push(path);
                continue;
            }
            add(&mut tree, path, e);
        }
        tree
    }
}

fn add(tree: &mut DirectoryTree, path: &VaultPath, e: &IndexEntry) {
    if path.is_root() {
        return;
    }
    match e.kind {
        EntryKind::File => tree.insert_file(path, e.size),
        EntryKind::Folder => tree.insert_folder(path),
    };
}

impl PolicySource for VaultIndex {
    fn local_policy(&self, path: &VaultPath) -> Result<Policy, UnknownPath> {
        self.entries
            .get(path)
            .map(|e| e.policy.clone())
            .ok_or_else(|| UnknownPath(path.clone()))
    }
}

#[cfg(test)]
mod tests;
