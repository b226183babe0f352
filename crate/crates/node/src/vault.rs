//! Encrypted on-disk vault.
//!
//! Layout under the vault directory:
//!
//! ```text
//! vault.json                key envelope: KDF salt, iterations, key check
//! root.acl.json             access-control file of the root folder
//! data/<path>               file content, one encrypted blob per file
//! data/<path>.acl.json      access-control file of that file or folder
//! secrets/<name>.bin        encrypted node secrets (the wallet)
//! tmp/                      staging area for atomic writes
//! ```
//!
//! Every blob is encrypted the moment it is written, with a fresh IV, and
//! authenticated together with its vault path. Access-control files are
//! JSON wrappers around an encrypted `{"policy": ..., "version": n}`.
//! Locking throws the derived keys and the decrypted index away; nothing on
//! disk changes. File and folder names are not hidden.

use std::collections::HashMap;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::RwLock;

use rand::rngs::OsRng;
use rand::RngCore;
use serde::{Deserialize, Serialize};

use datavault_core::atrest::{AtRestError, KeyEnvelope, VaultKeys, BLOB_OVERHEAD};
use datavault_core::encoding::{b64url, b64url_decode};
use datavault_core::index::{EntryKind, IndexEntry, IndexError, VaultIndex};
use datavault_core::policy::{
    check_access, AccessDecision, AccessMode, AttributeBag, EvalContext, Policy, PolicyNode, PolicySlot,
};
use datavault_core::token::DirectoryTree;
use datavault_core::{VaultPath, MAX_FILE_SIZE};

const ENVELOPE_FILE: &str = "vault.json";
const ROOT_ACL_FILE: &str = "root.acl.json";
const DATA_DIR: &str = "data";
const SECRETS_DIR: &str = "secrets";
const TMP_DIR: &str = "tmp";
pub const ACL_SUFFIX: &str = ".acl.json";

#[derive(Debug, thiserror::Error)]
pub enum VaultError {
    #[error("directory is not empty")]
    DirectoryNotEmpty,
    #[error("no vault at this location")]
    NotAVault,
    #[error("vault envelope is corrupt")]
    CorruptEnvelope,
    #[error("wrong password")]
    WrongPassword,
    #[error("vault is locked")]
    Locked,
    #[error("vault is already unlocked")]
    AlreadyUnlocked,
    #[error("file exceeds the {MAX_FILE_SIZE}-byte cap")]
    FileTooLarge,
    #[error("unknown path {0}")]
    UnknownPath(VaultPath),
    #[error("invalid path: {0}")]
    InvalidPath(String),
    #[error("{0}")]
    Index(#[from] IndexError),
    #[error("integrity check failed for {0}")]
    Integrity(String),
    #[error("io error: {0}")]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccessControlFile {
    pub policy: Policy,
    pub version: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct SealedSidecar {
    format: u32,
    sealed: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnlockReport {
    pub files: usize,
    pub folders: usize,
    /// Files whose ciphertext failed its integrity check.
    pub corrupt: Vec<VaultPath>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ListEntry {
    pub name: String,
    pub path: VaultPath,
    pub kind: EntryKind,
    pub size: u64,
}

struct Unlocked {
    keys: VaultKeys,
    index: VaultIndex,
    versions: HashMap<VaultPath, u64>,
    corrupt: Vec<VaultPath>,
}

/// A vault directory. All mutations go through one write lock; reads share
/// a read lock.
pub struct Vault {
    dir: PathBuf,
    envelope: KeyEnvelope,
    state: RwLock<Option<Unlocked>>,
}

impl std::fmt::Debug for Vault {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Vault")
            .field("dir", &self.dir)
            .field("unlocked", &self.is_unlocked())
            .finish()
    }
}

fn file_context(path: &VaultPath) -> Vec<u8> {
    format!("file:{}", path.as_str()).into_bytes()
}

fn acl_context(path: &VaultPath) -> Vec<u8> {
    format!("acl:{}", path.as_str()).into_bytes()
}

fn secret_context(name: &str) -> Vec<u8> {
    format!("secret:{name}").into_bytes()
}

/// Rejects names the on-disk layout reserves.
pub fn check_user_path(path: &VaultPath) -> Result<(), VaultError> {
    if path.components().any(|c| c.ends_with(ACL_SUFFIX)) {
        return Err(VaultError::InvalidPath(format!("names ending in {ACL_SUFFIX} are reserved")));
    }
    Ok(())
}

impl Vault {
    /// Creates a vault in `dir` (absent or empty) and leaves it locked.
    pub fn init(dir: &Path, password: &str, iterations: u32) -> Result<Vault, VaultError> {
        if dir.exists() && fs::read_dir(dir)?.next().is_some() {
            return Err(VaultError::DirectoryNotEmpty);
        }
        for sub in [DATA_DIR, SECRETS_DIR, TMP_DIR] {
            fs::create_dir_all(dir.join(sub))?;
        }
        let (envelope, keys) = KeyEnvelope::create(password.as_bytes(), iterations, &mut OsRng);
        let vault = Vault {
            dir: dir.to_path_buf(),
            envelope,
            state: RwLock::new(None),
        };
        vault.write_atomic(&dir.join(ENVELOPE_FILE), &serde_json::to_vec_pretty(&vault.envelope).expect("serializable"))?;
        let root = AccessControlFile {
            policy: Policy::default(),
            version: 0,
        };
        vault.write_acl(&keys, &VaultPath::root(), &root)?;
        Ok(vault)
    }

    pub fn open(dir: &Path) -> Result<Vault, VaultError> {
        let bytes = match fs::read(dir.join(ENVELOPE_FILE)) {
            Ok(b) => b,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Err(VaultError::NotAVault),
            Err(e) => return Err(e.into()),
        };
        let envelope: KeyEnvelope = serde_json::from_slice(&bytes).map_err(|_| VaultError::CorruptEnvelope)?;
        if envelope.version != 1 || envelope.salt.is_empty() || envelope.iterations == 0 {
            return Err(VaultError::CorruptEnvelope);
        }
        for sub in [DATA_DIR, SECRETS_DIR, TMP_DIR] {
            fs::create_dir_all(dir.join(sub))?;
        }
        Ok(Vault {
            dir: dir.to_path_buf(),
            envelope,
            state: RwLock::new(None),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn salt(&self) -> &[u8] {
        &self.envelope.salt
    }

    pub fn is_unlocked(&self) -> bool {
        self.state.read().expect("vault lock poisoned").is_some()
    }

    /// Derives the keys, rebuilds the index from disk and checks every
    /// file's integrity tag. Corrupt files are reported, not fatal;
    /// corrupt access-control files are, since their policy is unknown.
    pub fn unlock(&self, password: &str) -> Result<UnlockReport, VaultError> {
        let mut state = self.state.write().expect("vault lock poisoned");
        if state.is_some() {
            return Err(VaultError::AlreadyUnlocked);
        }
        let keys = self.envelope.unlock(password.as_bytes()).map_err(|e| match e {
            AtRestError::WrongPassword => VaultError::WrongPassword,
            _ => VaultError::CorruptEnvelope,
        })?;
        let mut index = VaultIndex::new();
        let mut versions = HashMap::new();
        let mut corrupt = Vec::new();
        let root_acl = self.read_acl(&keys, &VaultPath::root())?;
        if let Some(acl) = root_acl {
            index.set_policy(&VaultPath::root(), acl.policy)?;
            versions.insert(VaultPath::root(), acl.version);
        }
        self.scan(&keys, &self.dir.join(DATA_DIR), &VaultPath::root(), &mut index, &mut versions, &mut corrupt)?;
        let files = index.entries().filter(|(_, e)| e.kind == EntryKind::File).count();
        let report = UnlockReport {
            files,
            folders: index.len() - files - 1,
            corrupt: corrupt.clone(),
        };
        *state = Some(Unlocked {
            keys,
            index,
            versions,
            corrupt,
        });
        Ok(report)
    }

    fn scan(
        &self,
        keys: &VaultKeys,
        dir: &Path,
        base: &VaultPath,
        index: &mut VaultIndex,
        versions: &mut HashMap<VaultPath, u64>,
        corrupt: &mut Vec<VaultPath>,
    ) -> Result<(), VaultError> {
        let mut entries: Vec<_> = fs::read_dir(dir)?.collect::<Result<_, _>>()?;
        entries.sort_by_key(|e| e.file_name());
        for entry in entries {
            let name = entry.file_name();
            let Some(name) = name.to_str() else { continue };
            if name.ends_with(ACL_SUFFIX) {
                continue;
            }
            let path = base
                .join(name)
                .map_err(|_| VaultError::Integrity(format!("unexpected name {name:?} in vault data")))?;
            let ty = entry.file_type()?;
            if ty.is_dir() {
                index.insert_folder(&path)?;
                self.scan(keys, &entry.path(), &path, index, versions, corrupt)?;
            } else if ty.is_file() {
                let blob = fs::read(entry.path())?;
                if keys.check(&file_context(&path), &blob).is_err() {
                    corrupt.push(path.clone());
                }
                index.insert_file(&path, blob.len().saturating_sub(BLOB_OVERHEAD) as u64)?;
            } else {
                continue;
            }
            if let Some(acl) = self.read_acl(keys, &path)? {
                index.set_policy(&path, acl.policy)?;
                versions.insert(path, acl.version);
            }
        }
        Ok(())
    }

    /// Discards the derived keys and decrypted metadata.
    pub fn lock(&self) -> Result<(), VaultError> {
        let mut state = self.state.write().expect("vault lock poisoned");
        if state.take().is_none() {
            return Err(VaultError::Locked);
        }
        Ok(())
    }

    fn with_read<T>(&self, f: impl FnOnce(&Unlocked) -> Result<T, VaultError>) -> Result<T, VaultError> {
        let state = self.state.read().expect("vault lock poisoned");
        f(state.as_ref().ok_or(VaultError::Locked)?)
    }

    fn with_write<T>(&self, f: impl FnOnce(&mut Unlocked) -> Result<T, VaultError>) -> Result<T, VaultError> {
        let mut state = self.state.write().expect("vault lock poisoned");
        f(state.as_mut().ok_or(VaultError::Locked)?)
    }

    fn data_path(&self, path: &VaultPath) -> PathBuf {
        let mut p = self.dir.join(DATA_DIR);
        for c in path.components() {
            p.push(c);
        }
        p
    }

    fn acl_path(&self, path: &VaultPath) -> PathBuf {
        if path.is_root() {
            return self.dir.join(ROOT_ACL_FILE);
        }
        let data = self.data_path(path);
        let mut name = data.file_name().expect("non-root path has a name").to_os_string();
        name.push(ACL_SUFFIX);
        data.with_file_name(name)
    }

    fn write_atomic(&self, target: &Path, bytes: &[u8]) -> io::Result<()> {
        let tmp = self.dir.join(TMP_DIR).join(format!("{:016x}", OsRng.next_u64()));
        {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(bytes)?;
            f.sync_all()?;
        }
        fs::rename(&tmp, target)
    }

    fn write_acl(&self, keys: &VaultKeys, path: &VaultPath, acl: &AccessControlFile) -> Result<(), VaultError> {
        let plain = serde_json::to_vec(acl).expect("serializable");
        let sidecar = SealedSidecar {
            format: 1,
            sealed: b64url(&keys.encrypt(&acl_context(path), &plain, &mut OsRng)),
        };
        self.write_atomic(&self.acl_path(path), &serde_json::to_vec(&sidecar).expect("serializable"))?;
        Ok(())
    }

    fn read_acl(&self, keys: &VaultKeys, path: &VaultPath) -> Result<Option<AccessControlFile>, VaultError> {
        let bytes = match fs::read(self.acl_path(path)) {
            Ok(b) => b,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(e.into()),
        };
        let bad = || VaultError::Integrity(format!("access-control file of {path}"));
        let sidecar: SealedSidecar = serde_json::from_slice(&bytes).map_err(|_| bad())?;
        let blob = b64url_decode(&sidecar.sealed).ok_or_else(bad)?;
        let plain = keys.decrypt(&acl_context(path), &blob).map_err(|_| bad())?;
        serde_json::from_slice(&plain).map(Some).map_err(|_| bad())
    }

    fn create_folders(&self, st: &mut Unlocked, path: &VaultPath) -> Result<(), VaultError> {
        for p in path.lineage().into_iter().filter(|p| !p.is_root()) {
            match st.index.get(&p) {
                Some(e) if e.kind == EntryKind::File => return Err(IndexError::NotAFolder(p).into()),
                Some(_) => {}
                None => {
                    fs::create_dir_all(self.data_path(&p))?;
                    st.index.insert_folder(&p)?;
                    let acl = AccessControlFile {
                        policy: Policy::default(),
                        version: 0,
                    };
                    self.write_acl(&st.keys, &p, &acl)?;
                    st.versions.insert(p, 0);
                }
            }
        }
        Ok(())
    }

    /// Stores a file, creating missing folders. A new entry gets an empty
    /// access-control file; an existing one keeps its policy.
    pub fn put(&self, path: &VaultPath, bytes: &[u8]) -> Result<(), VaultError> {
        if bytes.len() > MAX_FILE_SIZE {
            return Err(VaultError::FileTooLarge);
        }
        if path.is_root() {
            return Err(VaultError::InvalidPath("cannot write to the root folder".into()));
        }
        check_user_path(path)?;
        self.with_write(|st| {
            if matches!(st.index.get(path), Some(e) if e.kind == EntryKind::Folder) {
                return Err(IndexError::KindConflict(path.clone()).into());
            }
            self.create_folders(st, &path.parent().expect("non-root"))?;
            let blob = st.keys.encrypt(&file_context(path), bytes, &mut OsRng);
            self.write_atomic(&self.data_path(path), &blob)?;
            let is_new = st.index.get(path).is_none();
            st.index.insert_file(path, bytes.len() as u64)?;
            st.corrupt.retain(|p| p != path);
            if is_new {
                let acl = AccessControlFile {
                    policy: Policy::default(),
                    version: 0,
                };
                self.write_acl(&st.keys, path, &acl)?;
                st.versions.insert(path.clone(), 0);
            }
            Ok(())
        })
    }

    pub fn mkdir(&self, path: &VaultPath) -> Result<(), VaultError> {
        check_user_path(path)?;
        self.with_write(|st| self.create_folders(st, path))
    }

    pub fn get(&self, path: &VaultPath) -> Result<Vec<u8>, VaultError> {
        self.with_read(|st| {
            match st.index.get(path) {
                Some(e) if e.kind == EntryKind::File => {}
                _ => return Err(VaultError::UnknownPath(path.clone())),
            }
            let blob = fs::read(self.data_path(path))?;
            st.keys
                .decrypt(&file_context(path), &blob)
                .map_err(|_| VaultError::Integrity(path.to_string()))
        })
    }

    pub fn entry(&self, path: &VaultPath) -> Result<IndexEntry, VaultError> {
        self.with_read(|st| st.index.get(path).cloned().ok_or_else(|| VaultError::UnknownPath(path.clone())))
    }

    pub fn list(&self, path: &VaultPath) -> Result<Vec<ListEntry>, VaultError> {
        self.with_read(|st| {
            match st.index.get(path) {
                Some(e) if e.kind == EntryKind::Folder => {}
                Some(_) => return Err(IndexError::NotAFolder(path.clone()).into()),
                None => return Err(VaultError::UnknownPath(path.clone())),
            }
            Ok(st
                .index
                .children(path)
                .map(|(p, e)| ListEntry {
                    name: p.file_name().unwrap_or_default().to_string(),
                    path: p.clone(),
                    kind: e.kind,
                    size: e.size,
                })
                .collect())
        })
    }

    pub fn tree(&self) -> Result<DirectoryTree, VaultError> {
        self.with_read(|st| Ok(st.index.tree()))
    }

    /// Deletes a file, or a folder with everything in it.
    pub fn delete(&self, path: &VaultPath) -> Result<Vec<VaultPath>, VaultError> {
        self.with_write(|st| {
            let kind = st
                .index
                .get(path)
                .map(|e| e.kind)
                .ok_or_else(|| VaultError::UnknownPath(path.clone()))?;
            let removed = st.index.remove(path)?;
            match kind {
                EntryKind::File => fs::remove_file(self.data_path(path))?,
                EntryKind::Folder => fs::remove_dir_all(self.data_path(path))?,
            }
            match fs::remove_file(self.acl_path(path)) {
                Err(e) if e.kind() != io::ErrorKind::NotFound => return Err(e.into()),
                _ => {}
            }
            for p in &removed {
                st.versions.remove(p);
            }
            st.corrupt.retain(|p| !p.starts_with(path));
            Ok(removed)
        })
    }

    pub fn get_policy(&self, path: &VaultPath) -> Result<AccessControlFile, VaultError> {
        self.with_read(|st| {
            let e = st.index.get(path).ok_or_else(|| VaultError::UnknownPath(path.clone()))?;
            Ok(AccessControlFile {
                policy: e.policy.clone(),
                version: st.versions.get(path).copied().unwrap_or(0),
            })
        })
    }

    /// Replaces one slot of an entry's policy; returns the new version.
    pub fn set_policy(&self, path: &VaultPath, slot: PolicySlot, node: Option<PolicyNode>) -> Result<u64, VaultError> {
        self.update_policy(path, |p| p.set(slot, node))
    }

    /// Replaces an entry's whole policy; returns the new version.
    pub fn replace_policy(&self, path: &VaultPath, policy: Policy) -> Result<u64, VaultError> {
        self.update_policy(path, |p| *p = policy)
    }

    fn update_policy(&self, path: &VaultPath, f: impl FnOnce(&mut Policy)) -> Result<u64, VaultError> {
        self.with_write(|st| {
            let mut policy = st
                .index
                .get(path)
                .ok_or_else(|| VaultError::UnknownPath(path.clone()))?
                .policy
                .clone();
            f(&mut policy);
            let version = st.versions.get(path).copied().unwrap_or(0) + 1;
            let acl = AccessControlFile { policy, version };
            self.write_acl(&st.keys, path, &acl)?;
            st.index.set_policy(path, acl.policy)?;
            st.versions.insert(path.clone(), version);
            Ok(version)
        })
    }

    pub fn accessible_subtree(&self, bags: &[AttributeBag], mode: AccessMode, ctx: &EvalContext) -> Result<DirectoryTree, VaultError> {
        self.with_read(|st| Ok(st.index.accessible_subtree(bags, mode, ctx)))
    }

    pub fn check_access(
        &self,
        path: &VaultPath,
        mode: AccessMode,
        bags: &[AttributeBag],
        ctx: &EvalContext,
    ) -> Result<AccessDecision, VaultError> {
        self.with_read(|st| check_access(path, mode, bags, ctx, &st.index).map_err(|e| VaultError::UnknownPath(e.0)))
    }

    pub fn corrupt_files(&self) -> Result<Vec<VaultPath>, VaultError> {
        self.with_read(|st| Ok(st.corrupt.clone()))
    }

    pub fn write_secret(&self, name: &str, bytes: &[u8]) -> Result<(), VaultError> {
        self.with_read(|st| {
            let blob = st.keys.encrypt(&secret_context(name), bytes, &mut OsRng);
            self.write_atomic(&self.dir.join(SECRETS_DIR).join(format!("{name}.bin")), &blob)?;
            Ok(())
        })
    }

    pub fn read_secret(&self, name: &str) -> Result<Option<Vec<u8>>, VaultError> {
        self.with_read(|st| {
            let blob = match fs::read(self.dir.join(SECRETS_DIR).join(format!("{name}.bin"))) {
                Ok(b) => b,
                Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(None),
                Err(e) => return Err(e.into()),
            };
            st.keys
                .decrypt(&secret_context(name), &blob)
                .map(Some)
                .map_err(|_| VaultError::Integrity(format!("secret {name}")))
        })
    }
}
