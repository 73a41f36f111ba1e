//! Credential model.
//!
//! Two kinds of credentials with different visibility:
//!
//! * Component credentials (the shared secret daemons use to authenticate
//!   each other, and the engine superuser password) live in
//!   `<central>/secrets/`, readable by the service identity only.
//! * The user access key is regenerated on every start, pushed into the
//!   engine with the superuser credential, and published at
//!   `<keys_root>/<db>/accesskey` readable by the database's security group.
//!
//! Group ownership is simulated through a sidecar `accesskey.meta.json`;
//! permission bits are real. [`read_as`] applies the usual owner/group/other
//! rule for a simulated identity.

pub mod identity;

pub use identity::{Caller, IdentityData, IdentityTable, UserEntry, SERVICE_IDENTITY};

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use rand::distr::{Alphanumeric, SampleString};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fsutil;

pub const SECRET_LEN: usize = 48;
pub const SECRETS_DIR: &str = "secrets";
pub const SHARED_SECRET_FILE: &str = "shared_secret";
pub const SUPERUSER_FILE: &str = "superuser";
pub const SUPERUSER_NAME: &str = "root";
pub const DB_USER: &str = "dbuser";
const KEY_FILE: &str = "accesskey";
const KEY_META_FILE: &str = "accesskey.meta.json";

#[derive(Debug, Error)]
pub enum SecurityError {
    #[error("secrets for `{0}` are already provisioned")]
    AlreadyProvisioned(String),
    #[error("permission denied")]
    PermissionDenied,
    #[error("database `{0}` has no access key yet")]
    NoKeyYet(String),
    #[error("user `{user}` is not in group `{group}`")]
    UserNotInGroup { user: String, group: String },
    #[error("engine unreachable: {0}")]
    EngineUnreachable(String),
    #[error("superuser authentication failed")]
    SuperuserAuthFailed,
    #[error("security storage error: {0}")]
    Io(#[from] io::Error),
}

/// 48 characters over `[A-Za-z0-9]` from the thread-local CSPRNG.
pub fn generate_secret() -> String {
    Alphanumeric.sample_string(&mut rand::rng(), SECRET_LEN)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SecretPaths {
    pub dir: PathBuf,
    pub shared_secret: PathBuf,
    pub superuser: PathBuf,
}

impl SecretPaths {
    pub fn for_central(central: &Path) -> Self {
        let dir = central.join(SECRETS_DIR);
        SecretPaths {
            shared_secret: dir.join(SHARED_SECRET_FILE),
            superuser: dir.join(SUPERUSER_FILE),
            dir,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SharedSecret {
    pub database: String,
    pub value: String,
    pub stored_at: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SuperuserCredential {
    pub database: String,
    pub username: String,
    pub value: String,
    pub stored_at: PathBuf,
}

/// Read a single-line credential file.
pub fn read_secret_file(path: &Path) -> io::Result<String> {
    Ok(fs::read_to_string(path)?.trim_end().to_string())
}

/// Create the shared secret and superuser credential for a new database.
pub fn provision_secrets(db: &str, central: &Path) -> Result<SecretPaths, SecurityError> {
    let paths = SecretPaths::for_central(central);
    match fs::create_dir(&paths.dir) {
        Ok(()) => {}
        Err(e) if e.kind() == io::ErrorKind::AlreadyExists => {
            return Err(SecurityError::AlreadyProvisioned(db.to_string()))
        }
        Err(e) => return Err(e.into()),
    }
    fsutil::set_mode(&paths.dir, 0o700)?;
    for path in [&paths.shared_secret, &paths.superuser] {
        let value = format!("{}\n", generate_secret());
        fsutil::atomic_write_mode(path, value.as_bytes(), Some(0o600))?;
    }
    Ok(paths)
}

pub fn load_shared_secret(db: &str, central: &Path) -> io::Result<SharedSecret> {
    let p = SecretPaths::for_central(central);
    Ok(SharedSecret {
        database: db.to_string(),
        value: read_secret_file(&p.shared_secret)?,
        stored_at: p.shared_secret,
    })
}

pub fn load_superuser(db: &str, central: &Path) -> io::Result<SuperuserCredential> {
    let p = SecretPaths::for_central(central);
    Ok(SuperuserCredential {
        database: db.to_string(),
        username: SUPERUSER_NAME.to_string(),
        value: read_secret_file(&p.superuser)?,
        stored_at: p.superuser,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyFileMeta {
    pub owner: String,
    pub group: String,
    pub mode: String,
    pub generation: u64,
    pub rotated_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccessKey {
    pub database: String,
    pub username: String,
    pub value: String,
    pub generation: u64,
    pub stored_at: PathBuf,
}

/// Pushes a new password for a database user into a running engine using the
/// superuser credential.
pub trait PasswordSetter {
    fn set_user_password(
        &self,
        superuser: &SuperuserCredential,
        user: &str,
        password: &str,
    ) -> Result<(), SecurityError>;
}

/// The user-visible key area, `<keys_root>/<db>/accesskey`.
#[derive(Debug, Clone)]
pub struct AccessKeyStore {
    root: PathBuf,
}

impl AccessKeyStore {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        AccessKeyStore { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn key_path(&self, db: &str) -> PathBuf {
        self.root.join(db).join(KEY_FILE)
    }

    pub fn meta_path(&self, db: &str) -> PathBuf {
        self.root.join(db).join(KEY_META_FILE)
    }

    pub fn meta(&self, db: &str) -> io::Result<Option<KeyFileMeta>> {
        match fsutil::read_json(&self.meta_path(db)) {
            Ok(m) => Ok(Some(m)),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e),
        }
    }

    pub fn generation(&self, db: &str) -> io::Result<u64> {
        Ok(self.meta(db)?.map(|m| m.generation).unwrap_or(0))
    }

    /// Generate a new key, set it in the engine, then publish it with
    /// group-read permission. The generation advances by exactly one.
    pub fn rotate_access_key(
        &self,
        db: &str,
        group: &str,
        superuser: &SuperuserCredential,
        engine: &dyn PasswordSetter,
    ) -> Result<AccessKey, SecurityError> {
        let value = generate_secret();
        engine.set_user_password(superuser, DB_USER, &value)?;
        let dir = self.root.join(db);
        fs::create_dir_all(&dir)?;
        fsutil::set_mode(&dir, 0o750)?;
        let generation = self.generation(db)? + 1;
        let path = self.key_path(db);
        fsutil::atomic_write_mode(&path, format!("{value}\n").as_bytes(), Some(0o640))?;
        let meta = KeyFileMeta {
            owner: SERVICE_IDENTITY.to_string(),
            group: group.to_string(),
            mode: "0640".to_string(),
            generation,
            rotated_at: Utc::now(),
        };
        fsutil::write_json(&self.meta_path(db), &meta)?;
        Ok(AccessKey {
            database: db.to_string(),
            username: DB_USER.to_string(),
            value,
            generation,
            stored_at: path,
        })
    }

    /// The current key, for a caller in the database's security group.
    pub fn locate_access_key(
        &self,
        db: &str,
        db_group: &str,
        caller: &Caller,
    ) -> Result<AccessKey, SecurityError> {
        if !caller.in_group(db_group) {
            return Err(SecurityError::PermissionDenied);
        }
        let path = self.key_path(db);
        let value = match read_secret_file(&path) {
            Ok(v) => v,
            Err(e) if e.kind() == io::ErrorKind::NotFound => {
                return Err(SecurityError::NoKeyYet(db.to_string()))
            }
            Err(e) => return Err(e.into()),
        };
        Ok(AccessKey {
            database: db.to_string(),
            username: DB_USER.to_string(),
            value,
            generation: self.generation(db)?,
            stored_at: path,
        })
    }

    /// Who the simulated filesystem says owns a path in this area.
    fn acl_for(&self, path: &Path) -> Option<(String, String)> {
        let rel = path.strip_prefix(&self.root).ok()?;
        let db = rel.components().next()?.as_os_str().to_string_lossy().into_owned();
        let meta = self.meta(&db).ok()??;
        Some((meta.owner, meta.group))
    }
}

/// Mode-bit check for a simulated identity. Files inside the key area carry
/// the group from their sidecar; everything else belongs to the service identity.
pub fn may_read(caller: &Caller, path: &Path, keys: Option<&AccessKeyStore>) -> io::Result<bool> {
    let (owner, group) = keys
        .and_then(|k| k.acl_for(path))
        .unwrap_or_else(|| (SERVICE_IDENTITY.to_string(), SERVICE_IDENTITY.to_string()));
    let class_bits = |mode: u32| -> u32 {
        if caller.user == owner {
            (mode >> 6) & 0o7
        } else if caller.in_group(&group) {
            (mode >> 3) & 0o7
        } else {
            mode & 0o7
        }
    };
    if let Some(parent) = path.parent() {
        if class_bits(fsutil::mode_of(parent)?) & 0o1 == 0 {
            return Ok(false);
        }
    }
    Ok(class_bits(fsutil::mode_of(path)?) & 0o4 != 0)
}

/// Read `path` as `caller`, enforcing [`may_read`].
pub fn read_as(caller: &Caller, path: &Path, keys: Option<&AccessKeyStore>) -> Result<Vec<u8>, SecurityError> {
    if !may_read(caller, path, keys)? {
        return Err(SecurityError::PermissionDenied);
    }
    Ok(fs::read(path)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum RevocationState {
    Incomplete,
    Complete,
}

/// Outcome of step one of a revocation. Step two (restart the database so
/// the key is regenerated) is left to the caller.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RevocationPlan {
    pub database: String,
    pub user: String,
    pub group: String,
    pub removed_from_group: bool,
    pub next_step: String,
    /// Key generation current when the user was removed.
    pub key_generation: u64,
}

impl RevocationPlan {
    pub fn state(&self, current_generation: u64) -> RevocationState {
        if current_generation > self.key_generation || current_generation == 0 {
            RevocationState::Complete
        } else {
            RevocationState::Incomplete
        }
    }
}

/// Step one: drop `user` from the database's group.
pub fn revoke_user(
    identities: &IdentityTable,
    keys: &AccessKeyStore,
    db: &str,
    db_group: &str,
    user: &str,
    admin: &Caller,
) -> Result<RevocationPlan, SecurityError> {
    if !admin.admin {
        return Err(SecurityError::PermissionDenied);
    }
    if !identities.remove_from_group(user, db_group)? {
        return Err(SecurityError::UserNotInGroup {
            user: user.to_string(),
            group: db_group.to_string(),
        });
    }
    Ok(RevocationPlan {
        database: db.to_string(),
        user: user.to_string(),
        group: db_group.to_string(),
        removed_from_group: true,
        next_step: format!("restart database `{db}` (db_stop, then db_start) to regenerate its access key"),
        key_generation: keys.generation(db)?,
    })
}
