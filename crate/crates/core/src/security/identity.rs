use std::collections::{BTreeMap, BTreeSet};
use std::io;
use std::path::PathBuf;
use std::sync::RwLock;

use serde::{Deserialize, Serialize};

use crate::fsutil;

/// The dedicated account that runs prologs, epilogs and database daemons.
pub const SERVICE_IDENTITY: &str = "dbservice";

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserEntry {
    #[serde(default)]
    pub groups: BTreeSet<String>,
    #[serde(default)]
    pub admin: bool,
}

/// On-disk shape: `{"users": {name: {"groups": [...], "admin": bool}}}`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IdentityData {
    pub users: BTreeMap<String, UserEntry>,
}

impl IdentityData {
    pub fn with_user(mut self, name: &str, groups: &[&str], admin: bool) -> Self {
        self.users.insert(
            name.to_string(),
            UserEntry {
                groups: groups.iter().map(|g| g.to_string()).collect(),
                admin,
            },
        );
        self
    }
}

/// A resolved requester: user name, current groups and admin flag.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Caller {
    pub user: String,
    pub groups: BTreeSet<String>,
    pub admin: bool,
}

impl Caller {
    pub fn in_group(&self, group: &str) -> bool {
        self.groups.contains(group)
    }

    pub fn service() -> Caller {
        Caller {
            user: SERVICE_IDENTITY.to_string(),
            groups: [SERVICE_IDENTITY.to_string()].into(),
            admin: false,
        }
    }
}

/// Simulated user/group table. Membership is looked up per request so group
/// removals take effect immediately.
pub struct IdentityTable {
    path: Option<PathBuf>,
    data: RwLock<IdentityData>,
}

impl IdentityTable {
    pub fn in_memory(data: IdentityData) -> Self {
        IdentityTable {
            path: None,
            data: RwLock::new(data),
        }
    }

    pub fn open(path: impl Into<PathBuf>) -> io::Result<Self> {
        let path = path.into();
        let data = if path.exists() {
            fsutil::read_json(&path)?
        } else {
            IdentityData::default()
        };
        Ok(IdentityTable {
            path: Some(path),
            data: RwLock::new(data),
        })
    }

    pub fn caller(&self, user: &str) -> Option<Caller> {
        if user == SERVICE_IDENTITY {
            return Some(Caller::service());
        }
        let data = self.data.read().unwrap();
        data.users.get(user).map(|u| Caller {
            user: user.to_string(),
            groups: u.groups.clone(),
            admin: u.admin,
        })
    }

    pub fn snapshot(&self) -> IdentityData {
        self.data.read().unwrap().clone()
    }

    fn mutate<R>(&self, f: impl FnOnce(&mut IdentityData) -> R) -> io::Result<R> {
        let mut data = self.data.write().unwrap();
        let mut next = data.clone();
        let r = f(&mut next);
        if let Some(path) = &self.path {
            fsutil::write_json(path, &next)?;
        }
        *data = next;
        Ok(r)
    }

    pub fn upsert_user(&self, name: &str, entry: UserEntry) -> io::Result<()> {
        self.mutate(|d| {
            d.users.insert(name.to_string(), entry);
        })
    }

    /// Remove `user` from `group`. Returns whether they were a member.
    pub fn remove_from_group(&self, user: &str, group: &str) -> io::Result<bool> {
        self.mutate(|d| {
            d.users
                .get_mut(user)
                .map(|u| u.groups.remove(group))
                .unwrap_or(false)
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_shape_and_persistence() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("identities.json");
        std::fs::write(
            &path,
            r#"{"users": {"alice": {"groups": ["secgroup"], "admin": false},
                          "root": {"groups": [], "admin": true}}}"#,
        )
        .unwrap();
        let t = IdentityTable::open(&path).unwrap();
        let alice = t.caller("alice").unwrap();
        assert!(alice.in_group("secgroup") && !alice.admin);
        assert!(t.caller("root").unwrap().admin);
        assert!(t.caller("mallory").is_none());
        assert!(t.remove_from_group("alice", "secgroup").unwrap());
        assert!(!t.remove_from_group("alice", "secgroup").unwrap());
        let reopened = IdentityTable::open(&path).unwrap();
        assert!(!reopened.caller("alice").unwrap().in_group("secgroup"));
    }
}
