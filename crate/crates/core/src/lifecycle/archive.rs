//! Checkpoint archives: `<central>/checkpoints/<id>.tar` plus a `<id>.json`
//! sidecar. Archives are ustar with pax path extensions, entries in byte
//! order of their relative path, and zeroed mtime and ownership, so equal
//! trees give byte-identical archives. `checkpoints/` and `secrets/` are
//! never archived.

use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tar::{Archive, Builder, EntryType, Header};
use walkdir::WalkDir;

use super::{compact_timestamp, LifecycleError, Result};
use crate::engines::EngineKind;
use crate::fsutil;
use crate::security::SECRETS_DIR;

pub const CHECKPOINTS_DIR: &str = "checkpoints";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckpointId {
    pub id: String,
    pub archive_path: PathBuf,
    pub created_by: String,
    pub created_at: DateTime<Utc>,
    pub size_bytes: u64,
    pub sha256: String,
}

pub type CheckpointMeta = CheckpointId;

fn checkpoints_dir(central: &Path) -> PathBuf {
    central.join(CHECKPOINTS_DIR)
}

/// A fresh id not yet used under `central`.
pub(super) fn new_checkpoint_id(central: &Path) -> String {
    loop {
        let id = format!("checkpoint-{}", compact_timestamp(Utc::now()));
        if !checkpoints_dir(central).join(format!("{id}.tar")).exists() {
            return id;
        }
        std::thread::sleep(std::time::Duration::from_millis(2));
    }
}

fn valid_id(id: &str) -> bool {
    id.strip_prefix("checkpoint-").is_some_and(|ts| {
        !ts.is_empty() && ts.bytes().all(|b| b.is_ascii_digit() || b == b'T' || b == b'Z' || b == b'.')
    })
}

/// Relative paths to archive, in byte order.
fn archived_paths(central: &Path) -> io::Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    let walker = WalkDir::new(central).min_depth(1).into_iter().filter_entry(|e| {
        !(e.depth() == 1 && (e.file_name() == CHECKPOINTS_DIR || e.file_name() == SECRETS_DIR))
    });
    for e in walker {
        let e = e.map_err(io::Error::other)?;
        out.push(e.path().strip_prefix(central).unwrap().to_path_buf());
    }
    out.sort_by(|a, b| a.as_os_str().as_encoded_bytes().cmp(b.as_os_str().as_encoded_bytes()));
    Ok(out)
}

/// Write a deterministic archive of `central` to `out`.
pub fn build_archive(central: &Path, out: impl Write) -> io::Result<()> {
    let mut b = Builder::new(out);
    for rel in archived_paths(central)? {
        let full = central.join(&rel);
        let meta = fs::symlink_metadata(&full)?;
        let mut h = Header::new_ustar();
        h.set_mtime(0);
        h.set_uid(0);
        h.set_gid(0);
        let mut name = rel.to_string_lossy().into_owned();
        let ft = meta.file_type();
        if ft.is_dir() {
            name.push('/');
            h.set_entry_type(EntryType::Directory);
            h.set_mode(0o755);
            h.set_size(0);
        } else if ft.is_symlink() {
            h.set_entry_type(EntryType::Symlink);
            h.set_mode(0o777);
            h.set_size(0);
            h.set_link_name(fs::read_link(&full)?)?;
        } else {
            h.set_entry_type(EntryType::Regular);
            h.set_mode(std::os::unix::fs::PermissionsExt::mode(&meta.permissions()) & 0o777);
            h.set_size(meta.len());
        }
        if h.set_path(&name).is_err() {
            b.append_pax_extensions([("path", name.as_bytes())])?;
            h.set_path("././@PaxPath")?;
        }
        h.set_cksum();
        if ft.is_file() {
            b.append(&h, BufReader::new(File::open(&full)?))?;
        } else {
            b.append(&h, io::empty())?;
        }
    }
    b.into_inner()?.flush()
}

pub fn sha256_file(path: &Path) -> io::Result<String> {
    let mut f = BufReader::new(File::open(path)?);
    let mut h = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf)?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(hex::encode(h.finalize()))
}

pub(super) fn write_checkpoint(central: &Path, id: &str, created_by: &str) -> Result<CheckpointId> {
    let failed = |e: io::Error| LifecycleError::ArchiveFailed(e.to_string());
    let dir = checkpoints_dir(central);
    fs::create_dir_all(&dir).map_err(failed)?;
    fsutil::set_mode(&dir, 0o700).map_err(failed)?;
    let tmp = dir.join(format!(".{id}.tar.tmp"));
    let path = dir.join(format!("{id}.tar"));
    let build = || -> io::Result<()> {
        let f = File::create(&tmp)?;
        fsutil::set_mode(&tmp, 0o600)?;
        let mut w = BufWriter::new(f);
        build_archive(central, &mut w)?;
        w.into_inner().map_err(|e| e.into_error())?.sync_all()?;
        fs::rename(&tmp, &path)
    };
    if let Err(e) = build() {
        let _ = fs::remove_file(&tmp);
        return Err(failed(e));
    }
    let meta = CheckpointId {
        id: id.to_string(),
        archive_path: path.clone(),
        created_by: created_by.to_string(),
        created_at: Utc::now(),
        size_bytes: fs::metadata(&path).map_err(failed)?.len(),
        sha256: sha256_file(&path).map_err(failed)?,
    };
    let sidecar = dir.join(format!("{id}.json"));
    fsutil::write_json(&sidecar, &meta).map_err(failed)?;
    fsutil::set_mode(&sidecar, 0o600).map_err(failed)?;
    Ok(meta)
}

pub(super) fn list_checkpoints(central: &Path) -> io::Result<Vec<CheckpointId>> {
    let dir = checkpoints_dir(central);
    let mut out = Vec::new();
    let entries = match fs::read_dir(&dir) {
        Ok(e) => e,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(out),
        Err(e) => return Err(e),
    };
    for e in entries {
        let p = e?.path();
        if p.extension().and_then(|x| x.to_str()) == Some("json") {
            if let Ok(m) = fsutil::read_json::<CheckpointId>(&p) {
                out.push(m);
            }
        }
    }
    out.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(out)
}

/// Replace the engine's data subtrees in `central` with the archived ones.
/// On any archive problem the central folder is left untouched.
pub(super) fn restore_checkpoint(central: &Path, kind: EngineKind, id: &str) -> Result<()> {
    if !valid_id(id) {
        return Err(LifecycleError::CheckpointNotFound(id.to_string()));
    }
    let dir = checkpoints_dir(central);
    let tar_path = dir.join(format!("{id}.tar"));
    if !tar_path.is_file() {
        return Err(LifecycleError::CheckpointNotFound(id.to_string()));
    }
    let corrupt = |m: String| LifecycleError::ArchiveCorrupt(m);
    if let Ok(meta) = fsutil::read_json::<CheckpointId>(&dir.join(format!("{id}.json"))) {
        let actual = sha256_file(&tar_path)?;
        if actual != meta.sha256 {
            return Err(corrupt(format!("checksum mismatch for {id}")));
        }
    }
    let staging = central.join(format!(".restore-{}", uuid::Uuid::new_v4()));
    let unpack = || -> Result<()> {
        fs::create_dir(&staging)?;
        let mut a = Archive::new(BufReader::new(File::open(&tar_path)?));
        a.set_preserve_mtime(false);
        a.unpack(&staging).map_err(|e| corrupt(e.to_string()))?;
        for sub in kind.data_subtrees() {
            if !staging.join(sub).is_dir() {
                return Err(corrupt(format!("archive lacks `{sub}`")));
            }
        }
        Ok(())
    };
    if let Err(e) = unpack() {
        let _ = fsutil::remove_tree(&staging);
        return Err(e);
    }
    let old = staging.join(".previous");
    fs::create_dir(&old)?;
    let mut moved: Vec<&str> = Vec::new();
    let mut swap = || -> io::Result<()> {
        for sub in kind.data_subtrees() {
            if central.join(sub).exists() {
                fs::rename(central.join(sub), old.join(sub))?;
            }
            moved.push(sub);
            fs::rename(staging.join(sub), central.join(sub))?;
        }
        Ok(())
    };
    let r = swap();
    if let Err(e) = r {
        // Put back whatever was moved aside.
        for sub in moved {
            if old.join(sub).exists() {
                let _ = fsutil::remove_tree(&central.join(sub));
                let _ = fs::rename(old.join(sub), central.join(sub));
            }
        }
        let _ = fsutil::remove_tree(&staging);
        return Err(e.into());
    }
    fsutil::remove_tree(&staging)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tree(root: &Path) {
        fs::create_dir_all(root.join("zookeeper")).unwrap();
        fs::create_dir_all(root.join("hdfs/part-0")).unwrap();
        fs::create_dir_all(root.join("secrets")).unwrap();
        fs::write(root.join("zookeeper/manifest.json"), "{}").unwrap();
        fs::write(root.join("hdfs/part-0/tablet-00.jsonl"), "{\"k\":\"a\",\"v\":\"1\"}\n").unwrap();
        fs::write(root.join("secrets/shared_secret"), "s3cret").unwrap();
        fs::write(root.join("status.json"), "{}").unwrap();
        let deep = root.join("hdfs/part-0").join("d".repeat(90)).join("e".repeat(90));
        fs::create_dir_all(&deep).unwrap();
        fs::write(deep.join("f"), "deep").unwrap();
    }

    fn entry_names(bytes: &[u8]) -> Vec<String> {
        let mut a = Archive::new(bytes);
        a.entries()
            .unwrap()
            .map(|e| e.unwrap().path().unwrap().to_string_lossy().into_owned())
            .collect()
    }

    #[test]
    fn deterministic_and_sorted() {
        let d = tempfile::tempdir().unwrap();
        let (a, b) = (d.path().join("a"), d.path().join("b"));
        tree(&a);
        tree(&b);
        let (mut x, mut y) = (Vec::new(), Vec::new());
        build_archive(&a, &mut x).unwrap();
        build_archive(&b, &mut y).unwrap();
        assert_eq!(x, y);
        let names = entry_names(&x);
        let mut sorted = names.clone();
        sorted.sort();
        assert_eq!(names.iter().map(|n| n.trim_end_matches('/')).collect::<Vec<_>>(),
                   sorted.iter().map(|n| n.trim_end_matches('/')).collect::<Vec<_>>());
        assert!(names.iter().all(|n| !n.starts_with("secrets") && !n.starts_with("checkpoints")));
        assert!(names.iter().any(|n| n.len() > 180), "long path carried by pax header");
    }

    #[test]
    fn checkpoint_restore_round_trip_and_corruption() {
        let d = tempfile::tempdir().unwrap();
        let c = d.path().join("db");
        tree(&c);
        let cp = write_checkpoint(&c, "checkpoint-20240101T000000.000Z", "alice").unwrap();
        assert_eq!(fsutil::mode_of(&cp.archive_path).unwrap(), 0o600);
        assert_eq!(fsutil::mode_of(&c.join("checkpoints")).unwrap(), 0o700);
        assert_eq!(list_checkpoints(&c).unwrap(), vec![cp.clone()]);

        fs::write(c.join("hdfs/part-0/tablet-00.jsonl"), "changed").unwrap();
        fs::write(c.join("hdfs/part-0/extra"), "x").unwrap();
        restore_checkpoint(&c, EngineKind::ToyKv, &cp.id).unwrap();
        assert_eq!(
            fs::read_to_string(c.join("hdfs/part-0/tablet-00.jsonl")).unwrap(),
            "{\"k\":\"a\",\"v\":\"1\"}\n"
        );
        assert!(!c.join("hdfs/part-0/extra").exists());
        assert_eq!(fs::read_to_string(c.join("secrets/shared_secret")).unwrap(), "s3cret");

        // Truncate: checksum catches it; drop the sidecar and unpack itself fails.
        let bytes = fs::read(&cp.archive_path).unwrap();
        fs::write(&cp.archive_path, &bytes[..bytes.len() / 2 + 100]).unwrap();
        fs::write(c.join("hdfs/part-0/tablet-00.jsonl"), "now").unwrap();
        assert!(matches!(
            restore_checkpoint(&c, EngineKind::ToyKv, &cp.id),
            Err(LifecycleError::ArchiveCorrupt(_))
        ));
        fs::remove_file(c.join("checkpoints").join(format!("{}.json", cp.id))).unwrap();
        assert!(matches!(
            restore_checkpoint(&c, EngineKind::ToyKv, &cp.id),
            Err(LifecycleError::ArchiveCorrupt(_))
        ));
        assert_eq!(fs::read_to_string(c.join("hdfs/part-0/tablet-00.jsonl")).unwrap(), "now");
        assert!(fs::read_dir(&c).unwrap().all(|e| !e.unwrap().file_name().to_string_lossy().starts_with(".restore")));

        assert!(matches!(
            restore_checkpoint(&c, EngineKind::ToyKv, "../etc"),
            Err(LifecycleError::CheckpointNotFound(_))
        ));
        assert!(matches!(
            restore_checkpoint(&c, EngineKind::ToyKv, "checkpoint-19990101T000000.000Z"),
            Err(LifecycleError::CheckpointNotFound(_))
        ));
    }
}
