//! Data migration between central and node-local storage.
//!
//! [`copy_tree`] replicates a directory tree either with a single stream
//! (one file at a time, rsync-style) or with several concurrent file copies
//! (mcp-style). Parallelism is per file; a single huge file gets no speedup.

pub mod bench;

pub use bench::{
    generate_corpus, parse_size, run_benchmark, BenchError, BenchmarkConfig, BenchmarkRow, BenchmarkTable, CSV_HEADER,
};

use std::fmt;
use std::fs;
use std::io::{self, Read};
use std::os::unix::fs::PermissionsExt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use walkdir::WalkDir;

pub const DEFAULT_WORKERS: usize = 3;
const MAX_MISMATCHES: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CopyMode {
    SingleStream,
    MultiStream { workers: usize },
}

impl Default for CopyMode {
    fn default() -> Self {
        CopyMode::MultiStream {
            workers: DEFAULT_WORKERS,
        }
    }
}

impl CopyMode {
    pub fn multi(workers: usize) -> Self {
        CopyMode::MultiStream {
            workers: workers.max(1),
        }
    }

    pub fn workers(self) -> usize {
        match self {
            CopyMode::SingleStream => 1,
            CopyMode::MultiStream { workers } => workers.max(1),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            CopyMode::SingleStream => "single",
            CopyMode::MultiStream { .. } => "multi",
        }
    }
}

impl fmt::Display for CopyMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CopyMode::SingleStream => f.write_str("single"),
            CopyMode::MultiStream { workers } => write!(f, "multi:{workers}"),
        }
    }
}

impl FromStr for CopyMode {
    type Err = String;

    /// `single`, `multi` (3 workers) or `multi:<n>`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "single" | "rsync" => Ok(CopyMode::SingleStream),
            "multi" | "mcp" => Ok(CopyMode::default()),
            other => {
                let n = other
                    .strip_prefix("multi:")
                    .or_else(|| other.strip_prefix("mcp:"))
                    .ok_or_else(|| format!("unknown copy mode `{s}`"))?;
                match n.parse::<usize>() {
                    Ok(w) if w >= 1 => Ok(CopyMode::MultiStream { workers: w }),
                    _ => Err(format!("worker count must be a positive integer in `{s}`")),
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    CentralToLocal,
    LocalToCentral,
}

impl Direction {
    pub fn as_str(self) -> &'static str {
        match self {
            Direction::CentralToLocal => "central_to_local",
            Direction::LocalToCentral => "local_to_central",
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CopyReport {
    pub direction: Option<Direction>,
    pub bytes: u64,
    pub files: u64,
    pub seconds: f64,
    pub mode: CopyMode,
    pub mb_per_sec: f64,
    /// Highest number of file copies observed in flight at once.
    pub peak_in_flight: usize,
}

impl CopyReport {
    pub fn with_direction(mut self, d: Direction) -> Self {
        self.direction = Some(d);
        self
    }
}

/// Decimal megabytes per second, 0 for an instantaneous copy.
pub fn mb_per_sec(bytes: u64, seconds: f64) -> f64 {
    if seconds > 0.0 {
        bytes as f64 / seconds / 1e6
    } else {
        0.0
    }
}

#[derive(Debug, Error)]
pub enum CopyError {
    #[error("source {0} is missing or not a directory")]
    SourceMissing(PathBuf),
    #[error("destination {path} is not writable: {source}")]
    DestinationUnwritable {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{} path(s) failed to copy", .0.len())]
    PartialCopy(Vec<(PathBuf, String)>),
}

enum Item {
    Dir(PathBuf, u32),
    File(PathBuf, u64),
    Symlink(PathBuf, PathBuf),
}

fn scan(src: &Path) -> Result<Vec<Item>, CopyError> {
    let mut items = Vec::new();
    for entry in WalkDir::new(src).min_depth(1).sort_by_file_name() {
        let entry = entry.map_err(|_| CopyError::SourceMissing(src.to_path_buf()))?;
        let rel = entry.path().strip_prefix(src).unwrap().to_path_buf();
        let ft = entry.file_type();
        if ft.is_symlink() {
            let target = fs::read_link(entry.path())
                .map_err(|_| CopyError::SourceMissing(entry.path().to_path_buf()))?;
            items.push(Item::Symlink(rel, target));
        } else if ft.is_dir() {
            let mode = entry
                .metadata()
                .map(|m| m.permissions().mode() & 0o7777)
                .unwrap_or(0o755);
            items.push(Item::Dir(rel, mode));
        } else {
            let len = entry.metadata().map(|m| m.len()).unwrap_or(0);
            items.push(Item::File(rel, len));
        }
    }
    Ok(items)
}

fn copy_one(src: &Path, dst: &Path) -> io::Result<u64> {
    match fs::symlink_metadata(dst) {
        Ok(_) => fs::remove_file(dst)?,
        Err(e) if e.kind() == io::ErrorKind::NotFound => {}
        Err(e) => return Err(e),
    }
    fs::copy(src, dst)
}

/// Replicate `src` into `dst` (content, relative paths, permission bits and
/// symlink targets). `dst` is created if absent; pre-existing extra entries
/// are left alone. On failure the partial destination is left in place.
pub fn copy_tree(src: &Path, dst: &Path, mode: CopyMode) -> Result<CopyReport, CopyError> {
    let meta = fs::metadata(src).map_err(|_| CopyError::SourceMissing(src.to_path_buf()))?;
    if !meta.is_dir() {
        return Err(CopyError::SourceMissing(src.to_path_buf()));
    }
    let started = Instant::now();
    let items = scan(src)?;
    let unwritable = |path: &Path, source: io::Error| CopyError::DestinationUnwritable {
        path: path.to_path_buf(),
        source,
    };
    fs::create_dir_all(dst).map_err(|e| unwritable(dst, e))?;

    let mut failures: Vec<(PathBuf, String)> = Vec::new();
    let mut files: Vec<(&PathBuf, u64)> = Vec::new();
    let mut dirs: Vec<(&PathBuf, u32)> = Vec::new();
    for item in &items {
        match item {
            Item::Dir(rel, mode) => {
                if let Err(e) = fs::create_dir_all(dst.join(rel)) {
                    failures.push((rel.clone(), e.to_string()));
                }
                dirs.push((rel, *mode));
            }
            Item::Symlink(rel, target) => {
                let link = dst.join(rel);
                let _ = fs::remove_file(&link);
                if let Err(e) = std::os::unix::fs::symlink(target, &link) {
                    failures.push((rel.clone(), e.to_string()));
                }
            }
            Item::File(rel, len) => files.push((rel, *len)),
        }
    }

    let workers = mode.workers().min(files.len().max(1));
    let next = AtomicUsize::new(0);
    let in_flight = AtomicUsize::new(0);
    let peak = AtomicUsize::new(0);
    let bytes = AtomicUsize::new(0);
    let file_failures = Mutex::new(Vec::new());
    let work = || loop {
        let i = next.fetch_add(1, Ordering::SeqCst);
        let Some((rel, _)) = files.get(i) else { break };
        let now = in_flight.fetch_add(1, Ordering::SeqCst) + 1;
        peak.fetch_max(now, Ordering::SeqCst);
        match copy_one(&src.join(rel), &dst.join(rel)) {
            Ok(n) => {
                bytes.fetch_add(n as usize, Ordering::SeqCst);
            }
            Err(e) => file_failures
                .lock()
                .unwrap()
                .push(((*rel).clone(), e.to_string())),
        }
        in_flight.fetch_sub(1, Ordering::SeqCst);
    };
    if workers <= 1 {
        work();
    } else {
        std::thread::scope(|s| {
            for _ in 0..workers {
                s.spawn(work);
            }
        });
    }
    failures.extend(file_failures.into_inner().unwrap());

    // Directory modes last, deepest first, so read-only dirs can be populated.
    for (rel, mode) in dirs.iter().rev() {
        if let Err(e) = fs::set_permissions(dst.join(rel), fs::Permissions::from_mode(*mode)) {
            failures.push(((*rel).clone(), e.to_string()));
        }
    }
    if let Err(e) = fs::set_permissions(dst, fs::Permissions::from_mode(meta.permissions().mode()))
    {
        failures.push((PathBuf::new(), e.to_string()));
    }
    if !failures.is_empty() {
        failures.sort();
        return Err(CopyError::PartialCopy(failures));
    }
    let seconds = started.elapsed().as_secs_f64();
    let bytes = bytes.into_inner() as u64;
    Ok(CopyReport {
        direction: None,
        bytes,
        files: files.len() as u64,
        seconds,
        mode,
        mb_per_sec: mb_per_sec(bytes, seconds),
        peak_in_flight: peak.into_inner(),
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mismatch {
    pub path: PathBuf,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub equal: bool,
    pub entries_checked: u64,
    /// At most the first 100 mismatches, in path order.
    pub mismatches: Vec<Mismatch>,
}

#[derive(Debug)]
enum Node {
    Dir(u32),
    File(u32, u64),
    Symlink(PathBuf),
    Unreadable(String),
}

fn index(root: &Path) -> std::collections::BTreeMap<PathBuf, Node> {
    let mut out = std::collections::BTreeMap::new();
    for entry in WalkDir::new(root).min_depth(1) {
        match entry {
            Ok(e) => {
                let rel = e.path().strip_prefix(root).unwrap().to_path_buf();
                let node = match e.path().symlink_metadata() {
                    Ok(m) if m.file_type().is_symlink() => match fs::read_link(e.path()) {
                        Ok(t) => Node::Symlink(t),
                        Err(err) => Node::Unreadable(err.to_string()),
                    },
                    Ok(m) if m.is_dir() => Node::Dir(m.permissions().mode() & 0o7777),
                    Ok(m) => Node::File(m.permissions().mode() & 0o7777, m.len()),
                    Err(err) => Node::Unreadable(err.to_string()),
                };
                out.insert(rel, node);
            }
            Err(err) => {
                let rel = err
                    .path()
                    .and_then(|p| p.strip_prefix(root).ok())
                    .map(Path::to_path_buf)
                    .unwrap_or_default();
                out.insert(rel, Node::Unreadable(err.to_string()));
            }
        }
    }
    out
}

fn same_contents(a: &Path, b: &Path) -> io::Result<bool> {
    let mut fa = fs::File::open(a)?;
    let mut fb = fs::File::open(b)?;
    let mut ba = vec![0u8; 64 * 1024];
    let mut bb = vec![0u8; 64 * 1024];
    loop {
        let na = read_full(&mut fa, &mut ba)?;
        let nb = read_full(&mut fb, &mut bb)?;
        if na != nb || ba[..na] != bb[..nb] {
            return Ok(false);
        }
        if na == 0 {
            return Ok(true);
        }
    }
}

fn read_full(f: &mut fs::File, buf: &mut [u8]) -> io::Result<usize> {
    let mut n = 0;
    while n < buf.len() {
        match f.read(&mut buf[n..])? {
            0 => break,
            k => n += k,
        }
    }
    Ok(n)
}

/// Compare two trees on relative paths, entry types, permission bits, file
/// contents and symlink targets.
pub fn verify_tree(src: &Path, dst: &Path) -> VerificationReport {
    let mut mismatches = Vec::new();
    let mut total_mismatches = 0usize;
    let mut note = |path: &Path, reason: String| {
        total_mismatches += 1;
        if mismatches.len() < MAX_MISMATCHES {
            mismatches.push(Mismatch {
                path: path.to_path_buf(),
                reason,
            });
        }
    };
    for (root, label) in [(src, "source"), (dst, "destination")] {
        if !root.is_dir() {
            note(Path::new(""), format!("{label} root is not a readable directory"));
        }
    }
    let a = index(src);
    let b = index(dst);
    let mut checked = 0u64;
    let mut keys: Vec<&PathBuf> = a.keys().chain(b.keys()).collect();
    keys.sort();
    keys.dedup();
    for rel in keys {
        checked += 1;
        match (a.get(rel), b.get(rel)) {
            (Some(_), None) => note(rel, "missing in destination".into()),
            (None, Some(_)) => note(rel, "extra in destination".into()),
            (Some(Node::Unreadable(e)), _) | (_, Some(Node::Unreadable(e))) => {
                note(rel, format!("unreadable: {e}"))
            }
            (Some(Node::Dir(ma)), Some(Node::Dir(mb))) => {
                if ma != mb {
                    note(rel, format!("mode {ma:o} != {mb:o}"));
                }
            }
            (Some(Node::Symlink(ta)), Some(Node::Symlink(tb))) => {
                if ta != tb {
                    note(rel, "symlink target differs".into());
                }
            }
            (Some(Node::File(ma, la)), Some(Node::File(mb, lb))) => {
                if ma != mb {
                    note(rel, format!("mode {ma:o} != {mb:o}"));
                } else if la != lb {
                    note(rel, format!("size {la} != {lb}"));
                } else {
                    match same_contents(&src.join(rel), &dst.join(rel)) {
                        Ok(true) => {}
                        Ok(false) => note(rel, "content differs".into()),
                        Err(e) => note(rel, format!("unreadable: {e}")),
                    }
                }
            }
            _ => note(rel, "entry type differs".into()),
        }
    }
    VerificationReport {
        equal: total_mismatches == 0,
        entries_checked: checked,
        mismatches,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;
    use std::os::unix::fs::symlink;

    use proptest::prelude::*;
    use sha2::{Digest, Sha256};

    /// Independent oracle: relative path -> (kind, mode, sha256 or link target).
    fn hash_tree(root: &Path) -> BTreeMap<String, (char, u32, String)> {
        fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<String, (char, u32, String)>) {
            for e in fs::read_dir(dir).unwrap() {
                let p = e.unwrap().path();
                let rel = p.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                let m = fs::symlink_metadata(&p).unwrap();
                let mode = m.permissions().mode() & 0o7777;
                if m.file_type().is_symlink() {
                    let t = fs::read_link(&p).unwrap();
                    out.insert(rel, ('l', 0, t.to_string_lossy().into_owned()));
                } else if m.is_dir() {
                    out.insert(rel, ('d', mode, String::new()));
                    walk(root, &p, out);
                } else {
                    let h = hex::encode(Sha256::digest(fs::read(&p).unwrap()));
                    out.insert(rel, ('f', mode, h));
                }
            }
        }
        let mut out = BTreeMap::new();
        walk(root, root, &mut out);
        out
    }

    fn sample_tree(root: &Path) {
        fs::create_dir_all(root.join("a/b")).unwrap();
        fs::write(root.join("top.txt"), b"hello").unwrap();
        fs::write(root.join("a/b/deep.bin"), vec![7u8; 70_000]).unwrap();
        fs::write(root.join("a/exec.sh"), b"#!/bin/sh\n").unwrap();
        fs::set_permissions(root.join("a/exec.sh"), fs::Permissions::from_mode(0o751)).unwrap();
        symlink("../top.txt", root.join("a/link")).unwrap();
        fs::create_dir(root.join("empty")).unwrap();
    }

    #[test]
    fn empty_directory() {
        let d = tempfile::tempdir().unwrap();
        fs::create_dir(d.path().join("src")).unwrap();
        let r = copy_tree(&d.path().join("src"), &d.path().join("dst"), CopyMode::SingleStream)
            .unwrap();
        assert_eq!((r.bytes, r.files), (0, 0));
        assert!(d.path().join("dst").is_dir());
    }

    #[test]
    fn replicas_match_for_every_mode() {
        let d = tempfile::tempdir().unwrap();
        let src = d.path().join("src");
        sample_tree(&src);
        let oracle = hash_tree(&src);
        for (i, mode) in [
            CopyMode::SingleStream,
            CopyMode::multi(1),
            CopyMode::multi(2),
            CopyMode::multi(3),
            CopyMode::multi(8),
        ]
        .into_iter()
        .enumerate()
        {
            let dst = d.path().join(format!("dst{i}"));
            let r = copy_tree(&src, &dst, mode).unwrap();
            assert_eq!(hash_tree(&dst), oracle, "{mode}");
            assert_eq!(r.files, 3);
            assert_eq!(r.bytes, 5 + 70_000 + 10);
            assert!(verify_tree(&src, &dst).equal);
        }
    }

    #[test]
    fn missing_source() {
        let d = tempfile::tempdir().unwrap();
        assert!(matches!(
            copy_tree(&d.path().join("nope"), &d.path().join("x"), CopyMode::SingleStream),
            Err(CopyError::SourceMissing(_))
        ));
    }

    #[test]
    fn unwritable_destination() {
        let d = tempfile::tempdir().unwrap();
        fs::create_dir(d.path().join("src")).unwrap();
        fs::write(d.path().join("file"), b"x").unwrap();
        // parent is a regular file
        assert!(matches!(
            copy_tree(&d.path().join("src"), &d.path().join("file/sub"), CopyMode::SingleStream),
            Err(CopyError::DestinationUnwritable { .. })
        ));
    }

    #[test]
    fn verify_detects_single_byte_flip() {
        let d = tempfile::tempdir().unwrap();
        let src = d.path().join("src");
        sample_tree(&src);
        assert!(verify_tree(&src, &src).equal);
        let dst = d.path().join("dst");
        copy_tree(&src, &dst, CopyMode::default()).unwrap();
        let mut bytes = fs::read(dst.join("a/b/deep.bin")).unwrap();
        bytes[12_345] ^= 1;
        fs::write(dst.join("a/b/deep.bin"), bytes).unwrap();
        let v = verify_tree(&src, &dst);
        assert!(!v.equal);
        assert_eq!(v.mismatches.len(), 1);
        assert_eq!(v.mismatches[0].path, PathBuf::from("a/b/deep.bin"));
    }

    #[test]
    fn verify_reports_mode_and_missing() {
        let d = tempfile::tempdir().unwrap();
        let src = d.path().join("src");
        sample_tree(&src);
        let dst = d.path().join("dst");
        copy_tree(&src, &dst, CopyMode::SingleStream).unwrap();
        fs::set_permissions(dst.join("top.txt"), fs::Permissions::from_mode(0o600)).unwrap();
        fs::remove_file(dst.join("a/link")).unwrap();
        let v = verify_tree(&src, &dst);
        let paths: Vec<_> = v.mismatches.iter().map(|m| m.path.clone()).collect();
        assert_eq!(paths, [PathBuf::from("a/link"), PathBuf::from("top.txt")]);
    }

    #[test]
    fn mismatch_list_is_capped() {
        let d = tempfile::tempdir().unwrap();
        let src = d.path().join("src");
        fs::create_dir(&src).unwrap();
        for i in 0..150 {
            fs::write(src.join(format!("f{i:03}")), b"x").unwrap();
        }
        fs::create_dir(d.path().join("dst")).unwrap();
        let v = verify_tree(&src, &d.path().join("dst"));
        assert!(!v.equal);
        assert_eq!(v.mismatches.len(), 100);
    }

    #[test]
    fn worker_bound_and_single_stream_order() {
        let d = tempfile::tempdir().unwrap();
        let src = d.path().join("src");
        fs::create_dir(&src).unwrap();
        for i in 0..40 {
            fs::write(src.join(format!("f{i:02}")), vec![i as u8; 200_000]).unwrap();
        }
        for k in [1usize, 2, 3, 8] {
            let r = copy_tree(&src, &d.path().join(format!("d{k}")), CopyMode::multi(k)).unwrap();
            assert!(r.peak_in_flight <= k, "{k}: {}", r.peak_in_flight);
            assert!(r.peak_in_flight >= 1);
        }
        let r = copy_tree(&src, &d.path().join("s"), CopyMode::SingleStream).unwrap();
        assert_eq!(r.peak_in_flight, 1);
    }

    #[test]
    fn report_bandwidth_recomputes() {
        let d = tempfile::tempdir().unwrap();
        let src = d.path().join("src");
        sample_tree(&src);
        let r = copy_tree(&src, &d.path().join("dst"), CopyMode::default()).unwrap();
        let again = mb_per_sec(r.bytes, r.seconds);
        assert!((r.mb_per_sec - again).abs() <= again * 0.001);
    }

    #[test]
    fn parse_modes() {
        assert_eq!("single".parse::<CopyMode>().unwrap(), CopyMode::SingleStream);
        assert_eq!("multi".parse::<CopyMode>().unwrap(), CopyMode::multi(3));
        assert_eq!("multi:8".parse::<CopyMode>().unwrap(), CopyMode::multi(8));
        assert!("multi:0".parse::<CopyMode>().is_err());
        assert!("fast".parse::<CopyMode>().is_err());
    }

    fn build_random_tree(root: &Path, layout: &[(u8, u8, usize, u8)]) {
        fs::create_dir_all(root).unwrap();
        for (i, (dir, sub, len, fill)) in layout.iter().enumerate() {
            let dir = root.join(format!("d{}", dir % 4)).join(format!("s{}", sub % 3));
            fs::create_dir_all(&dir).unwrap();
            let data: Vec<u8> = (0..*len).map(|j| fill.wrapping_add(j as u8)).collect();
            fs::write(dir.join(format!("f{i}")), data).unwrap();
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn copy_is_mode_independent(layout in proptest::collection::vec((any::<u8>(), any::<u8>(), 0usize..5000, any::<u8>()), 0..60)) {
            let d = tempfile::tempdir().unwrap();
            let src = d.path().join("src");
            build_random_tree(&src, &layout);
            let oracle = hash_tree(&src);
            for (i, mode) in [CopyMode::SingleStream, CopyMode::multi(1), CopyMode::multi(2), CopyMode::multi(3), CopyMode::multi(8)].into_iter().enumerate() {
                let dst = d.path().join(format!("dst{i}"));
                copy_tree(&src, &dst, mode).unwrap();
                prop_assert_eq!(&hash_tree(&dst), &oracle);
                prop_assert!(verify_tree(&src, &dst).equal);
            }
        }
    }
}
