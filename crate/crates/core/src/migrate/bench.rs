//! Copy benchmark: time each (direction, size, mode) over synthetic corpora
//! of 1 MiB pseudo-random files and report median timings.

use std::ffi::CString;
use std::fmt::Write as _;
use std::fs;
use std::io::{self, Write};
use std::os::unix::ffi::OsStrExt;
use std::path::{Path, PathBuf};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{copy_tree, mb_per_sec, CopyError, CopyMode, Direction};

pub const CSV_HEADER: &str = "direction,mode,workers,bytes_per_node,files,seconds,mb_per_sec";
const FILE_SIZE: u64 = 1 << 20;

#[derive(Debug, Clone)]
pub struct BenchmarkConfig {
    pub sizes_per_node: Vec<u64>,
    pub modes: Vec<CopyMode>,
    pub directions: Vec<Direction>,
    pub trials: u32,
    /// Scratch area holding both the "central" and "local" sides.
    pub scratch: PathBuf,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkRow {
    pub direction: Direction,
    pub mode: CopyMode,
    pub bytes_per_node: u64,
    pub files: u64,
    pub seconds: f64,
    pub mb_per_sec: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkTable {
    pub rows: Vec<BenchmarkRow>,
}

impl BenchmarkTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{:.6},{:.3}",
                r.direction,
                r.mode.label(),
                r.mode.workers(),
                r.bytes_per_node,
                r.files,
                r.seconds,
                r.mb_per_sec
            );
        }
        out
    }

    pub fn find(&self, direction: Direction, mode: CopyMode, bytes: u64) -> Option<&BenchmarkRow> {
        self.rows
            .iter()
            .find(|r| r.direction == direction && r.mode == mode && r.bytes_per_node == bytes)
    }
}

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("scratch space has {available} bytes free, {needed} required")]
    InsufficientScratch { needed: u64, available: u64 },
    #[error("benchmark needs at least one size, mode, direction and trial")]
    EmptyMatrix,
    #[error(transparent)]
    Copy(#[from] CopyError),
    #[error("benchmark i/o error: {0}")]
    Io(#[from] io::Error),
}

/// Parse sizes like `64MiB`, `1GiB`, `512KiB`, `100MB` or plain bytes.
pub fn parse_size(s: &str) -> Result<u64, String> {
    let s = s.trim();
    let split = s.find(|c: char| !c.is_ascii_digit()).unwrap_or(s.len());
    let (num, unit) = s.split_at(split);
    let n: u64 = num.parse().map_err(|_| format!("bad size `{s}`"))?;
    let mult: u64 = match unit.trim().to_ascii_lowercase().as_str() {
        "" | "b" => 1,
        "k" | "kib" => 1 << 10,
        "m" | "mib" => 1 << 20,
        "g" | "gib" => 1 << 30,
        "kb" => 1_000,
        "mb" => 1_000_000,
        "gb" => 1_000_000_000,
        _ => return Err(format!("bad size unit in `{s}`")),
    };
    n.checked_mul(mult).ok_or_else(|| format!("size `{s}` overflows"))
}

fn available_bytes(path: &Path) -> io::Result<u64> {
    let c = CString::new(path.as_os_str().as_bytes()).map_err(io::Error::other)?;
    // SAFETY: `c` is a valid NUL-terminated path and `st` is a properly sized out-parameter.
    unsafe {
        let mut st: libc::statvfs = std::mem::zeroed();
        if libc::statvfs(c.as_ptr(), &mut st) != 0 {
            return Err(io::Error::last_os_error());
        }
        Ok(st.f_bavail as u64 * st.f_frsize as u64)
    }
}

/// Write `size` bytes as 1 MiB files of seeded pseudo-random content.
pub fn generate_corpus(dir: &Path, size: u64, seed: u64) -> io::Result<u64> {
    fs::create_dir_all(dir)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut buf = vec![0u8; FILE_SIZE as usize];
    let mut remaining = size;
    let mut files = 0u64;
    while remaining > 0 {
        let n = remaining.min(FILE_SIZE) as usize;
        rng.fill_bytes(&mut buf[..n]);
        let mut f = fs::File::create(dir.join(format!("chunk-{files:06}.dat")))?;
        f.write_all(&buf[..n])?;
        remaining -= n as u64;
        files += 1;
    }
    Ok(files)
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(|a, b| a.total_cmp(b));
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        (xs[n / 2 - 1] + xs[n / 2]) / 2.0
    }
}

/// Run the benchmark matrix. Peak scratch usage is two copies of the largest dataset.
pub fn run_benchmark(cfg: &BenchmarkConfig) -> Result<BenchmarkTable, BenchError> {
    if cfg.sizes_per_node.is_empty()
        || cfg.modes.is_empty()
        || cfg.directions.is_empty()
        || cfg.trials == 0
    {
        return Err(BenchError::EmptyMatrix);
    }
    fs::create_dir_all(&cfg.scratch)?;
    let max = *cfg.sizes_per_node.iter().max().unwrap();
    let needed = max.saturating_mul(2);
    let available = available_bytes(&cfg.scratch)?;
    if available < needed {
        return Err(BenchError::InsufficientScratch { needed, available });
    }
    let central = cfg.scratch.join("central");
    let local = cfg.scratch.join("local");
    let mut table = BenchmarkTable::default();
    for &size in &cfg.sizes_per_node {
        let corpus_central = central.join(format!("db-{size}"));
        let corpus_local = local.join(format!("db-{size}"));
        crate::fsutil::remove_tree(&corpus_central)?;
        crate::fsutil::remove_tree(&corpus_local)?;
        let files = generate_corpus(&corpus_central, size, cfg.seed ^ size)?;
        let mut corpus = (corpus_central.clone(), Direction::CentralToLocal);
        let ordered: Vec<Direction> = [Direction::CentralToLocal, Direction::LocalToCentral]
            .into_iter()
            .filter(|d| cfg.directions.contains(d))
            .collect();
        for direction in ordered {
            if direction != corpus.1 {
                // Move the dataset to the other side so it is the copy source.
                fs::create_dir_all(&local)?;
                fs::rename(&corpus.0, &corpus_local)?;
                corpus = (corpus_local.clone(), direction);
            }
            let target_root = match direction {
                Direction::CentralToLocal => &local,
                Direction::LocalToCentral => &central,
            };
            for &mode in &cfg.modes {
                let mut times = Vec::with_capacity(cfg.trials as usize);
                for t in 0..cfg.trials {
                    let dst = target_root.join(format!("copy-{size}-{}-{t}", mode.workers()));
                    crate::fsutil::remove_tree(&dst)?;
                    let report = copy_tree(&corpus.0, &dst, mode)?;
                    times.push(report.seconds);
                    crate::fsutil::remove_tree(&dst)?;
                }
                let seconds = median(times);
                table.rows.push(BenchmarkRow {
                    direction,
                    mode,
                    bytes_per_node: size,
                    files,
                    seconds,
                    mb_per_sec: mb_per_sec(size, seconds),
                });
            }
        }
        crate::fsutil::remove_tree(&corpus_central)?;
        crate::fsutil::remove_tree(&corpus_local)?;
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sizes() {
        assert_eq!(parse_size("64MiB").unwrap(), 64 << 20);
        assert_eq!(parse_size("1GiB").unwrap(), 1 << 30);
        assert_eq!(parse_size("100MB").unwrap(), 100_000_000);
        assert_eq!(parse_size("4096").unwrap(), 4096);
        assert!(parse_size("12XB").is_err());
        assert!(parse_size("MiB").is_err());
    }

    #[test]
    fn corpus_is_reproducible() {
        let d = tempfile::tempdir().unwrap();
        let n = generate_corpus(&d.path().join("a"), (2 << 20) + 10, 7).unwrap();
        generate_corpus(&d.path().join("b"), (2 << 20) + 10, 7).unwrap();
        assert_eq!(n, 3);
        assert!(super::super::verify_tree(&d.path().join("a"), &d.path().join("b")).equal);
        assert_eq!(
            fs::metadata(d.path().join("a/chunk-000002.dat")).unwrap().len(),
            10
        );
    }

    #[test]
    fn smoke_single_row_and_csv() {
        let d = tempfile::tempdir().unwrap();
        let table = run_benchmark(&BenchmarkConfig {
            sizes_per_node: vec![4 << 20],
            modes: vec![CopyMode::SingleStream],
            directions: vec![Direction::CentralToLocal],
            trials: 1,
            scratch: d.path().to_path_buf(),
            seed: 1,
        })
        .unwrap();
        assert_eq!(table.rows.len(), 1);
        assert!(table.rows[0].seconds > 0.0);
        assert_eq!(table.rows[0].files, 4);
        let csv = table.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some(CSV_HEADER));
        assert!(lines.next().unwrap().starts_with("central_to_local,single,1,4194304,4,"));
    }

    #[test]
    fn full_cross_product() {
        let d = tempfile::tempdir().unwrap();
        let table = run_benchmark(&BenchmarkConfig {
            sizes_per_node: vec![1 << 20, 2 << 20],
            modes: vec![CopyMode::SingleStream, CopyMode::multi(3)],
            directions: vec![Direction::CentralToLocal, Direction::LocalToCentral],
            trials: 1,
            scratch: d.path().to_path_buf(),
            seed: 1,
        })
        .unwrap();
        assert_eq!(table.rows.len(), 8);
        for size in [1 << 20, 2 << 20] {
            for dir in [Direction::CentralToLocal, Direction::LocalToCentral] {
                for mode in [CopyMode::SingleStream, CopyMode::multi(3)] {
                    assert!(table.find(dir, mode, size).is_some());
                }
            }
        }
    }

    #[test]
    fn insufficient_scratch() {
        let d = tempfile::tempdir().unwrap();
        let err = run_benchmark(&BenchmarkConfig {
            sizes_per_node: vec![u64::MAX / 4],
            modes: vec![CopyMode::SingleStream],
            directions: vec![Direction::CentralToLocal],
            trials: 1,
            scratch: d.path().to_path_buf(),
            seed: 1,
        })
        .unwrap_err();
        assert!(matches!(err, BenchError::InsufficientScratch { .. }));
    }
}
