//! Run directories, digests and the on-disk schemas.

use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

pub const SCHEMA_VERSION: u32 = 1;
pub const LOCK_NAME: &str = ".crossdiff.lock";
pub const MANIFEST_NAME: &str = "manifest.json";
pub const TRAJECTORY_HEADER: [&str; 8] = [
    "step",
    "time",
    "species",
    "cell_index",
    "x_center",
    "density",
    "velocity",
    "pressure",
];

/// An output directory owned by one invocation for its lifetime.
#[derive(Debug)]
pub struct RunDir {
    root: PathBuf,
    lock: PathBuf,
    files: Vec<FileEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    /// Path relative to the run directory, `/`-separated.
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

pub fn sha256_hex(data: &[u8]) -> String {
    format!("{:x}", Sha256::digest(data))
}

impl RunDir {
    /// Creates `root` if needed and takes its lockfile.
    pub fn open(root: &Path) -> io::Result<RunDir> {
        fs::create_dir_all(root)?;
        let lock = root.join(LOCK_NAME);
        let mut f = OpenOptions::new().write(true).create_new(true).open(&lock).map_err(|e| {
            if e.kind() == io::ErrorKind::AlreadyExists {
                io::Error::new(
                    e.kind(),
                    format!("{} is locked by another invocation ({} exists)", root.display(), lock.display()),
                )
            } else {
                e
            }
        })?;
        writeln!(f, "{}", std::process::id())?;
        Ok(RunDir {
            root: root.to_path_buf(),
            lock,
            files: Vec::new(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Writes `data` to `rel` and records its digest.
    pub fn write(&mut self, rel: &str, data: &[u8]) -> io::Result<()> {
        let path = self.root.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(&path, data)?;
        self.files.retain(|f| f.path != rel);
        self.files.push(FileEntry {
            path: rel.to_string(),
            sha256: sha256_hex(data),
            bytes: data.len() as u64,
        });
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, rel: &str, value: &T) -> io::Result<()> {
        let mut text = serde_json::to_vec_pretty(value).map_err(io::Error::other)?;
        text.push(b'\n');
        self.write(rel, &text)
    }

    pub fn files(&self) -> &[FileEntry] {
        &self.files
    }

    /// Writes the manifest (not itself listed) with the recorded files.
    pub fn finish(&mut self, manifest: &mut Manifest) -> io::Result<()> {
        manifest.files = self.files.clone();
        let mut text = serde_json::to_vec_pretty(manifest).map_err(io::Error::other)?;
        text.push(b'\n');
        fs::write(self.root.join(MANIFEST_NAME), text)
    }
}

impl Drop for RunDir {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.lock);
    }
}

/// `x` if finite, else `None` (serialized as `null`).
pub fn finite(x: f64) -> Option<f64> {
    x.is_finite().then_some(x)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    /// Hard checks decide the exit status.
    pub hard: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tolerance: Option<f64>,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub detail: String,
}

impl Check {
    pub fn hard(name: &str, passed: bool) -> Self {
        Check {
            name: name.into(),
            passed,
            hard: true,
            value: None,
            tolerance: None,
            detail: String::new(),
        }
    }

    pub fn soft(name: &str, passed: bool) -> Self {
        Check {
            hard: false,
            ..Check::hard(name, passed)
        }
    }

    /// Hard check `value ≤ tolerance`.
    pub fn at_most(name: &str, value: f64, tolerance: f64) -> Self {
        Check {
            value: finite(value),
            tolerance: Some(tolerance),
            ..Check::hard(name, value <= tolerance)
        }
    }

    pub fn with_detail(mut self, detail: impl Into<String>) -> Self {
        self.detail = detail.into();
        self
    }

    pub fn soften(mut self) -> Self {
        self.hard = false;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Passed,
    HardCheckFailed,
    SolverFailed,
}

/// Marker withdrawing any continuum reading of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoClaim {
    pub continuum_interpretation: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepSummary {
    pub step: usize,
    pub time: f64,
    pub masses: [f64; 2],
    pub total_energy: Option<f64>,
    pub w2sq: [Option<f64>; 2],
    pub optimality_residual: Option<f64>,
    pub inner_iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub software: String,
    pub version: String,
    pub command: String,
    pub spec: Value,
    pub started_at: String,
    pub finished_at: String,
    pub status: Status,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub no_claim: Option<NoClaim>,
    #[serde(default)]
    pub summary: Value,
    #[serde(default)]
    pub steps: Vec<StepSummary>,
    pub checks: Vec<Check>,
    pub files: Vec<FileEntry>,
}

impl Manifest {
    pub fn new(command: &str, spec: Value) -> Self {
        Manifest {
            schema_version: SCHEMA_VERSION,
            software: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            spec,
            started_at: now(),
            finished_at: String::new(),
            status: Status::Passed,
            error: None,
            no_claim: None,
            summary: Value::Null,
            steps: Vec::new(),
            checks: Vec::new(),
            files: Vec::new(),
        }
    }

    /// Sets the finish time and derives the status from the hard checks
    /// unless a solver failure was already recorded.
    pub fn close(&mut self) {
        self.finished_at = now();
        if self.status != Status::SolverFailed {
            self.status = if self.checks.iter().all(|c| c.passed || !c.hard) {
                Status::Passed
            } else {
                Status::HardCheckFailed
            };
        }
    }

    pub fn read(path: &Path) -> io::Result<Manifest> {
        let text = fs::read(path)?;
        serde_json::from_slice(&text).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))
    }
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

/// One step of `diagnostics.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepDiagnostics {
    pub step: usize,
    pub time: f64,
    #[serde(rename = "F")]
    pub f: Option<f64>,
    #[serde(rename = "G")]
    pub g: Option<f64>,
    pub total_energy: Option<f64>,
    pub w2sq_1: Option<f64>,
    pub w2sq_2: Option<f64>,
    pub optimality_residual: Option<f64>,
    pub overlap: Option<f64>,
    pub ordering_gap: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub complementarity_residual: Option<f64>,
    pub patch_deviation_1: Option<f64>,
    pub patch_deviation_2: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundEntry {
    pub name: String,
    pub lhs: Option<f64>,
    pub rhs: Option<f64>,
    pub tolerance: Option<f64>,
    pub satisfied: bool,
    pub margin: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsFile {
    pub schema_version: u32,
    pub steps: Vec<StepDiagnostics>,
    pub bounds: Vec<BoundEntry>,
    pub checks: Vec<Check>,
}

/// Formats a float for CSV: shortest round-trip form, empty if absent.
pub fn csv_num(x: Option<f64>) -> String {
    match x {
        Some(v) if v.is_finite() => format!("{v}"),
        _ => String::new(),
    }
}

pub fn csv_bytes(header: &[&str], rows: &[Vec<String>]) -> io::Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).map_err(io::Error::other)?;
    for r in rows {
        w.write_record(r).map_err(io::Error::other)?;
    }
    w.into_inner().map_err(|e| io::Error::other(e.to_string()))
}

/// Verifies the digest of every file a manifest lists.
pub fn verify_digests(root: &Path, manifest: &Manifest) -> Vec<Check> {
    manifest
        .files
        .iter()
        .map(|f| {
            let name = format!("digest {}", f.path);
            match fs::read(root.join(&f.path)) {
                Ok(data) => {
                    let got = sha256_hex(&data);
                    let c = Check::hard(&name, got == f.sha256);
                    if got == f.sha256 {
                        c
                    } else {
                        c.with_detail(format!("expected {}, found {got}", f.sha256))
                    }
                }
                Err(e) => Check::hard(&name, false).with_detail(e.to_string()),
            }
        })
        .collect()
}

/// Opens a file for reading with the path in the error message.
pub fn open_in(root: &Path, rel: &str) -> io::Result<File> {
    File::open(root.join(rel)).map_err(|e| io::Error::new(e.kind(), format!("{}: {e}", root.join(rel).display())))
}
