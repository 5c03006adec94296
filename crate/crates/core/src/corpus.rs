//! Plain-text document sets: the domain specification, the curated papers
//! and the extended corpus.

use std::fmt;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::text::TokenEstimator;

pub const CURATED_MIN: usize = 1;
pub const CURATED_MAX: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorpusRole {
    Specification,
    Curated,
    Extended,
}

impl CorpusRole {
    pub const ALL: [CorpusRole; 3] = [CorpusRole::Specification, CorpusRole::Curated, CorpusRole::Extended];

    pub fn as_str(self) -> &'static str {
        match self {
            CorpusRole::Specification => "specification",
            CorpusRole::Curated => "curated",
            CorpusRole::Extended => "extended",
        }
    }

    /// Directory under the data root, mirroring the stage layout.
    pub fn default_dir(self) -> &'static str {
        match self {
            CorpusRole::Specification => "stage-1",
            CorpusRole::Curated => "stage-2/research-papers",
            CorpusRole::Extended => "stage-3/research-papers",
        }
    }
}

impl fmt::Display for CorpusRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CorpusRole {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "specification" | "spec" => Ok(CorpusRole::Specification),
            "curated" => Ok(CorpusRole::Curated),
            "extended" => Ok(CorpusRole::Extended),
            other => Err(format!("unknown corpus role `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    /// File name without the `.txt` extension.
    pub id: String,
    pub body: String,
    pub origin: PathBuf,
    pub est_tokens: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    pub role: CorpusRole,
    pub docs: Vec<Document>,
}

impl Corpus {
    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    /// Hex SHA-256 over the ordered (id, body) pairs.
    pub fn digest(&self) -> String {
        let mut hasher = Sha256::new();
        for doc in &self.docs {
            hasher.update((doc.id.len() as u64).to_le_bytes());
            hasher.update(doc.id.as_bytes());
            hasher.update((doc.body.len() as u64).to_le_bytes());
            hasher.update(doc.body.as_bytes());
        }
        hex::encode(hasher.finalize())
    }
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("no .txt documents in {0}")]
    EmptyCorpus(PathBuf),
    #[error("curated corpus must hold {CURATED_MIN} to {CURATED_MAX} documents, found {count}")]
    CuratedSizeViolation { count: usize },
    #[error("specification corpus must hold exactly one document, found {count}")]
    SpecificationSize { count: usize },
    #[error("{0} is not valid UTF-8")]
    NonUtf8File(PathBuf),
    #[error("{0} is empty")]
    EmptyDocument(PathBuf),
    #[error("no PDF converter command configured")]
    ConverterMissing,
    #[error("converter failed on {path} ({status})")]
    ConverterFailed { path: PathBuf, status: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

impl CorpusError {
    pub fn code(&self) -> &'static str {
        match self {
            CorpusError::EmptyCorpus(_) => "EmptyCorpus",
            CorpusError::CuratedSizeViolation { .. } => "CuratedSizeViolation",
            CorpusError::SpecificationSize { .. } => "SpecificationSize",
            CorpusError::NonUtf8File(_) => "NonUtf8File",
            CorpusError::EmptyDocument(_) => "EmptyDocument",
            CorpusError::ConverterMissing => "ConverterMissing",
            CorpusError::ConverterFailed { .. } => "ConverterFailed",
            CorpusError::Io { .. } => "Io",
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CorpusError + '_ {
    move |source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Files in `dir` with extension `ext`, sorted by file name bytes.
fn files_with_extension(dir: &Path, ext: &str) -> Result<Vec<PathBuf>, CorpusError> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|e| e == ext))
        .collect();
    files.sort_by(|a, b| a.file_name().cmp(&b.file_name()));
    Ok(files)
}

pub fn load_corpus(dir: &Path, role: CorpusRole, estimator: &dyn TokenEstimator) -> Result<Corpus, CorpusError> {
    let files = files_with_extension(dir, "txt")?;
    if files.is_empty() {
        return Err(CorpusError::EmptyCorpus(dir.to_path_buf()));
    }
    match role {
        CorpusRole::Specification if files.len() != 1 => {
            return Err(CorpusError::SpecificationSize { count: files.len() })
        }
        CorpusRole::Curated if !(CURATED_MIN..=CURATED_MAX).contains(&files.len()) => {
            return Err(CorpusError::CuratedSizeViolation { count: files.len() })
        }
        _ => {}
    }
    let mut docs = Vec::with_capacity(files.len());
    for path in files {
        let bytes = fs::read(&path).map_err(io_err(&path))?;
        let body = String::from_utf8(bytes).map_err(|_| CorpusError::NonUtf8File(path.clone()))?;
        if body.trim().is_empty() {
            return Err(CorpusError::EmptyDocument(path));
        }
        let id = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        docs.push(Document {
            id,
            est_tokens: estimator.estimate(&body),
            body,
            origin: path,
        });
    }
    Ok(Corpus { role, docs })
}

/// Converts every `*.pdf` in `dir` that has no same-stem `.txt` yet.
///
/// `converter_cmd` is split on whitespace; `{input}` and `{output}` in any
/// argument are replaced by the PDF and target paths. If the command does
/// not mention `{output}`, its stdout becomes the text file.
pub fn convert_pdfs(dir: &Path, converter_cmd: &str) -> Result<usize, CorpusError> {
    let template: Vec<&str> = converter_cmd.split_whitespace().collect();
    if template.is_empty() {
        return Err(CorpusError::ConverterMissing);
    }
    let writes_file = template.iter().any(|a| a.contains("{output}"));
    let mut converted = 0;
    for pdf in files_with_extension(dir, "pdf")? {
        let txt = pdf.with_extension("txt");
        if txt.exists() {
            continue;
        }
        let fill = |arg: &str| {
            arg.replace("{input}", &pdf.to_string_lossy())
                .replace("{output}", &txt.to_string_lossy())
        };
        let output = Command::new(fill(template[0]))
            .args(template[1..].iter().map(|a| fill(a)))
            .output()
            .map_err(|e| match e.kind() {
                io::ErrorKind::NotFound => CorpusError::ConverterMissing,
                _ => CorpusError::Io {
                    path: pdf.clone(),
                    source: e,
                },
            })?;
        if !output.status.success() {
            // never leave a half-written text file behind: it would be skipped next time
            if writes_file {
                let _ = fs::remove_file(&txt);
            }
            return Err(CorpusError::ConverterFailed {
                path: pdf,
                status: output.status.to_string(),
            });
        }
        if !writes_file {
            fs::write(&txt, &output.stdout).map_err(io_err(&txt))?;
        } else if !txt.exists() {
            return Err(CorpusError::ConverterFailed {
                path: pdf,
                status: "no output file written".into(),
            });
        }
        tracing::info!(pdf = %pdf.display(), "converted");
        converted += 1;
    }
    Ok(converted)
}
