use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// The three workflow stages.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum StageId {
    Generate,
    Refine,
    Finalize,
}

impl StageId {
    pub const ALL: [StageId; 3] = [StageId::Generate, StageId::Refine, StageId::Finalize];

    pub fn as_str(self) -> &'static str {
        match self {
            StageId::Generate => "Generate",
            StageId::Refine => "Refine",
            StageId::Finalize => "Finalize",
        }
    }

    /// 1-based stage number.
    pub fn number(self) -> u8 {
        match self {
            StageId::Generate => 1,
            StageId::Refine => 2,
            StageId::Finalize => 3,
        }
    }

    pub fn template_file_name(self) -> String {
        format!("prompt_template{}.txt", self.number())
    }

    /// Slots the stage's user layout must reference.
    pub fn slots(self) -> &'static [Slot] {
        match self {
            StageId::Generate => &[Slot::DomainSpecification],
            StageId::Refine | StageId::Finalize => &[Slot::PrevSchema, Slot::SciPaper, Slot::ExpertFeedback],
        }
    }
}

impl fmt::Display for StageId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for StageId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "generate" | "1" | "stage1" => Ok(StageId::Generate),
            "refine" | "2" | "stage2" => Ok(StageId::Refine),
            "finalize" | "3" | "stage3" => Ok(StageId::Finalize),
            _ => Err(format!("unknown stage `{s}`")),
        }
    }
}

/// Named placeholders in a user-prompt layout, written `{Name}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Slot {
    DomainSpecification,
    PrevSchema,
    SciPaper,
    ExpertFeedback,
}

impl Slot {
    pub const ALL: [Slot; 4] = [
        Slot::DomainSpecification,
        Slot::PrevSchema,
        Slot::SciPaper,
        Slot::ExpertFeedback,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Slot::DomainSpecification => "DomainSpecification",
            Slot::PrevSchema => "PrevSchema",
            Slot::SciPaper => "SciPaper",
            Slot::ExpertFeedback => "ExpertFeedback",
        }
    }

    pub fn placeholder(self) -> String {
        format!("{{{}}}", self.name())
    }
}

/// Section labels of the rendered system prompt, in order.
pub const SECTION_LABELS: [&str; 4] = ["## Role", "## Task", "## Input Format", "## Output Format"];

const MARKERS: [&str; 5] = ["[ROLE]", "[TASK]", "[INPUT-FORMAT]", "[OUTPUT-FORMAT]", "[USER]"];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StageTemplate {
    pub role: String,
    pub task: String,
    pub input_format: String,
    pub output_format: String,
    /// User prompt with `{Slot}` placeholders.
    pub user_layout: String,
}

#[derive(Debug, Error)]
pub enum TemplateError {
    #[error("{stage} template: missing section {marker}")]
    MissingSection { stage: StageId, marker: &'static str },
    #[error("{stage} template: section {marker} is empty")]
    EmptySection { stage: StageId, marker: &'static str },
    #[error("{stage} template: section {marker} appears more than once")]
    DuplicateSection { stage: StageId, marker: &'static str },
    #[error("{stage} template: user layout must reference {{{slot}}} exactly once")]
    SlotCount { stage: StageId, slot: &'static str },
    #[error("{stage} template: slot {{{slot}}} does not belong to this stage")]
    ForeignSlot { stage: StageId, slot: &'static str },
    #[error("{stage} template: section text contains the reserved label `{label}`")]
    ReservedLabel { stage: StageId, label: &'static str },
    #[error("reading template {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl StageTemplate {
    /// Parses the marker-delimited template file format. Text before the
    /// first marker is ignored.
    pub fn parse(stage: StageId, text: &str) -> Result<Self, TemplateError> {
        let mut sections: [Option<String>; 5] = Default::default();
        let mut current: Option<usize> = None;
        let mut buf = String::new();

        let mut flush = |current: Option<usize>, buf: &mut String| -> Result<(), TemplateError> {
            if let Some(idx) = current {
                if sections[idx].is_some() {
                    return Err(TemplateError::DuplicateSection {
                        stage,
                        marker: MARKERS[idx],
                    });
                }
                sections[idx] = Some(buf.trim().to_string());
            }
            buf.clear();
            Ok(())
        };

        for line in text.lines() {
            if let Some(idx) = MARKERS.iter().position(|m| line.trim() == *m) {
                flush(current, &mut buf)?;
                current = Some(idx);
            } else {
                buf.push_str(line);
                buf.push('\n');
            }
        }
        flush(current, &mut buf)?;

        let mut take = |idx: usize| -> Result<String, TemplateError> {
            let marker = MARKERS[idx];
            let text = sections[idx]
                .take()
                .ok_or(TemplateError::MissingSection { stage, marker })?;
            if text.is_empty() {
                return Err(TemplateError::EmptySection { stage, marker });
            }
            Ok(text)
        };
        let template = StageTemplate {
            role: take(0)?,
            task: take(1)?,
            input_format: take(2)?,
            output_format: take(3)?,
            user_layout: take(4)?,
        };
        template.validate(stage)?;
        Ok(template)
    }

    pub fn validate(&self, stage: StageId) -> Result<(), TemplateError> {
        for slot in Slot::ALL {
            let count = self.user_layout.matches(&slot.placeholder()).count();
            let expected = stage.slots().contains(&slot);
            if expected && count != 1 {
                return Err(TemplateError::SlotCount {
                    stage,
                    slot: slot.name(),
                });
            }
            if !expected && count > 0 {
                return Err(TemplateError::ForeignSlot {
                    stage,
                    slot: slot.name(),
                });
            }
        }
        for text in [&self.role, &self.task, &self.input_format, &self.output_format] {
            for label in SECTION_LABELS {
                if text.contains(label) {
                    return Err(TemplateError::ReservedLabel { stage, label });
                }
            }
        }
        Ok(())
    }

    /// Renders back to the file format accepted by [`StageTemplate::parse`].
    pub fn to_file_text(&self) -> String {
        let bodies = [
            &self.role,
            &self.task,
            &self.input_format,
            &self.output_format,
            &self.user_layout,
        ];
        let mut out = String::new();
        for (marker, body) in MARKERS.iter().zip(bodies) {
            out.push_str(marker);
            out.push('\n');
            out.push_str(body);
            out.push_str("\n\n");
        }
        out.truncate(out.trim_end().len());
        out.push('\n');
        out
    }
}

const DEFAULT_FILES: [&str; 3] = [
    include_str!("../../templates/prompt_template1.txt"),
    include_str!("../../templates/prompt_template2.txt"),
    include_str!("../../templates/prompt_template3.txt"),
];

/// Templates for all three stages.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemplateSet {
    pub generate: StageTemplate,
    pub refine: StageTemplate,
    pub finalize: StageTemplate,
}

impl Default for TemplateSet {
    fn default() -> Self {
        let parse = |stage: StageId| {
            StageTemplate::parse(stage, DEFAULT_FILES[stage.number() as usize - 1])
                .expect("bundled templates are valid")
        };
        Self {
            generate: parse(StageId::Generate),
            refine: parse(StageId::Refine),
            finalize: parse(StageId::Finalize),
        }
    }
}

impl TemplateSet {
    pub fn get(&self, stage: StageId) -> &StageTemplate {
        match stage {
            StageId::Generate => &self.generate,
            StageId::Refine => &self.refine,
            StageId::Finalize => &self.finalize,
        }
    }

    /// Loads `prompt_template{1,2,3}.txt` from `dir`, falling back to the
    /// bundled default for any file that does not exist.
    pub fn load_dir(dir: &Path) -> Result<Self, TemplateError> {
        let defaults = Self::default();
        let load = |stage: StageId| -> Result<StageTemplate, TemplateError> {
            let path = dir.join(stage.template_file_name());
            match fs::read_to_string(&path) {
                Ok(text) => StageTemplate::parse(stage, &text),
                Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(defaults.get(stage).clone()),
                Err(source) => Err(TemplateError::Io { path, source }),
            }
        };
        Ok(Self {
            generate: load(StageId::Generate)?,
            refine: load(StageId::Refine)?,
            finalize: load(StageId::Finalize)?,
        })
    }

    /// Writes the bundled default files into `dir`, leaving existing files alone.
    pub fn write_defaults(dir: &Path) -> std::io::Result<Vec<PathBuf>> {
        fs::create_dir_all(dir)?;
        let mut written = Vec::new();
        for stage in StageId::ALL {
            let path = dir.join(stage.template_file_name());
            if !path.exists() {
                fs::write(&path, DEFAULT_FILES[stage.number() as usize - 1])?;
                written.push(path);
            }
        }
        Ok(written)
    }

    /// Hex SHA-256 over the three templates in file form.
    pub fn digest(&self) -> String {
        let mut hasher = Sha256::new();
        for stage in StageId::ALL {
            hasher.update(self.get(stage).to_file_text().as_bytes());
            hasher.update([0u8]);
        }
        hex::encode(hasher.finalize())
    }
}
