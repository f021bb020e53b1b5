//! JSON-lines dataset manifests.
//!
//! One object per line:
//!
//! ```text
//! {"path": "audio/a.wav", "task": "asc", "split": "train", "labels": 2}
//! {"path": "audio/b.wav", "task": "ust", "split": "test", "labels": [1, 0, 0, 1]}
//! {"path": "audio/c.wav", "task": "asd", "split": "test", "labels": 1, "domain": "target", "condition": "anomaly"}
//! ```
//!
//! Relative paths resolve against the manifest's directory. Unknown fields are ignored.

use std::path::{Path, PathBuf};

use serde::Deserialize;
use serde_json::{json, Value};

use super::{Domain, Split};
use crate::task::Task;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Labels {
    Scene(usize),
    Tags(Vec<bool>),
    Machine {
        section: usize,
        domain: Domain,
        anomalous: bool,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledClip {
    pub path: PathBuf,
    pub task: Task,
    pub split: Split,
    pub labels: Labels,
}

impl LabeledClip {
    pub fn to_json(&self) -> String {
        let mut v = json!({
            "path": self.path.to_string_lossy(),
            "task": self.task,
            "split": self.split,
        });
        match &self.labels {
            Labels::Scene(k) => v["labels"] = json!(k),
            Labels::Tags(t) => v["labels"] = json!(t.iter().map(|&b| b as u8).collect::<Vec<_>>()),
            Labels::Machine {
                section,
                domain,
                anomalous,
            } => {
                v["labels"] = json!(section);
                v["domain"] = json!(domain);
                v["condition"] = json!(if *anomalous { "anomaly" } else { "normal" });
            }
        }
        v.to_string()
    }

    /// Class index for single-label tasks (scene or machine section).
    pub fn class(&self) -> Option<usize> {
        match self.labels {
            Labels::Scene(k) => Some(k),
            Labels::Machine { section, .. } => Some(section),
            Labels::Tags(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    /// Directory that relative clip paths are resolved against.
    pub root: PathBuf,
    pub clips: Vec<LabeledClip>,
}

impl Manifest {
    pub fn resolve(&self, clip: &LabeledClip) -> PathBuf {
        if clip.path.is_absolute() {
            clip.path.clone()
        } else {
            self.root.join(&clip.path)
        }
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &LabeledClip> {
        self.clips.iter().filter(move |c| c.split == split)
    }

    pub fn task(&self) -> Option<Task> {
        self.clips.first().map(|c| c.task)
    }

    /// Scene classes, tag count or section count implied by the labels.
    pub fn n_classes(&self) -> usize {
        self.clips
            .iter()
            .map(|c| match &c.labels {
                Labels::Tags(t) => t.len(),
                _ => c.class().map_or(0, |k| k + 1),
            })
            .max()
            .unwrap_or(0)
    }

    pub fn to_jsonl(&self) -> String {
        self.clips.iter().map(|c| c.to_json() + "\n").collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        super::write_atomic(path, self.to_jsonl().as_bytes())
    }
}

#[derive(Deserialize)]
struct RawRecord {
    path: Option<String>,
    task: Option<Value>,
    split: Option<Value>,
    labels: Option<Value>,
    domain: Option<Value>,
    condition: Option<String>,
}

fn parse_record(raw: RawRecord, ust_arity: &mut Option<usize>) -> std::result::Result<LabeledClip, String> {
    let path = raw.path.ok_or("missing field 'path'")?;
    let task: Task = serde_json::from_value(raw.task.ok_or("missing field 'task'")?)
        .map_err(|e| format!("field 'task': {e}"))?;
    let split: Split = serde_json::from_value(raw.split.ok_or("missing field 'split'")?)
        .map_err(|e| format!("field 'split': {e}"))?;
    let labels = raw.labels.ok_or("missing field 'labels'")?;
    let class = |v: &Value| {
        v.as_u64()
            .map(|k| k as usize)
            .ok_or_else(|| format!("field 'labels' must be a class index for {task}, got {v}"))
    };
    let labels = match task {
        Task::Asc => Labels::Scene(class(&labels)?),
        Task::Ust => {
            let tags = labels
                .as_array()
                .ok_or("field 'labels' must be a 0/1 array for ust")?
                .iter()
                .map(|t| match t.as_u64() {
                    Some(0) => Ok(false),
                    Some(1) => Ok(true),
                    _ => Err(format!("tag value {t} is not 0 or 1")),
                })
                .collect::<std::result::Result<Vec<_>, _>>()?;
            match *ust_arity {
                Some(n) if n != tags.len() => {
                    return Err(format!("labels have {} tags, earlier records have {n}", tags.len()))
                }
                None if tags.is_empty() => return Err("labels must hold at least one tag".into()),
                _ => *ust_arity = Some(tags.len()),
            }
            Labels::Tags(tags)
        }
        Task::Asd => {
            let domain: Domain = serde_json::from_value(raw.domain.ok_or("missing field 'domain'")?)
                .map_err(|e| format!("field 'domain': {e}"))?;
            let anomalous = match raw.condition.as_deref().ok_or("missing field 'condition'")? {
                "normal" => false,
                "anomaly" => true,
                other => return Err(format!("condition {other:?} is neither normal nor anomaly")),
            };
            if anomalous && split == Split::Train {
                return Err("anomalous clip in the training split".into());
            }
            Labels::Machine {
                section: class(&labels)?,
                domain,
                anomalous,
            }
        }
    };
    Ok(LabeledClip {
        path: PathBuf::from(path),
        task,
        split,
        labels,
    })
}

/// Parses manifest text; `path` names the source in errors.
pub fn parse_manifest(text: &str, path: &Path) -> Result<Vec<LabeledClip>> {
    let mut clips = Vec::new();
    let mut ust_arity = None;
    let mut task = None;
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let err = |detail: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            detail,
        };
        let raw: RawRecord = serde_json::from_str(line).map_err(|e| err(e.to_string()))?;
        let clip = parse_record(raw, &mut ust_arity).map_err(err)?;
        match task {
            Some(t) if t != clip.task => {
                return Err(err(format!("task {} differs from earlier records ({t})", clip.task)))
            }
            _ => task = Some(clip.task),
        }
        clips.push(clip);
    }
    Ok(clips)
}

pub fn load_manifest(path: &Path) -> Result<Manifest> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(Manifest {
        root: path.parent().map(Path::to_path_buf).unwrap_or_default(),
        clips: parse_manifest(&text, path)?,
    })
}
