//! Task files on disk.
//!
//! A dataset directory holds:
//!
//! * `tasks.toml`, the manifest naming every task file;
//! * `t1.tsv`, one line `user<TAB>i1,i2,…,in` per user, ids left-padded with 0 to the window;
//! * `tN.tsv`, one line `user<TAB>label` per instance of task `N`;
//! * `items.tsv` and `labels_tN.tsv`, vocabularies as `external<TAB>id`.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::dataset::{ContinualDataset, Instance, LabelTask};
use crate::error::{Error, Result};
use crate::task::{TaskId, TaskKind};

pub const MANIFEST: &str = "tasks.toml";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub window: usize,
    pub tasks: Vec<ManifestTask>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestTask {
    pub id: u16,
    pub kind: TaskKind,
    pub file: String,
    pub vocabulary: String,
}

fn write_vocabulary(path: &Path, names: &[String], first_id: usize) -> Result<()> {
    let mut out = String::new();
    for (i, name) in names.iter().enumerate() {
        let _ = writeln!(out, "{name}\t{}", i + first_id);
    }
    std::fs::write(path, out)?;
    Ok(())
}

fn read_vocabulary(path: &Path, first_id: usize) -> Result<Vec<String>> {
    let text = read_text(path)?;
    let mut names = Vec::new();
    for (n, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let (name, id) = line.split_once('\t').ok_or_else(|| Error::Parse {
            line: n + 1,
            message: format!("{}: expected `name<TAB>id`", path.display()),
        })?;
        let id: usize = id.trim().parse().map_err(|_| Error::Parse {
            line: n + 1,
            message: format!("{}: non-numeric id", path.display()),
        })?;
        if id != names.len() + first_id {
            return Err(Error::Parse {
                line: n + 1,
                message: format!("{}: ids must be dense and ascending", path.display()),
            });
        }
        names.push(name.to_string());
    }
    Ok(names)
}

/// Writes `dataset` into `dir`, creating it if needed.
pub fn write_dataset(dataset: &ContinualDataset, dir: &Path) -> Result<()> {
    dataset.validate()?;
    std::fs::create_dir_all(dir)?;
    let mut t1 = String::new();
    for (u, user) in dataset.users.iter().enumerate() {
        let ids: Vec<String> = dataset.window_of(u as u32).iter().map(usize::to_string).collect();
        let _ = writeln!(t1, "{user}\t{}", ids.join(","));
    }
    std::fs::write(dir.join("t1.tsv"), t1)?;
    write_vocabulary(&dir.join("items.tsv"), &dataset.items, 1)?;
    let mut manifest = Manifest {
        window: dataset.window,
        tasks: vec![ManifestTask {
            id: 1,
            kind: TaskKind::Autoregressive,
            file: "t1.tsv".into(),
            vocabulary: "items.tsv".into(),
        }],
    };
    for task in &dataset.tasks {
        let file = format!("t{}.tsv", task.id.0);
        let vocabulary = format!("labels_t{}.tsv", task.id.0);
        let mut out = String::new();
        for inst in &task.instances {
            let _ = writeln!(out, "{}\t{}", dataset.users[inst.user as usize], inst.label);
        }
        std::fs::write(dir.join(&file), out)?;
        write_vocabulary(&dir.join(&vocabulary), &task.label_names, 0)?;
        manifest.tasks.push(ManifestTask {
            id: task.id.0,
            kind: task.kind,
            file,
            vocabulary,
        });
    }
    let text = toml::to_string(&manifest).map_err(|e| Error::Data(e.to_string()))?;
    std::fs::write(dir.join(MANIFEST), text)?;
    Ok(())
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(Error::file(path))
}

/// Reads a dataset directory written by [`write_dataset`].
pub fn read_dataset(dir: &Path) -> Result<ContinualDataset> {
    let text = read_text(&dir.join(MANIFEST))?;
    let manifest: Manifest = toml::from_str(&text).map_err(|e| Error::Data(format!("{MANIFEST}: {e}")))?;
    let first = manifest
        .tasks
        .iter()
        .find(|t| t.kind == TaskKind::Autoregressive)
        .ok_or_else(|| Error::Data("manifest lacks an autoregressive task".into()))?;
    let items = read_vocabulary(&dir.join(&first.vocabulary), 1)?;
    let seq_text = read_text(&dir.join(&first.file))?;
    let mut users = Vec::new();
    let mut sequences = Vec::new();
    for (n, line) in seq_text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let parse_err = |message: String| Error::Parse { line: n + 1, message };
        let (user, ids) = line
            .split_once('\t')
            .ok_or_else(|| parse_err(format!("{}: expected `user<TAB>ids`", first.file)))?;
        let mut seq = Vec::new();
        for id in ids.split(',') {
            let id: u32 = id
                .trim()
                .parse()
                .map_err(|_| parse_err(format!("{}: non-numeric item `{id}`", first.file)))?;
            // Leading pads are dropped; later zeros are rejected by validation.
            if id != 0 || !seq.is_empty() {
                seq.push(id);
            }
        }
        users.push(user.to_string());
        sequences.push(seq);
    }
    let index: HashMap<&str, u32> = users.iter().enumerate().map(|(i, u)| (u.as_str(), i as u32)).collect();
    let mut tasks = Vec::new();
    for mt in manifest.tasks.iter().filter(|t| t.kind != TaskKind::Autoregressive) {
        let label_names = read_vocabulary(&dir.join(&mt.vocabulary), 0)?;
        let body = read_text(&dir.join(&mt.file))?;
        let mut instances = Vec::new();
        for (n, line) in body.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let parse_err = |message: String| Error::Parse { line: n + 1, message };
            let (user, label) = line
                .split_once('\t')
                .ok_or_else(|| parse_err(format!("{}: expected `user<TAB>label`", mt.file)))?;
            let user = *index
                .get(user)
                .ok_or_else(|| parse_err(format!("{}: user `{user}` has no sequence", mt.file)))?;
            let label = label
                .trim()
                .parse()
                .map_err(|_| parse_err(format!("{}: non-numeric label", mt.file)))?;
            instances.push(Instance { user, label });
        }
        tasks.push(LabelTask {
            id: TaskId(mt.id),
            kind: mt.kind,
            label_names,
            instances,
        });
    }
    let ds = ContinualDataset {
        window: manifest.window,
        users,
        items,
        sequences,
        tasks,
    };
    ds.validate()?;
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth::{generate_synthetic_tasks, SynthSpec};

    #[test]
    fn round_trip() {
        let ds = generate_synthetic_tasks(&SynthSpec {
            users: 25,
            ..Default::default()
        })
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_dataset(&ds, dir.path()).unwrap();
        assert_eq!(read_dataset(dir.path()).unwrap(), ds);
    }
}
