//! The four generalization splits: new actions, objects, subjects and scenes.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::data::manifest::{ClipRecord, DatasetManifest};
use crate::error::{ensure, Error, Result};

/// Fraction of each video's clips assigned to training for new-action splits.
pub const DEFAULT_TRAIN_FRACTION: f64 = 0.8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "strategy", rename_all = "snake_case")]
pub enum SplitSpec {
    /// The first `ceil(train_fraction * n)` clips of every video train, the rest test.
    NewActions { train_fraction: f64 },
    /// Clips of the held-out objects test; everything else trains.
    NewObjects { held_out: Vec<String> },
    NewSubjects { train: Vec<String>, test: Vec<String> },
    NewScenes { train: Vec<String>, test: Vec<String> },
}

impl SplitSpec {
    pub fn new_actions() -> Self {
        SplitSpec::NewActions {
            train_fraction: DEFAULT_TRAIN_FRACTION,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            SplitSpec::NewActions { .. } => "new_actions",
            SplitSpec::NewObjects { .. } => "new_objects",
            SplitSpec::NewSubjects { .. } => "new_subjects",
            SplitSpec::NewScenes { .. } => "new_scenes",
        }
    }
}

/// Number of training clips for a video with `n` clips.
///
/// A small tolerance keeps products like `0.8 * 10` from rounding up past
/// the exact integer.
pub fn train_count(n: usize, train_fraction: f64) -> usize {
    ((train_fraction * n as f64) - 1e-9).ceil().max(0.0) as usize
}

#[derive(Clone, Debug, PartialEq)]
pub struct Split {
    pub train: Vec<ClipRecord>,
    pub test: Vec<ClipRecord>,
}

fn check_ids(manifest: &DatasetManifest, field: &str, ids: &[String], get: impl Fn(&ClipRecord) -> &str) -> Result<()> {
    ensure!(!ids.is_empty(), Config, "no {field} identifiers given");
    let present: BTreeSet<&str> = manifest.clips.iter().map(&get).collect();
    for id in ids {
        ensure!(
            present.contains(id.as_str()),
            Config,
            "{field} '{id}' does not occur in manifest {}",
            manifest.dataset_name
        );
    }
    Ok(())
}

fn partition_by(
    manifest: &DatasetManifest,
    field: &str,
    train: &[String],
    test: &[String],
    get: impl Fn(&ClipRecord) -> &str,
) -> Result<Split> {
    check_ids(manifest, field, train, &get)?;
    check_ids(manifest, field, test, &get)?;
    let train_set: BTreeSet<&str> = train.iter().map(String::as_str).collect();
    let test_set: BTreeSet<&str> = test.iter().map(String::as_str).collect();
    if let Some(both) = train_set.intersection(&test_set).next() {
        return Err(Error::Config(format!("{field} '{both}' is listed for both train and test")));
    }
    let mut split = Split {
        train: Vec::new(),
        test: Vec::new(),
    };
    for c in &manifest.clips {
        let id = get(c);
        if train_set.contains(id) {
            split.train.push(c.clone());
        } else if test_set.contains(id) {
            split.test.push(c.clone());
        }
    }
    Ok(split)
}

/// Partitions a manifest's clips according to `spec`.
///
/// Train and test are disjoint; their union is every eligible clip (all
/// clips, except for subject/scene splits where only clips whose id is
/// listed on either side are eligible). Either side ending up empty is a
/// configuration error.
pub fn generate_split(manifest: &DatasetManifest, spec: &SplitSpec) -> Result<Split> {
    let split = match spec {
        SplitSpec::NewActions { train_fraction } => {
            ensure!(
                *train_fraction > 0.0 && *train_fraction < 1.0,
                Config,
                "train fraction {train_fraction} must lie in (0, 1)"
            );
            let mut by_video: BTreeMap<&str, Vec<&ClipRecord>> = BTreeMap::new();
            for c in &manifest.clips {
                by_video.entry(c.meta.video_id.as_str()).or_default().push(c);
            }
            let mut split = Split {
                train: Vec::new(),
                test: Vec::new(),
            };
            for clips in by_video.values_mut() {
                clips.sort_by_key(|c| c.meta.clip_index);
                let k = train_count(clips.len(), *train_fraction);
                split.train.extend(clips[..k].iter().map(|c| (*c).clone()));
                split.test.extend(clips[k..].iter().map(|c| (*c).clone()));
            }
            split
        }
        SplitSpec::NewObjects { held_out } => {
            check_ids(manifest, "object", held_out, |c| &c.meta.object_id)?;
            let held: BTreeSet<&str> = held_out.iter().map(String::as_str).collect();
            let (test, train) = manifest
                .clips
                .iter()
                .cloned()
                .partition(|c| held.contains(c.meta.object_id.as_str()));
            Split { train, test }
        }
        SplitSpec::NewSubjects { train, test } => {
            partition_by(manifest, "subject", train, test, |c| &c.meta.subject_id)?
        }
        SplitSpec::NewScenes { train, test } => {
            partition_by(manifest, "scene", train, test, |c| &c.meta.scene_id)?
        }
    };
    ensure!(
        !split.train.is_empty() && !split.test.is_empty(),
        Config,
        "{} split leaves an empty partition (train={}, test={})",
        spec.name(),
        split.train.len(),
        split.test.len()
    );
    Ok(split)
}

impl Split {
    /// Train and test manifests sharing the source manifest's name and cameras.
    pub fn into_manifests(self, source: &DatasetManifest) -> (DatasetManifest, DatasetManifest) {
        let make = |clips| DatasetManifest {
            dataset_name: source.dataset_name.clone(),
            clips,
            cameras: source.cameras.clone(),
            root: source.root.clone(),
        };
        (make(self.train), make(self.test))
    }
}
