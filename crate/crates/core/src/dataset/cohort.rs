use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::stack::ImageStack;
use super::DatasetError;
use crate::rng::{rng_for, stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Normal,
    Abnormal,
}

impl Label {
    /// The positive class is `Abnormal`.
    pub fn is_positive(self) -> bool {
        self == Label::Abnormal
    }

    pub fn from_positive(positive: bool) -> Self {
        if positive {
            Label::Abnormal
        } else {
            Label::Normal
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Normal => "normal",
            Label::Abnormal => "abnormal",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = DatasetError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "normal" => Ok(Label::Normal),
            "abnormal" => Ok(Label::Abnormal),
            other => Err(DatasetError::Manifest(format!("unknown label {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Patient {
    pub stack: ImageStack,
    pub label: Label,
}

/// Labelled patients with unique ids.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Cohort {
    patients: Vec<Patient>,
}

impl Cohort {
    pub fn new(patients: Vec<Patient>) -> Result<Self, DatasetError> {
        let mut seen = HashSet::new();
        for p in &patients {
            if !seen.insert(p.stack.patient_id()) {
                return Err(DatasetError::DuplicateId(p.stack.patient_id().to_owned()));
            }
        }
        Ok(Self { patients })
    }

    pub fn patients(&self) -> &[Patient] {
        &self.patients
    }

    pub fn into_patients(self) -> Vec<Patient> {
        self.patients
    }

    pub fn len(&self) -> usize {
        self.patients.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patients.is_empty()
    }

    pub fn labels(&self) -> Vec<Label> {
        self.patients.iter().map(|p| p.label).collect()
    }

    pub fn count(&self, label: Label) -> usize {
        self.patients.iter().filter(|p| p.label == label).count()
    }

    /// Training needs at least two patients of each label.
    pub fn check_trainable(&self) -> Result<(), DatasetError> {
        check_trainable(&self.labels())
    }
}

pub(crate) fn check_trainable(labels: &[Label]) -> Result<(), DatasetError> {
    let normal = labels.iter().filter(|&&l| l == Label::Normal).count();
    let abnormal = labels.len() - normal;
    if normal < 2 || abnormal < 2 {
        return Err(DatasetError::NotTrainable { normal, abnormal });
    }
    Ok(())
}

/// Stratified index split. Returns `(train, test)` positions, each ascending.
pub fn split_indices(
    labels: &[Label],
    n_normal_train: usize,
    n_abnormal_train: usize,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>), DatasetError> {
    let mut train = Vec::with_capacity(n_normal_train + n_abnormal_train);
    for (label, wanted) in [
        (Label::Normal, n_normal_train),
        (Label::Abnormal, n_abnormal_train),
    ] {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == label).collect();
        if wanted > members.len() {
            return Err(DatasetError::InsufficientPatients {
                label,
                requested: wanted,
                available: members.len(),
            });
        }
        members.shuffle(&mut rng_for(seed, stream::SPLIT, label as u64));
        train.extend_from_slice(&members[..wanted]);
    }
    if train.len() == labels.len() {
        return Err(DatasetError::EmptyTestSplit);
    }
    train.sort_unstable();
    let in_train: HashSet<usize> = train.iter().copied().collect();
    let test = (0..labels.len()).filter(|i| !in_train.contains(i)).collect();
    Ok((train, test))
}

/// Stratified random split into training and test cohorts. The test cohort
/// must be non-empty.
pub fn split_train_test(
    cohort: Cohort,
    n_normal_train: usize,
    n_abnormal_train: usize,
    seed: u64,
) -> Result<(Cohort, Cohort), DatasetError> {
    let (train_idx, _) = split_indices(&cohort.labels(), n_normal_train, n_abnormal_train, seed)?;
    let in_train: HashSet<usize> = train_idx.into_iter().collect();
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (i, p) in cohort.patients.into_iter().enumerate() {
        if in_train.contains(&i) {
            train.push(p);
        } else {
            test.push(p);
        }
    }
    Ok((Cohort { patients: train }, Cohort { patients: test }))
}

/// One manifest row. Labels are optional for unlabelled prediction inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub patient_id: String,
    pub label: Option<Label>,
    pub path: PathBuf,
}

#[derive(Debug, Deserialize, Serialize)]
struct ManifestRow {
    patient_id: String,
    label: String,
    path: String,
}

/// Read a `patient_id,label,path` manifest. Relative paths resolve against
/// the manifest's directory.
pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>, DatasetError> {
    let base = path.parent().unwrap_or_else(|| Path::new(""));
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| DatasetError::Manifest(format!("{}: {e}", path.display())))?;
    let headers = reader
        .headers()
        .map_err(|e| DatasetError::Manifest(e.to_string()))?
        .clone();
    if headers.iter().collect::<Vec<_>>() != ["patient_id", "label", "path"] {
        return Err(DatasetError::Manifest(format!(
            "expected header patient_id,label,path, found {}",
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut entries = Vec::new();
    let mut seen = HashSet::new();
    for row in reader.deserialize::<ManifestRow>() {
        let row = row.map_err(|e| DatasetError::Manifest(e.to_string()))?;
        if !seen.insert(row.patient_id.clone()) {
            return Err(DatasetError::DuplicateId(row.patient_id));
        }
        let label = match row.label.trim() {
            "" => None,
            s => Some(s.parse()?),
        };
        let rel = PathBuf::from(&row.path);
        let path = if rel.is_absolute() { rel } else { base.join(rel) };
        entries.push(ManifestEntry {
            patient_id: row.patient_id,
            label,
            path,
        });
    }
    Ok(entries)
}

pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<(), DatasetError> {
    let mut writer = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)
        .map_err(|e| DatasetError::Manifest(e.to_string()))?;
    for e in entries {
        writer
            .serialize(ManifestRow {
                patient_id: e.patient_id.clone(),
                label: e.label.map(|l| l.to_string()).unwrap_or_default(),
                path: e.path.to_string_lossy().into_owned(),
            })
            .map_err(|e| DatasetError::Manifest(e.to_string()))?;
    }
    writer.flush().map_err(|e| DatasetError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels(normal: usize, abnormal: usize) -> Vec<Label> {
        let mut v = vec![Label::Normal; normal];
        v.extend(vec![Label::Abnormal; abnormal]);
        v
    }

    #[test]
    fn split_cardinality_and_disjointness() {
        let l = labels(10, 10);
        let (train, test) = split_indices(&l, 5, 5, 3).unwrap();
        assert_eq!(train.len(), 10);
        assert_eq!(test.len(), 10);
        assert_eq!(train.iter().filter(|&&i| l[i] == Label::Normal).count(), 5);
        assert!(train.iter().all(|i| !test.contains(i)));
    }

    #[test]
    fn split_rejects_empty_test() {
        assert!(matches!(
            split_indices(&labels(10, 10), 10, 10, 0),
            Err(DatasetError::EmptyTestSplit)
        ));
    }

    #[test]
    fn split_rejects_insufficient_label() {
        assert!(matches!(
            split_indices(&labels(3, 10), 4, 2, 0),
            Err(DatasetError::InsufficientPatients { label: Label::Normal, .. })
        ));
    }

    #[test]
    fn split_is_seed_deterministic_and_seed_sensitive() {
        let l = labels(10, 10);
        let first = split_indices(&l, 5, 5, 11).unwrap();
        assert_eq!(first, split_indices(&l, 5, 5, 11).unwrap());
        let distinct: HashSet<Vec<usize>> = (0..20)
            .map(|s| split_indices(&l, 5, 5, s).unwrap().0)
            .collect();
        // 252^2 equally likely training sets; 20 draws collide rarely.
        assert!(distinct.len() >= 18, "only {} distinct splits", distinct.len());
    }

    #[test]
    fn manifest_round_trip_with_missing_label() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.csv");
        let entries = vec![
            ManifestEntry {
                patient_id: "a".into(),
                label: Some(Label::Abnormal),
                path: PathBuf::from("a.sps"),
            },
            ManifestEntry {
                patient_id: "b".into(),
                label: None,
                path: PathBuf::from("b.sps"),
            },
        ];
        write_manifest(&path, &entries).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("patient_id,label,path\n"));
        assert!(!text.contains('\r'));
        let back = read_manifest(&path).unwrap();
        assert_eq!(back[0].label, Some(Label::Abnormal));
        assert_eq!(back[1].label, None);
        assert_eq!(back[0].path, dir.path().join("a.sps"));
    }

    #[test]
    fn duplicate_ids_rejected() {
        let s = ImageStack::from_flat("x", 2, 1, vec![0.0, 1.0]).unwrap();
        let patients = vec![
            Patient { stack: s.clone(), label: Label::Normal },
            Patient { stack: s, label: Label::Abnormal },
        ];
        assert!(matches!(Cohort::new(patients), Err(DatasetError::DuplicateId(_))));
    }
}
