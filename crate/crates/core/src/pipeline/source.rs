//! Where stacks come from.
//!
//! Training reads its cohort several times, one block of patients at a
//! time, so sources hand out stacks on demand instead of holding a cohort.

use std::borrow::Cow;

use crate::dataset::{
    read_stack, synth_patient, DatasetError, ImageStack, Label, ManifestEntry, SynthLayout, SynthParams,
};

pub trait StackSource: Sync {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Patient id of entry `i`, available without loading the stack.
    fn patient_id(&self, i: usize) -> Cow<'_, str>;

    fn load(&self, i: usize) -> Result<Cow<'_, ImageStack>, DatasetError>;
}

/// Borrowed in-memory stacks.
pub struct MemorySource<'a> {
    stacks: Vec<&'a ImageStack>,
}

impl<'a> MemorySource<'a> {
    pub fn new(stacks: impl IntoIterator<Item = &'a ImageStack>) -> Self {
        Self {
            stacks: stacks.into_iter().collect(),
        }
    }
}

impl StackSource for MemorySource<'_> {
    fn len(&self) -> usize {
        self.stacks.len()
    }

    fn patient_id(&self, i: usize) -> Cow<'_, str> {
        Cow::Borrowed(self.stacks[i].patient_id())
    }

    fn load(&self, i: usize) -> Result<Cow<'_, ImageStack>, DatasetError> {
        Ok(Cow::Borrowed(self.stacks[i]))
    }
}

/// Stacks listed in a manifest, read from disk on every load.
pub struct ManifestSource {
    entries: Vec<ManifestEntry>,
}

impl ManifestSource {
    pub fn new(entries: Vec<ManifestEntry>) -> Self {
        Self { entries }
    }

    pub fn entries(&self) -> &[ManifestEntry] {
        &self.entries
    }

    /// Labels of all entries; fails if any is missing.
    pub fn labels(&self) -> Result<Vec<Label>, DatasetError> {
        self.entries
            .iter()
            .map(|e| {
                e.label
                    .ok_or_else(|| DatasetError::Manifest(format!("patient {:?} has no label", e.patient_id)))
            })
            .collect()
    }
}

impl StackSource for ManifestSource {
    fn len(&self) -> usize {
        self.entries.len()
    }

    fn patient_id(&self, i: usize) -> Cow<'_, str> {
        Cow::Borrowed(&self.entries[i].patient_id)
    }

    fn load(&self, i: usize) -> Result<Cow<'_, ImageStack>, DatasetError> {
        let e = &self.entries[i];
        let mut stack = read_stack(&e.path)?;
        stack.set_patient_id(e.patient_id.clone());
        Ok(Cow::Owned(stack))
    }
}

/// Synthetic patients regenerated on every load; nothing is kept in memory.
pub struct SynthSource {
    params: SynthParams,
    layout: SynthLayout,
    seed: u64,
    indices: Vec<usize>,
}

impl SynthSource {
    pub fn new(params: SynthParams, seed: u64) -> Result<Self, DatasetError> {
        params.validate()?;
        let layout = SynthLayout::new(&params, seed);
        let indices = (0..params.n_patients()).collect();
        Ok(Self {
            params,
            layout,
            seed,
            indices,
        })
    }

    pub fn labels(&self) -> Vec<Label> {
        self.indices.iter().map(|&k| self.params.label_of(k)).collect()
    }
}

impl StackSource for SynthSource {
    fn len(&self) -> usize {
        self.indices.len()
    }

    fn patient_id(&self, i: usize) -> Cow<'_, str> {
        Cow::Owned(format!("case{:04}", self.indices[i]))
    }

    fn load(&self, i: usize) -> Result<Cow<'_, ImageStack>, DatasetError> {
        let patient = synth_patient(&self.params, &self.layout, self.seed, self.indices[i]);
        Ok(Cow::Owned(patient.stack))
    }
}

/// A view of selected entries of another source.
pub struct Subset<'a, S: ?Sized> {
    inner: &'a S,
    indices: Vec<usize>,
}

impl<'a, S: StackSource + ?Sized> Subset<'a, S> {
    pub fn new(inner: &'a S, indices: Vec<usize>) -> Self {
        assert!(indices.iter().all(|&i| i < inner.len()), "subset index out of range");
        Self { inner, indices }
    }
}

impl<S: StackSource + ?Sized> StackSource for Subset<'_, S> {
    fn len(&self) -> usize {
        self.indices.len()
    }

    fn patient_id(&self, i: usize) -> Cow<'_, str> {
        self.inner.patient_id(self.indices[i])
    }

    fn load(&self, i: usize) -> Result<Cow<'_, ImageStack>, DatasetError> {
        self.inner.load(self.indices[i])
    }
}
