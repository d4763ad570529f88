//! In-memory multimodal dataset, mini-batch assembly, and the test-set access
//! guard.

use std::collections::BTreeSet;
use std::fmt;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const NUM_CLASSES: usize = 3;
pub const CLASS_NAMES: [&str; NUM_CLASSES] = ["CN", "MCI", "AD"];
pub const IMAGE_SLICES: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Modality {
    Clinical,
    Genetic,
    Imaging,
}

impl Modality {
    pub const ALL: [Modality; 3] = [Modality::Clinical, Modality::Genetic, Modality::Imaging];

    pub fn short(self) -> &'static str {
        match self {
            Modality::Clinical => "C",
            Modality::Genetic => "G",
            Modality::Imaging => "I",
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Modality::Clinical => "clinical",
            Modality::Genetic => "genetic",
            Modality::Imaging => "imaging",
        };
        f.write_str(s)
    }
}

/// Non-empty, ordered subset of the three modalities.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<Modality>", into = "Vec<Modality>")]
pub struct ModalitySet(BTreeSet<Modality>);

impl ModalitySet {
    pub fn new(mods: impl IntoIterator<Item = Modality>) -> Result<Self> {
        let set: BTreeSet<_> = mods.into_iter().collect();
        if set.is_empty() {
            return Err(Error::Config("modality set must not be empty".into()));
        }
        Ok(Self(set))
    }

    pub fn all() -> Self {
        Self(Modality::ALL.into_iter().collect())
    }

    /// The seven non-empty subsets: singles, pairs, then all three.
    pub fn subsets() -> Vec<Self> {
        use Modality::*;
        [
            vec![Clinical],
            vec![Genetic],
            vec![Imaging],
            vec![Clinical, Genetic],
            vec![Genetic, Imaging],
            vec![Imaging, Clinical],
            vec![Clinical, Genetic, Imaging],
        ]
        .into_iter()
        .map(|v| Self::new(v).expect("non-empty"))
        .collect()
    }

    pub fn contains(&self, m: Modality) -> bool {
        self.0.contains(&m)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = Modality> + '_ {
        self.0.iter().copied()
    }

    /// Cross-modal pairs among the members, in the cyclic order
    /// (C,G), (G,I), (I,C).
    pub fn pairs(&self) -> Vec<(Modality, Modality)> {
        use Modality::*;
        [(Clinical, Genetic), (Genetic, Imaging), (Imaging, Clinical)]
            .into_iter()
            .filter(|(a, b)| self.contains(*a) && self.contains(*b))
            .collect()
    }

    pub fn label(&self) -> String {
        self.iter().map(Modality::short).collect::<Vec<_>>().join("+")
    }
}

impl TryFrom<Vec<Modality>> for ModalitySet {
    type Error = Error;
    fn try_from(v: Vec<Modality>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<ModalitySet> for Vec<Modality> {
    fn from(s: ModalitySet) -> Self {
        s.0.into_iter().collect()
    }
}

impl fmt::Display for ModalitySet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

/// One patient. Images are stored as 8-bit intensity levels; the model sees
/// `level / 255` in `[0, 1]`. Genotypes are non-reference allele counts in
/// `{0, 1, 2}`; the model sees `count / 2`.
#[derive(Clone, Debug, PartialEq)]
pub struct ModalitySample {
    pub id: String,
    pub clinical: Vec<f64>,
    pub genetic: Vec<u8>,
    pub image: Vec<u8>,
    pub label: u8,
}

impl ModalitySample {
    pub fn image_value(&self, idx: usize) -> f64 {
        f64::from(self.image[idx]) / 255.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MultimodalDataset {
    pub clinical_columns: Vec<String>,
    pub snp_count: usize,
    pub image_size: usize,
    pub samples: Vec<ModalitySample>,
}

impl MultimodalDataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn clinical_width(&self) -> usize {
        self.clinical_columns.len()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.label as usize).collect()
    }

    pub fn class_counts(&self) -> [usize; NUM_CLASSES] {
        let mut c = [0; NUM_CLASSES];
        for s in &self.samples {
            c[s.label as usize] += 1;
        }
        c
    }

    /// Checks the per-sample invariants.
    pub fn validate(&self) -> Result<()> {
        let img = IMAGE_SLICES * self.image_size * self.image_size;
        for s in &self.samples {
            if s.clinical.len() != self.clinical_width() {
                return Err(Error::Data(format!("{}: clinical width {}", s.id, s.clinical.len())));
            }
            if s.genetic.len() != self.snp_count || s.genetic.iter().any(|&g| g > 2) {
                return Err(Error::Data(format!("{}: genotype vector invalid", s.id)));
            }
            if s.image.len() != img {
                return Err(Error::Data(format!("{}: image has {} pixels", s.id, s.image.len())));
            }
            if s.label as usize >= NUM_CLASSES {
                return Err(Error::Data(format!("{}: label {}", s.id, s.label)));
            }
        }
        Ok(())
    }

    /// Assembles a batch holding only the requested modalities.
    pub fn batch(&self, indices: &[usize], mods: &ModalitySet) -> Result<MultimodalBatch> {
        if indices.is_empty() {
            return Err(Error::Data("empty batch".into()));
        }
        let n = indices.len();
        let pick = |i: usize| -> Result<&ModalitySample> {
            self.samples
                .get(i)
                .ok_or_else(|| Error::Data(format!("sample index {i} out of range")))
        };
        let mut labels = Vec::with_capacity(n);
        for &i in indices {
            labels.push(pick(i)?.label as usize);
        }
        let clinical = if mods.contains(Modality::Clinical) {
            let w = self.clinical_width();
            let mut d = Vec::with_capacity(n * w);
            for &i in indices {
                d.extend_from_slice(&pick(i)?.clinical);
            }
            Some(Tensor::new(&[n, w], d)?)
        } else {
            None
        };
        let genetic = if mods.contains(Modality::Genetic) {
            let mut d = Vec::with_capacity(n * self.snp_count);
            for &i in indices {
                d.extend(pick(i)?.genetic.iter().map(|&g| f64::from(g) / 2.0));
            }
            Some(Tensor::new(&[n, self.snp_count], d)?)
        } else {
            None
        };
        let imaging = if mods.contains(Modality::Imaging) {
            let s = self.image_size;
            let mut d = Vec::with_capacity(n * IMAGE_SLICES * s * s);
            for &i in indices {
                d.extend(pick(i)?.image.iter().map(|&p| f64::from(p) / 255.0));
            }
            Some(Tensor::new(&[n, IMAGE_SLICES, s, s], d)?)
        } else {
            None
        };
        Ok(MultimodalBatch {
            clinical,
            genetic,
            imaging,
            labels,
        })
    }
}

#[derive(Clone, Debug)]
pub struct MultimodalBatch {
    pub clinical: Option<Tensor>,
    pub genetic: Option<Tensor>,
    pub imaging: Option<Tensor>,
    pub labels: Vec<usize>,
}

impl MultimodalBatch {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn get(&self, m: Modality) -> Option<&Tensor> {
        match m {
            Modality::Clinical => self.clinical.as_ref(),
            Modality::Genetic => self.genetic.as_ref(),
            Modality::Imaging => self.imaging.as_ref(),
        }
    }

    pub fn modalities(&self) -> Vec<Modality> {
        Modality::ALL.into_iter().filter(|&m| self.get(m).is_some()).collect()
    }
}

/// Read-tracking wrapper around a dataset. Reads of protected (held-out)
/// indices before [`GuardedDataset::release`] are counted; protocol code is
/// expected to leave that count at zero.
pub struct GuardedDataset<'a> {
    data: &'a MultimodalDataset,
    protected: Vec<bool>,
    released: AtomicBool,
    premature_reads: AtomicUsize,
}

impl<'a> GuardedDataset<'a> {
    pub fn new(data: &'a MultimodalDataset, protected: &[usize]) -> Self {
        let mut mask = vec![false; data.len()];
        for &i in protected {
            if i < mask.len() {
                mask[i] = true;
            }
        }
        Self {
            data,
            protected: mask,
            released: AtomicBool::new(false),
            premature_reads: AtomicUsize::new(0),
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn clinical_width(&self) -> usize {
        self.data.clinical_width()
    }

    pub fn snp_count(&self) -> usize {
        self.data.snp_count
    }

    pub fn image_size(&self) -> usize {
        self.data.image_size
    }

    fn record(&self, indices: &[usize]) {
        if self.released.load(Ordering::SeqCst) {
            return;
        }
        let hits = indices
            .iter()
            .filter(|&&i| self.protected.get(i).copied().unwrap_or(false))
            .count();
        if hits > 0 {
            self.premature_reads.fetch_add(hits, Ordering::SeqCst);
        }
    }

    pub fn batch(&self, indices: &[usize], mods: &ModalitySet) -> Result<MultimodalBatch> {
        self.record(indices);
        self.data.batch(indices, mods)
    }

    pub fn labels(&self, indices: &[usize]) -> Vec<usize> {
        self.record(indices);
        indices.iter().map(|&i| self.data.samples[i].label as usize).collect()
    }

    /// Opens the protected indices for final evaluation.
    pub fn release(&self) {
        self.released.store(true, Ordering::SeqCst);
    }

    pub fn is_released(&self) -> bool {
        self.released.load(Ordering::SeqCst)
    }

    pub fn premature_reads(&self) -> usize {
        self.premature_reads.load(Ordering::SeqCst)
    }
}
