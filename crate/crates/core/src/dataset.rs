use serde::{Deserialize, Serialize};

use crate::datagen::SimModel;
use crate::error::{Result, TecError};
use crate::tensor::{CpTensor, DenseTensor};

#[derive(Debug, Clone, PartialEq)]
pub enum Samples {
    Cp(Vec<CpTensor>),
    Dense(Vec<DenseTensor>),
}

impl Samples {
    pub fn len(&self) -> usize {
        match self {
            Samples::Cp(v) => v.len(),
            Samples::Dense(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_dense(&self) -> bool {
        matches!(self, Samples::Dense(_))
    }

    pub fn mode_dims(&self) -> Option<Vec<usize>> {
        match self {
            Samples::Cp(v) => v.first().map(CpTensor::mode_dims),
            Samples::Dense(v) => v.first().map(|t| t.dims().to_vec()),
        }
    }
}

/// Where a generated dataset came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub model: SimModel,
    pub samples_per_class: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Samples,
    /// `−1` / `+1` per sample; absent for unlabeled prediction inputs.
    pub labels: Option<Vec<i8>>,
    pub provenance: Option<Provenance>,
}

impl Dataset {
    pub fn new(samples: Samples, labels: Option<Vec<i8>>) -> Result<Self> {
        if let Some(labels) = &labels {
            if labels.len() != samples.len() {
                return Err(TecError::shape(
                    "dataset",
                    format!("{} labels for {} samples", labels.len(), samples.len()),
                ));
            }
            if labels.iter().any(|&y| y != 1 && y != -1) {
                return Err(TecError::invalid("dataset", "labels must be ±1"));
            }
        }
        let dims = samples.mode_dims();
        let homogeneous = match &samples {
            Samples::Cp(v) => v.iter().all(|t| Some(t.mode_dims()) == dims),
            Samples::Dense(v) => v.iter().all(|t| Some(t.dims().to_vec()) == dims),
        };
        if !homogeneous {
            return Err(TecError::shape("dataset", "samples have differing mode dims"));
        }
        Ok(Self {
            samples,
            labels,
            provenance: None,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn labels_f64(&self) -> Option<Vec<f64>> {
        self.labels.as_ref().map(|l| l.iter().map(|&y| y as f64).collect())
    }
}
