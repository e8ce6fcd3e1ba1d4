//! Frame-level datasets with speaker, segment and environment tags.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{LhucError, Result};
use crate::scalar::Scalar;
use crate::tensor::Matrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Targets<T = f64> {
    /// Class index per frame, with the number of classes.
    Classes { labels: Vec<usize>, n_classes: usize },
    /// Real-valued target rows.
    Values(Matrix<T>),
}

impl<T: Scalar> Targets<T> {
    pub fn len(&self) -> usize {
        match self {
            Targets::Classes { labels, .. } => labels.len(),
            Targets::Values(m) => m.rows(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Feature rows with one target and cluster tags per frame.
///
/// Speaker ids are `>= 1`: id 0 is reserved for the speaker-independent
/// transform.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameDataset<T = f64> {
    pub features: Matrix<T>,
    pub targets: Targets<T>,
    pub speakers: Vec<u32>,
    pub segments: Vec<u32>,
    pub environments: Option<Vec<u32>>,
}

impl<T: Scalar> FrameDataset<T> {
    pub fn new(
        features: Matrix<T>,
        targets: Targets<T>,
        speakers: Vec<u32>,
        segments: Vec<u32>,
        environments: Option<Vec<u32>>,
    ) -> Result<Self> {
        let d = Self {
            features,
            targets,
            speakers,
            segments,
            environments,
        };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.features.rows();
        let lens = [
            self.targets.len(),
            self.speakers.len(),
            self.segments.len(),
            self.environments.as_ref().map_or(n, Vec::len),
        ];
        if lens.iter().any(|&l| l != n) {
            return Err(LhucError::Dataset(format!(
                "per-frame arrays disagree: {n} feature rows vs lengths {lens:?}"
            )));
        }
        if self.speakers.iter().any(|&s| s == 0) {
            return Err(LhucError::Dataset("speaker id 0 is reserved".into()));
        }
        if let Targets::Classes { labels, n_classes } = &self.targets {
            if let Some((t, &c)) = labels.iter().enumerate().find(|(_, &c)| c >= *n_classes) {
                return Err(LhucError::Dataset(format!(
                    "frame {t}: label {c} >= {n_classes} classes"
                )));
            }
        }
        if !self.features.is_finite() {
            return Err(LhucError::Dataset("non-finite feature".into()));
        }
        if let Targets::Values(m) = &self.targets {
            if !m.is_finite() {
                return Err(LhucError::Dataset("non-finite target".into()));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn labels(&self) -> Option<&[usize]> {
        match &self.targets {
            Targets::Classes { labels, .. } => Some(labels),
            Targets::Values(_) => None,
        }
    }

    pub fn n_classes(&self) -> Option<usize> {
        match &self.targets {
            Targets::Classes { n_classes, .. } => Some(*n_classes),
            Targets::Values(_) => None,
        }
    }

    /// Frames at the given indices, in the given order.
    pub fn subset(&self, idx: &[usize]) -> Self {
        let pick = |v: &[u32]| idx.iter().map(|&i| v[i]).collect::<Vec<_>>();
        Self {
            features: self.features.select_rows(idx),
            targets: match &self.targets {
                Targets::Classes { labels, n_classes } => Targets::Classes {
                    labels: idx.iter().map(|&i| labels[i]).collect(),
                    n_classes: *n_classes,
                },
                Targets::Values(m) => Targets::Values(m.select_rows(idx)),
            },
            speakers: pick(&self.speakers),
            segments: pick(&self.segments),
            environments: self.environments.as_deref().map(pick),
        }
    }

    /// Frames satisfying `keep(frame index)`, in temporal order.
    pub fn filter(&self, keep: impl Fn(usize) -> bool) -> Self {
        let idx: Vec<usize> = (0..self.len()).filter(|&t| keep(t)).collect();
        self.subset(&idx)
    }

    pub fn speaker(&self, s: u32) -> Self {
        self.filter(|t| self.speakers[t] == s)
    }

    pub fn speaker_ids(&self) -> Vec<u32> {
        self.speakers.iter().copied().collect::<BTreeSet<_>>().into_iter().collect()
    }

    pub fn environment_ids(&self) -> Option<Vec<u32>> {
        self.environments
            .as_ref()
            .map(|e| e.iter().copied().collect::<BTreeSet<_>>().into_iter().collect())
    }

    /// Replaces the class labels, keeping everything else.
    pub fn with_labels(&self, labels: Vec<usize>) -> Result<Self> {
        let n_classes = self
            .n_classes()
            .ok_or(LhucError::Unsupported("relabeling a regression dataset"))?;
        let mut d = self.clone();
        d.targets = Targets::Classes { labels, n_classes };
        d.validate()?;
        Ok(d)
    }

    /// Concatenates datasets with identical feature width and target kind.
    pub fn concat(parts: &[Self]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| LhucError::Dataset("nothing to concatenate".into()))?;
        let dim = first.dim();
        let mut feats = Vec::new();
        let mut speakers = Vec::new();
        let mut segments = Vec::new();
        let mut envs: Option<Vec<u32>> = first.environments.as_ref().map(|_| Vec::new());
        let mut labels = Vec::new();
        let mut values = Vec::new();
        let mut tcols = 0;
        for p in parts {
            if p.dim() != dim || p.environments.is_some() != envs.is_some() {
                return Err(LhucError::Dataset("incompatible datasets".into()));
            }
            feats.extend_from_slice(p.features.as_slice());
            speakers.extend_from_slice(&p.speakers);
            segments.extend_from_slice(&p.segments);
            if let (Some(e), Some(pe)) = (envs.as_mut(), p.environments.as_ref()) {
                e.extend_from_slice(pe);
            }
            match (&p.targets, &first.targets) {
                (Targets::Classes { labels: l, n_classes: a }, Targets::Classes { n_classes: b, .. })
                    if a == b =>
                {
                    labels.extend_from_slice(l)
                }
                (Targets::Values(m), Targets::Values(_)) => {
                    tcols = m.cols();
                    values.extend_from_slice(m.as_slice());
                }
                _ => return Err(LhucError::Dataset("mixed target kinds".into())),
            }
        }
        let n = speakers.len();
        let targets = match &first.targets {
            Targets::Classes { n_classes, .. } => Targets::Classes {
                labels,
                n_classes: *n_classes,
            },
            Targets::Values(_) => Targets::Values(Matrix::from_vec(n, tcols, values)?),
        };
        Self::new(Matrix::from_vec(n, dim, feats)?, targets, speakers, segments, envs)
    }

    pub fn map_scalar<U: Scalar>(&self) -> FrameDataset<U> {
        FrameDataset {
            features: self.features.map_scalar(),
            targets: match &self.targets {
                Targets::Classes { labels, n_classes } => Targets::Classes {
                    labels: labels.clone(),
                    n_classes: *n_classes,
                },
                Targets::Values(m) => Targets::Values(m.map_scalar()),
            },
            speakers: self.speakers.clone(),
            segments: self.segments.clone(),
            environments: self.environments.clone(),
        }
    }
}
