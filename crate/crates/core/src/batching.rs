//! PK identity-balanced sampling and the three-modality batches fed to the losses.

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::rng::Stream;
use crate::synthgen::{Modality, SyntheticDataset};
use crate::tensor::Matrix;

/// `P` identities per batch, `N` instances per identity per modality.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BatchSpec {
    pub identities: usize,
    pub instances: usize,
}

impl Default for BatchSpec {
    fn default() -> Self {
        Self {
            identities: 8,
            instances: 4,
        }
    }
}

impl BatchSpec {
    pub fn new(identities: usize, instances: usize) -> Result<Self> {
        let spec = Self { identities, instances };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.identities < 2 {
            return Err(invalid("batch.identities", "need at least two identities per batch"));
        }
        if self.instances < 1 {
            return Err(invalid("batch.instances", "need at least one instance per identity"));
        }
        Ok(())
    }

    pub fn rows(&self) -> usize {
        self.identities * self.instances
    }
}

/// Observation matrices for one batch. Row `r` of `visible` and `transition`
/// come from the same (identity, instance).
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationBatch {
    pub visible: Matrix,
    pub transition: Matrix,
    pub infrared: Matrix,
    /// Class index (position among training identities) per row.
    pub labels: Vec<usize>,
    /// Dataset (identity, visible instance) per row.
    pub sources: Vec<(usize, usize)>,
}

impl ObservationBatch {
    pub fn get(&self, modality: Modality) -> &Matrix {
        match modality {
            Modality::Visible => &self.visible,
            Modality::Transition => &self.transition,
            Modality::Infrared => &self.infrared,
        }
    }

    pub fn get_mut(&mut self, modality: Modality) -> &mut Matrix {
        match modality {
            Modality::Visible => &mut self.visible,
            Modality::Transition => &mut self.transition,
            Modality::Infrared => &mut self.infrared,
        }
    }
}

/// Encoded features for one batch.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingBatch {
    pub visible: Matrix,
    pub transition: Matrix,
    pub infrared: Matrix,
    pub labels: Vec<usize>,
    /// When set, nothing downstream may propagate gradient into the encoder
    /// through `transition`.
    pub g_detached: bool,
}

impl EmbeddingBatch {
    pub fn new(
        visible: Matrix,
        transition: Matrix,
        infrared: Matrix,
        labels: Vec<usize>,
        g_detached: bool,
    ) -> Result<Self> {
        for m in [&transition, &infrared] {
            if m.shape() != visible.shape() {
                return Err(Error::DimensionMismatch {
                    context: "EmbeddingBatch::new",
                    expected: visible.rows(),
                    actual: m.rows(),
                });
            }
        }
        if labels.len() != visible.rows() {
            return Err(Error::DimensionMismatch {
                context: "EmbeddingBatch::new labels",
                expected: visible.rows(),
                actual: labels.len(),
            });
        }
        Ok(Self {
            visible,
            transition,
            infrared,
            labels,
            g_detached,
        })
    }

    pub fn get(&self, modality: Modality) -> &Matrix {
        match modality {
            Modality::Visible => &self.visible,
            Modality::Transition => &self.transition,
            Modality::Infrared => &self.infrared,
        }
    }

    pub fn get_mut(&mut self, modality: Modality) -> &mut Matrix {
        match modality {
            Modality::Visible => &mut self.visible,
            Modality::Transition => &mut self.transition,
            Modality::Infrared => &mut self.infrared,
        }
    }

    pub fn feat_dim(&self) -> usize {
        self.visible.cols()
    }

    pub fn rows(&self) -> usize {
        self.visible.rows()
    }

    /// Columns `start..start + width` of every partition.
    pub fn column_block(&self, start: usize, width: usize) -> Self {
        Self {
            visible: self.visible.column_block(start, width),
            transition: self.transition.column_block(start, width),
            infrared: self.infrared.column_block(start, width),
            labels: self.labels.clone(),
            g_detached: self.g_detached,
        }
    }
}

/// Gradient of a scalar with respect to each feature partition.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureGrads {
    pub visible: Matrix,
    pub transition: Matrix,
    pub infrared: Matrix,
}

impl FeatureGrads {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            visible: Matrix::zeros(rows, cols),
            transition: Matrix::zeros(rows, cols),
            infrared: Matrix::zeros(rows, cols),
        }
    }

    pub fn like(batch: &EmbeddingBatch) -> Self {
        Self::zeros(batch.rows(), batch.feat_dim())
    }

    pub fn get(&self, modality: Modality) -> &Matrix {
        match modality {
            Modality::Visible => &self.visible,
            Modality::Transition => &self.transition,
            Modality::Infrared => &self.infrared,
        }
    }

    pub fn get_mut(&mut self, modality: Modality) -> &mut Matrix {
        match modality {
            Modality::Visible => &mut self.visible,
            Modality::Transition => &mut self.transition,
            Modality::Infrared => &mut self.infrared,
        }
    }

    /// Two distinct partitions borrowed mutably at once.
    pub fn pair_mut(&mut self, a: Modality, b: Modality) -> (&mut Matrix, &mut Matrix) {
        assert_ne!(a, b, "pair_mut needs two distinct modalities");
        let [v, g, i] = [&mut self.visible, &mut self.transition, &mut self.infrared];
        let mut slots = [Some(v), Some(g), Some(i)];
        let first = slots[a.index()].take().expect("distinct");
        let second = slots[b.index()].take().expect("distinct");
        (first, second)
    }

    /// `self += factor * other`.
    pub fn axpy(&mut self, factor: f64, other: &FeatureGrads) {
        self.visible.axpy(factor, &other.visible);
        self.transition.axpy(factor, &other.transition);
        self.infrared.axpy(factor, &other.infrared);
    }

    pub fn scale(&mut self, factor: f64) {
        self.visible.scale(factor);
        self.transition.scale(factor);
        self.infrared.scale(factor);
    }

    pub fn is_finite(&self) -> bool {
        self.visible.is_finite() && self.transition.is_finite() && self.infrared.is_finite()
    }
}

/// Rows of a batch grouped by identity. Labels are shared by all three
/// modalities, so one grouping serves each of them.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdentityGroups {
    /// Identity labels in order of first appearance.
    pub labels: Vec<usize>,
    /// Row indices of each identity, ascending.
    pub rows: Vec<Vec<usize>>,
}

impl IdentityGroups {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Common group size; errors on ragged or empty groupings.
    pub fn uniform_size(&self) -> Result<usize> {
        let n = self.rows.first().map(Vec::len).ok_or(Error::Empty("identity groups"))?;
        if let Some((i, r)) = self.rows.iter().enumerate().find(|(_, r)| r.len() != n) {
            return Err(Error::RaggedBatch(format!(
                "identity {} has {} rows, identity {} has {}",
                self.labels[0],
                n,
                self.labels[i],
                r.len()
            )));
        }
        Ok(n)
    }

    pub fn flatten(&self) -> Vec<usize> {
        self.rows.iter().flatten().copied().collect()
    }
}

pub fn group_labels(labels: &[usize]) -> IdentityGroups {
    let mut groups = IdentityGroups {
        labels: Vec::new(),
        rows: Vec::new(),
    };
    for (row, &label) in labels.iter().enumerate() {
        match groups.labels.iter().position(|&l| l == label) {
            Some(g) => groups.rows[g].push(row),
            None => {
                groups.labels.push(label);
                groups.rows.push(vec![row]);
            }
        }
    }
    groups
}

pub fn reindex_by_identity(batch: &EmbeddingBatch) -> IdentityGroups {
    group_labels(&batch.labels)
}

/// Draws `P` training identities without replacement, `N` visible instances per
/// identity without replacement (with their aligned transition instances), and
/// `N` infrared instances drawn independently.
pub fn pk_sample(dataset: &SyntheticDataset, spec: &BatchSpec, rng: &mut Stream) -> Result<ObservationBatch> {
    spec.validate()?;
    let train = dataset.train_identities();
    if train.len() < spec.identities {
        return Err(Error::Insufficient(format!(
            "batch needs {} training identities, dataset has {} (short by {})",
            spec.identities,
            train.len(),
            spec.identities - train.len()
        )));
    }
    let available = dataset.instances_per_modality();
    if available < spec.instances {
        return Err(Error::Insufficient(format!(
            "batch needs {} instances per modality, identities have {} (short by {})",
            spec.instances,
            available,
            spec.instances - available
        )));
    }

    let obs_dim = dataset.obs_dim();
    let rows = spec.rows();
    let mut visible = Matrix::zeros(rows, obs_dim);
    let mut transition = Matrix::zeros(rows, obs_dim);
    let mut infrared = Matrix::zeros(rows, obs_dim);
    let mut labels = Vec::with_capacity(rows);
    let mut sources = Vec::with_capacity(rows);

    let chosen = index::sample(rng, train.len(), spec.identities).into_vec();
    let mut r = 0;
    for class in chosen {
        let identity = train[class];
        let v_idx = index::sample(rng, available, spec.instances).into_vec();
        let i_idx = index::sample(rng, available, spec.instances).into_vec();
        for (&vj, &ij) in v_idx.iter().zip(&i_idx) {
            visible
                .row_mut(r)
                .copy_from_slice(dataset.observation(identity, Modality::Visible, vj));
            transition
                .row_mut(r)
                .copy_from_slice(dataset.observation(identity, Modality::Transition, vj));
            infrared
                .row_mut(r)
                .copy_from_slice(dataset.observation(identity, Modality::Infrared, ij));
            labels.push(class);
            sources.push((identity, vj));
            r += 1;
        }
    }
    Ok(ObservationBatch {
        visible,
        transition,
        infrared,
        labels,
        sources,
    })
}
