use super::hotelling::{hotelling_match, DEFAULT_P_THRESHOLD};
use super::stats::Prototype;
use crate::error::{Error, Result};
use crate::nn::Matrix;
use crate::scalar::Scalar;

/// Ordered clusters of training inputs; their means serve as context vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct PrototypeStore {
    dim: usize,
    clusters: Vec<Prototype>,
    p_threshold: f64,
}

/// Outcome of assigning one batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Assignment {
    pub cluster: usize,
    pub created: bool,
}

impl PrototypeStore {
    pub fn new(dim: usize) -> Self {
        Self::with_threshold(dim, DEFAULT_P_THRESHOLD)
    }

    pub fn with_threshold(dim: usize, p_threshold: f64) -> Self {
        PrototypeStore {
            dim,
            clusters: Vec::new(),
            p_threshold,
        }
    }

    pub fn from_clusters(dim: usize, clusters: Vec<Prototype>, p_threshold: f64) -> Result<Self> {
        if let Some(c) = clusters.iter().find(|c| c.dim() != dim) {
            return Err(Error::shape("PrototypeStore", dim, c.dim()));
        }
        Ok(PrototypeStore {
            dim,
            clusters,
            p_threshold,
        })
    }

    /// The same clusters with their scatter matrices dropped.
    pub fn without_covariance(&self) -> Result<Self> {
        let clusters = self
            .clusters
            .iter()
            .map(Prototype::without_covariance)
            .collect();
        Self::from_clusters(self.dim, clusters, self.p_threshold)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.clusters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clusters.is_empty()
    }

    pub fn p_threshold(&self) -> f64 {
        self.p_threshold
    }

    pub fn clusters(&self) -> &[Prototype] {
        &self.clusters
    }

    pub fn get(&self, index: usize) -> Option<&Prototype> {
        self.clusters.get(index)
    }

    /// Appends a cluster and returns its index.
    pub fn push(&mut self, proto: Prototype) -> Result<usize> {
        if proto.dim() != self.dim {
            return Err(Error::shape("PrototypeStore::push", self.dim, proto.dim()));
        }
        self.clusters.push(proto);
        Ok(self.clusters.len() - 1)
    }

    /// Prototype vectors as rows, in cluster order.
    pub fn prototypes<T: Scalar>(&self) -> Matrix<T> {
        let mut m = Matrix::zeros(self.clusters.len(), self.dim);
        for (r, c) in self.clusters.iter().enumerate() {
            m.row_mut(r).copy_from_slice(&c.vector::<T>());
        }
        m
    }

    /// Index of the prototype nearest to `x` in Euclidean distance; ties go
    /// to the lowest index.
    pub fn nearest<T: Scalar>(&self, x: &[T]) -> Result<usize> {
        if self.clusters.is_empty() {
            return Err(Error::Empty("prototype store"));
        }
        if x.len() != self.dim {
            return Err(Error::shape("infer_context", self.dim, x.len()));
        }
        let mut best = (0, f64::INFINITY);
        for (j, c) in self.clusters.iter().enumerate() {
            let d = c.distance_sq(x);
            if d < best.1 {
                best = (j, d);
            }
        }
        Ok(best.0)
    }

    /// Nearest prototype vector and its index.
    pub fn infer_context<T: Scalar>(&self, x: &[T]) -> Result<(Vec<T>, usize)> {
        let j = self.nearest(x)?;
        Ok((self.clusters[j].vector(), j))
    }

    /// [`PrototypeStore::nearest`] for every row.
    pub fn nearest_rows<T: Scalar>(&self, x: &Matrix<T>) -> Result<Vec<usize>> {
        x.iter_rows().map(|r| self.nearest(r)).collect()
    }

    /// Greedy online clustering of one single-task batch: the batch joins the
    /// first cluster (in creation order) that passes the Hotelling test, or
    /// starts a new cluster.
    ///
    /// When the two sets together have too few samples for the dimension,
    /// the F coefficient is non-positive, so `f ≤ 0 ≤ p` and the batch matches.
    pub fn cluster_batch<T: Scalar>(&mut self, x: &Matrix<T>) -> Result<Assignment> {
        if x.cols() != self.dim {
            return Err(Error::shape("cluster_batch", self.dim, x.cols()));
        }
        if x.rows() < 2 {
            return Err(Error::OutOfRange {
                what: "cluster batch size",
                value: x.rows().to_string(),
                range: ">= 2".into(),
            });
        }
        let batch = Prototype::from_samples(x, true)?;
        for (j, c) in self.clusters.iter_mut().enumerate() {
            let matched = match hotelling_match(&batch, c, self.p_threshold) {
                Ok(m) => m,
                Err(Error::DegenerateDof { .. }) => true,
                Err(e) => return Err(e),
            };
            if matched {
                c.absorb(&batch)?;
                return Ok(Assignment {
                    cluster: j,
                    created: false,
                });
            }
        }
        self.clusters.push(batch);
        Ok(Assignment {
            cluster: self.clusters.len() - 1,
            created: true,
        })
    }
}
