//! Fixed simplex-ETF prototypes and head/tail subspace projectors.

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::seed;

/// Relative cutoff below which singular values count as zero in the pseudoinverse.
pub const PINV_RELATIVE_CUTOFF: f64 = 1e-10;

/// Tolerance on `‖x‖ = 1` for inputs that must be unit vectors.
pub const UNIT_NORM_TOLERANCE: f64 = 1e-6;

/// A `d × d` orthonormal matrix drawn by orthonormalizing a seeded Gaussian matrix.
///
/// One basis is generated per experiment; every task's ETF uses its leading
/// columns, so all clients derive identical prototypes from the shared seed.
#[derive(Debug, Clone, PartialEq)]
pub struct OrthoBasis {
    seed: u64,
    matrix: DMatrix<f64>,
}

impl OrthoBasis {
    pub fn from_seed(dim: usize, seed: u64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Dimension("basis dimension must be positive".into()));
        }
        let mut rng = seed::rng(seed);
        // Filled column by column so the draw order does not depend on storage layout.
        let mut g = DMatrix::<f64>::zeros(dim, dim);
        for j in 0..dim {
            for i in 0..dim {
                g[(i, j)] = StandardNormal.sample(&mut rng);
            }
        }
        let qr = g.qr();
        let r = qr.r();
        let mut q = qr.q();
        // Fix the sign ambiguity of QR so the basis is unique for a given seed.
        for j in 0..dim {
            if r[(j, j)] < 0.0 {
                q.column_mut(j).neg_mut();
            }
        }
        Ok(Self { seed, matrix: q })
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }
}

/// Fixed classifier prototypes: column `c` is the unit direction of class `c`.
#[derive(Debug, Clone, PartialEq)]
pub struct EtfPrototypes {
    class_count: usize,
    basis_seed: u64,
    prototypes: DMatrix<f64>,
}

/// Builds the simplex ETF `sqrt(C/(C-1)) · U · (I - 11ᵀ/C)` for `class_count`
/// classes in `feature_dim` dimensions, with `U` the leading columns of the
/// seeded orthonormal basis.
pub fn build_etf(class_count: usize, feature_dim: usize, basis_seed: u64) -> Result<EtfPrototypes> {
    check_etf_dims(class_count, feature_dim)?;
    let basis = OrthoBasis::from_seed(feature_dim, basis_seed)?;
    EtfPrototypes::from_basis(&basis, class_count)
}

fn check_etf_dims(class_count: usize, feature_dim: usize) -> Result<()> {
    if class_count < 2 {
        return Err(Error::Dimension(format!(
            "an ETF needs at least 2 classes, got {class_count}"
        )));
    }
    if class_count > feature_dim {
        return Err(Error::Dimension(format!(
            "class count {class_count} exceeds feature dimension {feature_dim}"
        )));
    }
    Ok(())
}

impl EtfPrototypes {
    pub fn from_basis(basis: &OrthoBasis, class_count: usize) -> Result<Self> {
        check_etf_dims(class_count, basis.dim())?;
        let u = basis.matrix().columns(0, class_count).into_owned();
        let mut etf = Self::from_orthonormal_columns(&u)?;
        etf.basis_seed = basis.seed();
        Ok(etf)
    }

    /// Builds the frame from caller-supplied orthonormal columns `U` (`d × C`).
    ///
    /// Test hook for closed-form checks; experiments always go through a seeded basis.
    #[doc(hidden)]
    pub fn from_orthonormal_columns(u: &DMatrix<f64>) -> Result<Self> {
        let (d, c) = u.shape();
        check_etf_dims(c, d)?;
        let cf = c as f64;
        let scale = (cf / (cf - 1.0)).sqrt();
        let mut w = DMatrix::<f64>::zeros(d, c);
        for i in 0..d {
            let row_mean = u.row(i).sum() / cf;
            for j in 0..c {
                w[(i, j)] = scale * (u[(i, j)] - row_mean);
            }
        }
        Ok(Self {
            class_count: c,
            basis_seed: 0,
            prototypes: w,
        })
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn feature_dim(&self) -> usize {
        self.prototypes.nrows()
    }

    pub fn basis_seed(&self) -> u64 {
        self.basis_seed
    }

    /// The `d × C` prototype matrix.
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.prototypes
    }

    pub fn prototype(&self, class: usize) -> DVector<f64> {
        self.prototypes.column(class).into_owned()
    }

    pub fn gram(&self) -> DMatrix<f64> {
        self.prototypes.transpose() * &self.prototypes
    }

    /// The closed-form Gram matrix `(C/(C-1)) I - (1/(C-1)) 11ᵀ`.
    pub fn expected_gram(class_count: usize) -> DMatrix<f64> {
        let c = class_count as f64;
        DMatrix::from_fn(class_count, class_count, |i, j| {
            if i == j {
                1.0
            } else {
                -1.0 / (c - 1.0)
            }
        })
    }

    /// Largest absolute deviation of the Gram matrix from its closed form.
    pub fn gram_deviation(&self) -> f64 {
        (self.gram() - Self::expected_gram(self.class_count)).amax()
    }

    /// `z_c = ⟨x, w_c⟩` for every class.
    pub fn scores(&self, x: &DVector<f64>) -> DVector<f64> {
        self.prototypes.tr_mul(x)
    }

    fn columns_of(&self, classes: &[usize]) -> DMatrix<f64> {
        DMatrix::from_fn(self.feature_dim(), classes.len(), |i, j| {
            self.prototypes[(i, classes[j])]
        })
    }
}

/// Orthogonal projectors onto the spans of the head (current task) and tail
/// (earlier tasks) prototypes.
#[derive(Debug, Clone, PartialEq)]
pub struct SubspaceProjectors {
    head_classes: Vec<usize>,
    tail_classes: Vec<usize>,
    head: DMatrix<f64>,
    tail: DMatrix<f64>,
    head_numerical_rank: usize,
    tail_numerical_rank: usize,
}

/// Rank information for debug output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct RankReport {
    pub head_rank_norm: usize,
    pub tail_rank_norm: usize,
    pub head_numerical_rank: usize,
    pub tail_numerical_rank: usize,
}

pub fn build_projectors(
    etf: &EtfPrototypes,
    head_classes: &[usize],
    tail_classes: &[usize],
) -> Result<SubspaceProjectors> {
    check_partition(etf.class_count(), head_classes, tail_classes)?;
    let (head, head_rank) = projector(&etf.columns_of(head_classes))?;
    let (tail, tail_rank) = projector(&etf.columns_of(tail_classes))?;
    Ok(SubspaceProjectors {
        head_classes: head_classes.to_vec(),
        tail_classes: tail_classes.to_vec(),
        head,
        tail,
        head_numerical_rank: head_rank,
        tail_numerical_rank: tail_rank,
    })
}

fn check_partition(class_count: usize, head: &[usize], tail: &[usize]) -> Result<()> {
    for (name, side) in [("head", head), ("tail", tail)] {
        if side.len() < 2 {
            return Err(Error::Partition(format!(
                "{name} side needs at least 2 classes, got {}",
                side.len()
            )));
        }
        if let Some(&c) = side.iter().find(|&&c| c >= class_count) {
            return Err(Error::Partition(format!(
                "{name} class {c} is not one of the {class_count} prototype classes"
            )));
        }
    }
    let mut seen = vec![0u8; class_count];
    for &c in head.iter().chain(tail) {
        seen[c] += 1;
        if seen[c] > 1 {
            return Err(Error::Partition(format!("class {c} appears more than once")));
        }
    }
    if let Some(c) = seen.iter().position(|&n| n == 0) {
        return Err(Error::Partition(format!(
            "class {c} is in neither the head nor the tail side"
        )));
    }
    Ok(())
}

/// `W (WᵀW)† Wᵀ` with the pseudoinverse taken through an eigendecomposition of the Gram matrix.
/// Returns the projector and the numerical rank of `W`.
fn projector(w: &DMatrix<f64>) -> Result<(DMatrix<f64>, usize)> {
    // The Gram matrix is symmetric PSD, so its eigendecomposition is its SVD.
    let gram = w.tr_mul(w);
    let eig = gram
        .try_symmetric_eigen(f64::EPSILON, 10_000)
        .ok_or_else(|| Error::Numerical("eigendecomposition of the prototype Gram matrix did not converge".into()))?;
    let sigma_max = eig.eigenvalues.amax();
    let cutoff = PINV_RELATIVE_CUTOFF * sigma_max;
    let k = w.ncols();
    let mut pinv = DMatrix::<f64>::zeros(k, k);
    let mut rank = 0;
    for (i, &s) in eig.eigenvalues.iter().enumerate() {
        if s > cutoff {
            rank += 1;
            let q = eig.eigenvectors.column(i);
            pinv += (q * q.transpose()) / s;
        }
    }
    Ok((w * pinv * w.transpose(), rank))
}

impl SubspaceProjectors {
    pub fn head_classes(&self) -> &[usize] {
        &self.head_classes
    }

    pub fn tail_classes(&self) -> &[usize] {
        &self.tail_classes
    }

    pub fn head(&self) -> &DMatrix<f64> {
        &self.head
    }

    pub fn tail(&self) -> &DMatrix<f64> {
        &self.tail
    }

    /// `|C_H| - 1`.
    pub fn head_rank_norm(&self) -> usize {
        self.head_classes.len() - 1
    }

    /// `|C_T| - 1`.
    pub fn tail_rank_norm(&self) -> usize {
        self.tail_classes.len() - 1
    }

    pub fn rank_report(&self) -> RankReport {
        RankReport {
            head_rank_norm: self.head_rank_norm(),
            tail_rank_norm: self.tail_rank_norm(),
            head_numerical_rank: self.head_numerical_rank,
            tail_numerical_rank: self.tail_numerical_rank,
        }
    }

    pub fn project_head(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.head * x
    }

    pub fn project_tail(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.tail * x
    }

    /// Rank-normalized energies without the unit-norm check.
    pub fn raw_energies(&self, x: &DVector<f64>) -> (f64, f64) {
        let eh = self.project_head(x).norm_squared() / self.head_rank_norm() as f64;
        let et = self.project_tail(x).norm_squared() / self.tail_rank_norm() as f64;
        (eh, et)
    }
}

/// `(‖P_H x‖² / (|C_H|-1), ‖P_T x‖² / (|C_T|-1))` for a unit vector `x`.
pub fn subspace_energies(proj: &SubspaceProjectors, x: &DVector<f64>) -> Result<(f64, f64)> {
    check_unit(x)?;
    Ok(proj.raw_energies(x))
}

pub(crate) fn check_unit(x: &DVector<f64>) -> Result<()> {
    let norm = x.norm();
    if !norm.is_finite() || (norm - 1.0).abs() > UNIT_NORM_TOLERANCE {
        return Err(Error::NotNormalized { norm });
    }
    Ok(())
}
