//! Representation-generic Gaussian arithmetic.
//!
//! Every operation has a covariance-based path and a Cholesky-based path.
//! The Cholesky-based path never forms a covariance matrix: sums of the form
//! `G·Σ·Gᵀ + P` are assembled by stacking transposed factors and reading the
//! triangular factor off a QR decomposition.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::real::Real;

/// Which parametrisation a covariance (or a whole computation) uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Rep {
    /// Covariance matrices, combined with products and sums.
    Dense,
    /// Generalised Cholesky factors, combined with QR decompositions.
    Factor,
}

impl fmt::Display for Rep {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Rep::Dense => "dense",
            Rep::Factor => "factor",
        })
    }
}

impl FromStr for Rep {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "dense" | "covariance" | "cov" => Ok(Rep::Dense),
            "factor" | "cholesky" | "chol" => Ok(Rep::Factor),
            other => Err(format!("unknown representation '{other}'")),
        }
    }
}

/// A covariance matrix `Σ`, stored either directly or as a square factor `L`
/// with `Σ = L·Lᵀ`.
///
/// Factors need not be triangular. Factors produced by [`qr_r_factor`] and
/// everything built on it are lower triangular with a nonnegative diagonal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", bound = "T: Real")]
pub enum CovarianceRep<T: Real> {
    Dense(#[serde(with = "crate::ssm::rows")] DMatrix<T>),
    Factor(#[serde(with = "crate::ssm::rows")] DMatrix<T>),
}

impl<T: Real> CovarianceRep<T> {
    pub fn zeros(dim: usize, rep: Rep) -> Self {
        let z = DMatrix::zeros(dim, dim);
        match rep {
            Rep::Dense => CovarianceRep::Dense(z),
            Rep::Factor => CovarianceRep::Factor(z),
        }
    }

    pub fn identity(dim: usize, rep: Rep) -> Self {
        let i = DMatrix::identity(dim, dim);
        match rep {
            Rep::Dense => CovarianceRep::Dense(i),
            Rep::Factor => CovarianceRep::Factor(i),
        }
    }

    pub fn dim(&self) -> usize {
        self.matrix().nrows()
    }

    pub fn rep(&self) -> Rep {
        match self {
            CovarianceRep::Dense(_) => Rep::Dense,
            CovarianceRep::Factor(_) => Rep::Factor,
        }
    }

    /// The stored matrix: `Σ` for `Dense`, `L` for `Factor`.
    pub fn matrix(&self) -> &DMatrix<T> {
        match self {
            CovarianceRep::Dense(m) | CovarianceRep::Factor(m) => m,
        }
    }

    /// The covariance matrix itself, squaring factors.
    pub fn to_dense(&self) -> DMatrix<T> {
        match self {
            CovarianceRep::Dense(s) => s.clone(),
            CovarianceRep::Factor(l) => l * l.transpose(),
        }
    }

    /// Converts into the requested parametrisation.
    pub fn into_rep(self, rep: Rep) -> Result<Self> {
        match (self, rep) {
            (c @ CovarianceRep::Dense(_), Rep::Dense) => Ok(c),
            (c @ CovarianceRep::Factor(_), Rep::Factor) => Ok(c),
            (CovarianceRep::Factor(l), Rep::Dense) => Ok(CovarianceRep::Dense(&l * l.transpose())),
            (c @ CovarianceRep::Dense(_), Rep::Factor) => to_factor(c),
        }
    }

    pub(crate) fn expect_factor(&self) -> Result<&DMatrix<T>> {
        match self {
            CovarianceRep::Factor(l) => Ok(l),
            CovarianceRep::Dense(_) => Err(Error::RepMismatch {
                expected: Rep::Factor,
                found: Rep::Dense,
            }),
        }
    }

    fn validate(&self) -> Result<()> {
        let m = self.matrix();
        if !m.is_square() {
            return Err(Error::Dimension(format!(
                "covariance must be square, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        Ok(())
    }
}

/// A Gaussian `N(mean, cov)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct Gaussian<T: Real> {
    #[serde(with = "crate::ssm::vector")]
    pub mean: DVector<T>,
    pub cov: CovarianceRep<T>,
}

impl<T: Real> Gaussian<T> {
    pub fn new(mean: DVector<T>, cov: CovarianceRep<T>) -> Result<Self> {
        cov.validate()?;
        if mean.len() != cov.dim() {
            return Err(Error::Dimension(format!(
                "mean has length {} but covariance is {}x{}",
                mean.len(),
                cov.dim(),
                cov.dim()
            )));
        }
        Ok(Gaussian { mean, cov })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn rep(&self) -> Rep {
        self.cov.rep()
    }

    pub fn into_rep(self, rep: Rep) -> Result<Self> {
        Ok(Gaussian {
            mean: self.mean,
            cov: self.cov.into_rep(rep)?,
        })
    }

    pub fn covariance(&self) -> DMatrix<T> {
        self.cov.to_dense()
    }

    pub fn is_finite(&self) -> bool {
        self.mean.iter().all(|x| x.is_finite()) && self.cov.matrix().iter().all(|x| x.is_finite())
    }

    /// Marginal standard deviations, `sqrt(diag Σ)`.
    pub fn marginal_stddev(&self) -> DVector<T> {
        match &self.cov {
            CovarianceRep::Dense(s) => s.diagonal().map(|v| v.max(T::zero()).sqrt()),
            CovarianceRep::Factor(l) => DVector::from_iterator(l.nrows(), l.row_iter().map(|r| r.norm())),
        }
    }
}

/// An affine Gaussian conditional `p(a | b) = N(gain·b + offset, noise)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct AffineConditional<T: Real> {
    #[serde(with = "crate::ssm::rows")]
    pub gain: DMatrix<T>,
    #[serde(with = "crate::ssm::vector")]
    pub offset: DVector<T>,
    pub noise: CovarianceRep<T>,
}

impl<T: Real> AffineConditional<T> {
    pub fn new(gain: DMatrix<T>, offset: DVector<T>, noise: CovarianceRep<T>) -> Result<Self> {
        noise.validate()?;
        if gain.nrows() != offset.len() || offset.len() != noise.dim() {
            return Err(Error::Dimension(format!(
                "conditional with {}x{} gain, offset of length {}, noise of dimension {}",
                gain.nrows(),
                gain.ncols(),
                offset.len(),
                noise.dim()
            )));
        }
        Ok(AffineConditional { gain, offset, noise })
    }

    /// `N(x, 0)`: the conditional that returns its input unchanged.
    pub fn identity(dim: usize, rep: Rep) -> Self {
        AffineConditional {
            gain: DMatrix::identity(dim, dim),
            offset: DVector::zeros(dim),
            noise: CovarianceRep::zeros(dim, rep),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.gain.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.gain.nrows()
    }

    pub fn rep(&self) -> Rep {
        self.noise.rep()
    }

    pub fn into_rep(self, rep: Rep) -> Result<Self> {
        Ok(AffineConditional {
            noise: self.noise.into_rep(rep)?,
            ..self
        })
    }
}

/// Stacks `top` over `bottom`.
pub(crate) fn vstack<T: Real>(top: &DMatrix<T>, bottom: &DMatrix<T>) -> DMatrix<T> {
    debug_assert_eq!(top.ncols(), bottom.ncols());
    let mut out = DMatrix::zeros(top.nrows() + bottom.nrows(), top.ncols());
    out.rows_mut(0, top.nrows()).copy_from(top);
    out.rows_mut(top.nrows(), bottom.nrows()).copy_from(bottom);
    out
}

/// Returns `Rᵀ` for a QR decomposition `Q·R = M` of a tall matrix.
///
/// The result `L` is lower triangular with a nonnegative diagonal and
/// satisfies `L·Lᵀ = Mᵀ·M`. Rows of `R` are sign-flipped so that the output
/// is unique whenever `M` has full column rank. Callers pad short matrices
/// with zero rows themselves.
pub fn qr_r_factor<T: Real>(m: &DMatrix<T>) -> Result<DMatrix<T>> {
    let r = qr_r_upper(m)?;
    Ok(r.transpose())
}

/// Upper-triangular `R` with nonnegative diagonal; `qr_r_factor` without the transpose.
fn qr_r_upper<T: Real>(m: &DMatrix<T>) -> Result<DMatrix<T>> {
    let (n, cols) = m.shape();
    if n < cols {
        return Err(Error::Dimension(format!(
            "QR factor needs at least as many rows as columns, got {n}x{cols}"
        )));
    }
    if cols == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    let mut r = m.clone().qr().r();
    for i in 0..cols {
        if r[(i, i)] < T::zero() {
            r.row_mut(i).neg_mut();
        }
    }
    Ok(r)
}

/// Converts a covariance to a square generalised Cholesky factor.
///
/// Factors pass through unchanged. Positive (semi)definite matrices with
/// exactly zero pivots go through a pivot-tolerant Cholesky; anything the
/// Cholesky cannot reproduce falls back to a symmetric eigendecomposition
/// with small negative eigenvalues clamped to zero, re-triangularised by QR.
pub fn to_factor<T: Real>(rep: CovarianceRep<T>) -> Result<CovarianceRep<T>> {
    let sigma = match rep {
        f @ CovarianceRep::Factor(_) => return Ok(f),
        CovarianceRep::Dense(s) => s,
    };
    if !sigma.is_square() {
        return Err(Error::Dimension(format!(
            "covariance must be square, got {}x{}",
            sigma.nrows(),
            sigma.ncols()
        )));
    }
    let scale = sigma.norm();
    if let Some(l) = semidefinite_cholesky(&sigma) {
        let err = (&l * l.transpose() - &sigma).norm();
        if err <= T::cast(10.0 * T::SINGULAR_TOL) * scale {
            return Ok(CovarianceRep::Factor(l));
        }
    }
    let eig = sigma.clone().symmetric_eigen();
    let min_eig = eig.eigenvalues.min();
    if min_eig < -T::cast(T::INDEFINITE_TOL) * scale {
        return Err(Error::IndefiniteCovariance {
            eigenvalue: min_eig.as_f64(),
        });
    }
    Ok(CovarianceRep::Factor(eigen_factor(eig)?))
}

/// Factor of the projection of a symmetric matrix onto the PSD cone.
///
/// Unlike [`to_factor`] this clamps every negative eigenvalue, whatever its
/// size. Meant for model construction, where a printed noise matrix may be
/// slightly indefinite.
pub fn nearest_psd_factor<T: Real>(sigma: &DMatrix<T>) -> Result<DMatrix<T>> {
    if !sigma.is_square() {
        return Err(Error::Dimension(format!(
            "covariance must be square, got {}x{}",
            sigma.nrows(),
            sigma.ncols()
        )));
    }
    let sym = (sigma + sigma.transpose()) * T::cast(0.5);
    eigen_factor(sym.symmetric_eigen())
}

fn eigen_factor<T: Real>(eig: nalgebra::SymmetricEigen<T, nalgebra::Dyn>) -> Result<DMatrix<T>> {
    let mut l = eig.eigenvectors;
    for (j, lambda) in eig.eigenvalues.iter().enumerate() {
        let s = lambda.max(T::zero()).sqrt();
        l.column_mut(j).scale_mut(s);
    }
    qr_r_factor(&l.transpose())
}

/// Cholesky that tolerates exactly-zero pivots by zeroing the column.
/// Returns `None` on a clearly negative pivot.
fn semidefinite_cholesky<T: Real>(sigma: &DMatrix<T>) -> Option<DMatrix<T>> {
    let n = sigma.nrows();
    let max_diag = (0..n).map(|i| sigma[(i, i)].abs()).fold(T::zero(), T::max);
    let pivot_tol = T::cast(T::SINGULAR_TOL) * max_diag;
    let mut l = DMatrix::<T>::zeros(n, n);
    for j in 0..n {
        let mut d = sigma[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if d > pivot_tol {
            let ljj = d.sqrt();
            l[(j, j)] = ljj;
            for i in (j + 1)..n {
                let mut s = sigma[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)];
                }
                l[(i, j)] = s / ljj;
            }
        } else if d < -pivot_tol || !d.is_finite() {
            return None;
        }
    }
    Some(l)
}

/// Pushes `N(m, C)` through `x ↦ gain·x + offset` and adds independent noise.
///
/// Shared by marginalisation and conditional composition; the two only
/// differ in what plays the role of the source covariance.
fn push_covariance<T: Real>(
    gain: &DMatrix<T>,
    source: &CovarianceRep<T>,
    noise: &CovarianceRep<T>,
) -> Result<CovarianceRep<T>> {
    match (source, noise) {
        (CovarianceRep::Dense(c), CovarianceRep::Dense(p)) => {
            Ok(CovarianceRep::Dense(gain * c * gain.transpose() + p))
        }
        (CovarianceRep::Factor(lc), CovarianceRep::Factor(lp)) => {
            let stacked = vstack(&(lc.transpose() * gain.transpose()), &lp.transpose());
            Ok(CovarianceRep::Factor(qr_r_factor(&stacked)?))
        }
        (a, b) => Err(Error::RepMismatch {
            expected: a.rep(),
            found: b.rep(),
        }),
    }
}

/// `∫ p(a | b) p(b) db` for an affine conditional: `N(G·m + p, G·C·Gᵀ + P)`.
pub fn marginalize<T: Real>(cond: &AffineConditional<T>, g: &Gaussian<T>) -> Result<Gaussian<T>> {
    if cond.input_dim() != g.dim() {
        return Err(Error::Dimension(format!(
            "conditional expects input of dimension {}, Gaussian has {}",
            cond.input_dim(),
            g.dim()
        )));
    }
    let mean = &cond.gain * &g.mean + &cond.offset;
    let cov = push_covariance(&cond.gain, &g.cov, &cond.noise)?;
    Ok(Gaussian { mean, cov })
}

/// Merges `p(a | b)` and `p(b | c)` into `p(a | c)` by integrating out `b`.
pub fn compose_conditionals<T: Real>(
    outer: &AffineConditional<T>,
    inner: &AffineConditional<T>,
) -> Result<AffineConditional<T>> {
    if outer.input_dim() != inner.output_dim() {
        return Err(Error::Dimension(format!(
            "outer conditional expects {} inputs, inner produces {}",
            outer.input_dim(),
            inner.output_dim()
        )));
    }
    let gain = &outer.gain * &inner.gain;
    let offset = &outer.gain * &inner.offset + &outer.offset;
    let noise = push_covariance(&outer.gain, &inner.noise, &outer.noise)?;
    Ok(AffineConditional { gain, offset, noise })
}

/// Output of [`condition_block_qr`].
#[derive(Debug, Clone, PartialEq)]
pub struct BlockQrConditioning<T: Real> {
    /// Lower-triangular factor of the marginal covariance of the observation.
    pub marginal_factor: DMatrix<T>,
    /// Gain mapping an observation residual to a state correction.
    pub gain: DMatrix<T>,
    /// Lower-triangular factor of the conditional covariance of the state.
    pub conditional_factor: DMatrix<T>,
}

/// Conditions `x ~ N(·, L·Lᵀ)` on `y = H·x + noise` with a single QR decomposition of
///
/// ```text
/// [ Lrᵀ     0  ]       [ R1  R2 ]
/// [ Lᵀ·Hᵀ   Lᵀ ] = Q · [ 0   R3 ]
/// ```
///
/// and returns `R1ᵀ` (factor of `H·Σ·Hᵀ + Lr·Lrᵀ`), `(R1⁻¹·R2)ᵀ` (the gain)
/// and `R3ᵀ` (factor of the conditional covariance). No Cholesky downdate
/// is involved.
pub fn condition_block_qr<T: Real>(
    prior: &Gaussian<T>,
    h: &DMatrix<T>,
    noise_factor: &DMatrix<T>,
) -> Result<BlockQrConditioning<T>> {
    block_qr(prior.cov.expect_factor()?, h, noise_factor).map_err(|e| match e {
        BlockQrError::Singular => Error::SingularInnovation,
        BlockQrError::Other(e) => e,
    })
}

pub(crate) enum BlockQrError {
    Singular,
    Other(Error),
}

impl From<Error> for BlockQrError {
    fn from(e: Error) -> Self {
        BlockQrError::Other(e)
    }
}

pub(crate) fn block_qr<T: Real>(
    state_factor: &DMatrix<T>,
    h: &DMatrix<T>,
    noise_factor: &DMatrix<T>,
) -> std::result::Result<BlockQrConditioning<T>, BlockQrError> {
    let n = state_factor.nrows();
    let d = h.nrows();
    if h.ncols() != n || noise_factor.shape() != (d, d) || !state_factor.is_square() {
        return Err(Error::Dimension(format!(
            "block QR with {}x{} state factor, {}x{} map, {}x{} noise factor",
            state_factor.nrows(),
            state_factor.ncols(),
            h.nrows(),
            h.ncols(),
            noise_factor.nrows(),
            noise_factor.ncols()
        ))
        .into());
    }
    let mut block = DMatrix::<T>::zeros(d + n, d + n);
    block
        .view_mut((0, 0), (d, d))
        .copy_from(&noise_factor.transpose());
    let lt = state_factor.transpose();
    block.view_mut((d, 0), (n, d)).copy_from(&(&lt * h.transpose()));
    block.view_mut((d, d), (n, n)).copy_from(&lt);

    let r = qr_r_upper(&block)?;
    let r1 = r.view((0, 0), (d, d)).into_owned();
    let r2 = r.view((0, d), (d, n)).into_owned();
    let r3 = r.view((d, d), (n, n)).into_owned();

    let scale = r1.norm();
    let tol = T::cast(T::SINGULAR_TOL) * scale;
    if !scale.is_finite() || (0..d).any(|i| r1[(i, i)].abs() <= tol || !r1[(i, i)].is_finite()) {
        return Err(BlockQrError::Singular);
    }
    let solved = r1.solve_upper_triangular(&r2).ok_or(BlockQrError::Singular)?;
    Ok(BlockQrConditioning {
        marginal_factor: r1.transpose(),
        gain: solved.transpose(),
        conditional_factor: r3.transpose(),
    })
}

/// `log N(y; mean, cov)`.
pub fn log_density<T: Real>(g: &Gaussian<T>, y: &DVector<T>) -> Result<T> {
    if y.len() != g.dim() {
        return Err(Error::Dimension(format!(
            "point has length {}, Gaussian has dimension {}",
            y.len(),
            g.dim()
        )));
    }
    let n = g.dim();
    let residual = y - &g.mean;
    let two_pi = T::two_pi();
    let (half_logdet, maha) = match &g.cov {
        CovarianceRep::Dense(s) => {
            let chol = s.clone().cholesky().ok_or(Error::SingularCovariance)?;
            let l = chol.l();
            check_triangular_diag(&l)?;
            let z = chol.solve(&residual);
            let half_logdet = l.diagonal().iter().fold(T::zero(), |acc, v| acc + v.ln());
            (half_logdet, residual.dot(&z))
        }
        CovarianceRep::Factor(l) => {
            let l = qr_r_factor(&l.transpose())?;
            check_triangular_diag(&l)?;
            let z = l
                .solve_lower_triangular(&residual)
                .ok_or(Error::SingularCovariance)?;
            let half_logdet = l.diagonal().iter().fold(T::zero(), |acc, v| acc + v.abs().ln());
            (half_logdet, z.norm_squared())
        }
    };
    Ok(-T::cast(0.5) * (T::cast(n as f64) * two_pi.ln() + maha) - half_logdet)
}

fn check_triangular_diag<T: Real>(l: &DMatrix<T>) -> Result<()> {
    let scale = l.diagonal().iter().fold(T::zero(), |acc, v| acc.max(v.abs()));
    let tol = T::cast(T::SINGULAR_TOL) * scale;
    if scale == T::zero() || l.diagonal().iter().any(|v| v.abs() <= tol || !v.is_finite()) {
        return Err(Error::SingularCovariance);
    }
    Ok(())
}
