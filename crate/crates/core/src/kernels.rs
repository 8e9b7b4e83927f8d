//! Kernels on graphs used as relative positional encodings, and Laplacian
//! eigenvector coordinates used as absolute ones.
//!
//! Every spectral kernel is a function `r` applied to the spectrum of the
//! normalized Laplacian, `K_r = Σ r(λ_i) u_i u_iᵀ`:
//!
//! | family      | r(λ)          | matrix form                |
//! |-------------|---------------|----------------------------|
//! | diffusion   | e^{-βλ}       | e^{-βL}                    |
//! | p-step RW   | (1 - γλ)^p    | (I - γL)^p                 |
//! | adjacency   | 1 - λ         | D^{-1/2} A D^{-1/2}        |
//!
//! The diffusion kernel is computed through the eigendecomposition, the
//! p-step kernel by repeated products so that it stays exactly zero beyond
//! `p` hops.

use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use crate::graph::Graph;
use crate::spectral::{matrix_power, symmetric_eig, EigenDecomposition, SpectralError};
use crate::{DenseMatrix, Scalar};

/// Default diffusion time.
pub const DEFAULT_BETA: f64 = 1.0;
/// Default random-walk step size for the 2- and 3-step kernels.
pub const DEFAULT_GAMMA: f64 = 0.5;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum KernelError {
    #[error("invalid kernel parameter: {0}")]
    InvalidParameter(String),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
    #[error("kernel dump parse error on line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("io error: {0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KernelFamily {
    Diffusion { beta: f64 },
    PStepRw { p: u32, gamma: f64 },
    Adjacency,
    AllOnes,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelSpec {
    pub family: KernelFamily,
    pub zero_diagonal: bool,
}

impl KernelSpec {
    pub fn new(family: KernelFamily) -> Result<Self, KernelError> {
        let spec = Self { family, zero_diagonal: false };
        spec.validate()?;
        Ok(spec)
    }

    pub fn diffusion(beta: f64) -> Result<Self, KernelError> {
        Self::new(KernelFamily::Diffusion { beta })
    }

    pub fn p_step_rw(p: u32, gamma: f64) -> Result<Self, KernelError> {
        Self::new(KernelFamily::PStepRw { p, gamma })
    }

    pub fn adjacency() -> Self {
        Self { family: KernelFamily::Adjacency, zero_diagonal: false }
    }

    pub fn all_ones() -> Self {
        Self { family: KernelFamily::AllOnes, zero_diagonal: false }
    }

    pub fn with_zero_diagonal(mut self, zero: bool) -> Self {
        self.zero_diagonal = zero;
        self
    }

    pub fn validate(&self) -> Result<(), KernelError> {
        match self.family {
            KernelFamily::Diffusion { beta } if !(beta > 0.0 && beta.is_finite()) => {
                Err(KernelError::InvalidParameter(format!("beta must be positive, got {beta}")))
            }
            KernelFamily::PStepRw { p, .. } if p < 1 => Err(KernelError::InvalidParameter(format!("p must be at least 1, got {p}"))),
            KernelFamily::PStepRw { gamma, .. } if !(gamma > 0.0 && gamma <= 1.0) => {
                Err(KernelError::InvalidParameter(format!("gamma must be in (0, 1], got {gamma}")))
            }
            _ => Ok(()),
        }
    }

    /// Short family name used in dumps and configs.
    pub fn family_name(&self) -> &'static str {
        match self.family {
            KernelFamily::Diffusion { .. } => "diffusion",
            KernelFamily::PStepRw { .. } => "prw",
            KernelFamily::Adjacency => "adjacency",
            KernelFamily::AllOnes => "allones",
        }
    }
}

impl fmt::Display for KernelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "family={}", self.family_name())?;
        match self.family {
            KernelFamily::Diffusion { beta } => write!(f, " beta={beta}")?,
            KernelFamily::PStepRw { p, gamma } => write!(f, " p={p} gamma={gamma}")?,
            _ => {}
        }
        write!(f, " zero_diagonal={}", self.zero_diagonal)
    }
}

/// One kernel Gram matrix on one graph.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelMatrix<T> {
    pub spec: KernelSpec,
    pub values: DenseMatrix<T>,
}

impl<T: Scalar> KernelMatrix<T> {
    pub fn n(&self) -> usize {
        self.values.rows()
    }

    /// Smallest and largest eigenvalue.
    pub fn eigen_range(&self) -> Result<(T, T), KernelError> {
        let e = symmetric_eig(&self.values)?;
        let n = e.n();
        Ok((e.eigenvalues[0], e.eigenvalues[n - 1]))
    }

    /// Writes the plain-text dump: a header line with `n`, family and
    /// parameters, then `n` rows of space-separated values.
    pub fn write_dump<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "n={} {}", self.n(), self.spec)?;
        for i in 0..self.n() {
            let row: Vec<String> = self.values.row(i).iter().map(|x| format!("{x}")).collect();
            writeln!(w, "{}", row.join(" "))?;
        }
        Ok(())
    }

    pub fn read_dump<R: BufRead>(r: R) -> Result<Self, KernelError> {
        let mut lines = r.lines().enumerate();
        let (_, header) = lines.next().ok_or(KernelError::Parse { line: 1, reason: "empty dump".into() })?;
        let header = header.map_err(|e| KernelError::Io(e.to_string()))?;
        let (n, spec) = parse_header(&header)?;
        let mut data = Vec::with_capacity(n * n);
        for (idx, line) in lines.take(n) {
            let line = line.map_err(|e| KernelError::Io(e.to_string()))?;
            let row: Vec<T> = line
                .split_whitespace()
                .map(|tok| {
                    f64::from_str(tok)
                        .map(T::of)
                        .map_err(|_| KernelError::Parse { line: idx + 1, reason: format!("not a number: {tok:?}") })
                })
                .collect::<Result<_, _>>()?;
            if row.len() != n {
                return Err(KernelError::Parse { line: idx + 1, reason: format!("expected {n} values, got {}", row.len()) });
            }
            data.extend(row);
        }
        let values = DenseMatrix::from_vec(n, n, data).map_err(|e| KernelError::Parse { line: n + 1, reason: e.to_string() })?;
        Ok(Self { spec, values })
    }
}

fn parse_header(header: &str) -> Result<(usize, KernelSpec), KernelError> {
    let bad = |reason: String| KernelError::Parse { line: 1, reason };
    let mut n = None;
    let mut family = None;
    let (mut beta, mut p, mut gamma, mut zero) = (None, None, None, false);
    for tok in header.split_whitespace() {
        let (k, v) = tok.split_once('=').ok_or_else(|| bad(format!("malformed token {tok:?}")))?;
        let num = |v: &str| f64::from_str(v).map_err(|_| bad(format!("bad value for {k}: {v:?}")));
        match k {
            "n" => n = Some(v.parse::<usize>().map_err(|_| bad(format!("bad n: {v:?}")))?),
            "family" => family = Some(v.to_string()),
            "beta" => beta = Some(num(v)?),
            "gamma" => gamma = Some(num(v)?),
            "p" => p = Some(v.parse::<u32>().map_err(|_| bad(format!("bad p: {v:?}")))?),
            "zero_diagonal" => zero = v == "true",
            _ => return Err(bad(format!("unknown header key {k:?}"))),
        }
    }
    let n = n.ok_or_else(|| bad("missing n".into()))?;
    let family = match family.as_deref() {
        Some("diffusion") => KernelFamily::Diffusion { beta: beta.ok_or_else(|| bad("missing beta".into()))? },
        Some("prw") => {
            KernelFamily::PStepRw { p: p.ok_or_else(|| bad("missing p".into()))?, gamma: gamma.ok_or_else(|| bad("missing gamma".into()))? }
        }
        Some("adjacency") => KernelFamily::Adjacency,
        Some("allones") => KernelFamily::AllOnes,
        other => return Err(bad(format!("unknown family {other:?}"))),
    };
    Ok((n, KernelSpec { family, zero_diagonal: zero }))
}

/// Normalized Laplacian together with its eigendecomposition, shared by the
/// diffusion kernel and the Laplacian positional encoding.
#[derive(Debug, Clone)]
pub struct GraphSpectrum<T> {
    pub laplacian: DenseMatrix<T>,
    pub eig: EigenDecomposition<T>,
}

impl<T: Scalar> GraphSpectrum<T> {
    pub fn of(g: &Graph) -> Result<Self, KernelError> {
        let laplacian = g.normalized_laplacian::<T>();
        let eig = symmetric_eig(&laplacian)?;
        Ok(Self { laplacian, eig })
    }

    pub fn diffusion(&self, beta: f64) -> Result<KernelMatrix<T>, KernelError> {
        let spec = KernelSpec::diffusion(beta)?;
        let b = T::of(beta);
        let values = self.eig.apply(|l| (-b * l).exp())?;
        Ok(KernelMatrix { spec, values })
    }

    pub fn laplacian_pe(&self, k: usize) -> LapPeMatrix<T> {
        let n = self.eig.n();
        let mut values = DenseMatrix::zeros(n, k);
        for col in 0..k {
            let src = col + 1;
            if src >= n {
                break;
            }
            for row in 0..n {
                values[(row, col)] = self.eig.eigenvectors[(row, src)];
            }
        }
        let used = k.min(n.saturating_sub(1));
        LapPeMatrix { values, eigenvalues: self.eig.eigenvalues[1..1 + used].to_vec() }
    }
}

/// `e^{-βL}`.
pub fn diffusion_kernel<T: Scalar>(g: &Graph, beta: f64) -> Result<KernelMatrix<T>, KernelError> {
    KernelSpec::diffusion(beta)?;
    GraphSpectrum::of(g)?.diffusion(beta)
}

/// `(I - γL)^p`.
pub fn p_step_rw_kernel<T: Scalar>(g: &Graph, p: u32, gamma: f64) -> Result<KernelMatrix<T>, KernelError> {
    let spec = KernelSpec::p_step_rw(p, gamma)?;
    let step = DenseMatrix::<T>::identity(g.n()).sub(&g.normalized_laplacian::<T>().scale(T::of(gamma))).expect("square");
    let mut values = matrix_power(&step, i64::from(p))?;
    values.symmetrize();
    Ok(KernelMatrix { spec, values })
}

/// `D^{-1/2} A D^{-1/2}`: symmetric, not positive semi-definite.
pub fn adjacency_pe<T: Scalar>(g: &Graph) -> KernelMatrix<T> {
    KernelMatrix { spec: KernelSpec::adjacency(), values: g.normalized_adjacency() }
}

/// All-ones kernel; turns kernel-modulated attention into plain softmax attention.
pub fn all_ones<T: Scalar>(n: usize) -> KernelMatrix<T> {
    KernelMatrix { spec: KernelSpec::all_ones(), values: DenseMatrix::filled(n, n, T::one()) }
}

/// Copy with the diagonal set to zero.
pub fn apply_zero_diagonal<T: Scalar>(k: &KernelMatrix<T>) -> KernelMatrix<T> {
    let mut values = k.values.clone();
    for i in 0..values.rows() {
        values[(i, i)] = T::zero();
    }
    KernelMatrix { spec: k.spec.with_zero_diagonal(true), values }
}

/// Builds any kernel family on `g`, honoring `spec.zero_diagonal`.
pub fn build_kernel<T: Scalar>(g: &Graph, spec: &KernelSpec) -> Result<KernelMatrix<T>, KernelError> {
    spec.validate()?;
    let k = match spec.family {
        KernelFamily::Diffusion { beta } => diffusion_kernel(g, beta)?,
        KernelFamily::PStepRw { p, gamma } => p_step_rw_kernel(g, p, gamma)?,
        KernelFamily::Adjacency => adjacency_pe(g),
        KernelFamily::AllOnes => all_ones(g.n()),
    };
    Ok(if spec.zero_diagonal { apply_zero_diagonal(&k) } else { k })
}

/// Laplacian eigenvector coordinates: `n×k`, one row per node.
#[derive(Debug, Clone, PartialEq)]
pub struct LapPeMatrix<T> {
    pub values: DenseMatrix<T>,
    /// Eigenvalues of the columns actually filled (the rest are zero padding).
    pub eigenvalues: Vec<T>,
}

impl<T: Scalar> LapPeMatrix<T> {
    pub fn k(&self) -> usize {
        self.values.cols()
    }
}

/// Coordinates along the eigenvectors of eigenvalue indices `1..=k` of the
/// normalized Laplacian (index 0 skipped), zero-padded when the graph has
/// fewer than `k + 1` nodes. Only the single smallest eigenvalue is skipped,
/// even on disconnected graphs.
pub fn laplacian_pe<T: Scalar>(g: &Graph, k: usize) -> Result<LapPeMatrix<T>, KernelError> {
    if k == 0 {
        return Err(KernelError::InvalidParameter("LapPE dimension must be at least 1".into()));
    }
    Ok(GraphSpectrum::of(g)?.laplacian_pe(k))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::named::*;

    const H: f64 = std::f64::consts::FRAC_1_SQRT_2;

    #[test]
    fn diffusion_examples() {
        let k = diffusion_kernel::<f64>(&single(), 1.0).unwrap();
        assert_eq!(k.values.as_slice(), &[1.0]);

        let e2 = (-2.0f64).exp();
        let k = diffusion_kernel::<f64>(&path(2), 1.0).unwrap();
        assert!((k.values[(0, 0)] - (1.0 + e2) / 2.0).abs() < 1e-14);
        assert!((k.values[(0, 1)] - (1.0 - e2) / 2.0).abs() < 1e-14);

        // spectrum {0, 1.5, 1.5}: K = J/3 + e^{-1.5} (I - J/3)
        let e15 = (-1.5f64).exp();
        let k = diffusion_kernel::<f64>(&complete(3), 1.0).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let expect = 1.0 / 3.0 + e15 * (if i == j { 1.0 } else { 0.0 } - 1.0 / 3.0);
                assert!((k.values[(i, j)] - expect).abs() < 1e-13);
            }
        }
        assert!((k.values[(0, 0)] - 0.4821).abs() < 1e-4);
        assert!((k.values[(0, 1)] - 0.2590).abs() < 1e-4);
    }

    #[test]
    fn p_step_examples() {
        let k = p_step_rw_kernel::<f64>(&path(2), 1, 1.0).unwrap();
        assert_eq!(k.values.as_slice(), &[0.0, 1.0, 1.0, 0.0]);
        let k = p_step_rw_kernel::<f64>(&path(2), 2, 0.5).unwrap();
        assert_eq!(k.values.as_slice(), &[0.5, 0.5, 0.5, 0.5]);
        for (p, gamma) in [(1, 0.3), (4, 1.0)] {
            let k = p_step_rw_kernel::<f64>(&single(), p, gamma).unwrap();
            assert_eq!(k.values.as_slice(), &[1.0]);
        }
    }

    #[test]
    fn adjacency_examples() {
        let k = adjacency_pe::<f64>(&path(2));
        assert_eq!(k.values.as_slice(), &[0.0, 1.0, 1.0, 0.0]);
        let (lo, hi) = k.eigen_range().unwrap();
        assert!((lo + 1.0).abs() < 1e-14 && (hi - 1.0).abs() < 1e-14);

        let k = adjacency_pe::<f64>(&complete(3));
        for i in 0..3 {
            for j in 0..3 {
                assert!((k.values[(i, j)] - if i == j { 0.0 } else { 0.5 }).abs() < 1e-15);
            }
        }
        let g = Graph::unlabeled(3, [(0, 1)]).unwrap();
        let k = adjacency_pe::<f64>(&g);
        assert!(k.values.row(2).iter().all(|&x| x == 0.0));
        assert!((0..3).all(|i| k.values[(i, 2)] == 0.0));
    }

    #[test]
    fn adjacency_matches_one_step_walk() {
        let g = cycle(5);
        let a = adjacency_pe::<f64>(&g);
        let p = p_step_rw_kernel::<f64>(&g, 1, 1.0).unwrap();
        assert!(a.values.max_abs_diff(&p.values).unwrap() < 1e-12);
    }

    #[test]
    fn zero_diagonal_examples() {
        let id = KernelMatrix { spec: KernelSpec::all_ones(), values: DenseMatrix::<f64>::identity(3) };
        let z = apply_zero_diagonal(&id);
        assert_eq!(z.values.max_abs(), 0.0);
        assert!(z.spec.zero_diagonal);

        let k = apply_zero_diagonal(&diffusion_kernel::<f64>(&path(2), 1.0).unwrap());
        assert_eq!(k.values[(0, 0)], 0.0);
        assert!((k.values[(0, 1)] - 0.4323).abs() < 1e-4);

        let a = adjacency_pe::<f64>(&path(4));
        assert_eq!(apply_zero_diagonal(&a).values, a.values);
    }

    #[test]
    fn lappe_examples() {
        let pe = laplacian_pe::<f64>(&path(3), 1).unwrap();
        let col = pe.values.column(0);
        assert!((col[0] - H).abs() < 1e-12 && col[1].abs() < 1e-12 && (col[2] + H).abs() < 1e-12);

        let pe = laplacian_pe::<f64>(&single(), 2).unwrap();
        assert_eq!((pe.values.rows(), pe.values.cols()), (1, 2));
        assert_eq!(pe.values.max_abs(), 0.0);

        let pe = laplacian_pe::<f64>(&path(2), 1).unwrap();
        assert!((pe.values[(0, 0)] - H).abs() < 1e-12 && (pe.values[(1, 0)] + H).abs() < 1e-12);

        assert!(laplacian_pe::<f64>(&path(2), 0).is_err());
    }

    #[test]
    fn spec_validation() {
        assert!(KernelSpec::diffusion(0.0).is_err());
        assert!(KernelSpec::diffusion(-1.0).is_err());
        assert!(KernelSpec::p_step_rw(0, 0.5).is_err());
        assert!(KernelSpec::p_step_rw(2, 0.0).is_err());
        assert!(KernelSpec::p_step_rw(2, 1.5).is_err());
        assert!(KernelSpec::p_step_rw(3, 1.0).is_ok());
    }

    #[test]
    fn dump_round_trip() {
        for spec in [
            KernelSpec::diffusion(1.0).unwrap(),
            KernelSpec::p_step_rw(2, 0.5).unwrap().with_zero_diagonal(true),
            KernelSpec::adjacency(),
            KernelSpec::all_ones(),
        ] {
            let k = build_kernel::<f64>(&cycle(4), &spec).unwrap();
            let mut buf = Vec::new();
            k.write_dump(&mut buf).unwrap();
            let back = KernelMatrix::<f64>::read_dump(buf.as_slice()).unwrap();
            assert_eq!(back, k);
        }
        let err = KernelMatrix::<f64>::read_dump("n=2 family=adjacency\n0 1\n1\n".as_bytes()).unwrap_err();
        assert!(matches!(err, KernelError::Parse { line: 3, .. }));
    }
}
