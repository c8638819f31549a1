//! Numerical ground truth for the symbol calculus.
//!
//! Everything here is independent of the expansion machinery: plane-wave
//! probing on the Fourier lattice, FFT application of flat symbols, dense
//! matrix discretization with eigenvalue functional calculus, and log-log
//! decay fitting.  Expansions are accepted only as pointwise-evaluable
//! functions; no series identity is assumed, which is what makes these
//! routines usable as oracles for those identities.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use rustfft::FftPlanner;

use crate::error::{CalcError, Result};
use crate::symbols::{fit_slope, Expansion};
use crate::C64;

/// Uniform periodic grid on the torus, dim 1 or 2, n points per axis.
#[derive(Clone, Debug)]
pub struct Grid {
    pub dim: usize,
    pub n: usize,
    pub period: f64,
}

impl Grid {
    pub fn new(dim: usize, n: usize, period: f64) -> Result<Grid> {
        if !(dim == 1 || dim == 2) {
            return Err(CalcError::ConfigInvalid(format!("grid dim {dim} not in {{1, 2}}")));
        }
        if n < 4 || n % 2 != 0 {
            return Err(CalcError::ConfigInvalid(format!("grid size {n} must be even and >= 4")));
        }
        if !(period > 0.0) {
            return Err(CalcError::ConfigInvalid(format!("period {period} must be positive")));
        }
        Ok(Grid { dim, n, period })
    }

    pub fn len(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Grid spacing per axis.
    pub fn h(&self) -> f64 {
        self.period / self.n as f64
    }

    /// Coordinates of the flat index (row-major over axes).
    pub fn point(&self, idx: usize) -> Vec<f64> {
        let h = self.h();
        match self.dim {
            1 => vec![idx as f64 * h],
            _ => vec![(idx / self.n) as f64 * h, (idx % self.n) as f64 * h],
        }
    }

    pub fn points(&self) -> Vec<Vec<f64>> {
        (0..self.len()).map(|i| self.point(i)).collect()
    }

    /// Signed integer frequency of a per-axis FFT index.
    pub fn freq_int(&self, k: usize) -> i64 {
        if k < self.n / 2 {
            k as i64
        } else {
            k as i64 - self.n as i64
        }
    }

    /// All lattice frequency vectors in FFT index order.
    pub fn lattice(&self) -> Vec<Vec<i64>> {
        (0..self.len())
            .map(|k| match self.dim {
                1 => vec![self.freq_int(k)],
                _ => vec![self.freq_int(k / self.n), self.freq_int(k % self.n)],
            })
            .collect()
    }

    /// Covector of an integer lattice frequency.
    pub fn xi(&self, m: &[i64]) -> Vec<f64> {
        let s = 2.0 * std::f64::consts::PI / self.period;
        m.iter().map(|&v| v as f64 * s).collect()
    }

    /// Plane wave e^{i ξ_m · x} sampled on the grid.
    pub fn wave(&self, m: &[i64]) -> Vec<C64> {
        let xi = self.xi(m);
        (0..self.len())
            .map(|i| {
                let x = self.point(i);
                let ph: f64 = x.iter().zip(&xi).map(|(a, b)| a * b).sum();
                C64::new(0.0, ph).exp()
            })
            .collect()
    }
}

fn fft_nd(grid: &Grid, data: &mut [C64], forward: bool) {
    let n = grid.n;
    let mut planner = FftPlanner::new();
    let fft = if forward { planner.plan_fft_forward(n) } else { planner.plan_fft_inverse(n) };
    match grid.dim {
        1 => fft.process(data),
        _ => {
            for row in data.chunks_mut(n) {
                fft.process(row);
            }
            let mut col = vec![C64::new(0.0, 0.0); n];
            for j in 0..n {
                for i in 0..n {
                    col[i] = data[i * n + j];
                }
                fft.process(&mut col);
                for i in 0..n {
                    data[i * n + j] = col[i];
                }
            }
        }
    }
}

/// Fourier coefficients c_m (FFT order) with u = Σ_m c_m e^{i ξ_m · x}.
pub fn spectrum(grid: &Grid, u: &[C64]) -> Vec<C64> {
    let mut c = u.to_vec();
    fft_nd(grid, &mut c, true);
    let s = 1.0 / grid.len() as f64;
    for v in c.iter_mut() {
        *v *= s;
    }
    c
}

/// Inverse of [`spectrum`]: grid samples of Σ_m c_m e^{i ξ_m · x}.
pub fn synthesis(grid: &Grid, coeffs: &[C64]) -> Vec<C64> {
    let mut u = coeffs.to_vec();
    fft_nd(grid, &mut u, false);
    u
}

/// Energy fraction carried by the top octave of the spectrum (any axis
/// frequency at or beyond 3n/8); the aliasing figure of merit.
pub fn tail_fraction(grid: &Grid, coeffs: &[C64]) -> f64 {
    let cut = 3 * grid.n as i64 / 8;
    let mut tail = 0.0;
    let mut total = 0.0;
    for (k, m) in grid.lattice().iter().enumerate() {
        let e = coeffs[k].norm_sqr();
        total += e;
        if m.iter().any(|v| v.abs() >= cut) {
            tail += e;
        }
    }
    if total == 0.0 {
        0.0
    } else {
        tail / total
    }
}

const ALIAS_TOL: f64 = 1e-9;

fn check_alias(grid: &Grid, coeffs: &[C64], what: &str) -> Result<()> {
    let f = tail_fraction(grid, coeffs);
    if f > ALIAS_TOL {
        return Err(CalcError::AliasRisk(format!(
            "{what}: top-octave energy fraction {f:.3e} exceeds {ALIAS_TOL:.0e}"
        )));
    }
    Ok(())
}

fn check_flat_tau(e: &Expansion, grid: &Grid) -> Result<()> {
    if e.tau.abs() > 1e-12 {
        return Err(CalcError::TagMismatch(format!(
            "flat Fourier application requires τ = 0, got τ = {}",
            e.tau
        )));
    }
    if e.dim != grid.dim {
        return Err(CalcError::TagMismatch(format!(
            "expansion dimension {} vs grid dimension {}",
            e.dim, grid.dim
        )));
    }
    Ok(())
}

/// Exact action of the lattice-truncated operator of a flat symbol:
/// (Au)(x) = Σ_m σ(x, ξ_m) c_m e^{i ξ_m · x}.  No aliasing estimate; for
/// operator-algebra cross-checks where both sides live on the same lattice.
pub fn lattice_apply(sigma: &Expansion, grid: &Grid, u: &[C64]) -> Result<Vec<C64>> {
    check_flat_tau(sigma, grid)?;
    if u.len() != grid.len() {
        return Err(CalcError::InvalidInput(format!(
            "grid function has {} samples, expected {}",
            u.len(),
            grid.len()
        )));
    }
    let c = spectrum(grid, u);
    let lattice = grid.lattice();
    let xis: Vec<Vec<f64>> = lattice.iter().map(|m| grid.xi(m)).collect();
    (0..grid.len())
        .into_par_iter()
        .map(|i| {
            let x = grid.point(i);
            let mut acc = C64::new(0.0, 0.0);
            for (k, xi) in xis.iter().enumerate() {
                if c[k].norm_sqr() == 0.0 {
                    continue;
                }
                let ph: f64 = x.iter().zip(xi).map(|(a, b)| a * b).sum();
                acc += sigma.eval(&x, xi)? * c[k] * C64::new(0.0, ph).exp();
            }
            Ok(acc)
        })
        .collect()
}

/// Apply the operator of a flat symbol to a band-limited grid function,
/// with aliasing estimates on both the input and the product spectrum.
pub fn apply_pdo_flat(sigma: &Expansion, grid: &Grid, u: &[C64]) -> Result<Vec<C64>> {
    let c = spectrum(grid, u);
    check_alias(grid, &c, "input spectrum")?;
    let out = lattice_apply(sigma, grid, u)?;
    let co = spectrum(grid, &out);
    check_alias(grid, &co, "output spectrum")?;
    Ok(out)
}

/// Ground-truth symbol of an operator action by plane-wave probing:
/// σ(x, ξ_m) = e^{−i ξ_m · x} (A e^{i ξ_m ·})(x).
pub struct SampledSymbol {
    pub grid: Grid,
    pub freqs: Vec<Vec<i64>>,
    /// values[f][i] over grid points i.
    pub values: Vec<Vec<C64>>,
}

pub fn effective_symbol(
    apply: &dyn Fn(&[C64]) -> Result<Vec<C64>>,
    grid: &Grid,
    freqs: &[Vec<i64>],
) -> Result<SampledSymbol> {
    let mut values = Vec::with_capacity(freqs.len());
    for m in freqs {
        if m.iter().any(|v| 2 * v.abs() >= grid.n as i64) {
            return Err(CalcError::AliasRisk(format!(
                "probe frequency {m:?} is at or beyond the Nyquist limit of n = {}",
                grid.n
            )));
        }
        let w = apply(&grid.wave(m))?;
        let xi = grid.xi(m);
        let row: Vec<C64> = (0..grid.len())
            .map(|i| {
                let x = grid.point(i);
                let ph: f64 = x.iter().zip(&xi).map(|(a, b)| a * b).sum();
                w[i] * C64::new(0.0, -ph).exp()
            })
            .collect();
        values.push(row);
    }
    Ok(SampledSymbol { grid: grid.clone(), freqs: freqs.to_vec(), values })
}

/// Effective symbol of Op(σ₁)∘Op(σ₂) at (x₀, ξ_m), exact for x-band-limited
/// σ₂ and any lattice frequency m, however large: Op(σ₂) maps the probe wave
/// to σ₂(·, ξ_m)e^{i ξ_m ·}, whose Fourier coefficients the grid resolves
/// around m, and Op(σ₁) acts on each shifted wave analytically.
pub fn compose_effective_probe(
    s1: &Expansion,
    s2: &Expansion,
    grid: &Grid,
    x0: &[f64],
    m: &[i64],
) -> Result<C64> {
    check_flat_tau(s1, grid)?;
    check_flat_tau(s2, grid)?;
    let xi_m = grid.xi(m);
    let v: Result<Vec<C64>> =
        (0..grid.len()).map(|i| s2.eval(&grid.point(i), &xi_m)).collect();
    let c = spectrum(grid, &v?);
    check_alias(grid, &c, "inner-symbol spectrum")?;
    let mut acc = C64::new(0.0, 0.0);
    for (k, j) in grid.lattice().iter().enumerate() {
        if c[k].norm_sqr() == 0.0 {
            continue;
        }
        let shifted: Vec<i64> = m.iter().zip(j).map(|(a, b)| a + b).collect();
        let xi = grid.xi(&shifted);
        let xi_j = grid.xi(j);
        let ph: f64 = x0.iter().zip(&xi_j).map(|(a, b)| a * b).sum();
        acc += c[k] * s1.eval(x0, &xi)? * C64::new(0.0, ph).exp();
    }
    Ok(acc)
}

/// Dense grid-to-grid matrix of an operator, with provenance.
pub struct DenseOperator {
    pub grid: Grid,
    pub matrix: DMatrix<C64>,
    pub meta: String,
}

pub(crate) fn check_grid_cap(grid: &Grid) -> Result<()> {
    let cap = if grid.dim == 1 { 1024 } else { 128 };
    if grid.n > cap {
        return Err(CalcError::InvalidInput(format!(
            "grid size {} exceeds the dense-operator cap {} in dimension {}",
            grid.n, cap, grid.dim
        )));
    }
    Ok(())
}

impl DenseOperator {
    pub fn apply(&self, u: &[C64]) -> Vec<C64> {
        let v = DVector::from_column_slice(u);
        (&self.matrix * v).iter().cloned().collect()
    }

    pub fn compose(&self, other: &DenseOperator) -> Result<DenseOperator> {
        if self.grid.n != other.grid.n || self.grid.dim != other.grid.dim {
            return Err(CalcError::InvalidInput("operator grids differ".into()));
        }
        Ok(DenseOperator {
            grid: self.grid.clone(),
            matrix: &self.matrix * &other.matrix,
            meta: format!("({}) . ({})", self.meta, other.meta),
        })
    }

    pub fn adjoint(&self) -> DenseOperator {
        DenseOperator {
            grid: self.grid.clone(),
            matrix: self.matrix.adjoint(),
            meta: format!("adjoint({})", self.meta),
        }
    }

    pub fn sub(&self, other: &DenseOperator) -> DenseOperator {
        DenseOperator {
            grid: self.grid.clone(),
            matrix: &self.matrix - &other.matrix,
            meta: format!("({}) - ({})", self.meta, other.meta),
        }
    }

    /// Max deviation from self-adjointness, entrywise.
    pub fn hermitian_defect(&self) -> f64 {
        let d = &self.matrix - self.matrix.adjoint();
        d.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    /// Spectral norm via the Hermitian eigenproblem of A*A.
    pub fn operator_norm(&self) -> Result<f64> {
        let ata = self.matrix.adjoint() * &self.matrix;
        let eig = ata
            .try_symmetric_eigen(1e-13, 100_000)
            .ok_or_else(|| CalcError::EigenFailure("A*A eigensolve did not converge".into()))?;
        Ok(eig.eigenvalues.iter().cloned().fold(0.0, f64::max).max(0.0).sqrt())
    }

    /// Pointwise multiplication by sampled grid values.
    pub fn multiplication(grid: &Grid, values: &[C64], meta: &str) -> Result<DenseOperator> {
        check_grid_cap(grid)?;
        if values.len() != grid.len() {
            return Err(CalcError::InvalidInput(format!(
                "{} multiplier values on a grid of {} points",
                values.len(),
                grid.len()
            )));
        }
        let v = DVector::from_column_slice(values);
        Ok(DenseOperator {
            grid: grid.clone(),
            matrix: DMatrix::from_diagonal(&v),
            meta: meta.to_string(),
        })
    }

    /// Fourier multiplier m(ξ) on the lattice, realized as a dense matrix.
    pub fn fourier_multiplier(
        grid: &Grid,
        mult: &(dyn Fn(&[f64]) -> C64 + Sync),
        meta: &str,
    ) -> Result<DenseOperator> {
        check_grid_cap(grid)?;
        let nt = grid.len();
        let lattice = grid.lattice();
        let xis: Vec<Vec<f64>> = lattice.iter().map(|m| grid.xi(m)).collect();
        let rows: Vec<Vec<C64>> = (0..nt)
            .into_par_iter()
            .map(|i| {
                let x = grid.point(i);
                let mut c = vec![C64::new(0.0, 0.0); nt];
                for (k, xi) in xis.iter().enumerate() {
                    let ph: f64 = x.iter().zip(xi).map(|(a, b)| a * b).sum();
                    c[k] = mult(xi) * C64::new(0.0, ph).exp() / nt as f64;
                }
                fft_nd(grid, &mut c, true);
                c
            })
            .collect();
        let matrix = DMatrix::from_fn(nt, nt, |i, j| rows[i][j]);
        Ok(DenseOperator { grid: grid.clone(), matrix, meta: meta.to_string() })
    }
}

/// Dense matrix of a flat symbol's operator on grid values, rows by FFT.
pub fn discretize_flat(sigma: &Expansion, grid: &Grid) -> Result<DenseOperator> {
    check_flat_tau(sigma, grid)?;
    check_grid_cap(grid)?;
    let nt = grid.len();
    let lattice = grid.lattice();
    let xis: Vec<Vec<f64>> = lattice.iter().map(|m| grid.xi(m)).collect();
    let rows: Result<Vec<Vec<C64>>> = (0..nt)
        .into_par_iter()
        .map(|i| {
            let x = grid.point(i);
            let mut c = vec![C64::new(0.0, 0.0); nt];
            for (k, xi) in xis.iter().enumerate() {
                let ph: f64 = x.iter().zip(xi).map(|(a, b)| a * b).sum();
                c[k] = sigma.eval(&x, xi)? * C64::new(0.0, ph).exp() / nt as f64;
            }
            // row_j = Σ_k c_k e^{−i ξ_k · x_j}, a forward transform in k
            fft_nd(grid, &mut c, true);
            Ok(c)
        })
        .collect();
    let rows = rows?;
    let matrix = DMatrix::from_fn(nt, nt, |i, j| rows[i][j]);
    Ok(DenseOperator { grid: grid.clone(), matrix, meta: "flat symbol".into() })
}

/// Dense matrix of an arbitrary operator action on grid values.
pub fn discretize_action(
    apply: &(dyn Fn(&[C64]) -> Result<Vec<C64>> + Sync),
    grid: &Grid,
    meta: &str,
) -> Result<DenseOperator> {
    check_grid_cap(grid)?;
    let nt = grid.len();
    // columns of B: action on each lattice wave
    let cols: Result<Vec<Vec<C64>>> =
        grid.lattice().par_iter().map(|m| apply(&grid.wave(m))).collect();
    let cols = cols?;
    let rows: Vec<Vec<C64>> = (0..nt)
        .into_par_iter()
        .map(|i| {
            let mut c: Vec<C64> = (0..nt).map(|k| cols[k][i] / nt as f64).collect();
            fft_nd(grid, &mut c, true);
            c
        })
        .collect();
    let matrix = DMatrix::from_fn(nt, nt, |i, j| rows[i][j]);
    Ok(DenseOperator { grid: grid.clone(), matrix, meta: meta.to_string() })
}

/// Eigendecomposition of a self-adjoint dense operator.
pub fn hermitian_eigen(d: &DenseOperator) -> Result<(Vec<f64>, DMatrix<C64>)> {
    let defect = d.hermitian_defect();
    let scale = d.matrix.iter().map(|v| v.norm()).fold(0.0, f64::max);
    if defect > 1e-8 * (1.0 + scale) {
        return Err(CalcError::InvalidInput(format!(
            "operator '{}' is not self-adjoint: defect {defect:.3e} at scale {scale:.3e}",
            d.meta
        )));
    }
    let h = (&d.matrix + d.matrix.adjoint()).scale(0.5);
    let eig = h
        .try_symmetric_eigen(1e-13, 100_000)
        .ok_or_else(|| CalcError::EigenFailure(format!("eigensolve failed for '{}'", d.meta)))?;
    Ok((eig.eigenvalues.iter().cloned().collect(), eig.eigenvectors))
}

/// f(D) for self-adjoint D by eigenvalue functional calculus.
pub fn functional_calculus(
    d: &DenseOperator,
    f: &dyn Fn(f64) -> f64,
    meta: &str,
) -> Result<DenseOperator> {
    let (vals, q) = hermitian_eigen(d)?;
    let fd = DVector::from_iterator(vals.len(), vals.iter().map(|&s| C64::new(f(s), 0.0)));
    let matrix = &q * DMatrix::from_diagonal(&fd) * q.adjoint();
    Ok(DenseOperator { grid: d.grid.clone(), matrix, meta: meta.to_string() })
}

/// Spectral projector onto eigenvalues ≤ λ of a self-adjoint operator.
pub fn spectral_projector(d: &DenseOperator, lambda: f64) -> Result<DenseOperator> {
    functional_calculus(
        d,
        &|s| if s <= lambda { 1.0 } else { 0.0 },
        &format!("projector(λ={lambda}) of {}", d.meta),
    )
}

/// Log-log decay fit of positive values against positive abscissae.
#[derive(Clone, Debug)]
pub struct DecayFit {
    pub lambda: Vec<f64>,
    pub value: Vec<f64>,
    /// Slope between consecutive points in log-log space.
    pub local_slopes: Vec<f64>,
    /// Global least-squares slope.
    pub slope: f64,
    /// RMS residual of the global fit in log space.
    pub confidence: f64,
}

pub fn fit_decay(pairs: &[(f64, f64)]) -> Result<DecayFit> {
    if pairs.len() < 4 {
        return Err(CalcError::InsufficientPoints(format!(
            "decay fit needs at least 4 points, got {}",
            pairs.len()
        )));
    }
    if pairs.iter().any(|&(l, v)| !(l > 0.0) || !(v > 0.0)) {
        return Err(CalcError::InvalidInput(
            "decay fit requires positive abscissae and values".into(),
        ));
    }
    let logs: Vec<(f64, f64)> = pairs.iter().map(|&(l, v)| (l.ln(), v.ln())).collect();
    let slope = fit_slope(&logs);
    let n = logs.len() as f64;
    let mean_x: f64 = logs.iter().map(|p| p.0).sum::<f64>() / n;
    let mean_y: f64 = logs.iter().map(|p| p.1).sum::<f64>() / n;
    let intercept = mean_y - slope * mean_x;
    let ss: f64 =
        logs.iter().map(|p| (p.1 - slope * p.0 - intercept).powi(2)).sum::<f64>() / n;
    let local_slopes = logs
        .windows(2)
        .map(|w| (w[1].1 - w[0].1) / (w[1].0 - w[0].0))
        .collect();
    Ok(DecayFit {
        lambda: pairs.iter().map(|p| p.0).collect(),
        value: pairs.iter().map(|p| p.1).collect(),
        local_slopes,
        slope,
        confidence: ss.sqrt(),
    })
}

/// Random band-limited grid function with unit-variance coefficients.
pub fn band_limited(grid: &Grid, max_freq: i64, seed: u64) -> Vec<C64> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut coeffs = vec![C64::new(0.0, 0.0); grid.len()];
    for (k, m) in grid.lattice().iter().enumerate() {
        if m.iter().all(|v| v.abs() <= max_freq) {
            coeffs[k] = C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        }
    }
    synthesis(grid, &coeffs)
}
