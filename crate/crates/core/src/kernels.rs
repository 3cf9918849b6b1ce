//! Smoothing kernels `h` and the spatial correlation `rho(x) = ∫ h(y - x) h(y) dy`
//! they induce on the driving noise.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const SQRT_PI: f64 = 1.772_453_850_905_516;

/// The kernel `h` smoothing the space-time white noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum SmoothingKernel {
    /// `h(y) = exp(-y² / (2 width²))`.
    Gaussian { width: f64 },
    /// Piecewise-linear interpolation of `(grid, values)`, zero outside the grid.
    #[serde(rename = "table")]
    Tabulated { grid: Vec<f64>, values: Vec<f64> },
}

impl SmoothingKernel {
    pub fn gaussian(width: f64) -> Result<Self> {
        let k = SmoothingKernel::Gaussian { width };
        k.validate()?;
        Ok(k)
    }

    pub fn tabulated(grid: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        let k = SmoothingKernel::Tabulated { grid, values };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            SmoothingKernel::Gaussian { width } => {
                if !(width.is_finite() && *width > 0.0) {
                    return Err(Error::InvalidKernel(format!(
                        "gaussian width must be positive and finite, got {width}"
                    )));
                }
            }
            SmoothingKernel::Tabulated { grid, values } => {
                if grid.len() < 2 {
                    return Err(Error::InvalidKernel(format!(
                        "table needs at least 2 grid points, got {}",
                        grid.len()
                    )));
                }
                if grid.len() != values.len() {
                    return Err(Error::InvalidKernel(format!(
                        "grid has {} points but values has {}",
                        grid.len(),
                        values.len()
                    )));
                }
                if grid.iter().chain(values).any(|v| !v.is_finite()) {
                    return Err(Error::InvalidKernel("table entries must be finite".into()));
                }
                if grid.windows(2).any(|w| w[1] <= w[0]) {
                    return Err(Error::InvalidKernel(
                        "grid must be strictly increasing".into(),
                    ));
                }
                if values[0] != 0.0 || values[values.len() - 1] != 0.0 {
                    return Err(Error::InvalidKernel(
                        "table values must vanish at both grid ends".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Evaluates `h(y)`.
    pub fn h(&self, y: f64) -> f64 {
        match self {
            SmoothingKernel::Gaussian { width } => (-0.5 * (y / width).powi(2)).exp(),
            SmoothingKernel::Tabulated { grid, values } => interp(grid, values, y),
        }
    }

    /// Evaluates `h'(y)`; right derivative at table nodes.
    pub fn dh(&self, y: f64) -> f64 {
        match self {
            SmoothingKernel::Gaussian { width } => -y / (width * width) * self.h(y),
            SmoothingKernel::Tabulated { grid, values } => {
                if y < grid[0] || y >= grid[grid.len() - 1] {
                    return 0.0;
                }
                let i = grid.partition_point(|&g| g <= y) - 1;
                (values[i + 1] - values[i]) / (grid[i + 1] - grid[i])
            }
        }
    }
}

fn interp(grid: &[f64], values: &[f64], y: f64) -> f64 {
    let n = grid.len();
    if y <= grid[0] || y >= grid[n - 1] {
        return 0.0;
    }
    let i = grid.partition_point(|&g| g <= y) - 1;
    let s = (y - grid[i]) / (grid[i + 1] - grid[i]);
    values[i] + s * (values[i + 1] - values[i])
}

/// `rho(x) = ∫ h(y - x) h(y) dy`.
///
/// The Gaussian form is closed. For a table the integrand is a product of two
/// piecewise-linear functions, so Simpson's rule on the merged breakpoints of
/// both factors is exact up to rounding.
pub fn rho_from_h(kernel: &SmoothingKernel, x: f64) -> Result<f64> {
    kernel.validate()?;
    Ok(rho_unchecked(kernel, x))
}

fn rho_unchecked(kernel: &SmoothingKernel, x: f64) -> f64 {
    match kernel {
        SmoothingKernel::Gaussian { width } => SQRT_PI * width * (-x * x / (4.0 * width * width)).exp(),
        SmoothingKernel::Tabulated { grid, values } => {
            // rho is even; integrating at |x| makes the symmetry exact.
            let x = x.abs();
            let n = grid.len();
            let lo = grid[0] + x;
            let hi = grid[n - 1];
            if lo >= hi {
                return 0.0;
            }
            let mut nodes: Vec<f64> = grid
                .iter()
                .copied()
                .chain(grid.iter().map(|g| g + x))
                .filter(|&p| p >= lo && p <= hi)
                .collect();
            nodes.push(lo);
            nodes.push(hi);
            nodes.sort_by(f64::total_cmp);
            nodes.dedup();
            let f = |y: f64| interp(grid, values, y - x) * interp(grid, values, y);
            nodes
                .windows(2)
                .map(|w| {
                    let (a, b) = (w[0], w[1]);
                    (b - a) / 6.0 * (f(a) + 4.0 * f(0.5 * (a + b)) + f(b))
                })
                .sum()
        }
    }
}

/// The correlation function induced by a validated kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationFunction {
    kernel: SmoothingKernel,
    rho0: f64,
    second_derivative_bound: f64,
}

impl CorrelationFunction {
    pub fn new(kernel: SmoothingKernel) -> Result<Self> {
        kernel.validate()?;
        let rho0 = rho_unchecked(&kernel, 0.0);
        if !(rho0 > 0.0) {
            return Err(Error::InvalidKernel("kernel is identically zero".into()));
        }
        // |rho''(x)| = |∫ h'(y - x) h'(y) dy| ≤ ∫ h'(y)² dy.
        let second_derivative_bound = match &kernel {
            SmoothingKernel::Gaussian { width } => SQRT_PI / (2.0 * width),
            SmoothingKernel::Tabulated { grid, values } => grid
                .windows(2)
                .zip(values.windows(2))
                .map(|(g, v)| (v[1] - v[0]).powi(2) / (g[1] - g[0]))
                .sum(),
        };
        Ok(Self {
            kernel,
            rho0,
            second_derivative_bound,
        })
    }

    pub fn gaussian(width: f64) -> Result<Self> {
        Self::new(SmoothingKernel::gaussian(width)?)
    }

    pub fn kernel(&self) -> &SmoothingKernel {
        &self.kernel
    }

    pub fn rho0(&self) -> f64 {
        self.rho0
    }

    pub fn second_derivative_bound(&self) -> f64 {
        self.second_derivative_bound
    }

    pub fn eval(&self, x: f64) -> f64 {
        if x == 0.0 {
            return self.rho0;
        }
        rho_unchecked(&self.kernel, x)
    }
}

/// `[rho(x_i - x_j)]` over `positions`, duplicates included.
pub fn correlation_matrix(rho: &CorrelationFunction, positions: &[f64]) -> DMatrix<f64> {
    let k = positions.len();
    let mut c = DMatrix::zeros(k, k);
    for i in 0..k {
        c[(i, i)] = rho.rho0();
        for j in 0..i {
            let v = rho.eval(positions[i] - positions[j]);
            c[(i, j)] = v;
            c[(j, i)] = v;
        }
    }
    c
}

/// Lower Cholesky factor of `cov`. On failure a diagonal jitter of
/// `1e-10·scale` is added and doubled up to three times before giving up.
pub fn cholesky_with_jitter(
    cov: DMatrix<f64>,
    scale: f64,
    positions: &[f64],
) -> Result<DMatrix<f64>> {
    if let Some(ch) = cov.clone().cholesky() {
        return Ok(ch.l());
    }
    let mut eps = 1e-10 * scale;
    for _ in 0..4 {
        let mut jittered = cov.clone();
        for i in 0..jittered.nrows() {
            jittered[(i, i)] += eps;
        }
        if let Some(ch) = jittered.cholesky() {
            return Ok(ch.l());
        }
        eps *= 2.0;
    }
    Err(Error::Numerical {
        positions: positions.to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quad::trapezoid;
    use proptest::prelude::*;

    fn unit() -> CorrelationFunction {
        CorrelationFunction::gaussian(1.0).unwrap()
    }

    #[test]
    fn gaussian_rho_matches_quadrature() {
        let k = SmoothingKernel::gaussian(1.0).unwrap();
        for x in [0.0, 0.5, 2.0, -3.1] {
            let oracle = trapezoid(|y| k.h(y - x) * k.h(y), -20.0, 20.0, 8000);
            assert!((rho_from_h(&k, x).unwrap() - oracle).abs() < 1e-10, "x={x}");
        }
        assert!((rho_from_h(&k, 0.0).unwrap() - 1.772_454).abs() < 1e-6);
        assert!((rho_from_h(&k, 2.0).unwrap() - 0.652_049).abs() < 1e-6);
    }

    #[test]
    fn table_rho_matches_fine_quadrature() {
        let grid: Vec<f64> = (0..=40).map(|i| -4.0 + 0.2 * i as f64).collect();
        let mut values: Vec<f64> = grid.iter().map(|&y| (-0.5 * y * y).exp()).collect();
        let n = values.len();
        values[0] = 0.0;
        values[n - 1] = 0.0;
        let k = SmoothingKernel::tabulated(grid, values).unwrap();
        for x in [0.0, 0.13, 1.0, 2.57, -0.7] {
            let oracle = trapezoid(|y| k.h(y - x) * k.h(y), -9.0, 9.0, 180_000);
            let got = rho_from_h(&k, x).unwrap();
            assert!((got - oracle).abs() < 1e-8, "x={x}: {got} vs {oracle}");
        }
        // A Gaussian sampled this finely is close to the closed form.
        assert!((rho_from_h(&k, 0.0).unwrap() - SQRT_PI).abs() < 2e-2);
    }

    #[test]
    fn table_needs_two_points() {
        let err = rho_from_h(
            &SmoothingKernel::Tabulated {
                grid: vec![0.0],
                values: vec![0.0],
            },
            0.0,
        );
        assert!(matches!(err, Err(Error::InvalidKernel(_))));
        assert!(SmoothingKernel::tabulated(vec![0.0, 1.0], vec![1.0, 0.0]).is_err());
        assert!(SmoothingKernel::gaussian(0.0).is_err());
    }

    #[test]
    fn matrix_examples() {
        let rho = unit();
        let one = correlation_matrix(&rho, &[0.3]);
        assert_eq!(one[(0, 0)], rho.rho0());
        let dup = correlation_matrix(&rho, &[1.0, 1.0]);
        assert!(dup.iter().all(|&v| v == rho.rho0()));
        let two = correlation_matrix(&rho, &[0.0, 2.0]);
        let off = SQRT_PI * (-1.0f64).exp();
        assert!((two[(0, 1)] - off).abs() < 1e-15);
        assert!((two[(1, 0)] - off).abs() < 1e-15);
    }

    #[test]
    fn duplicate_positions_need_jitter() {
        let rho = unit();
        let pos = [0.0, 0.0, 1.0];
        let l = cholesky_with_jitter(correlation_matrix(&rho, &pos), rho.rho0(), &pos).unwrap();
        let c = &l * l.transpose();
        assert!((c[(0, 1)] - rho.rho0()).abs() < 1e-8);
    }

    #[test]
    fn jitter_gives_up_on_indefinite_input() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(
            cholesky_with_jitter(m, 1.0, &[0.0, 1.0]),
            Err(Error::Numerical { .. })
        ));
    }

    fn table_strategy() -> impl Strategy<Value = SmoothingKernel> {
        proptest::collection::vec(0.0f64..2.0, 1..12).prop_map(|inner| {
            let n = inner.len() + 2;
            let grid: Vec<f64> = (0..n).map(|i| -1.5 + 3.0 * i as f64 / (n - 1) as f64).collect();
            let mut values = vec![0.0];
            values.extend(inner);
            values.push(0.0);
            SmoothingKernel::tabulated(grid, values).unwrap()
        })
    }

    proptest! {
        #[test]
        fn gaussian_rho_even_and_bounded(w in 0.05f64..5.0, x in -20.0f64..20.0) {
            let rho = CorrelationFunction::gaussian(w).unwrap();
            prop_assert_eq!(rho.eval(x), rho.eval(-x));
            prop_assert!(rho.eval(x) <= rho.rho0() + 1e-12);
        }

        #[test]
        fn table_rho_even_and_bounded(k in table_strategy(), x in -4.0f64..4.0) {
            let rho = CorrelationFunction::new(k).unwrap();
            prop_assert!((rho.eval(x) - rho.eval(-x)).abs() <= 1e-9);
            prop_assert!(rho.eval(x) <= rho.rho0() + 1e-12);
        }

        #[test]
        fn correlation_matrix_is_psd(
            w in 0.1f64..3.0,
            pos in proptest::collection::vec(-5.0f64..5.0, 1..=8),
        ) {
            let rho = CorrelationFunction::gaussian(w).unwrap();
            let c = correlation_matrix(&rho, &pos);
            let min = c.symmetric_eigenvalues().min();
            prop_assert!(min >= -1e-9 * rho.rho0(), "min eigenvalue {}", min);
        }

        #[test]
        fn table_correlation_matrix_is_psd(
            k in table_strategy(),
            pos in proptest::collection::vec(-2.0f64..2.0, 1..=8),
        ) {
            let rho = CorrelationFunction::new(k).unwrap();
            let c = correlation_matrix(&rho, &pos);
            let min = c.symmetric_eigenvalues().min();
            prop_assert!(min >= -1e-9 * rho.rho0(), "min eigenvalue {}", min);
        }
    }
}
