//! Shiftability of subsampled responses and invariance of grid pooling.
//!
//! A dense response `r(x)` is observed only on a sampling grid
//! `x_i = offset + i*s`. It is *shiftable* when every dense value can be
//! recovered as `Σ_i B_s(x - x_i) r(x_i)` for a reconstruction kernel `B_s`.
//! For a shiftable response, summing the grid samples equals (up to the
//! phase-independent constant `K = Σ_x B_s(x - x_i)`) summing the dense
//! response, so the grid sum cannot depend on where the grid falls.
//!
//! Everything here is discretised to integer `x`; sub-stride phases are the
//! finest translations a pixel grid can express.

use std::f64::consts::PI;

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum SamplingError {
    #[error("subsampling factor must be at least 1")]
    ZeroFactor,
    #[error("grid offset {offset} is not in [0, {factor})")]
    BadOffset { offset: usize, factor: usize },
    #[error("query {x} lies within one kernel support of the grid ends")]
    EdgeQuery { x: f64 },
    #[error("response of length {len} is too short; need at least {needed}")]
    TooShort { len: usize, needed: usize },
    #[error("response is nonzero within {margin} samples of the boundary")]
    SupportTouchesBoundary { margin: usize },
    #[error("sample count {samples} does not match grid length {grid}")]
    GridLength { samples: usize, grid: usize },
    #[error("empty response")]
    Empty,
}

/// Grid points `offset + i*factor` for `i in 0..length`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SamplingGrid {
    factor: usize,
    offset: usize,
    length: usize,
}

impl SamplingGrid {
    pub fn new(factor: usize, offset: usize, length: usize) -> Result<Self, SamplingError> {
        if factor == 0 {
            return Err(SamplingError::ZeroFactor);
        }
        if offset >= factor {
            return Err(SamplingError::BadOffset { offset, factor });
        }
        Ok(Self {
            factor,
            offset,
            length,
        })
    }

    /// The grid with phase `offset` covering a dense signal of `dense_len` samples.
    pub fn covering(factor: usize, offset: usize, dense_len: usize) -> Result<Self, SamplingError> {
        let length = if dense_len > offset {
            (dense_len - 1 - offset) / factor.max(1) + 1
        } else {
            0
        };
        Self::new(factor, offset, length)
    }

    pub fn factor(&self) -> usize {
        self.factor
    }

    pub fn offset(&self) -> usize {
        self.offset
    }

    pub fn len(&self) -> usize {
        self.length
    }

    pub fn is_empty(&self) -> bool {
        self.length == 0
    }

    pub fn point(&self, i: usize) -> usize {
        self.offset + i * self.factor
    }

    pub fn points(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.length).map(|i| self.point(i))
    }

    /// Picks this grid's samples out of a dense signal.
    pub fn sample(&self, dense: &[f64]) -> Vec<f64> {
        self.points().map(|x| dense[x]).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KernelKind {
    LinearTent,
    CubicBSpline,
    /// Sinc under a raised-cosine window; `half_width` is in dense samples.
    WindowedSinc { half_width: f64 },
}

/// Reconstruction kernel `B_s` scaled to subsampling factor `s`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BasisKernel {
    pub kind: KernelKind,
    pub factor: usize,
}

impl BasisKernel {
    pub fn linear(factor: usize) -> Self {
        Self {
            kind: KernelKind::LinearTent,
            factor,
        }
    }

    pub fn cubic(factor: usize) -> Self {
        Self {
            kind: KernelKind::CubicBSpline,
            factor,
        }
    }

    /// Windowed sinc with the default half-width of `8 * factor`.
    pub fn sinc(factor: usize) -> Self {
        Self::sinc_with_half_width(factor, 8.0 * factor as f64)
    }

    pub fn sinc_with_half_width(factor: usize, half_width: f64) -> Self {
        Self {
            kind: KernelKind::WindowedSinc { half_width },
            factor,
        }
    }

    /// Half-width beyond which the kernel is identically zero.
    pub fn support(&self) -> f64 {
        let s = self.factor as f64;
        match self.kind {
            KernelKind::LinearTent => s,
            KernelKind::CubicBSpline => 2.0 * s,
            KernelKind::WindowedSinc { half_width } => half_width,
        }
    }

    /// Whether `B(0) = 1` and `B(k*s) = 0` for nonzero integers `k`.
    pub fn is_interpolating(&self) -> bool {
        !matches!(self.kind, KernelKind::CubicBSpline)
    }

    pub fn eval(&self, x: f64) -> f64 {
        let s = self.factor as f64;
        let t = (x / s).abs();
        match self.kind {
            KernelKind::LinearTent => (1.0 - t).max(0.0),
            KernelKind::CubicBSpline => {
                if t < 1.0 {
                    2.0 / 3.0 - t * t + 0.5 * t * t * t
                } else if t < 2.0 {
                    let u = 2.0 - t;
                    u * u * u / 6.0
                } else {
                    0.0
                }
            }
            KernelKind::WindowedSinc { half_width } => {
                let ax = x.abs();
                if ax >= half_width {
                    return 0.0;
                }
                let window = 0.5 * (1.0 + (PI * ax / half_width).cos());
                let sinc = if t == 0.0 { 1.0 } else { (PI * t).sin() / (PI * t) };
                sinc * window
            }
        }
    }
}

/// Dense response `r(x)` at every integer `x`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseResponse(Vec<f64>);

impl DenseResponse {
    pub fn new(values: Vec<f64>) -> Result<Self, SamplingError> {
        if values.is_empty() {
            return Err(SamplingError::Empty);
        }
        Ok(Self(values))
    }

    pub fn from_fn(len: usize, mut f: impl FnMut(f64) -> f64) -> Self {
        assert!(len > 0);
        Self((0..len).map(|x| f(x as f64)).collect())
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// `r(x - delta)`, zero-filled; values pushed past either end are dropped.
    pub fn shifted(&self, delta: isize) -> Self {
        let n = self.0.len() as isize;
        let values = (0..n)
            .map(|x| {
                let src = x - delta;
                if (0..n).contains(&src) {
                    self.0[src as usize]
                } else {
                    0.0
                }
            })
            .collect();
        Self(values)
    }
}

pub fn basis_kernel_eval(b: &BasisKernel, x: f64) -> f64 {
    b.eval(x)
}

/// `Σ_i B_s(x - x_i) r(x_i)` for a query at least one kernel support away
/// from both ends of the grid.
pub fn reconstruct_from_grid(
    samples: &[f64],
    grid: &SamplingGrid,
    kernel: &BasisKernel,
    x: f64,
) -> Result<f64, SamplingError> {
    if samples.len() != grid.len() {
        return Err(SamplingError::GridLength {
            samples: samples.len(),
            grid: grid.len(),
        });
    }
    if grid.is_empty() {
        return Err(SamplingError::Empty);
    }
    let support = kernel.support();
    let first = grid.point(0) as f64;
    let last = grid.point(grid.len() - 1) as f64;
    if x - support < first || x + support > last {
        return Err(SamplingError::EdgeQuery { x });
    }
    Ok(reconstruct_unchecked(samples, grid, kernel, x))
}

fn reconstruct_unchecked(samples: &[f64], grid: &SamplingGrid, kernel: &BasisKernel, x: f64) -> f64 {
    let s = grid.factor() as f64;
    let support = kernel.support();
    // Only grid indices with |x - x_i| < support contribute.
    let lo = ((x - support - grid.offset() as f64) / s).floor().max(0.0) as usize;
    let hi = (((x + support - grid.offset() as f64) / s).ceil() as usize).min(grid.len() - 1);
    (lo..=hi)
        .map(|i| kernel.eval(x - grid.point(i) as f64) * samples[i])
        .sum()
}

/// Worst interior reconstruction error `|r(x) - Σ_i B_s(x - x_i) r(x_i)|`
/// over every integer `x` and every grid phase `0..s`.
pub fn shiftability_error(r: &DenseResponse, factor: usize, kernel: &BasisKernel) -> Result<f64, SamplingError> {
    if factor == 0 {
        return Err(SamplingError::ZeroFactor);
    }
    let support = kernel.support().ceil() as usize;
    let needed = 4 * factor + 2 * support;
    let values = r.values();
    if values.len() < needed {
        return Err(SamplingError::TooShort {
            len: values.len(),
            needed,
        });
    }
    let kernel = BasisKernel {
        factor,
        ..*kernel
    };
    let mut worst = 0.0f64;
    for phase in 0..factor {
        let grid = SamplingGrid::covering(factor, phase, values.len())?;
        let samples = grid.sample(values);
        let first = grid.point(0);
        let last = grid.point(grid.len() - 1);
        if first + support > last.saturating_sub(support) {
            continue;
        }
        for (x, &v) in values.iter().enumerate().take(last - support + 1).skip(first + support) {
            let rec = reconstruct_unchecked(&samples, &grid, &kernel, x as f64);
            worst = worst.max((v - rec).abs());
        }
    }
    Ok(worst)
}

/// Nyquist verdict for a dense response sampled with factor `s`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BandlimitReport {
    pub shiftable: bool,
    /// Fraction of spectral energy above `1/(2s)` cycles per sample.
    pub high_frequency_fraction: f64,
}

/// Direct `O(n²)` DFT power spectrum, bins `0..n`.
pub fn power_spectrum(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    (0..n)
        .map(|k| {
            let (mut re, mut im) = (0.0, 0.0);
            for (x, &v) in values.iter().enumerate() {
                // Reduce the phase index first to keep the angle small.
                let phase = 2.0 * PI * ((k * x) % n) as f64 / n as f64;
                re += v * phase.cos();
                im -= v * phase.sin();
            }
            re * re + im * im
        })
        .collect()
}

pub fn bandlimit_check(r: &DenseResponse, factor: usize, energy_tol: f64) -> Result<BandlimitReport, SamplingError> {
    if factor == 0 {
        return Err(SamplingError::ZeroFactor);
    }
    let n = r.len();
    if n < 2 * factor {
        return Err(SamplingError::TooShort {
            len: n,
            needed: 2 * factor,
        });
    }
    let spectrum = power_spectrum(r.values());
    let total: f64 = spectrum.iter().sum();
    let cutoff = 1.0 / (2.0 * factor as f64);
    let high: f64 = spectrum
        .iter()
        .enumerate()
        .filter(|(k, _)| {
            let folded = (*k).min(n - *k) as f64 / n as f64;
            folded > cutoff + 1e-12
        })
        .map(|(_, p)| p)
        .sum();
    let fraction = if total > 0.0 { high / total } else { 0.0 };
    Ok(BandlimitReport {
        shiftable: fraction <= energy_tol,
        high_frequency_fraction: fraction,
    })
}

/// Global pooling on the sampling grid: `Σ_i r(x_i)`.
pub fn grid_pool(samples: &[f64]) -> Result<f64, SamplingError> {
    if samples.is_empty() {
        return Err(SamplingError::Empty);
    }
    Ok(samples.iter().sum())
}

/// Worst change of the grid-pooled value when the dense response is
/// translated by each `delta`, over every grid phase.
///
/// The response must vanish within `s + max|delta|` samples of both ends so
/// that no mass is pushed off the signal.
pub fn pooling_invariance_gap(r: &DenseResponse, factor: usize, shifts: &[isize]) -> Result<f64, SamplingError> {
    if factor == 0 {
        return Err(SamplingError::ZeroFactor);
    }
    let max_shift = shifts.iter().map(|d| d.unsigned_abs()).max().unwrap_or(0);
    let margin = factor + max_shift;
    let values = r.values();
    if values.len() <= 2 * margin {
        return Err(SamplingError::TooShort {
            len: values.len(),
            needed: 2 * margin + 1,
        });
    }
    let touches = values[..margin].iter().chain(&values[values.len() - margin..]).any(|&v| v != 0.0);
    if touches {
        return Err(SamplingError::SupportTouchesBoundary { margin });
    }
    let mut worst = 0.0f64;
    for phase in 0..factor {
        let grid = SamplingGrid::covering(factor, phase, values.len())?;
        let base = grid_pool(&grid.sample(values))?;
        for &delta in shifts {
            let moved = r.shifted(delta);
            let pooled = grid_pool(&grid.sample(moved.values()))?;
            worst = worst.max((pooled - base).abs());
        }
    }
    Ok(worst)
}

/// The phase constant `K = Σ_x B(x - x_i)` for a grid point `x_i`, summed
/// over every integer `x`.
pub fn partition_constant(kernel: &BasisKernel, grid_point: f64) -> f64 {
    let support = kernel.support().ceil() as i64 + 1;
    let centre = grid_point.round() as i64;
    (centre - support..=centre + support)
        .map(|x| kernel.eval(x as f64 - grid_point))
        .sum()
}

/// Centred moving average of width `width`, zero outside the signal.
pub fn moving_average(r: &DenseResponse, width: usize) -> DenseResponse {
    assert!(width >= 1);
    let v = r.values();
    let n = v.len() as isize;
    let lo = -((width as isize - 1) / 2);
    let out = (0..n)
        .map(|x| {
            let mut acc = 0.0;
            for k in lo..lo + width as isize {
                let i = x + k;
                if (0..n).contains(&i) {
                    acc += v[i as usize];
                }
            }
            acc / width as f64
        })
        .collect();
    DenseResponse(out)
}
