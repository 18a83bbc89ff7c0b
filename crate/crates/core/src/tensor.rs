//! Dense row-major `f64` tensors.
//!
//! Images and feature maps use `(n, c, h, w)` order. The last two dimensions
//! of any tensor of rank ≥ 2 are treated as the spatial plane `(h, w)`; all
//! leading dimensions are flattened into independent planes.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum TensorError {
    #[error("shape {shape:?} holds {expected} elements but {actual} were supplied")]
    LengthMismatch {
        shape: Vec<usize>,
        expected: usize,
        actual: usize,
    },
    #[error("shape {0:?} has a zero-sized dimension")]
    EmptyDimension(Vec<usize>),
    #[error("shape {0:?} is empty")]
    EmptyShape(Vec<usize>),
    #[error("operation needs two spatial dimensions, tensor has rank {0}")]
    NotSpatial(usize),
    #[error("expected shape {expected:?}, found {actual:?}")]
    ShapeMismatch {
        expected: Vec<usize>,
        actual: Vec<usize>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PadMode {
    Zero,
    Circular,
}

impl PadMode {
    pub fn as_str(self) -> &'static str {
        match self {
            PadMode::Zero => "zero",
            PadMode::Circular => "circular",
        }
    }
}

impl std::str::FromStr for PadMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "zero" => Ok(PadMode::Zero),
            "circular" => Ok(PadMode::Circular),
            other => Err(format!("unknown pad mode `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

/// Flat offset of `(n, c, h, w)` in a row-major `[N, C, H, W]` buffer.
///
/// Every module indexes image-shaped buffers through this function.
#[inline(always)]
pub fn offset4(c_dim: usize, h_dim: usize, w_dim: usize, n: usize, c: usize, h: usize, w: usize) -> usize {
    ((n * c_dim + c) * h_dim + h) * w_dim + w
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, TensorError> {
        if shape.is_empty() {
            return Err(TensorError::EmptyShape(shape));
        }
        if shape.contains(&0) {
            return Err(TensorError::EmptyDimension(shape));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(TensorError::LengthMismatch {
                shape,
                expected,
                actual: data.len(),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        assert!(!shape.is_empty() && shape.iter().all(|&d| d > 0), "invalid shape {shape:?}");
        Self {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> f64) -> Self {
        let mut t = Self::zeros(shape);
        for (i, v) in t.data.iter_mut().enumerate() {
            *v = f(i);
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn reshape(self, shape: Vec<usize>) -> Result<Self, TensorError> {
        Self::new(shape, self.data)
    }

    /// `(planes, h, w)` view of the spatial layout.
    pub fn spatial_dims(&self) -> Result<(usize, usize, usize), TensorError> {
        let r = self.rank();
        if r < 2 {
            return Err(TensorError::NotSpatial(r));
        }
        let h = self.shape[r - 2];
        let w = self.shape[r - 1];
        Ok((self.len() / (h * w), h, w))
    }

    fn with_spatial(&self, h: usize, w: usize) -> Vec<usize> {
        let mut s = self.shape.clone();
        let r = s.len();
        s[r - 2] = h;
        s[r - 1] = w;
        s
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        assert_eq!(self.shape, other.shape, "shape mismatch in max_abs_diff");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Grows both spatial dimensions by `2 * margin`.
pub fn pad(t: &Tensor, margin: usize, mode: PadMode) -> Result<Tensor, TensorError> {
    let (planes, h, w) = t.spatial_dims()?;
    if margin == 0 {
        return Ok(t.clone());
    }
    let (ph, pw) = (h + 2 * margin, w + 2 * margin);
    let mut out = vec![0.0; planes * ph * pw];
    for p in 0..planes {
        let src = &t.data[p * h * w..(p + 1) * h * w];
        let dst = &mut out[p * ph * pw..(p + 1) * ph * pw];
        for y in 0..ph {
            for x in 0..pw {
                let sy = y as isize - margin as isize;
                let sx = x as isize - margin as isize;
                dst[y * pw + x] = match mode {
                    PadMode::Zero => {
                        if sy < 0 || sx < 0 || sy >= h as isize || sx >= w as isize {
                            0.0
                        } else {
                            src[sy as usize * w + sx as usize]
                        }
                    }
                    PadMode::Circular => {
                        let yy = sy.rem_euclid(h as isize) as usize;
                        let xx = sx.rem_euclid(w as isize) as usize;
                        src[yy * w + xx]
                    }
                };
            }
        }
    }
    Tensor::new(t.with_spatial(ph, pw), out)
}

/// Smallest index attaining the maximum. Panics on an empty slice.
pub fn argmax(values: &[f64]) -> usize {
    assert!(!values.is_empty(), "argmax of empty slice");
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

pub fn argmax_flat(t: &Tensor) -> usize {
    argmax(t.data())
}

/// Sum over `(h, w)` for every leading plane, in plane order.
pub fn spatial_sum(t: &Tensor) -> Result<Vec<f64>, TensorError> {
    let (planes, h, w) = t.spatial_dims()?;
    Ok(t.data
        .chunks_exact(h * w)
        .take(planes)
        .map(|plane| plane.iter().sum())
        .collect())
}

/// Circularly rolls the spatial plane by `(dy, dx)`: out[y+dy, x+dx] = in[y, x].
pub fn roll(t: &Tensor, dy: isize, dx: isize) -> Result<Tensor, TensorError> {
    let (planes, h, w) = t.spatial_dims()?;
    let mut out = vec![0.0; t.len()];
    for p in 0..planes {
        let base = p * h * w;
        for y in 0..h {
            let ty = (y as isize + dy).rem_euclid(h as isize) as usize;
            for x in 0..w {
                let tx = (x as isize + dx).rem_euclid(w as isize) as usize;
                out[base + ty * w + tx] = t.data[base + y * w + x];
            }
        }
    }
    Tensor::new(t.shape.clone(), out)
}

/// Translates the spatial plane by `(dy, dx)`, zero-filling vacated pixels and
/// dropping pixels that leave the plane.
pub fn translate(t: &Tensor, dy: isize, dx: isize) -> Result<Tensor, TensorError> {
    let (planes, h, w) = t.spatial_dims()?;
    let mut out = vec![0.0; t.len()];
    for p in 0..planes {
        let base = p * h * w;
        for y in 0..h {
            let ty = y as isize + dy;
            if ty < 0 || ty >= h as isize {
                continue;
            }
            for x in 0..w {
                let tx = x as isize + dx;
                if tx < 0 || tx >= w as isize {
                    continue;
                }
                out[base + ty as usize * w + tx as usize] = t.data[base + y * w + x];
            }
        }
    }
    Tensor::new(t.shape.clone(), out)
}
