//! Image-plane manipulations behind the audit protocols.
//!
//! Images are `[c, h, w]` tensors. Embedding places a resized image on a
//! fixed-size canvas, either on black or with a harmonic (Laplace) fill of
//! the background; the translation, rescaling and crop protocols all build
//! *pairs* of inputs that differ by a single pixel.

use thiserror::Error;

use crate::data::LabeledDataset;
use crate::rng::{derive_seed, SplitMix64};
use crate::tensor::{Tensor, TensorError};

#[derive(Debug, Error, PartialEq)]
pub enum TransformError {
    #[error("a {eh}x{ew} image at ({row}, {col}) does not fit a {ch}x{cw} canvas")]
    Placement {
        eh: usize,
        ew: usize,
        row: isize,
        col: isize,
        ch: usize,
        cw: usize,
    },
    #[error("inpainting needs at least one known pixel")]
    NoKnownPixels,
    #[error("mask has {mask} entries for a {pixels}-pixel plane")]
    MaskSize { mask: usize, pixels: usize },
    #[error("subareas {0} and {1} overlap")]
    Overlap(usize, usize),
    #[error("subarea {0} lies outside the canvas or its content leaves it when shifted")]
    Overflow(usize),
    #[error("crop of {crop} pixels (plus a 1-pixel shift) does not fit a {h}x{w} image")]
    CropTooLarge { crop: usize, h: usize, w: usize },
    #[error("expected a [c, h, w] image, got shape {0:?}")]
    NotImage(Vec<usize>),
    #[error("size must be at least 1")]
    ZeroSize,
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

fn image_dims(img: &Tensor) -> Result<(usize, usize, usize), TransformError> {
    match *img.shape() {
        [c, h, w] => Ok((c, h, w)),
        ref s => Err(TransformError::NotImage(s.to_vec())),
    }
}

/// Bilinear resampling to an explicit size with half-pixel centres:
/// `src = (dst + 0.5) * in / out - 0.5`, clamped to the valid range.
pub fn resize_to(img: &Tensor, new_h: usize, new_w: usize) -> Result<Tensor, TransformError> {
    let (c, h, w) = image_dims(img)?;
    if new_h == 0 || new_w == 0 {
        return Err(TransformError::ZeroSize);
    }
    let taps = |out: usize, input: usize| -> Vec<(usize, usize, f64)> {
        (0..out)
            .map(|d| {
                let s = ((d as f64 + 0.5) * input as f64 / out as f64 - 0.5).clamp(0.0, (input - 1) as f64);
                let i0 = s.floor() as usize;
                let i1 = (i0 + 1).min(input - 1);
                (i0, i1, s - i0 as f64)
            })
            .collect()
    };
    let ys = taps(new_h, h);
    let xs = taps(new_w, w);
    let src = img.data();
    let mut out = Vec::with_capacity(c * new_h * new_w);
    for ch in 0..c {
        let plane = &src[ch * h * w..(ch + 1) * h * w];
        for &(y0, y1, fy) in &ys {
            for &(x0, x1, fx) in &xs {
                let top = plane[y0 * w + x0] * (1.0 - fx) + plane[y0 * w + x1] * fx;
                let bottom = plane[y1 * w + x0] * (1.0 - fx) + plane[y1 * w + x1] * fx;
                out.push(top * (1.0 - fy) + bottom * fy);
            }
        }
    }
    Ok(Tensor::new(vec![c, new_h, new_w], out)?)
}

/// Aspect-preserving resize to width `new_w`; `new_h = round(h * new_w / w)`.
pub fn bilinear_resize(img: &Tensor, new_w: usize) -> Result<Tensor, TransformError> {
    let (_, h, w) = image_dims(img)?;
    if new_w == 0 {
        return Err(TransformError::ZeroSize);
    }
    let new_h = ((h as f64 * new_w as f64 / w as f64).round() as usize).max(1);
    resize_to(img, new_h, new_w)
}

/// `(h, w)` after scaling the longest side to `long_side`.
pub fn fit_long_side(h: usize, w: usize, long_side: usize) -> (usize, usize) {
    if w >= h {
        (((h as f64 * long_side as f64 / w as f64).round() as usize).max(1), long_side)
    } else {
        (long_side, ((w as f64 * long_side as f64 / h as f64).round() as usize).max(1))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Fill {
    Black,
    Inpaint,
}

impl std::str::FromStr for Fill {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "black" => Ok(Fill::Black),
            "inpaint" => Ok(Fill::Inpaint),
            other => Err(format!("unknown fill `{other}` (black|inpaint)")),
        }
    }
}

impl Fill {
    pub fn as_str(self) -> &'static str {
        match self {
            Fill::Black => "black",
            Fill::Inpaint => "inpaint",
        }
    }
}

/// Where and how an image is embedded in a canvas.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EmbeddingProtocol {
    pub canvas_h: usize,
    pub canvas_w: usize,
    /// Longest side of the embedded image in pixels.
    pub embed: usize,
    pub row: isize,
    pub col: isize,
    pub fill: Fill,
}

/// A vertical/horizontal pixel displacement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ShiftSpec {
    pub dy: isize,
    pub dx: isize,
}

impl ShiftSpec {
    pub fn new(dy: isize, dx: isize) -> Self {
        Self { dy, dx }
    }
}

/// A canvas and the mask of pixels covered by the embedded image.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedded {
    pub canvas: Tensor,
    pub mask: Vec<bool>,
}

/// Pastes an already-resized image at `(row, col)` and fills the background.
pub fn place(content: &Tensor, canvas_h: usize, canvas_w: usize, row: isize, col: isize, fill: Fill) -> Result<Embedded, TransformError> {
    let (c, eh, ew) = image_dims(content)?;
    let fits = row >= 0 && col >= 0 && row as usize + eh <= canvas_h && col as usize + ew <= canvas_w;
    if !fits {
        return Err(TransformError::Placement {
            eh,
            ew,
            row,
            col,
            ch: canvas_h,
            cw: canvas_w,
        });
    }
    let (row, col) = (row as usize, col as usize);
    let mut canvas = Tensor::zeros(&[c, canvas_h, canvas_w]);
    let mut mask = vec![false; canvas_h * canvas_w];
    let src = content.data();
    let dst = canvas.data_mut();
    for ch in 0..c {
        for y in 0..eh {
            for x in 0..ew {
                dst[(ch * canvas_h + row + y) * canvas_w + col + x] = src[(ch * eh + y) * ew + x];
            }
        }
    }
    for y in 0..eh {
        mask[(row + y) * canvas_w + col..(row + y) * canvas_w + col + ew].fill(true);
    }
    if fill == Fill::Inpaint {
        canvas = inpaint_fill(&canvas, &mask)?;
    }
    Ok(Embedded { canvas, mask })
}

/// Resizes the image so its longest side is `proto.embed` and places it.
pub fn embed(img: &Tensor, proto: &EmbeddingProtocol) -> Result<Embedded, TransformError> {
    let (_, h, w) = image_dims(img)?;
    if proto.embed == 0 {
        return Err(TransformError::ZeroSize);
    }
    let (eh, ew) = fit_long_side(h, w, proto.embed);
    let content = resize_to(img, eh, ew)?;
    place(&content, proto.canvas_h, proto.canvas_w, proto.row, proto.col, proto.fill)
}

pub const INPAINT_TOLERANCE: f64 = 1e-3;
pub const INPAINT_MAX_ITERS: usize = 500;

/// Harmonic fill: unknown pixels (mask `false`) relax by Jacobi iteration to
/// the mean of their in-bounds 4-neighbours, known pixels stay fixed. Stops
/// when no pixel moves by `INPAINT_TOLERANCE` or after `INPAINT_MAX_ITERS`
/// sweeps. Unknown pixels start at the mean of the known ones.
pub fn inpaint_fill(canvas: &Tensor, mask: &[bool]) -> Result<Tensor, TransformError> {
    inpaint_with(canvas, mask, INPAINT_TOLERANCE, INPAINT_MAX_ITERS)
}

pub fn inpaint_with(canvas: &Tensor, mask: &[bool], tol: f64, max_iters: usize) -> Result<Tensor, TransformError> {
    let (c, h, w) = image_dims(canvas)?;
    if mask.len() != h * w {
        return Err(TransformError::MaskSize {
            mask: mask.len(),
            pixels: h * w,
        });
    }
    let known = mask.iter().filter(|&&m| m).count();
    if known == 0 {
        return Err(TransformError::NoKnownPixels);
    }
    let mut out = canvas.clone();
    if known == mask.len() {
        return Ok(out);
    }
    let unknown: Vec<usize> = (0..h * w).filter(|&i| !mask[i]).collect();
    let data = out.data_mut();
    let mut next = vec![0.0; unknown.len()];
    for ch in 0..c {
        let plane = &mut data[ch * h * w..(ch + 1) * h * w];
        let mean = (0..h * w).filter(|&i| mask[i]).map(|i| plane[i]).sum::<f64>() / known as f64;
        for &i in &unknown {
            plane[i] = mean;
        }
        for _ in 0..max_iters {
            let mut delta = 0.0f64;
            for (slot, &i) in next.iter_mut().zip(&unknown) {
                let (y, x) = (i / w, i % w);
                let (mut s, mut n) = (0.0, 0.0);
                if y > 0 {
                    s += plane[i - w];
                    n += 1.0;
                }
                if y + 1 < h {
                    s += plane[i + w];
                    n += 1.0;
                }
                if x > 0 {
                    s += plane[i - 1];
                    n += 1.0;
                }
                if x + 1 < w {
                    s += plane[i + 1];
                    n += 1.0;
                }
                *slot = if n > 0.0 { s / n } else { plane[i] };
                delta = delta.max((*slot - plane[i]).abs());
            }
            for (&v, &i) in next.iter().zip(&unknown) {
                plane[i] = v;
            }
            if delta < tol {
                break;
            }
        }
    }
    Ok(out)
}

/// Re-embeds every image of a dataset on a `canvas x canvas` black or
/// inpainted background at a random longest side in `min_embed..=canvas`
/// and a random position. Used to build multi-scale training and evaluation
/// sets; the draws for image `i` depend only on `(seed, i)`.
pub fn multiscale_dataset(ds: &LabeledDataset, canvas: usize, min_embed: usize, fill: Fill, seed: u64) -> Result<LabeledDataset, TransformError> {
    if min_embed == 0 || min_embed > canvas {
        return Err(TransformError::ZeroSize);
    }
    let images = ds
        .images()
        .iter()
        .enumerate()
        .map(|(i, img)| {
            let mut g = SplitMix64::new(derive_seed(seed, i as u64));
            let e = g.range_inclusive(min_embed as i64, canvas as i64) as usize;
            let (_, h, w) = image_dims(img)?;
            let (eh, ew) = fit_long_side(h, w, e);
            let row = g.range_inclusive(0, (canvas - eh) as i64) as isize;
            let col = g.range_inclusive(0, (canvas - ew) as i64) as isize;
            let proto = EmbeddingProtocol {
                canvas_h: canvas,
                canvas_w: canvas,
                embed: e,
                row,
                col,
                fill,
            };
            Ok(embed(img, &proto)?.canvas)
        })
        .collect::<Result<Vec<_>, TransformError>>()?;
    Ok(LabeledDataset::with_ids(images, ds.labels().to_vec(), ds.ids().to_vec(), ds.num_classes()).expect("same labels and ids"))
}

/// Embedding at `position + delta`, background recomputed for the new placement.
pub fn shift_embedded(img: &Tensor, proto: &EmbeddingProtocol, delta: ShiftSpec) -> Result<Embedded, TransformError> {
    let moved = EmbeddingProtocol {
        row: proto.row + delta.dy,
        col: proto.col + delta.dx,
        ..*proto
    };
    embed(img, &moved)
}

/// Two embeddings at the same top-left corner whose content is resized to
/// width `width` and `width + 1` respectively.
pub fn scale_pair(img: &Tensor, proto: &EmbeddingProtocol, width: usize) -> Result<(Embedded, Embedded), TransformError> {
    let a = bilinear_resize(img, width)?;
    let b = bilinear_resize(img, width + 1)?;
    Ok((
        place(&a, proto.canvas_h, proto.canvas_w, proto.row, proto.col, proto.fill)?,
        place(&b, proto.canvas_h, proto.canvas_w, proto.row, proto.col, proto.fill)?,
    ))
}

/// Parameters of the noisy crop-pair protocol. Pixel values are in 8-bit
/// units (`[0, 255]`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CropSetup {
    /// The image is first resized so its longest side has this length.
    pub long_side: usize,
    pub crop_size: usize,
    /// Uniform noise `U[0, 1) * noise_scale` is added before cropping.
    pub noise_scale: f64,
    pub seed: u64,
}

impl CropSetup {
    pub const DEFAULT_LONG_SIDE: usize = 400;
}

/// Two square crops one horizontal pixel apart, cut from the same resized,
/// noised and clipped image. The noise field is drawn once, so the crops
/// share it up to the 1-pixel translation.
pub fn crop_pair_with_noise(img: &Tensor, setup: &CropSetup) -> Result<(Tensor, Tensor), TransformError> {
    let (c, h, w) = image_dims(img)?;
    let (rh, rw) = fit_long_side(h, w, setup.long_side);
    let crop = setup.crop_size;
    if crop == 0 || crop > rh || crop + 1 > rw {
        return Err(TransformError::CropTooLarge { crop, h: rh, w: rw });
    }
    let mut big = resize_to(img, rh, rw)?;
    let mut rng = SplitMix64::new(setup.seed);
    let top = rng.below((rh - crop + 1) as u64) as usize;
    let left = rng.below((rw - crop) as u64) as usize;
    for v in big.data_mut() {
        *v = (*v + rng.next_f64() * setup.noise_scale).clamp(0.0, 255.0);
    }
    let cut = |left: usize| -> Tensor {
        let src = big.data();
        let mut out = Vec::with_capacity(c * crop * crop);
        for ch in 0..c {
            for y in 0..crop {
                let row = (ch * rh + top + y) * rw + left;
                out.extend_from_slice(&src[row..row + crop]);
            }
        }
        Tensor::new(vec![c, crop, crop], out).expect("consistent shape")
    };
    Ok((cut(left), cut(left + 1)))
}

/// Axis-aligned rectangle on the canvas.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rect {
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
}

impl Rect {
    pub fn contains(&self, y: isize, x: isize) -> bool {
        y >= self.top as isize
            && x >= self.left as isize
            && y < (self.top + self.height) as isize
            && x < (self.left + self.width) as isize
    }

    fn overlaps(&self, o: &Rect) -> bool {
        self.top < o.top + o.height && o.top < self.top + self.height && self.left < o.left + o.width && o.left < self.left + self.width
    }
}

/// Disjoint subareas, each translated by its own shift.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PiecewiseTransform {
    pub pieces: Vec<(Rect, ShiftSpec)>,
}

/// Shifts each subarea's content by its own displacement. Vacated pixels
/// become zero; pixels outside every subarea are untouched. Nonzero content
/// may not leave its subarea.
pub fn piecewise_shift(canvas: &Tensor, t: &PiecewiseTransform) -> Result<Tensor, TransformError> {
    let (c, h, w) = image_dims(canvas)?;
    for (i, (a, _)) in t.pieces.iter().enumerate() {
        if a.top + a.height > h || a.left + a.width > w {
            return Err(TransformError::Overflow(i));
        }
        for (j, (b, _)) in t.pieces.iter().enumerate().take(i) {
            if a.overlaps(b) {
                return Err(TransformError::Overlap(j, i));
            }
        }
    }
    let src = canvas.data();
    let mut out = canvas.clone();
    let dst = out.data_mut();
    for (i, (r, d)) in t.pieces.iter().enumerate() {
        for ch in 0..c {
            for y in r.top..r.top + r.height {
                for x in r.left..r.left + r.width {
                    dst[(ch * h + y) * w + x] = 0.0;
                }
            }
        }
        for ch in 0..c {
            for y in r.top..r.top + r.height {
                for x in r.left..r.left + r.width {
                    let v = src[(ch * h + y) * w + x];
                    let (ty, tx) = (y as isize + d.dy, x as isize + d.dx);
                    if !r.contains(ty, tx) {
                        if v != 0.0 {
                            return Err(TransformError::Overflow(i));
                        }
                        continue;
                    }
                    dst[(ch * h + ty as usize) * w + tx as usize] = v;
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::translate;
    use proptest::prelude::*;

    fn ramp(c: usize, h: usize, w: usize) -> Tensor {
        Tensor::from_fn(&[c, h, w], |i| (i % (h * w)) as f64 + 0.25 * (i / (h * w)) as f64)
    }

    fn random(shape: &[usize], seed: u64) -> Tensor {
        let mut g = SplitMix64::new(seed);
        Tensor::from_fn(shape, |_| g.next_f64())
    }

    #[test]
    fn resize_identity_and_constant() {
        let t = random(&[2, 5, 7], 1);
        assert_eq!(bilinear_resize(&t, 7).unwrap(), t);
        let k = Tensor::full(&[1, 6, 4], 3.5);
        let r = bilinear_resize(&k, 9).unwrap();
        assert_eq!(r.shape(), &[1, 14, 9]);
        assert!(r.data().iter().all(|&v| (v - 3.5).abs() < 1e-12));
    }

    #[test]
    fn resize_ramp_matches_per_pixel_oracle() {
        let img = ramp(1, 4, 4);
        let out = bilinear_resize(&img, 8).unwrap();
        assert_eq!(out.shape(), &[1, 8, 8]);
        let at = |y: usize, x: usize| img.data()[y * 4 + x];
        for y in 0..8 {
            for x in 0..8 {
                let sy = (((y as f64) + 0.5) * 0.5 - 0.5).clamp(0.0, 3.0);
                let sx = (((x as f64) + 0.5) * 0.5 - 0.5).clamp(0.0, 3.0);
                let (y0, x0) = (sy as usize, sx as usize);
                let (y1, x1) = ((y0 + 1).min(3), (x0 + 1).min(3));
                let (fy, fx) = (sy - y0 as f64, sx - x0 as f64);
                let want = at(y0, x0) * (1.0 - fy) * (1.0 - fx)
                    + at(y0, x1) * (1.0 - fy) * fx
                    + at(y1, x0) * fy * (1.0 - fx)
                    + at(y1, x1) * fy * fx;
                assert!((out.data()[y * 8 + x] - want).abs() < 1e-12);
            }
        }
    }

    fn proto(embed: usize, row: isize, col: isize, fill: Fill) -> EmbeddingProtocol {
        EmbeddingProtocol {
            canvas_h: 12,
            canvas_w: 12,
            embed,
            row,
            col,
            fill,
        }
    }

    #[test]
    fn full_size_embed_is_the_image() {
        let img = random(&[1, 12, 12], 2);
        let e = embed(&img, &proto(12, 0, 0, Fill::Black)).unwrap();
        assert_eq!(e.canvas, img);
        assert!(e.mask.iter().all(|&m| m));
    }

    #[test]
    fn black_background_is_zero() {
        let img = random(&[1, 6, 6], 3).map(|v| v + 1.0);
        let e = embed(&img, &proto(5, 2, 3, Fill::Black)).unwrap();
        for (i, &m) in e.mask.iter().enumerate() {
            assert_eq!(m, e.canvas.data()[i] != 0.0);
        }
        assert_eq!(e.mask.iter().filter(|&&m| m).count(), 25);
    }

    #[test]
    fn inpaint_background_matches_fill() {
        let img = random(&[1, 6, 6], 4);
        let p = proto(5, 2, 3, Fill::Inpaint);
        let e = embed(&img, &p).unwrap();
        let black = embed(&img, &EmbeddingProtocol { fill: Fill::Black, ..p }).unwrap();
        assert_eq!(e.canvas, inpaint_fill(&black.canvas, &black.mask).unwrap());
    }

    #[test]
    fn placement_overflow() {
        let img = random(&[1, 6, 6], 5);
        assert!(matches!(
            embed(&img, &proto(6, 7, 0, Fill::Black)),
            Err(TransformError::Placement { .. })
        ));
        assert!(embed(&img, &proto(6, -1, 0, Fill::Black)).is_err());
    }

    #[test]
    fn inpaint_full_mask_is_identity() {
        let c = random(&[2, 5, 5], 6);
        assert_eq!(inpaint_fill(&c, &[true; 25]).unwrap(), c);
        assert_eq!(inpaint_fill(&c, &[false; 25]), Err(TransformError::NoKnownPixels));
    }

    #[test]
    fn inpaint_single_known_pixel_spreads() {
        let mut c = Tensor::zeros(&[1, 6, 6]);
        c.data_mut()[14] = 0.7;
        let mut mask = vec![false; 36];
        mask[14] = true;
        let out = inpaint_with(&c, &mask, 1e-12, 100_000).unwrap();
        assert!(out.data().iter().all(|&v| (v - 0.7).abs() < 1e-9));
    }

    #[test]
    fn inpaint_matches_direct_solve() {
        // 8x8 canvas with a known 4x4 centre block. The oracle assembles the
        // discrete Laplace system on the unknown pixels and solves it densely.
        let (h, w) = (8usize, 8usize);
        let mut g = SplitMix64::new(7);
        let mut canvas = Tensor::zeros(&[1, h, w]);
        let mut mask = vec![false; h * w];
        for y in 2..6 {
            for x in 2..6 {
                mask[y * w + x] = true;
                canvas.data_mut()[y * w + x] = g.next_f64();
            }
        }
        let unknown: Vec<usize> = (0..h * w).filter(|&i| !mask[i]).collect();
        let index = |p: usize| unknown.iter().position(|&u| u == p);
        let n = unknown.len();
        let mut a = nalgebra::DMatrix::<f64>::zeros(n, n);
        let mut b = nalgebra::DVector::<f64>::zeros(n);
        for (row, &p) in unknown.iter().enumerate() {
            let (y, x) = ((p / w) as isize, (p % w) as isize);
            let mut deg = 0.0;
            for (dy, dx) in [(-1, 0), (1, 0), (0, -1), (0, 1)] {
                let (ny, nx) = (y + dy, x + dx);
                if ny < 0 || nx < 0 || ny >= h as isize || nx >= w as isize {
                    continue;
                }
                deg += 1.0;
                let q = ny as usize * w + nx as usize;
                match index(q) {
                    Some(col) => a[(row, col)] -= 1.0,
                    None => b[row] += canvas.data()[q],
                }
            }
            a[(row, row)] += deg;
        }
        let sol = a.lu().solve(&b).expect("nonsingular");
        let out = inpaint_fill(&canvas, &mask).unwrap();
        for (row, &p) in unknown.iter().enumerate() {
            assert!((out.data()[p] - sol[row]).abs() < 1e-2, "pixel {p}: {} vs {}", out.data()[p], sol[row]);
        }
        for (i, &m) in mask.iter().enumerate() {
            if m {
                assert_eq!(out.data()[i], canvas.data()[i]);
            }
        }
    }

    #[test]
    fn shift_zero_and_one() {
        let img = random(&[1, 6, 6], 8).map(|v| v + 0.1);
        let p = proto(5, 3, 3, Fill::Black);
        let base = embed(&img, &p).unwrap();
        assert_eq!(shift_embedded(&img, &p, ShiftSpec::default()).unwrap(), base);
        let moved = shift_embedded(&img, &p, ShiftSpec::new(1, 0)).unwrap();
        assert_eq!(moved.canvas, translate(&base.canvas, 1, 0).unwrap());

        let pi = proto(5, 3, 3, Fill::Inpaint);
        let moved = shift_embedded(&img, &pi, ShiftSpec::new(1, 0)).unwrap();
        assert_eq!(moved, embed(&img, &EmbeddingProtocol { row: 4, ..pi }).unwrap());
        assert!(shift_embedded(&img, &p, ShiftSpec::new(5, 0)).is_err());
    }

    #[test]
    fn scale_pairs_chain() {
        let img = random(&[1, 8, 8], 9);
        let p = proto(6, 1, 1, Fill::Black);
        let (_, b) = scale_pair(&img, &p, 6).unwrap();
        let (c, _) = scale_pair(&img, &p, 7).unwrap();
        assert_eq!(b, c);
        let native = proto(8, 1, 1, Fill::Black);
        let (first, _) = scale_pair(&img, &native, 8).unwrap();
        assert_eq!(first, embed(&img, &native).unwrap());
        let (a, b) = scale_pair(&img, &p, 5).unwrap();
        let ra = bilinear_resize(&img, 5).unwrap();
        let rb = bilinear_resize(&img, 6).unwrap();
        for y in 0..5 {
            for x in 0..5 {
                assert_eq!(a.canvas.data()[(1 + y) * 12 + 1 + x], ra.data()[y * 5 + x]);
            }
        }
        for y in 0..6 {
            for x in 0..6 {
                assert_eq!(b.canvas.data()[(1 + y) * 12 + 1 + x], rb.data()[y * 6 + x]);
            }
        }
    }

    #[test]
    fn noiseless_crops_are_shifted_windows() {
        let img = random(&[1, 20, 30], 10).map(|v| v * 255.0);
        let setup = CropSetup {
            long_side: 40,
            crop_size: 16,
            noise_scale: 0.0,
            seed: 3,
        };
        let (a, b) = crop_pair_with_noise(&img, &setup).unwrap();
        for y in 0..16 {
            for x in 1..16 {
                assert_eq!(a.data()[y * 16 + x], b.data()[y * 16 + x - 1]);
            }
        }
        let big = resize_to(&img, 27, 40).unwrap();
        let found = (0..=27 - 16).any(|top| {
            (0..40 - 16).any(|left| (0..16).all(|y| (0..16).all(|x| big.data()[(top + y) * 40 + left + x] == a.data()[y * 16 + x])))
        });
        assert!(found, "crop is not a window of the resized image");
    }

    #[test]
    fn noisy_crops_are_clipped_and_deterministic() {
        let img = random(&[3, 10, 10], 11).map(|v| v * 255.0);
        let setup = CropSetup {
            long_side: CropSetup::DEFAULT_LONG_SIDE,
            crop_size: 32,
            noise_scale: 240.0,
            seed: 5,
        };
        let (a, b) = crop_pair_with_noise(&img, &setup).unwrap();
        assert!(a.data().iter().chain(b.data()).all(|&v| (0.0..=255.0).contains(&v)));
        assert!(a.data().contains(&255.0));
        assert_eq!(crop_pair_with_noise(&img, &setup).unwrap(), (a.clone(), b.clone()));
        // Clipping acts on the shared noisy image, so the shift relation holds.
        for ch in 0..3 {
            for y in 0..32 {
                for x in 1..32 {
                    assert_eq!(a.data()[(ch * 32 + y) * 32 + x], b.data()[(ch * 32 + y) * 32 + x - 1]);
                }
            }
        }
        let too_big = CropSetup { crop_size: 400, ..setup };
        assert!(matches!(
            crop_pair_with_noise(&img, &too_big),
            Err(TransformError::CropTooLarge { .. })
        ));
    }

    #[test]
    fn piecewise_cases() {
        let mut canvas = Tensor::zeros(&[1, 8, 8]);
        canvas.data_mut()[2 * 8 + 1] = 1.0;
        canvas.data_mut()[5 * 8 + 6] = 2.0;
        let whole = Rect {
            top: 0,
            left: 0,
            height: 8,
            width: 8,
        };
        let left = Rect { width: 4, ..whole };
        let right = Rect { left: 4, width: 4, ..whole };

        let id = PiecewiseTransform {
            pieces: vec![(left, ShiftSpec::default()), (right, ShiftSpec::default())],
        };
        assert_eq!(piecewise_shift(&canvas, &id).unwrap(), canvas);

        let global = PiecewiseTransform {
            pieces: vec![(whole, ShiftSpec::new(1, 1))],
        };
        assert_eq!(piecewise_shift(&canvas, &global).unwrap(), translate(&canvas, 1, 1).unwrap());

        let split = PiecewiseTransform {
            pieces: vec![(left, ShiftSpec::new(0, 1)), (right, ShiftSpec::new(-1, 0))],
        };
        let out = piecewise_shift(&canvas, &split).unwrap();
        let mut manual = Tensor::zeros(&[1, 8, 8]);
        manual.data_mut()[2 * 8 + 2] = 1.0;
        manual.data_mut()[4 * 8 + 6] = 2.0;
        assert_eq!(out, manual);

        let overlapping = PiecewiseTransform {
            pieces: vec![(left, ShiftSpec::default()), (whole, ShiftSpec::default())],
        };
        assert_eq!(piecewise_shift(&canvas, &overlapping), Err(TransformError::Overlap(0, 1)));
        let escaping = PiecewiseTransform {
            pieces: vec![(left, ShiftSpec::new(0, -2))],
        };
        assert_eq!(piecewise_shift(&canvas, &escaping), Err(TransformError::Overflow(0)));
    }

    #[test]
    fn multiscale_keeps_labels_and_fits() {
        let imgs: Vec<Tensor> = (0..20).map(|s| random(&[1, 8, 8], s).map(|v| v + 0.5)).collect();
        let ds = LabeledDataset::new(imgs, (0..20).map(|i| i % 4).collect(), 4).unwrap();
        let m = multiscale_dataset(&ds, 12, 6, Fill::Black, 3).unwrap();
        assert_eq!(m.labels(), ds.labels());
        assert_eq!(m.ids(), ds.ids());
        for img in m.images() {
            assert_eq!(img.shape(), &[1, 12, 12]);
            let lit = img.data().iter().filter(|&&v| v > 0.0).count();
            assert!((36..=144).contains(&lit));
        }
        assert_eq!(multiscale_dataset(&ds, 12, 6, Fill::Black, 3).unwrap(), m);
        assert_ne!(multiscale_dataset(&ds, 12, 6, Fill::Black, 4).unwrap(), m);
        assert!(multiscale_dataset(&ds, 12, 13, Fill::Black, 3).is_err());
    }

    proptest! {
        #[test]
        fn black_shift_commutes_with_translation(seed in any::<u64>(), row in 0isize..5, col in 0isize..5, dy in -1isize..2, dx in -1isize..2) {
            let img = random(&[1, 5, 7], seed).map(|v| v + 0.5);
            let p = EmbeddingProtocol { canvas_h: 12, canvas_w: 12, embed: 6, row: row + 1, col: col + 1, fill: Fill::Black };
            let base = embed(&img, &p).unwrap();
            let moved = shift_embedded(&img, &p, ShiftSpec::new(dy, dx)).unwrap();
            prop_assert_eq!(moved.canvas, translate(&base.canvas, dy, dx).unwrap());
        }

        #[test]
        fn inpaint_maximum_principle(seed in any::<u64>()) {
            let img = random(&[1, 4, 4], seed);
            let e = embed(&img, &EmbeddingProtocol { canvas_h: 10, canvas_w: 10, embed: 4, row: 3, col: 2, fill: Fill::Inpaint }).unwrap();
            let (lo, hi) = img.data().iter().fold((f64::MAX, f64::MIN), |(a, b), &v| (a.min(v), b.max(v)));
            for &v in e.canvas.data() {
                prop_assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
            }
        }

        #[test]
        fn resize_keeps_row_bounds_of_constant_rows(seed in any::<u64>(), new_w in 1usize..20) {
            let mut g = SplitMix64::new(seed);
            let rows: Vec<f64> = (0..5).map(|_| g.next_f64()).collect();
            let img = Tensor::from_fn(&[1, 5, 6], |i| rows[i / 6]);
            let out = bilinear_resize(&img, new_w).unwrap();
            let (lo, hi) = rows.iter().fold((f64::MAX, f64::MIN), |(a, b), &v| (a.min(v), b.max(v)));
            for &v in out.data() {
                prop_assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
            }
        }
    }
}
