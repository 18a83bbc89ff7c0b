//! Numeric checks behind `verify-theory`: exact invariance of stride-1
//! networks, the pooling bound for shiftable responses, and its piecewise
//! extension.

use std::f64::consts::PI;

use aliascope::audit::piecewise_invariance_check;
use aliascope::nn::{parse_spec, LayerParams, LayerSpec, Model};
use aliascope::rng::{derive_seed, SplitMix64};
use aliascope::sampling::{pooling_invariance_gap, shiftability_error, BasisKernel, DenseResponse};
use aliascope::tensor::roll;
use aliascope::transforms::{PiecewiseTransform, Rect, ShiftSpec};
use aliascope::Tensor;
use anyhow::Result;

pub struct Check {
    pub name: &'static str,
    pub pass: bool,
    pub detail: String,
}

fn stride1_net(side: usize) -> String {
    format!("input 1 {side} {side}\nconv 6 3 pad=circular act=relu\nmaxpool 2 stride=1\nconv 8 3 pad=circular act=relu\navgpool 3 stride=1\ngap\ndense 8\n")
}

fn random_image(side: usize, g: &mut SplitMix64) -> Tensor {
    Tensor::from_fn(&[1, side, side], |_| g.next_f64())
}

/// Every circular translation leaves the logits of a random stride-1
/// network with global pooling unchanged.
pub fn observation(seed: u64) -> Result<Check> {
    let side = 12;
    let model = Model::init(parse_spec(&stride1_net(side))?, derive_seed(seed, 1), 1.0);
    let mut g = SplitMix64::new(derive_seed(seed, 2));
    let mut worst = 0.0f64;
    for _ in 0..3 {
        let img = random_image(side, &mut g);
        let base = model.forward(&img)?;
        for dy in 0..side as isize {
            for dx in 0..side as isize {
                worst = worst.max(base.max_abs_diff(&model.forward(&roll(&img, dy, dx)?)?));
            }
        }
    }
    Ok(Check {
        name: "observation",
        pass: worst < 1e-9,
        detail: format!("max logit change {worst:.2e} over all translations"),
    })
}

/// Band-limited responses pool invariantly under sub-stride shifts; a
/// response living only on the grid loses all of its pooled mass.
pub fn claim(seed: u64) -> Result<Check> {
    let mut g = SplitMix64::new(derive_seed(seed, 3));
    let len = 1200;
    let centre = len as f64 / 2.0;
    let (mut eps, mut gap) = (0.0f64, 0.0f64);
    for s in [2usize, 3] {
        let kernel = BasisKernel::sinc_with_half_width(s, 128.0 * s as f64);
        let shifts: Vec<isize> = (1..s as isize).flat_map(|d| [d, -d]).collect();
        for _ in 0..4 {
            let period = g.uniform(5.0, 20.0) * s as f64;
            let phase = g.uniform(0.0, 2.0 * PI);
            let r = DenseResponse::from_fn(len, |x| {
                let env = (-(x - centre).powi(2) / 7200.0).exp();
                if env < 1e-15 {
                    0.0
                } else {
                    env * (2.0 * PI * x / period + phase).cos()
                }
            });
            eps = eps.max(shiftability_error(&r, s, &kernel)?);
            gap = gap.max(pooling_invariance_gap(&r, s, &shifts)?);
        }
    }
    let detector = DenseResponse::from_fn(64, |x| if (6.0..58.0).contains(&x) && (x as usize).is_multiple_of(2) { 1.0 } else { 0.0 });
    let mass: f64 = detector.values().iter().sum();
    let detector_gap = pooling_invariance_gap(&detector, 2, &[1])?;
    Ok(Check {
        name: "claim",
        pass: eps < 1e-6 && gap < 1e-5 && detector_gap == mass,
        detail: format!("shiftability error {eps:.2e}, pooling gap {gap:.2e}, grid-only response gap {detector_gap} of mass {mass}"),
    })
}

fn center_detector(side: usize) -> Result<Model> {
    let spec = parse_spec(&format!("input 1 {side} {side}\nconv 1 1 stride=2 pad=circular\ngap\ndense 1\n"))?;
    let params = spec
        .layers()
        .iter()
        .map(|l| match l {
            LayerSpec::Conv { .. } => Some(LayerParams {
                weight: Tensor::full(&[1, 1, 1, 1], 1.0),
                bias: Tensor::zeros(&[1]),
            }),
            LayerSpec::Dense { .. } => Some(LayerParams {
                weight: Tensor::full(&[1, 1], 1.0),
                bias: Tensor::zeros(&[1]),
            }),
            _ => None,
        })
        .collect();
    Ok(Model::from_parts(spec, params, 0)?)
}

/// Independent shifts of well-separated regions leave the pooled features
/// of a stride-1 network unchanged, but not those of a strided one.
pub fn corollary(seed: u64) -> Result<Check> {
    let side = 32;
    let half = |left| Rect {
        top: 0,
        left,
        height: side,
        width: side / 2,
    };
    let model = Model::init(parse_spec(&stride1_net(side))?, derive_seed(seed, 4), 1.0);
    let mut g = SplitMix64::new(derive_seed(seed, 5));
    let mut worst = 0.0f64;
    for _ in 0..8 {
        let mut img = random_image(side, &mut g);
        for y in 0..side {
            for x in 0..side {
                if !(3..13).contains(&y) || !(7..11).contains(&(x % (side / 2))) {
                    img.data_mut()[y * side + x] = 0.0;
                }
            }
        }
        let mut shift = || ShiftSpec::new(g.range_inclusive(-2, 2) as isize, g.range_inclusive(-2, 2) as isize);
        let t = PiecewiseTransform {
            pieces: vec![(half(0), shift()), (half(side / 2), shift())],
        };
        worst = worst.max(piecewise_invariance_check(&model, &img, &t)?);
    }
    let mut impulse = Tensor::zeros(&[1, side, side]);
    impulse.data_mut()[4 * side + 2] = 1.0;
    let odd = PiecewiseTransform {
        pieces: vec![(half(0), ShiftSpec::new(1, 0)), (half(side / 2), ShiftSpec::default())],
    };
    let strided_gap = piecewise_invariance_check(&center_detector(side)?, &impulse, &odd)?;
    Ok(Check {
        name: "corollary",
        pass: worst < 1e-6 && strided_gap > 1e-3,
        detail: format!("stride-1 gap {worst:.2e}, strided gap {strided_gap:.3}"),
    })
}

pub fn all(seed: u64) -> Result<Vec<Check>> {
    Ok(vec![observation(seed)?, claim(seed)?, corollary(seed)?])
}
