use std::f64::consts::PI;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use aliascope::audit::{
    depth_invariance_profile, embedding_size_sweep, feature_shift_trace, piecewise_invariance_check, top1_change_probability, trace_variation, AuditConfig,
    AuditMode, Placement,
};
use aliascope::biasstat::{category_bias_report, chi2_pvalue, chi2_statistic, Annotation, BinSpec, BinnedCounts, CategoryOutcome};
use aliascope::data::{generate_synthetic, LabeledDataset, SyntheticConfig};
use aliascope::nn::{
    accuracy, exact_invariance_fraction, parse_spec, replace_pooling, stride_product, subsampling_factor, train, train_readout, Fraction, LayerParams, LayerSpec,
    Model, PoolDescriptor, TrainConfig,
};
use aliascope::rng::SplitMix64;
use aliascope::sampling::{bandlimit_check, pooling_invariance_gap, shiftability_error, BasisKernel, DenseResponse};
use aliascope::tensor::roll;
use aliascope::transforms::{multiscale_dataset, EmbeddingProtocol, Fill, PiecewiseTransform, Rect, ShiftSpec};
use aliascope::Tensor;

const CANVAS: usize = 16;
const CLASSES: usize = 8;
const SEEDS: [u64; 3] = [0, 1, 2];
const AUDIT_EMBED: usize = 12;
const SWEEP_SIZES: [usize; 5] = [8, 9, 10, 11, 12];
const PROBE_LAYERS: [usize; 4] = [0, 1, 2, 3];
const SWAP_LAYER: usize = 3;
const TRACE_IMAGES: usize = 64;

const STRIDE1_INVARIANT: &str = "input 1 16 16\nconv 6 3 pad=circular act=relu\nmaxpool 2 stride=1\nconv 8 3 pad=circular act=relu\navgpool 3 stride=1\ngap\ndense 8\n";

fn strided_spec() -> String {
    format!("input 1 {CANVAS} {CANVAS}\nconv 8 3 pad=circular\nmaxpool 2 stride=2\nconv 16 3 pad=circular\nmaxpool 2 stride=2\ngap\ndense {CLASSES}\nsoftmax\n")
}

fn stride1_spec() -> String {
    strided_spec().replace("maxpool 2 stride=2", "maxpool 2 stride=1")
}

struct Outcome {
    pass: bool,
    detail: String,
}

struct Gate {
    failures: usize,
}

impl Gate {
    fn report(&mut self, n: usize, budget: Duration, elapsed: Duration, outcome: Outcome) {
        let in_time = elapsed <= budget;
        let pass = outcome.pass && in_time;
        if !pass {
            self.failures += 1;
        }
        println!(
            "criterion {n}: {} ({}; {:.1}s of {}s budget)",
            if pass { "PASS" } else { "FAIL" },
            outcome.detail,
            elapsed.as_secs_f64(),
            budget.as_secs()
        );
    }
}

struct SeedData {
    train: LabeledDataset,
    eval: LabeledDataset,
    native_eval: LabeledDataset,
}

fn seed_data(seed: u64) -> SeedData {
    let train_cfg = SyntheticConfig {
        num_classes: CLASSES,
        samples_per_class: 100,
        canvas: CANVAS,
        pattern: 6,
        jitter: 3,
        seed,
    };
    let eval_cfg = SyntheticConfig {
        samples_per_class: 64,
        seed: seed + 1000,
        ..train_cfg
    };
    let native_train = generate_synthetic(&train_cfg).unwrap();
    let native_eval = generate_synthetic(&eval_cfg).unwrap();
    SeedData {
        train: multiscale_dataset(&native_train, CANVAS, CANVAS / 2, Fill::Black, seed + 1).unwrap(),
        eval: multiscale_dataset(&native_eval, CANVAS, CANVAS / 2, Fill::Black, seed + 2).unwrap(),
        native_eval,
    }
}

fn train_cfg(seed: u64) -> TrainConfig {
    TrainConfig {
        learning_rate: 0.2,
        epochs: 60,
        batch_size: 16,
        seed,
        init_scale: 1.0,
    }
}

fn readout_cfg(seed: u64) -> TrainConfig {
    TrainConfig { epochs: 30, ..train_cfg(seed) }
}

fn audit_cfg(seed: u64) -> AuditConfig {
    AuditConfig {
        proto: EmbeddingProtocol {
            canvas_h: CANVAS,
            canvas_w: CANVAS,
            embed: AUDIT_EMBED,
            row: 0,
            col: 0,
            fill: Fill::Black,
        },
        mode: AuditMode::Translate(ShiftSpec::new(1, 0)),
        placement: Placement::Random,
        seed,
    }
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, Duration) {
    let t = Instant::now();
    let v = f();
    (v, t.elapsed())
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn random_image(shape: &[usize], seed: u64) -> Tensor {
    let mut g = SplitMix64::new(seed);
    Tensor::from_fn(shape, |_| g.next_f64())
}

fn criterion_1() -> Outcome {
    let model = Model::init(parse_spec(STRIDE1_INVARIANT).unwrap(), 7, 1.0);
    let data = generate_synthetic(&SyntheticConfig {
        samples_per_class: 64,
        ..SyntheticConfig::default()
    })
    .unwrap();
    let mut worst = 0.0f64;
    for img in data.images().iter().step_by(64) {
        let base = model.forward(img).unwrap();
        for dy in 0..CANVAS as isize {
            for dx in 0..CANVAS as isize {
                let moved = model.forward(&roll(img, dy, dx).unwrap()).unwrap();
                worst = worst.max(base.max_abs_diff(&moved));
            }
        }
    }
    let report = top1_change_probability(&model, &data, &audit_cfg(0)).unwrap();
    Outcome {
        pass: worst < 1e-9 && report.p_hat == 0.0 && report.n() >= 500,
        detail: format!("max logit diff {worst:.2e} over all 256 rolls, audit p_hat {} over {} images", report.p_hat, report.n()),
    }
}

fn windowed_cosine(len: usize, period: f64, phase: f64) -> DenseResponse {
    let c = len as f64 / 2.0;
    DenseResponse::from_fn(len, |x| {
        let env = (-(x - c).powi(2) / (2.0 * 60.0f64.powi(2))).exp();
        if env < 1e-15 {
            0.0
        } else {
            env * (2.0 * PI * x / period + phase).cos()
        }
    })
}

fn criterion_2() -> Outcome {
    let mut g = SplitMix64::new(2);
    let (mut worst_eps, mut worst_gap) = (0.0f64, 0.0f64);
    for s in [2usize, 3] {
        let kernel = BasisKernel::sinc_with_half_width(s, 128.0 * s as f64);
        let shifts: Vec<isize> = (1..s as isize).flat_map(|d| [d, -d]).collect();
        for period in [9.0, 12.0, 17.0, 25.0, 33.0, 40.0] {
            let r = windowed_cosine(1200, period * s as f64 / 2.0, g.uniform(0.0, 2.0 * PI));
            worst_eps = worst_eps.max(shiftability_error(&r, s, &kernel).unwrap());
            worst_gap = worst_gap.max(pooling_invariance_gap(&r, s, &shifts).unwrap());
        }
    }
    let detector = DenseResponse::from_fn(64, |x| if (6.0..58.0).contains(&x) && (x as usize).is_multiple_of(2) { 1.0 } else { 0.0 });
    let mass: f64 = detector.values().iter().sum();
    let det_gap = pooling_invariance_gap(&detector, 2, &[1]).unwrap();
    Outcome {
        pass: worst_eps < 1e-6 && worst_gap < 1e-5 && det_gap == mass,
        detail: format!("band-limited: max shiftability error {worst_eps:.2e}, max gap {worst_gap:.2e}; center detector gap {det_gap} vs pooled mass {mass}"),
    }
}

fn center_detector() -> Model {
    let spec = parse_spec("input 1 16 16\nconv 1 1 stride=2 pad=circular\ngap\ndense 1\n").unwrap();
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
    Model::from_parts(spec, params, 0).unwrap()
}

fn criterion_3() -> Outcome {
    // Wide enough that the two regions' content never shares a receptive
    // field (8 pixels for this net), including across the circular wrap.
    let side = 2 * CANVAS;
    let half = |left| Rect {
        top: 0,
        left,
        height: side,
        width: side / 2,
    };
    let model = Model::init(parse_spec(&STRIDE1_INVARIANT.replace("16 16", &format!("{side} {side}"))).unwrap(), 3, 1.0);
    let mut g = SplitMix64::new(3);
    let mut worst = 0.0f64;
    for i in 0..20 {
        let mut img = random_image(&[1, side, side], 300 + i);
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
        worst = worst.max(piecewise_invariance_check(&model, &img, &t).unwrap());
    }
    let left = Rect {
        top: 0,
        left: 0,
        height: CANVAS,
        width: CANVAS / 2,
    };
    let right = Rect { left: CANVAS / 2, ..left };
    let mut impulse = Tensor::zeros(&[1, CANVAS, CANVAS]);
    impulse.data_mut()[4 * CANVAS + 2] = 1.0;
    let odd = PiecewiseTransform {
        pieces: vec![(left, ShiftSpec::new(1, 0)), (right, ShiftSpec::default())],
    };
    let det_gap = piecewise_invariance_check(&center_detector(), &impulse, &odd).unwrap();
    Outcome {
        pass: worst < 1e-6 && det_gap > 1e-3,
        detail: format!("stride-1 max gap {worst:.2e} over 20 images; strided center detector gap {det_gap:.3}"),
    }
}

fn criterion_8() -> Outcome {
    let spec = parse_spec("input 1 120 120\nconv 2 3 stride=2 pad=zero\nmaxpool 2 stride=2\navgpool 3 stride=3\nmaxpool 5 stride=5\ngap\ndense 2\n").unwrap();
    let factor = subsampling_factor(&spec);
    let fraction = exact_invariance_fraction(factor);
    let expected = Fraction {
        numerator: 1,
        denominator: 3600,
    };
    Outcome {
        pass: factor == 60 && stride_product([2, 2, 3, 5]) == 60 && fraction == expected,
        detail: format!("factor {factor}, exact-invariance fraction {}/{}", fraction.numerator, fraction.denominator),
    }
}

fn annotation(category: &str, x: f64, y: f64, w: f64, h: f64) -> Annotation {
    Annotation {
        category: category.into(),
        img_w: 100.0,
        img_h: 100.0,
        box_x: x,
        box_y: y,
        box_w: w,
        box_h: h,
    }
}

fn criterion_9() -> Outcome {
    let mut anns: Vec<Annotation> = (0..1000).map(|_| annotation("concentrated", 45.0, 45.0, 10.0, 10.0)).collect();
    let mut g = SplitMix64::new(2024);
    anns.extend((0..10_000).map(|_| {
        // Boxes reach the nearer vertical edge, so height and centre are both uniform.
        let cy = g.next_f64();
        let cx = g.uniform(0.005, 0.995);
        let h = 2.0 * cy.min(1.0 - cy);
        annotation("uniform", cx * 100.0 - 0.5, (cy - h / 2.0) * 100.0, 1.0, h * 100.0)
    }));
    let report = category_bias_report(&anns, &BinSpec::default()).unwrap();
    let outcome = |name: &str| report.rows.iter().find(|r| r.category == name).map(|r| r.outcome.clone());
    let (conc_flagged, conc_p) = match outcome("concentrated") {
        Some(CategoryOutcome::Tested { position, flagged, .. }) => (flagged, position.p),
        _ => (false, f64::NAN),
    };
    let (uni_flagged, uni_p) = match outcome("uniform") {
        Some(CategoryOutcome::Tested { position, size, flagged }) => (flagged, position.p.min(size.p)),
        _ => (true, f64::NAN),
    };
    let (chi2, df) = chi2_statistic(&BinnedCounts::new("example", vec![10, 0, 10, 0])).unwrap();
    let mut worst_rel = 0.0f64;
    for df in [1usize, 2, 3, 5, 9, 24, 99] {
        for x in [0.01, 0.5, 1.0, 3.0, 7.5, 20.0, 60.0, 150.0, 400.0] {
            let ours = chi2_pvalue(x, df).unwrap();
            let oracle = statrs::function::gamma::gamma_ur(df as f64 / 2.0, x / 2.0);
            if oracle > 0.0 {
                worst_rel = worst_rel.max((ours - oracle).abs() / oracle);
            }
        }
    }
    Outcome {
        pass: conc_flagged && !uni_flagged && chi2 == 20.0 && df == 3 && worst_rel < 1e-9,
        detail: format!(
            "concentrated flagged={conc_flagged} (p {conc_p:.1e}), uniform N=10000 flagged={uni_flagged} (min p {uni_p:.3}), chi2 {chi2} df {df}, max p-value rel err {worst_rel:.1e}"
        ),
    }
}

fn gradient_worst_ratio(m: &Model, images: &[Tensor], labels: &[usize]) -> f64 {
    let refs: Vec<&Tensor> = images.iter().collect();
    let (_, grads) = m.loss_and_gradients(&refs, labels).unwrap();
    let h = 1e-6;
    let mut worst = 0.0f64;
    for (li, g) in grads.layers.iter().enumerate() {
        let Some(g) = g else { continue };
        for (which, gt) in [(0, &g.weight), (1, &g.bias)] {
            for j in 0..gt.len() {
                let eval = |delta: f64| {
                    let mut p = m.clone();
                    let lp = p.params_mut()[li].as_mut().unwrap();
                    let t = if which == 0 { &mut lp.weight } else { &mut lp.bias };
                    t.data_mut()[j] += delta;
                    p.loss_and_gradients(&refs, labels).unwrap().0
                };
                let numeric = (eval(h) - eval(-h)) / (2.0 * h);
                let analytic = gt.data()[j];
                let tol = 1e-4 * analytic.abs().max(numeric.abs()) + 1e-8;
                worst = worst.max((analytic - numeric).abs() / tol);
            }
        }
    }
    worst
}

fn criterion_10() -> Outcome {
    let nets = [
        "input 2 12 12\nconv 3 3 stride=2 pad=zero act=relu\nconv 4 3 pad=circular act=relu\nmaxpool 2 stride=2\navgpool 3 stride=1\ngap\ndense 5\nsoftmax\n",
        "input 1 8 8\nconv 3 3 pad=circular act=relu\nmaxpool 2 stride=1\nconv 2 3 stride=2 pad=zero act=none\ngap\ndense 3\nsoftmax\n",
        "input 1 6 6\nconv 2 3 pad=zero act=relu\navgpool 2 stride=2\ndense 4\ndense 3\nsoftmax\n",
    ];
    let mut worst = 0.0f64;
    for (i, text) in nets.iter().enumerate() {
        let spec = parse_spec(text).unwrap();
        let input = spec.input().dims();
        let classes = spec.num_classes();
        for seed in 0..2u64 {
            let m = Model::init(spec.clone(), 100 * i as u64 + seed, 1.0);
            let images: Vec<Tensor> = (0..3).map(|k| random_image(&input, 1000 * seed + k).map(|v| v - 0.5)).collect();
            let labels: Vec<usize> = (0..3).map(|k| (k + seed as usize) % classes).collect();
            worst = worst.max(gradient_worst_ratio(&m, &images, &labels));
        }
    }
    let cosine = |period: f64| DenseResponse::from_fn(240, |x| (2.0 * PI * x / period).cos());
    let slow = bandlimit_check(&cosine(8.0), 2, 1e-6).unwrap();
    let fast = bandlimit_check(&cosine(3.0), 2, 1e-6).unwrap();
    Outcome {
        pass: worst <= 1.0 && slow.shiftable && !fast.shiftable,
        detail: format!(
            "worst gradient error {worst:.3} of tolerance; cosine period 8 shiftable={}, period 3 shiftable={}",
            slow.shiftable, fast.shiftable
        ),
    }
}

fn main() -> ExitCode {
    let mut gate = Gate { failures: 0 };
    let minute = |m: u64| Duration::from_secs(60 * m);
    let seconds = Duration::from_secs(30);

    let (o, t) = timed(criterion_1);
    gate.report(1, minute(1), t, o);
    let (o, t) = timed(criterion_2);
    gate.report(2, seconds, t, o);
    let (o, t) = timed(criterion_3);
    gate.report(3, seconds, t, o);

    let mut strided = Vec::new();
    for seed in SEEDS {
        let data = seed_data(seed);
        let (out, t) = timed(|| train(&parse_spec(&strided_spec()).unwrap(), &data.train, &train_cfg(seed)).unwrap());
        println!("  strided net, seed {seed}: eval accuracy {:.3}, trained in {:.1}s", accuracy(&out.model, &data.eval).unwrap(), t.as_secs_f64());
        strided.push((data, out.model, t));
    }
    let strided_time = |k: usize| strided[k].2;

    let (o, t) = timed(|| {
        let (data, net, _) = &strided[0];
        let flat = train(&parse_spec(&stride1_spec()).unwrap(), &data.train, &train_cfg(0)).unwrap().model;
        let acc_flat = accuracy(&flat, &data.eval).unwrap();
        let acc_strided = accuracy(net, &data.eval).unwrap();
        let p_flat = top1_change_probability(&flat, &data.eval, &audit_cfg(0)).unwrap();
        let p_strided = top1_change_probability(net, &data.eval, &audit_cfg(0)).unwrap();
        Outcome {
            pass: (acc_flat - acc_strided).abs() <= 0.05 && p_flat.p_hat == 0.0 && p_strided.p_hat > 0.05 && p_flat.n() >= 500 && p_strided.n() >= 500,
            detail: format!(
                "accuracy stride-1 {acc_flat:.3} vs strided {acc_strided:.3}; flip rate stride-1 {} vs strided {:.4} [{:.4}, {:.4}] over {} images",
                p_flat.p_hat,
                p_strided.p_hat,
                p_strided.ci_low,
                p_strided.ci_high,
                p_strided.n()
            ),
        }
    });
    gate.report(4, minute(15), t + strided_time(0), o);

    let (o, t) = timed(|| {
        let mut shallow = Vec::new();
        let mut deep = Vec::new();
        let mut rows = Vec::new();
        for (k, (data, net, _)) in strided.iter().enumerate() {
            let seed = SEEDS[k];
            let profile = depth_invariance_profile(net, &data.train, &data.eval, &PROBE_LAYERS, &readout_cfg(seed), &audit_cfg(seed)).unwrap();
            shallow.push(profile[0].report.p_hat);
            deep.push(profile[profile.len() - 1].report.p_hat);
            rows.push(profile.iter().map(|p| format!("{:.3}", p.report.p_hat)).collect::<Vec<_>>().join("/"));
        }
        let (s, d) = (mean(&shallow), mean(&deep));
        Outcome {
            pass: d >= 2.0 * s && d > 0.0,
            detail: format!("flip rate by layer {} per seed; mean shallowest {s:.4}, deepest {d:.4}", rows.join(", ")),
        }
    });
    gate.report(5, minute(30), t + strided.iter().map(|s| s.2).sum::<Duration>(), o);

    let (o, t) = timed(|| {
        let old: PoolDescriptor = "max:2:2".parse().unwrap();
        let new: PoolDescriptor = "avg:6:2".parse().unwrap();
        let shifts: Vec<ShiftSpec> = (0..4).map(|d| ShiftSpec::new(d, 0)).collect();
        let mut stats = [[0.0; 3]; 2];
        let mut acc_drops = true;
        for (k, (data, net, _)) in strided.iter().enumerate() {
            let seed = SEEDS[k];
            let swapped = net.with_spec(replace_pooling(net.spec(), old, new).unwrap()).unwrap();
            let mut accs = [0.0; 2];
            for (j, m) in [net, &swapped].into_iter().enumerate() {
                let head = train_readout(m, SWAP_LAYER, &data.train, &readout_cfg(seed)).unwrap().model;
                accs[j] = accuracy(&head, &data.eval).unwrap();
                let flip = top1_change_probability(&head, &data.eval, &audit_cfg(seed)).unwrap().p_hat;
                let proto = EmbeddingProtocol { row: 1, col: 2, ..audit_cfg(seed).proto };
                let trace: Vec<f64> = data
                    .eval
                    .images()
                    .iter()
                    .take(TRACE_IMAGES)
                    .map(|img| trace_variation(&feature_shift_trace(m, SWAP_LAYER, img, &proto, &shifts).unwrap()))
                    .collect();
                stats[j][0] += mean(&trace) / SEEDS.len() as f64;
                stats[j][1] += flip / SEEDS.len() as f64;
                stats[j][2] += accs[j] / SEEDS.len() as f64;
            }
            acc_drops &= accs[1] < accs[0];
        }
        let [max, avg] = stats;
        Outcome {
            pass: max[0] >= 2.0 * avg[0] && max[1] >= 2.0 * avg[1] && acc_drops,
            detail: format!(
                "3-seed means max -> avg pooling: trace variation {:.2e} -> {:.2e}, flip rate {:.4} -> {:.4}, readout accuracy {:.3} -> {:.3} (lower in every seed: {acc_drops})",
                max[0], avg[0], max[1], avg[1], max[2], avg[2]
            ),
        }
    });
    gate.report(6, minute(30), t + strided.iter().map(|s| s.2).sum::<Duration>(), o);

    let (o, t) = timed(|| {
        let mut curves = vec![0.0; SWEEP_SIZES.len()];
        for (k, (data, net, _)) in strided.iter().enumerate() {
            let sweep = embedding_size_sweep(net, &data.native_eval, &audit_cfg(SEEDS[k]), &SWEEP_SIZES).unwrap();
            for (c, (_, r)) in curves.iter_mut().zip(&sweep) {
                *c += r.p_hat / SEEDS.len() as f64;
            }
        }
        let (small, large) = (curves[0], curves[curves.len() - 1]);
        let shown: Vec<String> = SWEEP_SIZES.iter().zip(&curves).map(|(e, p)| format!("{e}:{p:.4}")).collect();
        Outcome {
            pass: small >= 1.5 * large && small > 0.0,
            detail: format!("3-seed mean flip rate by embed size {}", shown.join(" ")),
        }
    });
    gate.report(7, minute(20), t + strided.iter().map(|s| s.2).sum::<Duration>(), o);

    let (o, t) = timed(criterion_8);
    gate.report(8, seconds, t, o);
    let (o, t) = timed(criterion_9);
    gate.report(9, seconds, t, o);
    let (o, t) = timed(criterion_10);
    gate.report(10, minute(5), t, o);

    if gate.failures == 0 {
        println!("acceptance: all criteria PASS");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: {} criteria FAIL", gate.failures);
        ExitCode::FAILURE
    }
}
