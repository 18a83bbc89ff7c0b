use std::fmt::Write as _;
use std::path::Path;
use std::process::ExitCode;

use aliascope::audit::{
    depth_invariance_profile, embedding_size_sweep, feature_shift_trace, feature_shiftability_error, jaggedness_curve, top1_change_probability,
    trace_variation, write_audit_csv, write_curve_csv, AuditConfig, AuditMode, AuditReport, Placement, Sweep,
};
use aliascope::biasstat::{category_bias_report, parse_annotations, write_bias_report, BinSpec};
use aliascope::data::{generate_synthetic, load_dataset, read_pnm, save_dataset, LabeledDataset, SyntheticConfig};
use aliascope::nn::{accuracy, load_model, parse_spec, replace_pooling, to_bytes, train, train_readout, Model, TrainConfig};
use aliascope::sampling::KernelKind;
use aliascope::tensor::argmax;
use aliascope::transforms::{fit_long_side, multiscale_dataset, EmbeddingProtocol, Fill, ShiftSpec};
use aliascope::Tensor;
use anyhow::{bail, Context, Result};
use rayon::prelude::*;

use crate::manifest::Run;
use crate::{
    Axis, BiasArgs, CanvasArgs, Command, CropArgs, DeltaArgs, DepthArgs, EmbedArgs, EvalArgs, FillArg, GenDataArgs, ImageArgs, JaggednessArgs, KernelArg,
    PlacementArg, PoolSwapArgs, Preset, ScaleArgs, ShiftArgs, ShiftabilityArgs, SweepArgs, SweepKind, SweepMode, TraceArgs, TrainArgs,
};

pub fn dispatch(command: Command, seed: u64, argv: Vec<String>) -> Result<ExitCode> {
    let mut run = Run::new(argv, seed);
    match command {
        Command::VerifyTheory => return verify_theory(seed),
        Command::GenData(a) => gen_data(&mut run, a, seed)?,
        Command::Train(a) => train_cmd(&mut run, a, seed)?,
        Command::Eval(a) => eval(&mut run, a)?,
        Command::AuditShift(a) => audit_shift(&mut run, a, seed)?,
        Command::AuditScale(a) => audit_scale(&mut run, a, seed)?,
        Command::AuditCrop(a) => audit_crop(&mut run, a, seed)?,
        Command::SweepEmbed(a) => sweep_embed(&mut run, a, seed)?,
        Command::Jaggedness(a) => jaggedness(&mut run, a)?,
        Command::DepthProfile(a) => depth_profile(&mut run, a, seed)?,
        Command::Shiftability(a) => shiftability(&mut run, a)?,
        Command::FeatureTrace(a) => feature_trace(&mut run, a)?,
        Command::PoolSwap(a) => pool_swap(&mut run, a, seed)?,
        Command::BiasAudit(a) => bias_audit(&mut run, a)?,
    }
    run.finish()?;
    Ok(ExitCode::SUCCESS)
}

fn verify_theory(seed: u64) -> Result<ExitCode> {
    let checks = crate::theory::all(seed)?;
    for c in &checks {
        println!("{}: {}", c.name, if c.pass { "PASS" } else { "FAIL" });
        eprintln!("  {}", c.detail);
    }
    Ok(if checks.iter().all(|c| c.pass) { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn fill(f: FillArg) -> Fill {
    match f {
        FillArg::Black => Fill::Black,
        FillArg::Inpaint => Fill::Inpaint,
    }
}

fn read_model(run: &mut Run, path: &Path) -> Result<Model> {
    run.input(path)?;
    load_model(path).with_context(|| format!("loading model {}", path.display()))
}

fn read_data(run: &mut Run, path: &Path) -> Result<LabeledDataset> {
    run.input(path)?;
    load_dataset(path).with_context(|| format!("loading dataset {}", path.display()))
}

fn read_image(run: &mut Run, args: &ImageArgs) -> Result<(Tensor, usize, String)> {
    if let Some(path) = &args.image {
        run.input(path)?;
        let img = read_pnm(path).with_context(|| format!("reading {}", path.display()))?;
        let label = args.label.context("--image needs --label")?;
        return Ok((img.map(|v| v / 255.0), label, path.display().to_string()));
    }
    let dir = args.data.as_ref().context("pass --image or --data")?;
    let ds = read_data(run, dir)?;
    if args.index >= ds.len() {
        bail!("--index {} out of range for {} images", args.index, ds.len());
    }
    Ok((ds.images()[args.index].clone(), ds.labels()[args.index], ds.ids()[args.index].clone()))
}

fn protocol(args: &CanvasArgs, model: &Model) -> Result<EmbeddingProtocol> {
    let input = model.spec().input();
    let (h, w) = (input.height, input.width);
    if let Some(c) = args.canvas {
        if c != h || c != w {
            bail!("--canvas {c} does not match the model input {h}x{w}");
        }
    }
    let embed = args.embed.unwrap_or(3 * h.min(w) / 4);
    if embed == 0 || embed > h.max(w) {
        bail!("--embed {embed} does not fit a {h}x{w} canvas");
    }
    Ok(EmbeddingProtocol {
        canvas_h: h,
        canvas_w: w,
        embed,
        row: args.row,
        col: args.col,
        fill: fill(args.fill),
    })
}

fn shift(d: &DeltaArgs) -> ShiftSpec {
    match d.axis {
        Axis::Y => ShiftSpec::new(d.delta, 0),
        Axis::X => ShiftSpec::new(0, d.delta),
    }
}

fn audit_config(args: &EmbedArgs, model: &Model, mode: AuditMode, seed: u64) -> Result<AuditConfig> {
    Ok(AuditConfig {
        proto: protocol(&args.canvas, model)?,
        mode,
        placement: match args.placement {
            PlacementArg::Random => Placement::Random,
            PlacementArg::Fixed => Placement::Fixed,
        },
        seed,
    })
}

fn finish_audit(run: &mut Run, report: &AuditReport, out: &Path) -> Result<()> {
    let mut buf = Vec::new();
    write_audit_csv(report, &mut buf)?;
    run.write(out, &buf)?;
    println!(
        "p_hat={:.6} ci95=[{:.6}, {:.6}] changed={} n={} failures={}",
        report.p_hat,
        report.ci_low,
        report.ci_high,
        report.changed(),
        report.n(),
        report.failures.len()
    );
    for f in report.failures.iter().take(5) {
        eprintln!("skipped {}: {}", f.image_id, f.message);
    }
    if report.n() == 0 {
        bail!("every image failed the audit protocol");
    }
    Ok(())
}

fn gnuplot(csv: &Path, xlabel: &str, ylabel: &str, columns: &str) -> String {
    format!(
        "set datafile separator ','\nset key off\nset xlabel '{xlabel}'\nset ylabel '{ylabel}'\nplot '{}' using {columns} skip 1 with linespoints\n",
        csv.display()
    )
}

fn gen_data(run: &mut Run, a: GenDataArgs, seed: u64) -> Result<()> {
    let cfg = SyntheticConfig {
        num_classes: a.classes,
        samples_per_class: a.per_class,
        canvas: a.canvas,
        pattern: a.pattern,
        jitter: a.jitter,
        seed,
    };
    let mut ds = generate_synthetic(&cfg)?;
    if let Some(min) = a.min_embed {
        ds = multiscale_dataset(&ds, a.canvas, min, fill(a.fill), seed)?;
    }
    run.write_dir(&a.out, |dir| Ok(save_dataset(&ds, dir)?))?;
    println!("images={} classes={} canvas={}", ds.len(), ds.num_classes(), a.canvas);
    Ok(())
}

fn preset_spec(preset: Preset, ds: &LabeledDataset) -> Result<String> {
    let [c, h, w] = match *ds.images()[0].shape() {
        [c, h, w] => [c, h, w],
        ref s => bail!("dataset images have shape {s:?}"),
    };
    let stride = match preset {
        Preset::Strided => 2,
        Preset::Stride1 => 1,
    };
    Ok(format!(
        "input {c} {h} {w}\nconv 8 3 pad=circular\nmaxpool 2 stride={stride}\nconv 16 3 pad=circular\nmaxpool 2 stride={stride}\ngap\ndense {}\nsoftmax\n",
        ds.num_classes()
    ))
}

fn train_cmd(run: &mut Run, a: TrainArgs, seed: u64) -> Result<()> {
    let ds = read_data(run, &a.data)?;
    let text = match (&a.spec, a.preset) {
        (Some(path), _) => {
            run.input(path)?;
            std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?
        }
        (None, Some(p)) => preset_spec(p, &ds)?,
        (None, None) => bail!("pass --spec or --preset"),
    };
    let spec = parse_spec(&text)?;
    let cfg = TrainConfig {
        learning_rate: a.lr,
        epochs: a.epochs,
        batch_size: a.batch,
        seed,
        init_scale: a.init_scale,
    };
    let outcome = train(&spec, &ds, &cfg)?;
    run.write(&a.out, &to_bytes(&outcome.model))?;
    if let Some(path) = &a.history {
        let mut csv = String::from("epoch,mean_loss,train_accuracy\n");
        for e in &outcome.history {
            writeln!(csv, "{},{},{}", e.epoch, e.mean_loss, e.train_accuracy)?;
        }
        run.write(path, csv.as_bytes())?;
    }
    if let Some(last) = outcome.history.last() {
        println!("epochs={} mean_loss={:.6} train_accuracy={:.4}", outcome.history.len(), last.mean_loss, last.train_accuracy);
    }
    Ok(())
}

fn eval(run: &mut Run, a: EvalArgs) -> Result<()> {
    let model = read_model(run, &a.model)?;
    let ds = read_data(run, &a.data)?;
    let acc = accuracy(&model, &ds)?;
    if let Some(out) = &a.out {
        let rows: Vec<String> = (0..ds.len())
            .into_par_iter()
            .map(|i| {
                let scores = model.scores(&ds.images()[i])?;
                let top1 = argmax(&scores);
                let label = ds.labels()[i];
                Ok(format!("{},{label},{top1},{},{}", ds.ids()[i], top1 == label, scores.get(label).copied().unwrap_or(f64::NAN)))
            })
            .collect::<Result<_>>()?;
        let mut csv = String::from("image_id,label,top1,correct,score\n");
        for r in rows {
            csv.push_str(&r);
            csv.push('\n');
        }
        run.write(out, csv.as_bytes())?;
    }
    println!("accuracy={acc:.6} n={}", ds.len());
    Ok(())
}

fn audit_shift(run: &mut Run, a: ShiftArgs, seed: u64) -> Result<()> {
    let model = read_model(run, &a.model)?;
    let ds = read_data(run, &a.data)?;
    let cfg = audit_config(&a.embed, &model, AuditMode::Translate(shift(&a.delta)), seed)?;
    let report = top1_change_probability(&model, &ds, &cfg)?;
    finish_audit(run, &report, &a.out)
}

fn audit_scale(run: &mut Run, a: ScaleArgs, seed: u64) -> Result<()> {
    let model = read_model(run, &a.model)?;
    let ds = read_data(run, &a.data)?;
    let cfg = audit_config(&a.embed, &model, AuditMode::Scale, seed)?;
    let report = top1_change_probability(&model, &ds, &cfg)?;
    finish_audit(run, &report, &a.out)
}

fn audit_crop(run: &mut Run, a: CropArgs, seed: u64) -> Result<()> {
    let model = read_model(run, &a.model)?;
    let ds = read_data(run, &a.data)?;
    if !(a.noise >= 0.0 && a.noise.is_finite()) {
        bail!("--noise must be a non-negative number");
    }
    let input = model.spec().input();
    let cfg = AuditConfig {
        proto: EmbeddingProtocol {
            canvas_h: input.height,
            canvas_w: input.width,
            embed: input.height.max(input.width),
            row: 0,
            col: 0,
            fill: Fill::Black,
        },
        mode: AuditMode::CropNoise {
            long_side: a.long_side,
            noise_scale: a.noise,
        },
        placement: Placement::Random,
        seed,
    };
    let report = top1_change_probability(&model, &ds, &cfg)?;
    finish_audit(run, &report, &a.out)
}

fn sweep_embed(run: &mut Run, a: SweepArgs, seed: u64) -> Result<()> {
    let model = read_model(run, &a.model)?;
    let ds = read_data(run, &a.data)?;
    let mode = match a.mode {
        SweepMode::Translate => AuditMode::Translate(shift(&a.delta)),
        SweepMode::Scale => AuditMode::Scale,
    };
    let cfg = audit_config(&a.embed, &model, mode, seed)?;
    for &e in &a.sizes {
        protocol(
            &CanvasArgs {
                embed: Some(e),
                ..a.embed.canvas.clone()
            },
            &model,
        )?;
    }
    let sweep = embedding_size_sweep(&model, &ds, &cfg, &a.sizes)?;
    let mut csv = String::from("embed,p_hat,ci_low,ci_high,changed,n,failures\n");
    for (e, r) in &sweep {
        writeln!(csv, "{e},{},{},{},{},{},{}", r.p_hat, r.ci_low, r.ci_high, r.changed(), r.n(), r.failures.len())?;
        println!("embed={e} p_hat={:.6} n={}", r.p_hat, r.n());
    }
    run.write(&a.out, csv.as_bytes())?;
    if let Some(plot) = &a.plot {
        run.write(plot, gnuplot(&a.out, "embedded size", "top-1 change probability", "1:2").as_bytes())?;
    }
    Ok(())
}

fn jaggedness(run: &mut Run, a: JaggednessArgs) -> Result<()> {
    let model = read_model(run, &a.model)?;
    let (image, label, id) = read_image(run, &a.image)?;
    let proto = protocol(&a.canvas, &model)?;
    let (_, h, w) = image.spatial_dims()?;
    let (eh, ew) = fit_long_side(h, w, proto.embed);
    let positions = |last: isize| -> Vec<isize> { (a.from.unwrap_or(0)..=a.to.unwrap_or(last)).collect() };
    let (sweep, name) = match a.sweep {
        SweepKind::Rows => (Sweep::Rows(positions(proto.canvas_h as isize - eh as isize)), "row"),
        SweepKind::Cols => (Sweep::Cols(positions(proto.canvas_w as isize - ew as isize)), "column"),
        SweepKind::Widths => {
            let from = a.from.unwrap_or(ew as isize / 2).max(1);
            let to = a.to.unwrap_or(proto.canvas_w as isize - proto.col);
            (Sweep::Widths((from..=to).map(|v| v as usize).collect()), "width")
        }
    };
    let curve = jaggedness_curve(&model, &image, label, &proto, &sweep);
    let points: Vec<(String, Option<f64>)> = curve.iter().map(|p| (format!("{}", p.param), p.value)).collect();
    let mut buf = Vec::new();
    write_curve_csv(&points, &mut buf)?;
    run.write(&a.out, &buf)?;
    if let Some(plot) = &a.plot {
        run.write(plot, gnuplot(&a.out, name, "correct-class score", "1:2").as_bytes())?;
    }
    let valid: Vec<f64> = curve.iter().filter_map(|p| p.value).collect();
    let (lo, hi) = valid.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    println!("image={id} label={label} points={} valid={} min_score={lo:.6} max_score={hi:.6}", curve.len(), valid.len());
    Ok(())
}

fn depth_profile(run: &mut Run, a: DepthArgs, seed: u64) -> Result<()> {
    let model = read_model(run, &a.model)?;
    let train_set = read_data(run, &a.train)?;
    let eval_set = read_data(run, &a.data)?;
    let layers: Vec<usize> = if a.layers.is_empty() {
        (0..model.spec().layers().iter().take_while(|l| l.is_spatial()).count()).collect()
    } else {
        a.layers.clone()
    };
    let audit = audit_config(&a.embed, &model, AuditMode::Translate(shift(&a.delta)), seed)?;
    let cfg = TrainConfig {
        learning_rate: a.lr,
        epochs: a.epochs,
        batch_size: a.batch,
        seed,
        init_scale: 1.0,
    };
    let profile = depth_invariance_profile(&model, &train_set, &eval_set, &layers, &cfg, &audit)?;
    let mut csv = String::from("layer_index,normalized_depth,readout_accuracy,p_hat,ci_low,ci_high,n\n");
    for p in &profile {
        let r = &p.report;
        writeln!(csv, "{},{},{},{},{},{},{}", p.layer_index, p.normalized_depth, p.readout_accuracy, r.p_hat, r.ci_low, r.ci_high, r.n())?;
        println!("layer={} readout_accuracy={:.4} p_hat={:.6}", p.layer_index, p.readout_accuracy, r.p_hat);
    }
    run.write(&a.out, csv.as_bytes())?;
    if let Some(plot) = &a.plot {
        run.write(plot, gnuplot(&a.out, "normalized depth", "top-1 change probability", "2:4").as_bytes())?;
    }
    Ok(())
}

fn shiftability(run: &mut Run, a: ShiftabilityArgs) -> Result<()> {
    let model = read_model(run, &a.model)?;
    let ds = read_data(run, &a.data)?;
    let kind = match a.kernel {
        KernelArg::Linear => KernelKind::LinearTent,
        KernelArg::Cubic => KernelKind::CubicBSpline,
        KernelArg::Sinc => KernelKind::WindowedSinc { half_width: a.half_width },
    };
    let n = if a.limit == 0 { ds.len() } else { a.limit.min(ds.len()) };
    let errors: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| feature_shiftability_error(&model, a.layer, &ds.images()[i], kind))
        .collect::<Result<_, _>>()?;
    let mut csv = String::from("image_id,error\n");
    for (i, e) in errors.iter().enumerate() {
        writeln!(csv, "{},{e}", ds.ids()[i])?;
    }
    run.write(&a.out, csv.as_bytes())?;
    let max = errors.iter().copied().fold(0.0, f64::max);
    let mean = errors.iter().sum::<f64>() / n.max(1) as f64;
    println!("layer={} images={n} mean_error={mean:.6e} max_error={max:.6e}", a.layer);
    Ok(())
}

fn feature_trace(run: &mut Run, a: TraceArgs) -> Result<()> {
    let model = read_model(run, &a.model)?;
    let (image, _, id) = read_image(run, &a.image)?;
    let proto = protocol(&a.canvas, &model)?;
    if a.max_shift < 0 {
        bail!("--max-shift must be non-negative");
    }
    let shifts: Vec<ShiftSpec> = (0..=a.max_shift)
        .map(|d| match a.axis {
            Axis::Y => ShiftSpec::new(d, 0),
            Axis::X => ShiftSpec::new(0, d),
        })
        .collect();
    let trace = feature_shift_trace(&model, a.layer, &image, &proto, &shifts)?;
    let channels = trace.iter().find_map(|p| p.sums.as_ref().map(Vec::len)).unwrap_or(0);
    let mut csv = String::from("dy,dx");
    for c in 0..channels {
        write!(csv, ",c{c}")?;
    }
    csv.push('\n');
    for p in &trace {
        write!(csv, "{},{}", p.shift.dy, p.shift.dx)?;
        match &p.sums {
            Some(sums) => sums.iter().try_for_each(|v| write!(csv, ",{v}"))?,
            None => (0..channels).try_for_each(|_| write!(csv, ","))?,
        }
        csv.push('\n');
    }
    run.write(&a.out, csv.as_bytes())?;
    let valid = trace.iter().filter(|p| p.sums.is_some()).count();
    println!("image={id} layer={} shifts={} valid={valid} variation={:.6e}", a.layer, trace.len(), trace_variation(&trace));
    Ok(())
}

fn pool_swap(run: &mut Run, a: PoolSwapArgs, seed: u64) -> Result<()> {
    let model = read_model(run, &a.model)?;
    let swapped = model.with_spec(replace_pooling(model.spec(), a.old, a.new)?)?;
    let result = match (a.readout_layer, &a.train) {
        (Some(layer), Some(dir)) => {
            let ds = read_data(run, dir)?;
            let cfg = TrainConfig {
                learning_rate: a.lr,
                epochs: a.epochs,
                batch_size: 16,
                seed,
                init_scale: 1.0,
            };
            let head = train_readout(&swapped, layer, &ds, &cfg)?.model;
            println!("readout layer={layer} train_accuracy={:.4}", accuracy(&head, &ds)?);
            head
        }
        _ => swapped,
    };
    run.write(&a.out, &to_bytes(&result))?;
    println!("replaced {} with {}", a.old, a.new);
    Ok(())
}

fn bias_audit(run: &mut Run, a: BiasArgs) -> Result<()> {
    run.input(&a.annotations)?;
    let file = std::fs::File::open(&a.annotations).with_context(|| format!("opening {}", a.annotations.display()))?;
    let anns = parse_annotations(std::io::BufReader::new(file))?;
    let bins = BinSpec {
        grid: a.grid,
        size_bins: a.size_bins,
    };
    let report = category_bias_report(&anns, &bins)?;
    let mut buf = Vec::new();
    write_bias_report(&report, &mut buf)?;
    run.write(&a.out, &buf)?;
    println!("categories={} tested={} flagged={} rejects={}", report.rows.len(), report.tested(), report.flagged(), report.rejects);
    Ok(())
}
