//! Subcommand implementations. Work items run on a rayon pool of `--jobs`
//! threads; results are collected in item order and written from one
//! thread, so outputs do not depend on the thread count.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use log::{info, warn};
use rayon::prelude::*;
use ttd_core::codec::{loss_gradients, save_params, sidecar_path, train_toy, Backend, Codec, CodecSpec, TrainConfig};
use ttd_core::engine::{export_weights, run_pipeline, select_gradient_channel, stage_one, ChannelRule, FusionNorm, LossMap, Normalization, WeightForm, WeightMap, WeightVariant};
use ttd_core::image::{load_image, save_image, ImageTensor};
use ttd_core::metrics::{evaluate_all, MetricRow};
use ttd_core::synth::{generate_pair, scene_id, scene_specs, write_scene};
use ttd_core::theory::{compare_strategies, geb_decomposition, CompareOptions, GebReport, StrategyRow};

use crate::args::{Cli, Command, EvalArgs, FuseArgs, InputArgs, SynthArgs, TrainArgs};
use crate::heatmap::{render_loss, render_weights};
use crate::items::{discover, Item};
use crate::outputs::Outputs;
use crate::settings::Settings;

pub fn dispatch(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Fuse(a) => fuse(a),
        Command::Weights(a) => weights(a),
        Command::Eval(a) => eval(a),
        Command::Train(a) => train(a),
        Command::Synth(a) => synth(a),
        Command::Theory(a) => theory(a),
        Command::Ablate(a) => ablate(a),
    }
}

fn opt<T: ToString>(v: &Option<T>) -> Option<String> {
    v.as_ref().map(ToString::to_string)
}

fn path_opt(p: &Option<PathBuf>) -> Option<String> {
    p.as_ref().map(|p| p.display().to_string())
}

fn input_settings(a: &InputArgs, extra: &[(&str, Option<String>)]) -> Result<Settings> {
    let mut all = vec![("input", path_opt(&a.input))];
    all.extend_from_slice(extra);
    Settings::resolve(&a.common, &all)
}

fn pool(jobs: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .context("starting worker pool")
}

fn load_items(items: &[Item]) -> Result<Vec<Vec<ImageTensor>>> {
    items.par_iter().map(Item::load).collect()
}

/// Fixes the gradient channel over the whole input set when the form asks
/// for calibration, so every item uses the same channel.
fn calibrate(codec: &Codec, data: &[Vec<ImageTensor>], form: WeightForm) -> Result<WeightForm> {
    if form.variant != WeightVariant::Gradient || form.channel != ChannelRule::MaxVariance {
        return Ok(form);
    }
    if codec.spec().backend != Backend::ToyNet {
        bail!("--form grad needs --codec toynet");
    }
    let grads = data
        .par_iter()
        .flat_map_iter(|sources| sources.iter().map(|x| loss_gradients(codec, x).map(|g| g.features)))
        .collect::<ttd_core::Result<Vec<_>>>()?;
    let channel = select_gradient_channel(&grads)?;
    info!("gradient channel {channel} selected by variance over {} maps", grads.len());
    Ok(form.with_channel(ChannelRule::Fixed(channel)))
}

fn export_item(outputs: &mut Outputs, dir: &Path, weights: &WeightMap, losses: &[LossMap]) -> Result<()> {
    outputs.dir(dir)?;
    export_weights(dir, weights, losses)?;
    for m in 0..weights.sources() {
        save_image(&render_weights(weights, m), outputs.file(&dir.join(format!("heat_w{m}.png")))?)?;
    }
    for (m, l) in losses.iter().enumerate() {
        save_image(&render_loss(l), outputs.file(&dir.join(format!("heat_loss{m}.png")))?)?;
    }
    Ok(())
}

fn fuse(a: &FuseArgs) -> Result<()> {
    let s = input_settings(&a.input, &[("export-weights", a.export_weights.then(|| "true".into()))])?;
    let (input, out) = (s.path("input")?, s.path("out")?);
    let codec = s.codec()?;
    let force = s.force()?;
    let export = s.flag("export-weights")?;
    let items = discover(&input)?;
    let results = pool(s.jobs()?)?.install(|| -> Result<Vec<_>> {
        let data = load_items(&items)?;
        let form = calibrate(&codec, &data, s.weight_form()?)?;
        info!("fusing {} items with {} / {}", items.len(), codec.spec().backend, form);
        data.par_iter()
            .zip(&items)
            .map(|(sources, item)| run_pipeline(&codec, sources, &form, force).with_context(|| format!("item {}", item.id)))
            .collect()
    })?;
    let mut outputs = Outputs::new();
    outputs.dir(&out)?;
    for (item, r) in items.iter().zip(&results) {
        save_image(&r.fused, outputs.file(&out.join(format!("{}.png", item.id)))?)?;
        if export {
            export_item(&mut outputs, &out.join(&item.id), &r.weights, &r.losses)?;
        }
    }
    outputs.commit();
    Ok(())
}

fn weights(a: &InputArgs) -> Result<()> {
    let s = input_settings(a, &[])?;
    let (input, out) = (s.path("input")?, s.path("out")?);
    let codec = s.codec()?;
    let items = discover(&input)?;
    let results = pool(s.jobs()?)?.install(|| -> Result<Vec<_>> {
        let data = load_items(&items)?;
        let form = calibrate(&codec, &data, s.weight_form()?)?;
        data.par_iter()
            .zip(&items)
            .map(|(sources, item)| stage_one(&codec, sources, &form).with_context(|| format!("item {}", item.id)))
            .collect()
    })?;
    let mut outputs = Outputs::new();
    outputs.dir(&out)?;
    for (item, (w, l)) in items.iter().zip(&results) {
        export_item(&mut outputs, &out.join(&item.id), w, l)?;
    }
    outputs.commit();
    Ok(())
}

fn write_csv(outputs: &mut Outputs, path: &Path, header: &[&str], records: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in records {
        w.write_record(r)?;
    }
    let bytes = w.into_inner().context("flushing csv")?;
    outputs.write(path, bytes)
}

fn eval(a: &EvalArgs) -> Result<()> {
    let s = input_settings(&a.input, &[("fused", path_opt(&a.fused))])?;
    let (input, fused, csv) = (s.path("input")?, s.path("fused")?, s.path("csv")?);
    let items = discover(&input)?;
    let rows = pool(s.jobs()?)?.install(|| -> Result<Vec<MetricRow>> {
        items
            .par_iter()
            .map(|item| {
                let sources = item.load()?;
                let f_path = fused.join(format!("{}.png", item.id));
                let f = load_image(&f_path).with_context(|| format!("fused image for item {}", item.id))?;
                Ok(evaluate_all(&f, &sources)?.with_id(&item.id))
            })
            .collect()
    })?;
    let mut records: Vec<Vec<String>> = rows.iter().map(|r| r.csv_fields().to_vec()).collect();
    records.push(MetricRow::mean(&rows)?.with_id("mean").csv_fields().to_vec());
    let mut outputs = Outputs::new();
    write_csv(&mut outputs, &csv, &MetricRow::HEADER, &records)?;
    outputs.commit();
    Ok(())
}

fn train(a: &TrainArgs) -> Result<()> {
    let s = input_settings(
        &a.input,
        &[
            ("epochs", opt(&a.epochs)),
            ("lr", opt(&a.lr)),
            ("batch", opt(&a.batch)),
            ("features", opt(&a.features)),
            ("kernel", opt(&a.kernel)),
        ],
    )?;
    let (input, out) = (s.path("input")?, s.path("out")?);
    let d = TrainConfig::default();
    let cfg = TrainConfig {
        learning_rate: s.or("lr", d.learning_rate)?,
        epochs: s.or("epochs", d.epochs)?,
        batch_size: s.or("batch", d.batch_size)?,
        seed: s.seed()?,
    };
    let defaults = CodecSpec::default();
    let spec = CodecSpec::toy_net(s.or("features", defaults.features)?, s.or("kernel", defaults.kernel)?);
    let items = discover(&input)?;
    let data = pool(s.jobs()?)?.install(|| load_items(&items))?;
    info!("training on {} tuples: {:?}", data.len(), cfg);
    let report = train_toy(&spec, &data, &cfg)?;
    if report.final_loss >= report.initial_loss {
        warn!("training did not improve on the initialization");
    }
    let mut outputs = Outputs::new();
    outputs.dir(&out)?;
    let bin = outputs.file(&out.join("toynet.bin"))?;
    outputs.file(&sidecar_path(&bin))?;
    save_params(&report.params, &spec, &bin)?;
    let mut log = format!("initial_loss={}\nfinal_loss={}\n", report.initial_loss, report.final_loss);
    for (e, l) in report.epoch_losses.iter().enumerate() {
        log.push_str(&format!("epoch{}={l}\n", e + 1));
    }
    outputs.write(&out.join("train.txt"), log)?;
    outputs.commit();
    Ok(())
}

fn synth(a: &SynthArgs) -> Result<()> {
    let s = Settings::resolve(
        &a.common,
        &[("count", opt(&a.count)), ("size", opt(&a.size)), ("density", opt(&a.density))],
    )?;
    let out = s.path("out")?;
    let size = s.or("size", 64)?;
    let specs = scene_specs(s.or("count", 10)?, s.seed()?, size, size, s.or("density", 0.5)?)?;
    let pairs = pool(s.jobs()?)?.install(|| specs.par_iter().map(generate_pair).collect::<ttd_core::Result<Vec<_>>>())?;
    let mut outputs = Outputs::new();
    outputs.dir(&out)?;
    for (i, (spec, pair)) in specs.iter().zip(&pairs).enumerate() {
        let dir = out.join(scene_id(i));
        outputs.dir(&dir)?;
        write_scene(&dir, spec, pair)?;
    }
    outputs.commit();
    Ok(())
}

fn geb_files(outputs: &mut Outputs, out: &Path, report: &GebReport, ids: &[String]) -> Result<()> {
    let records: Vec<Vec<String>> = report.csv_records().into_iter().map(|r| r.to_vec()).collect();
    write_csv(outputs, &out.join("geb.csv"), &GebReport::CSV_HEADER, &records)?;
    let mut header = vec!["strategy", "item", "fusion_loss", "convex_loss", "bound", "constant", "holds"];
    let covs: Vec<String> = (0..report.sources).map(|m| format!("cov{m}")).collect();
    header.extend(covs.iter().map(String::as_str));
    let mut items = Vec::new();
    for s in &report.strategies {
        for (id, it) in ids.iter().zip(&s.items) {
            let mut r = vec![
                s.form.label(),
                id.clone(),
                format!("{:.9}", it.fusion_loss),
                format!("{:.9}", it.convex_loss),
                format!("{:.9}", it.bound),
                format!("{:.9}", it.constant),
                it.holds().to_string(),
            ];
            r.extend(it.covariance.iter().map(|c| format!("{c:.9e}")));
            items.push(r);
        }
    }
    write_csv(outputs, &out.join("items.csv"), &header, &items)?;
    outputs.write(&out.join("summary.txt"), report.summary())
}

fn theory(a: &InputArgs) -> Result<()> {
    let s = input_settings(a, &[])?;
    let (input, out) = (s.path("input")?, s.path("out")?);
    let codec = s.codec()?;
    let items = discover(&input)?;
    let report = pool(s.jobs()?)?.install(|| -> Result<GebReport> {
        let data = load_items(&items)?;
        let rd = calibrate(&codec, &data, s.weight_form()?)?;
        let mut forms = vec![WeightForm::static_uniform(), WeightForm::rd(), WeightForm::positive_correlated()];
        if !forms.contains(&rd) {
            forms.insert(2, rd);
        }
        Ok(geb_decomposition(&codec, &data, &forms)?)
    })?;
    let ids: Vec<String> = items.iter().map(|i| i.id.clone()).collect();
    let mut outputs = Outputs::new();
    outputs.dir(&out)?;
    geb_files(&mut outputs, &out, &report, &ids)?;
    outputs.commit();
    Ok(())
}

/// Weight-form rows, then normalization rows. The unnormalized row is only
/// included with `--force-unnormalized`.
fn ablation_forms(force: bool) -> Vec<(&'static str, &'static str, WeightForm)> {
    let mut forms = vec![
        ("form", "w=0.5", WeightForm::static_uniform()),
        ("form", "softmax(-l)", WeightForm::new(WeightVariant::Plain)),
        ("form", "softmax(sigmoid(-l))", WeightForm::new(WeightVariant::Sigmoid)),
        ("form", "softmax(exp(-l))", WeightForm::rd()),
        ("norm", "baseline", WeightForm::static_uniform()),
    ];
    if force {
        forms.push(("norm", "w/o norm", WeightForm::rd().with_normalization(Normalization::None)));
    }
    forms.push(("norm", "proportional", WeightForm::rd().with_normalization(Normalization::Proportional)));
    forms.push(("norm", "softmax", WeightForm::rd()));
    forms
}

fn ablate(a: &InputArgs) -> Result<()> {
    let s = input_settings(a, &[])?;
    let (input, csv) = (s.path("input")?, s.path("csv")?);
    let codec = s.codec()?;
    let force = s.force()?;
    let loss_norm = s.or("loss-norm", FusionNorm::Mae)?;
    if !force {
        warn!("skipping the unnormalized row; pass --force-unnormalized to include it");
    }
    let forms = ablation_forms(force);
    let items = discover(&input)?;
    let rows = pool(s.jobs()?)?.install(|| -> Result<Vec<StrategyRow>> {
        let data = load_items(&items)?;
        let plain: Vec<WeightForm> = forms.iter().map(|f| f.2).collect();
        let opts = CompareOptions {
            norm: loss_norm,
            force_unnormalized: force,
            ..CompareOptions::default()
        };
        Ok(compare_strategies(&data, &codec, &plain, &opts)?)
    })?;
    let mut header = vec!["table", "strategy", "mean_loss", "std_error"];
    header.extend_from_slice(&MetricRow::HEADER[1..]);
    let records: Vec<Vec<String>> = forms
        .iter()
        .zip(&rows)
        .map(|((table, name, _), row)| {
            let mut r = vec![table.to_string(), name.to_string(), format!("{:.9}", row.mean_loss), format!("{:.9}", row.std_error)];
            if let Some(m) = &row.metrics {
                r.extend(m.csv_fields()[1..].iter().cloned());
            }
            r
        })
        .collect();
    let mut outputs = Outputs::new();
    write_csv(&mut outputs, &csv, &header, &records)?;
    outputs.commit();
    Ok(())
}
