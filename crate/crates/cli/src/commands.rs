use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use lvnet::arch::{dump_features, normalize_minmax, predict, shape_plan, Model, Operand, PlanRowKind, UnitId, Variant};
use lvnet::data::{
    augment_dataset, load_dataset, load_images, read_saliency_png, resize_bilinear, resize_nearest, synth_generate_with,
    write_dataset, write_saliency_png, Dataset, SynthOptions,
};
use lvnet::metrics::{evaluate_dataset, EvalReport, MetricConfig};
use lvnet::train::{
    checkpoint_load, checkpoint_save, train, xavier_model, LogRecord, LossConfig, OptimState, TrainConfig, TrainObserver,
};
use lvnet::{Error, Tensor};

use crate::options::{
    existing, image_dir, metric_config, require, train_config, AblateCmd, Cli, Command, DataArgs, DumpCmd, EvalCmd,
    PredictCmd, RunFile, ShapesCmd, SynthCmd, SyntheticSpec, TrainCmd,
};
use crate::{CliError, CliResult};

pub fn run(cli: Cli) -> CliResult {
    match cli.command {
        Command::Train(c) => run_train(c),
        Command::Eval(c) => run_eval(c),
        Command::Predict(c) => run_predict(c),
        Command::Shapes(c) => run_shapes(c),
        Command::Ablate(c) => run_ablate(c),
        Command::Synth(c) => run_synth(c),
        Command::DumpFeatures(c) => run_dump(c),
    }
}

fn io_err(path: &Path, source: std::io::Error) -> CliError {
    CliError::Lib(Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write_text(path: &Path, text: &str) -> CliResult {
    std::fs::write(path, text).map_err(|e| io_err(path, e))
}

fn synthetic(spec: &SyntheticSpec, size: usize, seed: u64) -> CliResult<Dataset> {
    let mut opts = SynthOptions::default();
    if let Some(f) = spec.empty_fraction {
        opts.empty_fraction = f;
    }
    Ok(synth_generate_with(spec.n, spec.size.unwrap_or(size), seed, &opts)?)
}

/// Resolves `--synthetic` or `--data` into a dataset resized to `size`.
fn load_data(args: &DataArgs, file: &RunFile, size: (usize, usize), seed: u64) -> CliResult<Dataset> {
    let dataset = if let Some(spec) = &args.synthetic {
        synthetic(spec, size.0, seed)?
    } else {
        let root = require(args.data.clone().or_else(|| file.data.clone()), "--data or --synthetic")?;
        load_dataset(&root)?
    };
    Ok(dataset.resized(size))
}

fn check_data_path(args: &DataArgs, file: &RunFile) -> CliResult {
    if args.synthetic.is_none() {
        existing(args.data.clone().or_else(|| file.data.clone()), "data directory")?;
    }
    Ok(())
}

fn load_model(ckpt: &Path) -> CliResult<Model<f32>> {
    Ok(checkpoint_load(ckpt)?.model)
}

/// Forward in chunks of `batch`; returns one `(1, H, W, 1)` map per image.
fn predict_all(model: &Model<f32>, images: &[Tensor<f32>], batch: usize) -> CliResult<Vec<Tensor<f32>>> {
    let mut maps = Vec::with_capacity(images.len());
    for chunk in images.chunks(batch.max(1)) {
        let out = predict(model, &Tensor::stack(chunk)?)?;
        if !out.all_finite() {
            return Err(Error::Numeric("forward pass produced non-finite saliency".into()).into());
        }
        for n in 0..chunk.len() {
            maps.push(out.batch_item(n)?);
        }
    }
    Ok(maps)
}

struct RunLog {
    dir: PathBuf,
    log: BufWriter<File>,
    train: TrainConfig,
}

impl TrainObserver for RunLog {
    fn on_step(&mut self, record: &LogRecord) -> lvnet::Result<()> {
        let line = serde_json::to_string(record).expect("record serialises");
        writeln!(self.log, "{line}")
            .and_then(|()| self.log.flush())
            .map_err(|e| Error::Io {
                path: self.dir.join("log.jsonl"),
                source: e,
            })
    }

    fn on_checkpoint(&mut self, model: &Model<f32>, state: &OptimState) -> lvnet::Result<()> {
        checkpoint_save(self.dir.join(format!("step_{:06}.ckpt", state.step)), model, Some(state), Some(&self.train))
    }
}

fn run_train(cmd: TrainCmd) -> CliResult {
    let file = cmd.common.run_file()?;
    let seed = cmd.common.seed(&file);
    let ckpt = existing(cmd.ckpt.clone().or_else(|| file.ckpt.clone()), "checkpoint")?;
    check_data_path(&cmd.data, &file)?;

    let (mut model, mut state) = match &ckpt {
        Some(path) => {
            let c = checkpoint_load(path)?;
            if cmd.arch.is_set() && cmd.arch.resolve(&file)? != *c.model.config() {
                return Err(CliError::Usage(format!(
                    "architecture flags disagree with the checkpoint {}",
                    path.display()
                )));
            }
            let state = c.state.unwrap_or_else(|| OptimState::new(c.model.params()));
            (c.model, state)
        }
        None => {
            let arch = cmd.arch.resolve(&file)?;
            let model = xavier_model(arch, seed)?;
            let state = OptimState::new(model.params());
            (model, state)
        }
    };
    let mut tcfg = train_config(&file, seed, cmd.steps, cmd.batch, cmd.lr)?;
    if let Some(every) = cmd.checkpoint_every {
        tcfg.checkpoint_every = every;
    }
    let mut dataset = load_data(&cmd.data, &file, model.config().input_size, seed)?;
    if cmd.augment {
        dataset = augment_dataset(&dataset)?;
    }
    let batch_explicit = cmd.batch.is_some() || file.train.is_some();
    if !batch_explicit && dataset.len() < tcfg.batch_size {
        eprintln!(
            "note: dataset has {} samples; batch size lowered from {} to {}",
            dataset.len(),
            tcfg.batch_size,
            dataset.len()
        );
        tcfg.batch_size = dataset.len();
    }

    let out = cmd.common.out_dir(&file, "run")?;
    #[derive(Serialize)]
    struct Resolved<'a> {
        arch: &'a lvnet::arch::ArchConfig,
        train: &'a TrainConfig,
        samples: usize,
    }
    let resolved = Resolved {
        arch: model.config(),
        train: &tcfg,
        samples: dataset.len(),
    };
    write_text(&out.join("config.json"), &serde_json::to_string_pretty(&resolved).expect("config serialises"))?;
    let log_path = out.join("log.jsonl");
    let log = File::create(&log_path).map_err(|e| io_err(&log_path, e))?;
    let mut observer = RunLog {
        dir: out.clone(),
        log: BufWriter::new(log),
        train: tcfg.clone(),
    };
    let records = train(&mut model, &mut state, &dataset, &tcfg, &LossConfig::default(), &mut observer)?;
    let final_path = out.join("model.ckpt");
    checkpoint_save(&final_path, &model, Some(&state), Some(&tcfg))?;
    match records.last() {
        Some(r) => println!("trained {} steps, final loss {:.6}, {:.1}s", records.len(), r.loss, r.seconds),
        None => println!("no steps run (step {} of {})", state.step, tcfg.max_steps),
    }
    println!("wrote {}", final_path.display());
    Ok(())
}

fn write_report(out: &Path, report: &EvalReport) -> CliResult {
    write_text(&out.join("report.json"), &report.to_json())?;
    write_text(&out.join("per_image.csv"), &report.per_image_csv())?;
    write_text(&out.join("pr_curve.csv"), &report.pr_curve_csv())?;
    Ok(())
}

fn run_eval(cmd: EvalCmd) -> CliResult {
    let file = cmd.common.run_file()?;
    let seed = cmd.common.seed(&file);
    let mcfg = metric_config(&file, &cmd)?;
    let pred = existing(cmd.pred.clone(), "prediction directory")?;
    let ckpt = existing(cmd.ckpt.clone().or_else(|| file.ckpt.clone()), "checkpoint")?;
    check_data_path(&cmd.data, &file)?;

    let (ids, maps, gts) = match (&pred, &ckpt) {
        (Some(pred), _) => {
            let dataset = match &cmd.data.synthetic {
                Some(spec) => synthetic(spec, 128, seed)?,
                None => load_dataset(require(cmd.data.data.clone().or_else(|| file.data.clone()), "--data")?)?,
            };
            let mut maps = Vec::new();
            let mut gts = Vec::new();
            for s in &dataset.samples {
                let candidates = [pred.join(format!("{}_sal.png", s.id)), pred.join(format!("{}.png", s.id))];
                let path = candidates
                    .iter()
                    .find(|p| p.is_file())
                    .ok_or_else(|| CliError::Usage(format!("no saliency map for {} in {}", s.id, pred.display())))?;
                let map = read_saliency_png(path)?;
                let [_, h, w, _] = map.dims4()?;
                gts.push(resize_nearest(&s.mask, (h, w)));
                maps.push(map);
            }
            (dataset.ids().into_iter().map(String::from).collect::<Vec<_>>(), maps, gts)
        }
        (None, Some(ckpt)) => {
            let model = load_model(ckpt)?;
            let dataset = load_data(&cmd.data, &file, model.config().input_size, seed)?;
            let images: Vec<_> = dataset.samples.iter().map(|s| s.image.clone()).collect();
            let maps = predict_all(&model, &images, cmd.batch.unwrap_or(16))?;
            let gts = dataset.samples.iter().map(|s| s.mask.clone()).collect();
            (dataset.ids().into_iter().map(String::from).collect(), maps, gts)
        }
        (None, None) => return Err(CliError::Usage("eval needs --ckpt or --pred".into())),
    };
    let report = evaluate_dataset(&ids, &maps, &gts, &mcfg)?;
    let out = cmd.common.out_dir(&file, "eval")?;
    write_report(&out, &report)?;
    println!(
        "images {} (scored for P/R/F/S: {})\nMAE {:.4}\nS-measure {:.4}\nF best {:.4} (t={}, P {:.4}, R {:.4})\nF adaptive {:.4}",
        report.images,
        report.images_in_prfs,
        report.mae,
        report.s_measure,
        report.f_best,
        report.f_best_threshold,
        report.precision_at_best,
        report.recall_at_best,
        report.f_adaptive
    );
    println!("wrote {}", out.display());
    Ok(())
}

fn run_predict(cmd: PredictCmd) -> CliResult {
    let file = cmd.common.run_file()?;
    let ckpt = require(existing(cmd.ckpt.clone().or_else(|| file.ckpt.clone()), "checkpoint")?, "--ckpt")?;
    let data = require(existing(cmd.data.clone().or_else(|| file.data.clone()), "data directory")?, "--data")?;
    let model = load_model(&ckpt)?;
    let loaded = load_images(image_dir(&data))?;
    let size = model.config().input_size;
    let images: Vec<_> = loaded.iter().map(|(_, img)| resize_bilinear(img, size)).collect();
    let maps = predict_all(&model, &images, cmd.batch.unwrap_or(16))?;
    let out = cmd.common.out_dir(&file, "pred")?;
    for ((id, _), map) in loaded.iter().zip(&maps) {
        write_saliency_png(out.join(format!("{id}_sal.png")), map)?;
    }
    println!("wrote {} saliency maps to {}", maps.len(), out.display());
    Ok(())
}

fn run_shapes(cmd: ShapesCmd) -> CliResult {
    let started = Instant::now();
    let file = cmd.common.run_file()?;
    let cfg = cmd.arch.resolve(&file)?;
    let plan = shape_plan(&cfg, cmd.batch)?;
    let topo = lvnet::arch::Topology::build(&cfg)?;
    let fmt = |s: [usize; 4]| format!("({},{},{},{})", s[0], s[1], s[2], s[3]);
    println!("{:<10} {:>20} {:>20} {:>12}", "unit", "input (n,h,w,c)", "output (n,h,w,c)", "params");
    for r in &plan.rows {
        println!("{:<10} {:>20} {:>20} {:>12}", r.name, fmt(r.input), fmt(r.output), r.params);
    }
    println!("total parameters: {}", plan.total_params);
    println!(
        "parameter bytes: {} ({:.1} MB at 4 B/param)",
        plan.param_bytes(),
        plan.param_bytes() as f64 / 1e6
    );

    let mut notes = Vec::new();
    for r in &plan.rows {
        let PlanRowKind::Unit(id) = r.kind else { continue };
        let spec = topo.unit(id)?;
        if spec.operands.len() < 3 {
            continue;
        }
        let parts = spec
            .operands
            .iter()
            .map(|&op| Ok(format!("{} {}", describe(op), topo.operand_channels(op)?)))
            .collect::<lvnet::Result<Vec<_>>>()?;
        notes.push(format!("  {id} in_c {} = {}", r.input[3], parts.join(" + ")));
    }
    if !notes.is_empty() {
        println!("channel composition of units that concatenate three or more inputs");
        println!("(these follow the concatenation rules; some tabulations list other in_c values):");
        for n in &notes {
            println!("{n}");
        }
    }
    let default_layout = lvnet::arch::ArchConfig {
        input_size: cfg.input_size,
        ..Default::default()
    };
    if cfg == default_layout {
        println!("rows that differ from the commonly tabulated default layout:");
        for (name, tabulated, why) in TABULATED_IN_C {
            if let Some(r) = plan.row(name) {
                println!("  {name} in_c {} here, tabulated {tabulated}: {why}", r.input[3]);
            }
        }
    }
    if let Some(out) = cmd.common.out.clone().or_else(|| file.out.clone()) {
        let out = cmd.common.out_dir(&file, &out.display().to_string())?;
        write_text(&out.join("shapes.csv"), &plan.to_csv())?;
        println!("wrote {}", out.join("shapes.csv").display());
    }
    println!("planned in {:.3}s", started.elapsed().as_secs_f64());
    Ok(())
}

/// Input widths listed for the default layout by the usual tabulation, where
/// they disagree with the concatenation rules.
const TABULATED_IN_C: [(&str, usize, &str); 5] = [
    ("CU_(1,0)", 67, "the tabulation leaves out pool(CU_(0,0))"),
    ("CU_(2,0)", 131, "the tabulation leaves out pool(CU_(1,0))"),
    ("CU_(3,0)", 259, "the tabulation leaves out pool(CU_(2,0))"),
    ("CU_(4,0)", 515, "the tabulation leaves out pool(CU_(3,0))"),
    ("CU_(1,3)", 768, "the extra 256 channels have no stated source"),
];

fn describe(op: Operand) -> String {
    match op {
        Operand::Image => "image".into(),
        Operand::Pyramid(k) => format!("pyramid_{k}"),
        Operand::Unit(u) => u.to_string(),
        Operand::Down(u) => format!("pool({u})"),
        Operand::Up(u) => format!("up({u})"),
    }
}

fn random_batch(cfg: &lvnet::arch::ArchConfig, batch: usize, seed: u64) -> Tensor<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (h, w) = cfg.input_size;
    Tensor::from_fn(vec![batch, h, w, 3], |_| rng.gen::<f32>())
}

fn run_ablate(cmd: AblateCmd) -> CliResult {
    let file = cmd.common.run_file()?;
    let seed = cmd.common.seed(&file);
    if cmd.train_steps.is_some() {
        check_data_path(&cmd.data, &file)?;
    }
    let base = cmd.arch.resolve(&file)?;
    let out = cmd.common.out_dir(&file, "ablate")?;
    let mut csv = String::from("variant,params,out_n,out_h,out_w,out_c,forward_seconds");
    if cmd.train_steps.is_some() {
        csv.push_str(",final_loss,mae,s_measure,f_adaptive");
    }
    csv.push('\n');
    for v in Variant::ALL {
        let cfg = v.apply(&base);
        cfg.validate()?;
        let mut model = xavier_model(cfg.clone(), seed)?;
        let x = random_batch(&cfg, cmd.batch, seed);
        let started = Instant::now();
        let y = predict(&model, &x)?;
        let secs = started.elapsed().as_secs_f64();
        let [n, h, w, c] = y.dims4()?;
        let mut row = format!("{},{},{n},{h},{w},{c},{secs:.4}", v.name(), model.num_params());
        if let Some(steps) = cmd.train_steps {
            let data = load_data(&cmd.data, &file, cfg.input_size, seed)?;
            let tcfg = train_config(&file, seed, Some(steps), Some(cmd.batch.min(data.len()).max(1)), cmd.lr)?;
            let mut state = OptimState::new(model.params());
            let log = train(&mut model, &mut state, &data, &tcfg, &LossConfig::default(), &mut ())?;
            let images: Vec<_> = data.samples.iter().map(|s| s.image.clone()).collect();
            let maps = predict_all(&model, &images, 16)?;
            let gts: Vec<_> = data.samples.iter().map(|s| s.mask.clone()).collect();
            let ids: Vec<String> = data.ids().into_iter().map(String::from).collect();
            let r = evaluate_dataset(&ids, &maps, &gts, &MetricConfig::default())?;
            let loss = log.last().map_or(f64::NAN, |l| l.loss);
            row.push_str(&format!(",{loss:.6},{:.6},{:.6},{:.6}", r.mae, r.s_measure, r.f_adaptive));
        }
        println!("{row}");
        csv.push_str(&row);
        csv.push('\n');
    }
    write_text(&out.join("ablate.csv"), &csv)?;
    println!("wrote {}", out.join("ablate.csv").display());
    Ok(())
}

fn run_synth(cmd: SynthCmd) -> CliResult {
    let file = cmd.common.run_file()?;
    let seed = cmd.common.seed(&file);
    let dataset = synthetic(&cmd.synthetic, 128, seed)?;
    let out = cmd.common.out_dir(&file, "synthetic")?;
    write_dataset(&dataset, &out)?;
    let empties = dataset.samples.iter().filter(|s| s.is_empty_gt()).count();
    println!("wrote {} samples ({} without foreground) to {}", dataset.len(), empties, out.display());
    Ok(())
}

/// Commas inside `CU_(i,j)` belong to the name, not the list.
fn split_unit_list(list: &str) -> Vec<&str> {
    let mut parts = Vec::new();
    let (mut depth, mut start) = (0i32, 0);
    for (i, c) in list.char_indices() {
        match c {
            '(' => depth += 1,
            ')' => depth -= 1,
            ',' if depth == 0 => {
                parts.push(&list[start..i]);
                start = i + 1;
            }
            _ => {}
        }
    }
    parts.push(&list[start..]);
    parts.into_iter().map(str::trim).filter(|s| !s.is_empty()).collect()
}

fn run_dump(cmd: DumpCmd) -> CliResult {
    let file = cmd.common.run_file()?;
    let seed = cmd.common.seed(&file);
    let ckpt = existing(cmd.ckpt.clone().or_else(|| file.ckpt.clone()), "checkpoint")?;
    let data = require(existing(cmd.data.clone().or_else(|| file.data.clone()), "data directory")?, "--data")?;
    let units = split_unit_list(&cmd.units)
        .into_iter()
        .map(|s| s.parse::<UnitId>())
        .collect::<lvnet::Result<Vec<_>>>()?;
    let model = match &ckpt {
        Some(p) => load_model(p)?,
        None => xavier_model(cmd.arch.resolve(&file)?, seed)?,
    };
    let out = cmd.common.out_dir(&file, "features")?;
    let mut written = 0;
    for (id, image) in load_images(image_dir(&data))? {
        let image = resize_bilinear(&image, model.config().input_size);
        for maps in dump_features(&model, &image, &units)? {
            let dir = out.join(&id).join(maps.unit.key());
            let (h, w) = (maps.height, maps.width);
            let mut mean = vec![0.0f32; h * w];
            for (ch, plane) in maps.channels.iter().enumerate() {
                for (m, v) in mean.iter_mut().zip(plane) {
                    *m += v / maps.channels.len() as f32;
                }
                let t = Tensor::new(vec![1, h, w, 1], normalize_minmax(plane))?;
                write_saliency_png(dir.join(format!("c{ch:04}.png")), &t)?;
            }
            let t = Tensor::new(vec![1, h, w, 1], normalize_minmax(&mean))?;
            write_saliency_png(out.join(&id).join(format!("{}_mean.png", maps.unit.key())), &t)?;
            written += maps.channels.len() + 1;
        }
    }
    println!("wrote {written} feature images to {}", out.display());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::split_unit_list;

    #[test]
    fn unit_list_keeps_grid_coordinates_together() {
        assert_eq!(split_unit_list("M-CU_1,CU_(0,0), CU_(2,1),"), vec!["M-CU_1", "CU_(0,0)", "CU_(2,1)"]);
        assert!(split_unit_list(" , ").is_empty());
    }
}
