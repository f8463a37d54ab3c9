use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use lbanp_core::bandit::{
    bandit_csv_rows, normalized_regret, run_wheel_episode, BanditRun, ModelPolicy, UniformPolicy, BANDIT_CSV_HEADER,
};
use lbanp_core::bench::{
    bench_config, bench_csv, count_flops_for, fit_scaling_exponent, measure_peak_bytes, measure_wallclock, BenchRow,
    Phase, MIN_FIT_POINTS, MIN_FIT_SPAN,
};
use lbanp_core::checkpoint::{load_checkpoint, save_checkpoint};
use lbanp_core::tasks::gp::GpTaskConfig;
use lbanp_core::tasks::image::{load_pgm_corpus, synth_images, ImageSource, ImageTaskConfig};
use lbanp_core::tasks::kernels::KernelKind;
use lbanp_core::tasks::wheel::{check_delta, WheelConfig, N_ARMS};
use lbanp_core::training::{evaluate, train, AdamConfig, TrainConfig};
use lbanp_core::{HeadKind, ModelConfig, NeuralProcess, NpError, TaskSource, Variant};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::{BanditArgs, BenchArgs, Command, DataArgs, EvalArgs, Failure, SweepArgs, TrainArgs};

/// First seed of every evaluation task stream.
pub const EVAL_SEED: u64 = 1_000_000;

const TASKS: [&str; 4] = ["gp-rbf", "gp-matern52", "image", "wheel"];
const SYNTH_SIZE: usize = 16;

type Outcome<T> = Result<T, Failure>;

pub fn run(command: Command) -> Outcome<()> {
    match command {
        Command::Train(a) => cmd_train(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Bandit(a) => cmd_bandit(&a),
        Command::Bench(a) => cmd_bench(&a),
        Command::SweepLatents(a) => cmd_sweep_latents(&a),
    }
}

fn usage_err(e: NpError) -> Failure {
    Failure::usage(e.to_string())
}

/// Worker count: `NPB_THREADS` if set, otherwise the available cores.
fn worker_count() -> usize {
    std::env::var("NPB_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// `f` over `items` on up to `worker_count()` threads, results in input order.
fn parallel_map<T: Sync, R: Send>(items: &[T], f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let workers = worker_count().min(items.len()).max(1);
    if workers == 1 {
        return items.iter().map(f).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<R>>> = Mutex::new((0..items.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let r = f(&items[i]);
                slots.lock().unwrap()[i] = Some(r);
            });
        }
    });
    slots.into_inner().unwrap().into_iter().map(|r| r.unwrap()).collect()
}

fn ensure_parent(path: &Path) -> Outcome<()> {
    match path.parent().filter(|d| !d.as_os_str().is_empty()) {
        Some(dir) => fs::create_dir_all(dir).map_err(|e| Failure::usage(format!("cannot create {}: {e}", dir.display()))),
        None => Ok(()),
    }
}

fn write_file(path: &Path, contents: &str) -> Outcome<()> {
    ensure_parent(path)?;
    fs::write(path, contents).map_err(|e| Failure::usage(format!("cannot write {}: {e}", path.display())))
}

/// Append `row`, writing `header` first when the file is new or empty.
fn append_csv(path: &Path, header: &str, row: &str) -> Outcome<()> {
    let fail = |e: std::io::Error| Failure::usage(format!("cannot append to {}: {e}", path.display()));
    ensure_parent(path)?;
    let fresh = fs::metadata(path).map_or(true, |m| m.len() == 0);
    let mut f = fs::OpenOptions::new().create(true).append(true).open(path).map_err(fail)?;
    if fresh {
        writeln!(f, "{header}").map_err(fail)?;
    }
    writeln!(f, "{row}").map_err(fail)
}

fn images_for(data: &DataArgs, held_out: bool) -> Outcome<(Vec<lbanp_core::tasks::image::Image>, ImageSource)> {
    if let Some(dir) = &data.image_dir {
        let images = load_pgm_corpus(dir).map_err(usage_err)?;
        if images.is_empty() {
            return Err(Failure::usage(format!("no .pgm images in {}", dir.display())));
        }
        return Ok((images, ImageSource::Corpus));
    }
    let seed = data.data_seed.wrapping_add(held_out as u64);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let images = synth_images(data.images, SYNTH_SIZE, SYNTH_SIZE, &mut rng).map_err(usage_err)?;
    Ok((images, ImageSource::Synthetic))
}

/// Task source by name. Synthetic images for evaluation come from the next
/// data seed so they are never the training images.
fn task_source(task: &str, data: &DataArgs, held_out: bool) -> Outcome<TaskSource> {
    match task {
        "gp-rbf" => Ok(TaskSource::Gp(GpTaskConfig::with_kernel(KernelKind::Rbf))),
        "gp-matern52" => Ok(TaskSource::Gp(GpTaskConfig::with_kernel(KernelKind::Matern52))),
        "image" => {
            let (images, source) = images_for(data, held_out)?;
            let first = &images[0];
            let config = ImageTaskConfig {
                height: first.height,
                width: first.width,
                channels: first.channels,
                source,
                ..ImageTaskConfig::default()
            };
            config.validate().map_err(usage_err)?;
            if images
                .iter()
                .any(|im| (im.height, im.width, im.channels) != (first.height, first.width, first.channels))
            {
                return Err(Failure::usage("images differ in size or channel count"));
            }
            Ok(TaskSource::Image { config, images })
        }
        "wheel" => Ok(TaskSource::Wheel(WheelConfig::default())),
        other => Err(Failure::usage(format!(
            "unknown task '{other}' (expected one of {})",
            TASKS.join(", ")
        ))),
    }
}

fn model_config(a: &TrainArgs, source: &TaskSource) -> Outcome<ModelConfig> {
    let variant: Variant = a.model.parse().map_err(usage_err)?;
    let head: HeadKind = a.head.parse().map_err(usage_err)?;
    if a.latents.is_some() && !variant.uses_latents() {
        return Err(Failure::usage(format!("--latents does not apply to {variant}")));
    }
    let mut cfg = ModelConfig::new(variant, head).with_dims(source.x_dim(), source.y_dim());
    cfg.d_model = a.d_model;
    cfg.n_layers = a.layers;
    cfg.n_heads = a.heads;
    cfg.d_ff = a.d_ff;
    if let Some(l) = a.latents {
        cfg.n_latents = l;
    }
    cfg.validate().map_err(usage_err)?;
    Ok(cfg)
}

fn train_config(a: &TrainArgs) -> Outcome<TrainConfig> {
    let tc = TrainConfig {
        steps: a.steps,
        adam: AdamConfig {
            lr: a.lr,
            ..AdamConfig::default()
        },
        warmup_steps: a.warmup,
        seed: a.seed,
        eval_every: a.eval_every,
        eval_tasks: a.eval_tasks,
    };
    tc.validate().map_err(usage_err)?;
    Ok(tc)
}

fn latents_of(cfg: &ModelConfig) -> usize {
    if cfg.variant.uses_latents() {
        cfg.n_latents
    } else {
        0
    }
}

struct TrainOutput {
    model: NeuralProcess,
    curve_csv: String,
    loglik: f64,
}

fn train_one(a: &TrainArgs, cfg: &ModelConfig, source: &TaskSource, eval_source: &TaskSource) -> Outcome<TrainOutput> {
    let tc = train_config(a)?;
    let trained = train(cfg, source, &tc)?;
    let loglik = evaluate(&trained.model, eval_source, 1, a.eval_tasks, EVAL_SEED)?.mean_loglik;
    Ok(TrainOutput {
        curve_csv: trained.curve.to_csv(),
        model: trained.model,
        loglik,
    })
}

fn checkpoint_meta(a: &TrainArgs) -> BTreeMap<String, String> {
    let mut meta = BTreeMap::new();
    meta.insert("task".to_string(), a.task.clone());
    meta.insert("seed".to_string(), a.seed.to_string());
    meta.insert("steps".to_string(), a.steps.to_string());
    meta.insert("lr".to_string(), a.lr.to_string());
    if a.task == "image" {
        match &a.data.image_dir {
            Some(dir) => meta.insert("image_dir".to_string(), dir.display().to_string()),
            None => meta.insert("data_seed".to_string(), a.data.data_seed.to_string()),
        };
    }
    meta
}

fn cmd_train(a: &TrainArgs) -> Outcome<()> {
    let source = task_source(&a.task, &a.data, false)?;
    let eval_source = task_source(&a.task, &a.data, true)?;
    let cfg = model_config(a, &source)?;
    let out = train_one(a, &cfg, &source, &eval_source)?;
    let ckpt = a.out.join("model.npb");
    ensure_parent(&ckpt)?;
    save_checkpoint(&ckpt, &out.model, &checkpoint_meta(a))?;
    write_file(&a.out.join("curve.csv"), &out.curve_csv)?;
    println!("{},{},{},{},{}", cfg.variant, a.task, latents_of(&cfg), a.seed, out.loglik);
    Ok(())
}

pub const EVAL_CSV_HEADER: &str = "model,task,L,seeds,mean_loglik,std_loglik";

fn cmd_eval(a: &EvalArgs) -> Outcome<()> {
    let (model, meta) = load_checkpoint(&a.ckpt).map_err(usage_err)?;
    let task = match (&a.task, meta.get("task")) {
        (Some(t), _) => t.clone(),
        (None, Some(t)) => t.clone(),
        (None, None) => return Err(Failure::usage("checkpoint records no task; pass --task")),
    };
    let source = task_source(&task, &a.data, true)?;
    let cfg = model.config();
    if (cfg.x_dim, cfg.y_dim) != (source.x_dim(), source.y_dim()) {
        return Err(Failure::usage(format!(
            "checkpoint expects x_dim {} and y_dim {}, task {task} has {} and {}",
            cfg.x_dim,
            cfg.y_dim,
            source.x_dim(),
            source.y_dim()
        )));
    }
    let seeds: Vec<u64> = (0..a.seeds as u64).collect();
    if seeds.is_empty() || a.eval_tasks == 0 {
        return Err(Failure::usage("--seeds and --eval-tasks must be positive"));
    }
    let per_seed = parallel_map(&seeds, |&s| {
        evaluate(&model, &source, 1, a.eval_tasks, a.eval_seed.wrapping_add(s)).map(|r| r.mean_loglik)
    });
    let per_seed = per_seed.into_iter().collect::<Result<Vec<f64>, NpError>>()?;
    let result = lbanp_core::training::EvalResult::from_seed_means(&per_seed)?;
    println!(
        "{} on {task}: {:.4} ± {:.4} over {} seeds",
        cfg.variant, result.mean_loglik, result.std_over_seeds, result.n_seeds
    );
    let csv = a.csv.clone().unwrap_or_else(|| sibling(&a.ckpt, "eval.csv"));
    let row = format!(
        "{},{task},{},{},{},{}",
        cfg.variant,
        latents_of(cfg),
        result.n_seeds,
        result.mean_loglik,
        result.std_over_seeds
    );
    append_csv(&csv, EVAL_CSV_HEADER, &row)
}

fn sibling(path: &Path, name: &str) -> PathBuf {
    path.parent().map_or_else(|| PathBuf::from(name), |d| d.join(name))
}

fn cmd_bandit(a: &BanditArgs) -> Outcome<()> {
    if a.delta.is_empty() {
        return Err(Failure::usage("--delta needs at least one value"));
    }
    for &d in &a.delta {
        check_delta(d).map_err(usage_err)?;
    }
    if a.seeds == 0 {
        return Err(Failure::usage("--seeds must be positive"));
    }
    let (model, _) = load_checkpoint(&a.ckpt).map_err(usage_err)?;
    let cfg = model.config();
    if (cfg.x_dim, cfg.y_dim) != (2, N_ARMS) {
        return Err(Failure::usage(format!(
            "bandit needs a wheel checkpoint (x_dim 2, y_dim {N_ARMS}), got {} and {}",
            cfg.x_dim, cfg.y_dim
        )));
    }
    let wheel = WheelConfig::default();
    let jobs: Vec<(f64, u64)> = a
        .delta
        .iter()
        .flat_map(|&d| (0..a.seeds as u64).map(move |s| (d, s)))
        .collect();
    let model_runs = parallel_map(&jobs, |&(d, s)| {
        let mut policy = ModelPolicy { model: &model, c: a.ucb_c };
        run_wheel_episode(&mut policy, d, a.steps, &wheel, s)
    });
    let model_runs = model_runs.into_iter().collect::<Result<Vec<BanditRun>, NpError>>()?;
    let uniform_runs = jobs
        .iter()
        .map(|&(d, s)| run_wheel_episode(&mut UniformPolicy, d, a.steps, &wheel, s))
        .collect::<Result<Vec<BanditRun>, NpError>>()?;

    let mut model_csv = format!("{BANDIT_CSV_HEADER}\n");
    let mut uniform_csv = format!("{BANDIT_CSV_HEADER}\n");
    for &d in &a.delta {
        let pick = |runs: &[BanditRun]| runs.iter().filter(|r| r.delta == d).cloned().collect::<Vec<_>>();
        let (m, u) = (pick(&model_runs), pick(&uniform_runs));
        model_csv.push_str(&bandit_csv_rows(&m, &u)?);
        uniform_csv.push_str(&bandit_csv_rows(&u, &u)?);
        println!("delta={d} normalized_regret={:.2}", normalized_regret(&m, &u)?);
    }
    write_file(&a.out.join("bandit.csv"), &model_csv)?;
    write_file(&a.out.join("bandit_uniform.csv"), &uniform_csv)
}

fn cmd_bench(a: &BenchArgs) -> Outcome<()> {
    let variants = a
        .variants
        .iter()
        .map(|v| v.parse::<Variant>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(usage_err)?;
    let (lo, hi) = (
        a.grid.iter().copied().min().unwrap_or(0),
        a.grid.iter().copied().max().unwrap_or(0),
    );
    if a.grid.len() < MIN_FIT_POINTS || lo == 0 || (hi as f64) < MIN_FIT_SPAN * lo as f64 {
        return Err(Failure::usage(format!(
            "--grid needs at least {MIN_FIT_POINTS} positive sizes spanning {MIN_FIT_SPAN}x"
        )));
    }
    if a.m == 0 {
        return Err(Failure::usage("--m must be positive"));
    }
    let mut rows = Vec::new();
    println!("variant  phase      flop_exponent  time_exponent");
    for &v in &variants {
        let cfg = bench_config(v, a.latents, a.d_model, a.layers);
        cfg.validate().map_err(usage_err)?;
        let model = if a.reps > 0 {
            Some(NeuralProcess::new(cfg.clone(), 0)?)
        } else {
            None
        };
        for phase in [Phase::Condition, Phase::Query] {
            let mut phase_rows = Vec::new();
            for &n in &a.grid {
                let flops = count_flops_for(&cfg, phase, n as u64, a.m as u64)?;
                let (median_seconds, peak_bytes) = match &model {
                    Some(m) => (
                        measure_wallclock(m, phase, n, a.m, a.reps).map_err(usage_err)?,
                        measure_peak_bytes(m, phase, n, a.m)?,
                    ),
                    None => (0.0, 0),
                };
                phase_rows.push(BenchRow {
                    variant: v,
                    phase,
                    n,
                    m: a.m,
                    l: latents_of(&cfg),
                    flops,
                    median_seconds,
                    peak_bytes,
                });
            }
            let fit = |y: &dyn Fn(&BenchRow) -> f64| {
                let pts: Vec<(f64, f64)> = phase_rows.iter().map(|r| (r.n as f64, y(r))).collect();
                fit_scaling_exponent(&pts).map(|f| f.exponent)
            };
            let flop_exp = fit(&|r| r.flops as f64)?;
            let time_exp = if model.is_some() {
                format!("{:.3}", fit(&|r| r.median_seconds)?)
            } else {
                "-".to_string()
            };
            println!("{:<8} {:<10} {:>13.3}  {:>13}", v.name(), phase.name(), flop_exp, time_exp);
            rows.extend(phase_rows);
        }
    }
    write_file(&a.out.join("bench.csv"), &bench_csv(&rows))
}

pub const SWEEP_CSV_HEADER: &str = "L,loglik";

fn cmd_sweep_latents(a: &SweepArgs) -> Outcome<()> {
    if a.latents_grid.is_empty() {
        return Err(Failure::usage("--latents-grid needs at least one value"));
    }
    if a.seeds == 0 {
        return Err(Failure::usage("--seeds must be positive"));
    }
    let variant: Variant = a.train.model.parse().map_err(usage_err)?;
    if !variant.uses_latents() {
        return Err(Failure::usage(format!("sweep-latents needs a latent model, got {variant}")));
    }
    let source = task_source(&a.train.task, &a.train.data, false)?;
    let eval_source = task_source(&a.train.task, &a.train.data, true)?;
    let configs = a
        .latents_grid
        .iter()
        .map(|&l| {
            let args = TrainArgs {
                latents: Some(l),
                ..a.train.clone()
            };
            model_config(&args, &source)
        })
        .collect::<Outcome<Vec<_>>>()?;
    let tc = train_config(&a.train)?;
    let results = parallel_map(&configs, |cfg| -> Result<(NeuralProcess, String, f64), NpError> {
        let trained = train(cfg, &source, &tc)?;
        let r = evaluate(&trained.model, &eval_source, a.seeds, a.train.eval_tasks, EVAL_SEED)?;
        Ok((trained.model, trained.curve.to_csv(), r.mean_loglik))
    });
    let mut csv = format!("{SWEEP_CSV_HEADER}\n");
    for (cfg, r) in configs.iter().zip(results) {
        let (model, curve, loglik) = r?;
        let dir = a.train.out.join(format!("L{}", cfg.n_latents));
        let ckpt = dir.join("model.npb");
        ensure_parent(&ckpt)?;
        save_checkpoint(&ckpt, &model, &checkpoint_meta(&a.train))?;
        write_file(&dir.join("curve.csv"), &curve)?;
        csv.push_str(&format!("{},{loglik}\n", cfg.n_latents));
        println!("{},{},{},{},{loglik}", cfg.variant, a.train.task, cfg.n_latents, a.train.seed);
    }
    write_file(&a.train.out.join("sweep.csv"), &csv)
}
