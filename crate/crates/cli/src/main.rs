use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use pwoc_core::flow::{cost_volume_1d, cost_volume_2d, warp_flow_2d, SceneFlowField, D0, D1, FLOW_SCALE};
use pwoc_core::gradcheck::{run_suite, GradCheckConfig};
use pwoc_core::io::{self, SampleFiles};
use pwoc_core::metrics::compute_metrics;
use pwoc_core::net::{infer, ModelParams, PwocConfig, View};
use pwoc_core::ops::{upsample_forward, ConvSpec};
use pwoc_core::train::{gen_synthetic_scene, train, AdamState, AugmentConfig, Sample, StepLog, TrainConfig};
use pwoc_core::viz::flow_to_color;
use pwoc_core::{Shape, Tape, Tensor};

/// Scene flow estimation from two stereo pairs.
#[derive(Parser)]
#[command(name = "pwoc", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset, one directory per sample.
    Generate {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 128)]
        width: usize,
        #[arg(long, default_value_t = 64)]
        height: usize,
        #[arg(long, default_value_t = 2)]
        objects: usize,
    },
    /// Train on a dataset directory and write a checkpoint.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        steps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1e-4)]
        lr: f64,
        /// Architecture as `key = value` lines.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Per-step CSV log; defaults to `<out>.log`.
        #[arg(long)]
        log: Option<PathBuf>,
        /// Also save the checkpoint every this many steps.
        #[arg(long, default_value_t = 0)]
        checkpoint_every: usize,
        #[arg(long)]
        no_augment: bool,
    },
    /// Predict scene flow for four frames.
    Infer {
        #[arg(long)]
        ckpt: PathBuf,
        /// Left t, right t, left t+1, right t+1 (binary PPM).
        #[arg(long, num_args = 4, value_names = ["L0", "R0", "L1", "R1"])]
        frames: Vec<PathBuf>,
        #[arg(long)]
        out_prefix: String,
    },
    /// Score predictions written by `infer` against a sample directory.
    Eval {
        #[arg(long)]
        pred_prefix: String,
        #[arg(long)]
        gt: PathBuf,
    },
    /// Run the finite-difference gradient suite.
    Gradcheck {
        #[arg(long, default_value_t = 1e-4)]
        tol: f64,
    },
    /// Time the forward pass of one operation.
    Bench {
        #[arg(long, value_enum)]
        op: BenchOp,
        /// `HxW`.
        #[arg(long, default_value = "64x128")]
        size: String,
        #[arg(long, default_value_t = 64)]
        channels: usize,
        #[arg(long, default_value_t = 10)]
        iters: usize,
    },
    /// Render a `.flo` file with the colour wheel.
    Viz {
        #[arg(long)]
        flow: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Magnitude mapped to full saturation; default is the 99th percentile.
        #[arg(long)]
        max_mag: Option<f64>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum BenchOp {
    Conv2d,
    Costvol1d,
    Costvol2d,
    Warp2d,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Generate { out, count, seed, width, height, objects } => generate(&out, count, seed, width, height, objects),
        Command::Train { data, out, steps, seed, lr, config, log, checkpoint_every, no_augment } => {
            let config = match config {
                Some(p) => io::read_config(&p).with_context(|| format!("reading config {}", p.display()))?,
                None => PwocConfig::default(),
            };
            let log = log.unwrap_or_else(|| with_suffix(&out, ".log"));
            let augment = if no_augment { AugmentConfig::none() } else { AugmentConfig::default() };
            let cfg = TrainConfig { steps, seed, lr, augment, ..TrainConfig::default() };
            train_cmd(&data, &out, &log, &config, &cfg, checkpoint_every)
        }
        Command::Infer { ckpt, frames, out_prefix } => infer_cmd(&ckpt, &frames, &out_prefix),
        Command::Eval { pred_prefix, gt } => eval_cmd(&pred_prefix, &gt),
        Command::Gradcheck { tol } => gradcheck_cmd(tol),
        Command::Bench { op, size, channels, iters } => bench_cmd(op, &size, channels, iters),
        Command::Viz { flow, out, max_mag } => {
            let f: Tensor<f32> = io::read_flo(&flow).with_context(|| format!("reading {}", flow.display()))?;
            io::write_ppm(&out, &flow_to_color(&f, max_mag)?)?;
            Ok(())
        }
    }
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_os_string();
    s.push(suffix);
    PathBuf::from(s)
}

fn generate(out: &Path, count: usize, seed: u64, width: usize, height: usize, objects: usize) -> Result<()> {
    std::fs::create_dir_all(out)?;
    for i in 0..count {
        let sample: Sample<f32> = gen_synthetic_scene(seed + i as u64, width, height, objects)?;
        io::save_sample(&out.join(format!("sample_{i:05}")), &sample)?;
    }
    println!("wrote {count} samples to {}", out.display());
    Ok(())
}

fn train_cmd(data: &Path, out: &Path, log_path: &Path, config: &PwocConfig, cfg: &TrainConfig, every: usize) -> Result<()> {
    let dirs = io::list_samples(data)?;
    let samples = dirs
        .iter()
        .map(|d| io::load_sample::<f32>(d).with_context(|| format!("loading {}", d.display())))
        .collect::<Result<Vec<_>>>()?;
    let mut params = ModelParams::<f32>::init(config, cfg.seed)?;
    let mut state = AdamState::new(cfg.lr);
    let mut log = format!("{}\n", StepLog::CSV_HEADER);
    train(config, &mut params, &mut state, &samples, cfg, |entry, p| {
        log.push_str(&entry.csv_row());
        log.push('\n');
        if every > 0 && entry.step % every == 0 {
            io::save_checkpoint(out, config, p)?;
            io::write_atomic(log_path, log.as_bytes())?;
        }
        Ok(())
    })?;
    io::save_checkpoint(out, config, &params)?;
    io::write_atomic(log_path, log.as_bytes())?;
    println!("trained {} steps on {} samples; checkpoint {}", cfg.steps, samples.len(), out.display());
    Ok(())
}

fn infer_cmd(ckpt: &Path, frames: &[PathBuf], prefix: &str) -> Result<()> {
    let (config, params) = io::load_checkpoint::<f32>(ckpt).with_context(|| format!("loading {}", ckpt.display()))?;
    let images = frames
        .iter()
        .map(|p| io::read_ppm::<f32>(p).with_context(|| format!("reading {}", p.display())))
        .collect::<Result<Vec<_>>>()?;
    let pred = infer(&config, &params, [&images[0], &images[1], &images[2], &images[3]])?;
    let px = pred.full_res.scaled(FLOW_SCALE);
    let out = |ext: &str| PathBuf::from(format!("{prefix}.{ext}"));
    let uv = px.optical_flow();
    io::write_flo(&out("flow.flo"), &uv)?;
    io::write_pfm(&out("d0.pfm"), &px.component(D0))?;
    io::write_pfm(&out("d1.pfm"), &px.component(D1))?;
    for (view, occ) in View::ALL.iter().zip(&pred.occlusion) {
        io::write_pgm(&out(&format!("occ_{}.pgm", view.tag())), &upsample_forward(occ.tensor(), 4))?;
    }
    io::write_ppm(&out("viz.ppm"), &flow_to_color(&uv, None)?)?;
    println!("wrote {prefix}.*");
    Ok(())
}

/// Reads `(u, v)`, `d0` and `d1` files in pixels as one field.
fn read_field(flo: &Path, d0: &Path, d1: &Path) -> Result<SceneFlowField<f64>> {
    let ctx = |p: &Path| format!("reading {}", p.display());
    let uv: Tensor<f64> = io::read_flo(flo).with_context(|| ctx(flo))?;
    let d0t: Tensor<f64> = io::read_pfm(d0).with_context(|| ctx(d0))?;
    let d1t: Tensor<f64> = io::read_pfm(d1).with_context(|| ctx(d1))?;
    Ok(SceneFlowField::new(Tensor::concat_channels(&[&uv, &d0t, &d1t])?)?)
}

fn eval_cmd(prefix: &str, gt_dir: &Path) -> Result<()> {
    let p = |ext: &str| PathBuf::from(format!("{prefix}.{ext}"));
    let pred = read_field(&p("flow.flo"), &p("d0.pfm"), &p("d1.pfm"))?;
    let gt = read_field(&gt_dir.join(SampleFiles::FLOW), &gt_dir.join(SampleFiles::D0), &gt_dir.join(SampleFiles::D1))?;
    let valid_path = gt_dir.join(SampleFiles::VALID);
    let valid = if valid_path.exists() {
        io::read_pgm::<f64>(&valid_path).with_context(|| format!("reading {}", valid_path.display()))?
    } else {
        Tensor::ones(gt.shape().with_channels(1))
    };
    let report = compute_metrics(&pred, &gt, &valid)?;
    print!("{report}");
    print!("{}", report.key_values());
    Ok(())
}

fn gradcheck_cmd(tol: f64) -> Result<()> {
    let cases = run_suite(&GradCheckConfig::default())?;
    let mut failed = 0;
    for c in &cases {
        let ok = c.report.max_rel_error <= tol;
        failed += usize::from(!ok);
        println!("{} {:<36} max rel err {:.3e}", if ok { "PASS" } else { "FAIL" }, c.name, c.report.max_rel_error);
    }
    if failed > 0 {
        bail!("{failed} of {} operations exceed {tol:e}", cases.len());
    }
    Ok(())
}

fn parse_size(size: &str) -> Result<(usize, usize)> {
    let (h, w) = size.split_once(['x', 'X']).context("size must look like HxW")?;
    Ok((h.trim().parse().context("bad height")?, w.trim().parse().context("bad width")?))
}

fn bench_cmd(op: BenchOp, size: &str, channels: usize, iters: usize) -> Result<()> {
    let (h, w) = parse_size(size)?;
    if iters == 0 || channels == 0 || h == 0 || w == 0 {
        bail!("size, channels and iters must be positive");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let s = Shape::new(1, channels, h, w);
    let a = Tensor::<f32>::uniform(s, -1.0, 1.0, &mut rng);
    let b = Tensor::<f32>::uniform(s, -1.0, 1.0, &mut rng);
    let spec = ConvSpec::same3x3(channels, channels, 1);
    let weight = Tensor::<f32>::uniform(spec.weight_shape(), -0.1, 0.1, &mut rng);
    let flow = Tensor::<f32>::uniform(s.with_channels(2), -0.2, 0.2, &mut rng);
    let mut times = Vec::with_capacity(iters);
    for _ in 0..iters {
        let mut tape = Tape::new();
        let x = tape.constant(a.clone());
        let y = tape.constant(b.clone());
        let start = Instant::now();
        match op {
            BenchOp::Conv2d => {
                let wv = tape.constant(weight.clone());
                let bv = tape.constant(Tensor::zeros(spec.bias_shape()));
                tape.conv2d(x, wv, bv, spec)?;
            }
            BenchOp::Costvol1d => {
                cost_volume_1d(&mut tape, x, y, 4)?;
            }
            BenchOp::Costvol2d => {
                cost_volume_2d(&mut tape, x, y, 4)?;
            }
            BenchOp::Warp2d => {
                let f = tape.constant(flow.clone());
                warp_flow_2d(&mut tape, x, f, 2)?;
            }
        }
        times.push(start.elapsed().as_secs_f64());
    }
    let mean = times.iter().sum::<f64>() / times.len() as f64;
    let min = times.iter().copied().fold(f64::INFINITY, f64::min);
    println!("mean {:.3} ms  min {:.3} ms  ({iters} iters)", mean * 1e3, min * 1e3);
    Ok(())
}
