//! `deepssm` command-line front end.
//!
//! Exit status: 0 on success, 1 when `verify` exceeds its tolerance, 2 on
//! usage, configuration or I/O errors.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use deepssm::audio::{degrade, read_wav_file, write_wav_file, AudioBuffer, DegradeSpec};
use deepssm::exec::{run_streaming, StreamingNetwork};
use deepssm::network::{
    build_network, compute_latency, count_macs, count_params, load_weights, preconv_latencies, save_weights, Network,
    NetworkConfig,
};
use deepssm::planner::{contraction_costs, plan_contraction, ContractionDims};
use deepssm::scalar::Real;
use deepssm::train::{train_toy_with, ToyConfig};

#[derive(Parser)]
#[command(name = "deepssm", version, about = "Deep state-space speech enhancement engine")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Mode {
    Stream,
    Batch,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Precision {
    Single,
    Double,
}

#[derive(Subcommand)]
enum Command {
    /// Print parameter count, MACs per second and latency of a network config.
    Describe {
        /// Network config (TOML); the built-in default when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Drop every PreConv.
        #[arg(long, conflicts_with = "encoder_preconv_only")]
        no_preconv: bool,
        /// Keep PreConvs only in the encoder.
        #[arg(long)]
        encoder_preconv_only: bool,
        #[arg(long)]
        json: bool,
    },
    /// Denoise a WAV file with a trained network.
    Process {
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, value_enum, default_value = "stream")]
        mode: Mode,
        /// Streaming chunk length in samples; a multiple of the total resampling factor.
        #[arg(long, default_value_t = 256)]
        chunk: usize,
        #[arg(long)]
        json: bool,
    },
    /// Check streaming against batch execution on a random network and input.
    Verify {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 16384)]
        len: usize,
        /// Maximum relative l2 deviation.
        #[arg(long, default_value_t = 1e-4)]
        tol: f64,
        #[arg(long, value_enum, default_value = "single")]
        precision: Precision,
        #[arg(long)]
        json: bool,
    },
    /// Compare the two contraction orders for given dimensions.
    Plan {
        /// Comma-separated B,N,I,J,F.
        #[arg(long)]
        dims: String,
        #[arg(long)]
        json: bool,
    },
    /// Downsample-and-repeat, then mu-law quantize a 16 kHz WAV file.
    Degrade {
        #[arg(long)]
        bits: u32,
        #[arg(long)]
        rate: u32,
        /// Skip the anti-alias low-pass before decimation.
        #[arg(long)]
        no_antialias: bool,
        input: PathBuf,
        output: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Train the reduced network on synthetic tones in white noise.
    TrainToy {
        #[arg(long, default_value_t = 2000)]
        steps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Where to write the trained weights.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        json: bool,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(command: Command) -> Result<ExitCode> {
    match command {
        Command::Describe { config, no_preconv, encoder_preconv_only, json } => {
            describe(config.as_deref(), no_preconv, encoder_preconv_only, json)
        }
        Command::Process { weights, input, output, mode, chunk, json } => {
            process(&weights, &input, &output, mode, chunk, json)
        }
        Command::Verify { seed, len, tol, precision, json } => verify(seed, len, tol, precision, json),
        Command::Plan { dims, json } => plan(&dims, json),
        Command::Degrade { bits, rate, no_antialias, input, output, json } => {
            degrade_file(bits, rate, !no_antialias, &input, &output, json)
        }
        Command::TrainToy { steps, seed, out, json } => train(steps, seed, out.as_deref(), json),
    }
}

fn describe(path: Option<&Path>, no_preconv: bool, encoder_only: bool, json: bool) -> Result<ExitCode> {
    let mut cfg = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            NetworkConfig::from_toml(&text).with_context(|| format!("parsing {}", p.display()))?
        }
        None => NetworkConfig::default(),
    };
    if no_preconv {
        cfg = cfg.without_preconv();
    }
    if encoder_only {
        cfg = cfg.encoder_preconv_only();
    }
    let net = build_network(&cfg, 0)?;
    let params = count_params(&net);
    let macs = count_macs(&net, cfg.sample_rate as f64);
    let latency = compute_latency(&cfg)?;
    let preconvs = preconv_latencies(&cfg)?;
    if json {
        let per_block: Vec<_> = preconvs
            .iter()
            .map(|(k, l)| json!({ "block": k, "samples": l.samples, "ms": l.ms_f64() }))
            .collect();
        println!(
            "{}",
            json!({
                "params": params,
                "macs_per_sec": macs,
                "latency_ms": latency.ms_f64(),
                "latency_samples": latency.samples,
                "sample_rate": cfg.sample_rate,
                "blocks": cfg.blocks.len(),
                "preconv_latencies": per_block,
            })
        );
    } else {
        println!("blocks:     {}", cfg.blocks.len());
        println!("parameters: {params} ({:.3} M)", params as f64 / 1e6);
        println!("MACs/sec:   {macs:.0} ({:.3} G)", macs / 1e9);
        println!("latency:    {:.2} ms ({} samples at {} Hz)", latency.ms_f64(), latency.samples, cfg.sample_rate);
        for (k, l) in preconvs {
            println!("  preconv in block {k:2}: {:.2} ms", l.ms_f64());
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn load_network(path: &Path) -> Result<Network> {
    let file = File::open(path).with_context(|| format!("opening weights {}", path.display()))?;
    load_weights(BufReader::new(file)).with_context(|| format!("loading weights {}", path.display()))
}

/// Streams `input` followed by enough zeros to flush the latency, returning
/// output aligned with the input.
fn stream_aligned<T: Real>(net: &Network, input: &[f64], chunk: usize) -> Result<Vec<f64>> {
    let s = StreamingNetwork::<T>::new(net)?;
    let factor = net.total_factor();
    if chunk == 0 || !chunk.is_multiple_of(factor) {
        return Err(deepssm::Error::ChunkAlignment { len: chunk, factor }.into());
    }
    let latency = s.latency_samples();
    let total = (input.len() + latency).div_ceil(chunk) * chunk;
    let mut padded: Vec<T> = input.iter().map(|&v| T::of(v)).collect();
    padded.resize(total, T::zero());
    let mut state = s.new_state();
    let mut out = Vec::with_capacity(total);
    for c in padded.chunks(chunk) {
        out.extend(run_streaming(&s, &mut state, c)?.into_iter().map(Real::widen));
    }
    Ok(out[latency..latency + input.len()].to_vec())
}

/// Batch counterpart of [`stream_aligned`]: pads with the same trailing zeros.
fn batch_aligned(net: &Network, input: &[f64]) -> Result<Vec<f64>> {
    let factor = net.total_factor();
    let latency = compute_latency(&net.config)?.samples as usize;
    let total = (input.len() + latency).div_ceil(factor) * factor;
    let mut padded = input.to_vec();
    padded.resize(total, 0.0);
    let mut out = net.forward_batch(&padded)?;
    out.truncate(input.len());
    Ok(out)
}

fn process(weights: &Path, input: &Path, output: &Path, mode: Mode, chunk: usize, json: bool) -> Result<ExitCode> {
    let net = load_network(weights)?;
    let factor = net.total_factor();
    if mode == Mode::Stream && (chunk == 0 || !chunk.is_multiple_of(factor)) {
        bail!(deepssm::Error::ChunkAlignment { len: chunk, factor });
    }
    let wav = read_wav_file(input).with_context(|| format!("reading {}", input.display()))?;
    if wav.sample_rate != net.config.sample_rate {
        bail!("input is {} Hz but the network runs at {} Hz", wav.sample_rate, net.config.sample_rate);
    }
    let out = match mode {
        Mode::Stream => stream_aligned::<f32>(&net, &wav.samples, chunk)?,
        Mode::Batch => batch_aligned(&net, &wav.samples)?,
    };
    write_wav_file(output, wav.sample_rate, &out).with_context(|| format!("writing {}", output.display()))?;
    if json {
        println!(
            "{}",
            json!({ "samples": out.len(), "sample_rate": wav.sample_rate, "mode": if mode == Mode::Stream { "stream" } else { "batch" } })
        );
    } else {
        println!("wrote {} samples to {}", out.len(), output.display());
    }
    Ok(ExitCode::SUCCESS)
}

fn relative_l2(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    let den: f64 = b.iter().map(|y| y * y).sum();
    (num / den).sqrt()
}

fn verify(seed: u64, len: usize, tol: f64, precision: Precision, json: bool) -> Result<ExitCode> {
    let cfg = NetworkConfig::default();
    let factor = cfg.total_factor();
    let latency = compute_latency(&cfg)?.samples as usize;
    if len == 0 || !len.is_multiple_of(factor) || len <= latency {
        bail!("--len must be a multiple of {factor} larger than the latency of {latency} samples");
    }
    let net = build_network(&cfg, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let input: Vec<f64> = (0..len).map(|_| rng.random_range(-1.0..1.0)).collect();
    let batch = net.forward_batch(&input)?;
    let stream: Vec<f64> = match precision {
        Precision::Single => run_all::<f32>(&net, &input)?,
        Precision::Double => run_all::<f64>(&net, &input)?,
    };
    let deviation = relative_l2(&stream[latency..], &batch[..len - latency]);
    let ok = deviation <= tol;
    if json {
        println!(
            "{}",
            json!({ "seed": seed, "len": len, "latency_samples": latency, "deviation": deviation, "tol": tol, "pass": ok })
        );
    } else {
        println!("relative l2 deviation {deviation:.3e} (tolerance {tol:.1e}): {}", if ok { "PASS" } else { "FAIL" });
    }
    Ok(if ok { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn run_all<T: Real>(net: &Network, input: &[f64]) -> Result<Vec<f64>> {
    let s = StreamingNetwork::<T>::new(net)?;
    let mut state = s.new_state();
    let x: Vec<T> = input.iter().map(|&v| T::of(v)).collect();
    Ok(run_streaming(&s, &mut state, &x)?.into_iter().map(Real::widen).collect())
}

fn plan(dims: &str, json: bool) -> Result<ExitCode> {
    let parts: Vec<u64> = dims
        .split(',')
        .map(|p| p.trim().parse::<u64>())
        .collect::<Result<_, _>>()
        .with_context(|| format!("--dims {dims:?} must be five positive integers B,N,I,J,F"))?;
    let [b, n, i, j, f] = parts[..] else {
        bail!("--dims {dims:?} must be five positive integers B,N,I,J,F");
    };
    let d = ContractionDims::new(b, i, j, n, f)?;
    let (c1, c2) = contraction_costs(&d)?;
    let order = plan_contraction(&d)?;
    if json {
        println!(
            "{}",
            json!({
                "dims": { "B": b, "N": n, "I": i, "J": j, "F": f },
                "input_project_first": c1.to_string(),
                "kernel_first": c2.to_string(),
                "choice": order.variant.name(),
            })
        );
    } else {
        println!("input-project-first: {c1}");
        println!("kernel-first:        {c2}");
        println!("choice:              {}", order.variant);
    }
    Ok(ExitCode::SUCCESS)
}

fn degrade_file(bits: u32, rate: u32, anti_alias: bool, input: &Path, output: &Path, json: bool) -> Result<ExitCode> {
    let spec = DegradeSpec::new(rate, bits)?;
    let wav = read_wav_file(input).with_context(|| format!("reading {}", input.display()))?;
    let out: AudioBuffer = degrade(&wav, &spec, anti_alias)?;
    write_wav_file(output, out.sample_rate, &out.samples).with_context(|| format!("writing {}", output.display()))?;
    if json {
        println!("{}", json!({ "samples": out.len(), "bits": bits, "rate": rate, "anti_alias": anti_alias }));
    } else {
        println!("wrote {} samples ({} Hz, {} bits) to {}", out.len(), rate, bits, output.display());
    }
    Ok(ExitCode::SUCCESS)
}

fn train(steps: usize, seed: u64, out: Option<&Path>, json: bool) -> Result<ExitCode> {
    let (net, report) = train_toy_with(&ToyConfig::default(), steps, seed, |m| {
        if json {
            println!(
                "{}",
                json!({ "step": m.step, "loss": m.loss, "lr": m.lr, "grad_norm": m.grad_norm, "max_abar": m.max_abar })
            );
        } else {
            println!("step {} loss {:.6e} lr {:.6} max|abar| {:.6}", m.step, m.loss, m.lr, m.max_abar);
        }
    })?;
    if let Some(path) = out {
        let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
        save_weights(&net, BufWriter::new(file))?;
    }
    if json {
        println!(
            "{}",
            json!({
                "input_snr_db": report.input_snr_db,
                "output_snr_db": report.output_snr_db,
                "snr_gain_db": report.snr_gain_db(),
            })
        );
    } else {
        println!(
            "held-out SNR: input {:.2} dB, output {:.2} dB, gain {:.2} dB",
            report.input_snr_db,
            report.output_snr_db,
            report.snr_gain_db()
        );
    }
    Ok(ExitCode::SUCCESS)
}
