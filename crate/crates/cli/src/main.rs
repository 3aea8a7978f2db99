use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;
use vqforge_core::config::preset;
use vqforge_core::convexopt::ConvexConfig;
use vqforge_core::incremental::{calibrate_with, CalibConfig, CalibReport, LayerwiseAdapter};
use vqforge_core::kmeans::{kmeans, KMeansConfig};
use vqforge_core::packfmt::{read_vqm, write_vqm, PackedLayer, PackedModel, VQM_HEADER_BYTES};
use vqforge_core::qinfer::{qmatvec, time_layer, LayerTiming};
use vqforge_core::weightio::{load_bundle, partition};
use vqforge_harness::bench::{
    run_ablation, run_consistency, run_histogram, run_rtn_vs_vq, run_ssm, standard_config, white_input_batches,
    StandardBenchmark,
};
use vqforge_harness::histogram::{max_ratio_histogram, RatioHistogram};

#[derive(Parser)]
#[command(name = "vqforge", version, about = "Vector quantization of weight matrices")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Hard k-means quantization of every layer; JSON to stdout.
    Kmeans {
        wts: PathBuf,
        #[arg(long, default_value_t = 256)]
        k: usize,
        #[arg(long, default_value_t = 4)]
        d: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 100)]
        iters: usize,
        /// Also write the quantized layers as a VQM file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Calibrate every layer against seeded white inputs and write a VQM file.
    Calibrate {
        wts: PathBuf,
        #[arg(long, default_value_t = 2, value_parser = clap::value_parser!(u32).range(1..=3))]
        bits: u32,
        #[arg(long, default_value_t = 0.99)]
        tau: f64,
        #[arg(long, default_value_t = 1e-2)]
        lambda: f64,
        #[arg(long, default_value_t = 20)]
        epochs: usize,
        #[arg(long)]
        no_replacement: bool,
        #[arg(long)]
        no_incremental: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Calibration samples per layer.
        #[arg(long, default_value_t = 4096)]
        samples: usize,
        #[arg(long, default_value_t = 128)]
        batch: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-layer bit rates and sizes of a VQM file.
    PackInfo {
        vqm: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Multiply a raw little-endian f32 vector through the packed layers.
    Infer {
        vqm: PathBuf,
        #[arg(long)]
        input: PathBuf,
        /// Apply only this layer instead of chaining all layers in order.
        #[arg(long)]
        layer: Option<String>,
        /// Time dense and on-the-fly products per layer.
        #[arg(long)]
        bench: bool,
        #[arg(long, default_value_t = 100)]
        reps: usize,
    },
    /// Run one of the benchmark studies and write a JSON report.
    Bench {
        #[arg(long, value_enum)]
        suite: Suite,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Override the number of calibration epochs.
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        out: PathBuf,
        /// Also write a flat CSV table for plotting.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum Suite {
    Ablation,
    Consistency,
    Histogram,
    Ssm,
    RtnVsVq,
}

fn main() -> Result<()> {
    match Cli::parse().cmd {
        Cmd::Kmeans { wts, k, d, seed, iters, out } => cmd_kmeans(&wts, k, d, seed, iters, out.as_deref()),
        Cmd::Calibrate { wts, bits, tau, lambda, epochs, no_replacement, no_incremental, seed, samples, batch, out } => {
            let shape = preset(bits)?;
            let cfg = CalibConfig {
                k: shape.k,
                d: shape.d,
                tau,
                max_epochs: epochs,
                enable_replacement: !no_replacement,
                enable_incremental: !no_incremental,
                seed,
                convex: ConvexConfig { lambda, ..Default::default() },
                ..Default::default()
            };
            cmd_calibrate(&wts, &cfg, samples, batch, &out)
        }
        Cmd::PackInfo { vqm, json } => cmd_pack_info(&vqm, json),
        Cmd::Infer { vqm, input, layer, bench, reps } => cmd_infer(&vqm, &input, layer.as_deref(), bench, reps),
        Cmd::Bench { suite, seed, epochs, out, csv } => cmd_bench(suite, seed, epochs, &out, csv.as_deref()),
    }
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    use std::io::Write;
    let mut out = std::io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    Ok(())
}

#[derive(Serialize)]
struct KmeansLayer {
    name: String,
    rows: usize,
    cols: usize,
    k: usize,
    d: usize,
    distortion: f64,
    history: Vec<f64>,
    codebook: Vec<f32>,
    assignments: Vec<u32>,
}

fn cmd_kmeans(wts: &Path, k: usize, d: usize, seed: u64, iters: usize, out: Option<&Path>) -> Result<()> {
    let bundle = load_bundle(wts).with_context(|| format!("reading {}", wts.display()))?;
    let cfg = KMeansConfig { max_iters: iters, ..Default::default() };
    let mut report = Vec::new();
    let mut packed = Vec::new();
    for w in bundle.layers() {
        let table = partition(w, d)?;
        let res = kmeans(&table, k, seed, &cfg).with_context(|| format!("layer {}", w.name()))?;
        packed.push(PackedLayer::new(w.name(), w.rows(), w.cols(), res.codebook.clone(), &res.assignments)?);
        report.push(KmeansLayer {
            name: w.name().to_string(),
            rows: w.rows(),
            cols: w.cols(),
            k,
            d,
            distortion: res.distortion,
            history: res.history,
            codebook: res.codebook.entries().to_vec(),
            assignments: res.assignments.indices().to_vec(),
        });
    }
    if let Some(path) = out {
        write_vqm(&PackedModel::new(packed)?, path)?;
    }
    print_json(&report)
}

#[derive(Serialize)]
struct CalibOutput {
    config: CalibConfig,
    samples: usize,
    report: CalibReport,
    /// Max-ratio histogram after every epoch.
    histograms: Vec<RatioHistogram>,
}

fn cmd_calibrate(wts: &Path, cfg: &CalibConfig, samples: usize, batch: usize, out: &Path) -> Result<()> {
    let bundle = load_bundle(wts).with_context(|| format!("reading {}", wts.display()))?;
    if bundle.is_empty() {
        bail!("{} holds no layers", wts.display());
    }
    let data = white_input_batches(&bundle, samples, batch, cfg.seed.wrapping_add(1));
    let mut histograms = Vec::new();
    let res = calibrate_with(&bundle, &LayerwiseAdapter, &data, cfg, |v| {
        histograms.push(max_ratio_histogram(v.soft, cfg.convex.n));
    })?;
    let layers = res
        .layers
        .iter()
        .map(|l| PackedLayer::new(l.name.clone(), l.rows, l.cols, l.codebook.clone(), &l.assignments))
        .collect::<vqforge_core::Result<Vec<_>>>()?;
    write_vqm(&PackedModel::new(layers)?, out)?;
    print_json(&CalibOutput { config: *cfg, samples, report: res.report, histograms })
}

#[derive(Serialize)]
struct LayerInfo {
    name: String,
    rows: usize,
    cols: usize,
    k: usize,
    d: usize,
    bits_per_weight: f64,
    codebook_bytes: usize,
    assignment_bytes: usize,
    encoded_bytes: usize,
    /// Bytes the same layer takes as 32-bit weights.
    dense_bytes: usize,
}

#[derive(Serialize)]
struct PackInfo {
    layers: Vec<LayerInfo>,
    header_bytes: usize,
    total_bytes: usize,
    dense_bytes: usize,
    /// Assignment bits per weight over all layers, codebooks excluded.
    bits_per_weight: f64,
}

fn pack_info(model: &PackedModel) -> PackInfo {
    let layers: Vec<LayerInfo> = model
        .layers()
        .iter()
        .map(|l| LayerInfo {
            name: l.name().to_string(),
            rows: l.rows(),
            cols: l.cols(),
            k: l.k(),
            d: l.dim(),
            bits_per_weight: l.bitrate().bits_per_weight,
            codebook_bytes: 4 * l.k() * l.dim(),
            assignment_bytes: l.stream().len(),
            encoded_bytes: l.encoded_len(),
            dense_bytes: 4 * l.rows() * l.cols(),
        })
        .collect();
    let weights: usize = model.layers().iter().map(|l| l.rows() * l.cols()).sum();
    let bits: u64 = model.layers().iter().map(|l| l.bitrate().assignment_bits).sum();
    PackInfo {
        header_bytes: VQM_HEADER_BYTES,
        total_bytes: model.encoded_len(),
        dense_bytes: layers.iter().map(|l| l.dense_bytes).sum(),
        bits_per_weight: if weights == 0 { 0.0 } else { bits as f64 / weights as f64 },
        layers,
    }
}

fn cmd_pack_info(vqm: &Path, json: bool) -> Result<()> {
    let model = read_vqm(vqm).with_context(|| format!("reading {}", vqm.display()))?;
    let info = pack_info(&model);
    if json {
        return print_json(&info);
    }
    println!(
        "{:<24} {:>7} {:>7} {:>5} {:>3} {:>9} {:>10} {:>10} {:>10}",
        "layer", "rows", "cols", "k", "d", "bits/w", "codebook", "indices", "total"
    );
    for l in &info.layers {
        println!(
            "{:<24} {:>7} {:>7} {:>5} {:>3} {:>9.3} {:>10} {:>10} {:>10}",
            l.name, l.rows, l.cols, l.k, l.d, l.bits_per_weight, l.codebook_bytes, l.assignment_bytes, l.encoded_bytes
        );
    }
    println!(
        "total {} bytes ({} header), {:.3} index bits/weight, {:.1}x smaller than {} dense bytes",
        info.total_bytes,
        info.header_bytes,
        info.bits_per_weight,
        info.dense_bytes as f64 / info.total_bytes as f64,
        info.dense_bytes
    );
    Ok(())
}

fn read_f32s(path: &Path) -> Result<Vec<f32>> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    if bytes.len() % 4 != 0 {
        bail!("{} is {} bytes, not a whole number of f32 values", path.display(), bytes.len());
    }
    Ok(bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect())
}

#[derive(Serialize)]
struct InferOutput {
    outputs: Vec<f32>,
    timings: Vec<LayerTiming>,
}

fn cmd_infer(vqm: &Path, input: &Path, layer: Option<&str>, bench: bool, reps: usize) -> Result<()> {
    let model = read_vqm(vqm).with_context(|| format!("reading {}", vqm.display()))?;
    let mut x = read_f32s(input)?;
    let chain: Vec<&PackedLayer> = match layer {
        Some(name) => vec![model.layer(name).with_context(|| format!("no layer named {name:?}"))?],
        None => model.layers().iter().collect(),
    };
    let mut timings = Vec::new();
    for l in chain {
        if x.len() != l.cols() {
            bail!("layer {} expects {} inputs, got {}", l.name(), l.cols(), x.len());
        }
        if bench {
            timings.push(time_layer(l, &x, reps)?);
        }
        x = qmatvec(l, &x)?;
    }
    print_json(&InferOutput { outputs: x, timings })
}

#[derive(Serialize)]
struct BenchReport<T> {
    suite: Suite,
    seed: u64,
    report: T,
}

fn write_report<T: Serialize>(suite: Suite, seed: u64, report: T, out: &Path) -> Result<()> {
    let body = serde_json::to_string_pretty(&BenchReport { suite, seed, report })?;
    fs::write(out, body).with_context(|| format!("writing {}", out.display()))
}

fn write_csv<R: Serialize>(path: &Path, rows: impl IntoIterator<Item = R>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct HistogramRow {
    epoch: usize,
    bin_lo: f64,
    bin_hi: f64,
    count: usize,
}

fn histogram_rows(hs: &[RatioHistogram]) -> Vec<HistogramRow> {
    hs.iter()
        .enumerate()
        .flat_map(|(e, h)| {
            let edges = h.edges();
            h.counts
                .iter()
                .enumerate()
                .map(move |(b, &count)| HistogramRow { epoch: e, bin_lo: edges[b], bin_hi: edges[b + 1], count })
                .collect::<Vec<_>>()
        })
        .collect()
}

fn cmd_bench(suite: Suite, seed: u64, epochs: Option<usize>, out: &Path, csv: Option<&Path>) -> Result<()> {
    let bench = StandardBenchmark { seed, ..Default::default() };
    let mut cfg = standard_config(seed);
    if let Some(e) = epochs {
        cfg.max_epochs = e;
    }
    match suite {
        Suite::Ablation => {
            let r = run_ablation(&bench, &cfg)?;
            if let Some(p) = csv {
                write_csv(p, &r.arms)?;
            }
            for a in &r.arms {
                eprintln!("{:<14} task loss {:.6}", a.arm, a.inference_loss);
            }
            write_report(suite, seed, r, out)
        }
        Suite::Consistency => {
            let r = run_consistency(&bench, &cfg)?;
            if let Some(p) = csv {
                write_csv(p, [&r.one_shot, &r.incremental])?;
            }
            write_report(suite, seed, r, out)
        }
        Suite::Histogram => {
            let r = run_histogram(&bench, &cfg)?;
            if let Some(p) = csv {
                write_csv(p, histogram_rows(&r.epochs))?;
            }
            write_report(suite, seed, r, out)
        }
        Suite::Ssm => {
            let r = run_ssm(seed, &cfg)?;
            if let Some(p) = csv {
                write_csv(p, [&r])?;
            }
            write_report(suite, seed, r, out)
        }
        Suite::RtnVsVq => {
            let r = run_rtn_vs_vq(&bench, &cfg)?;
            if let Some(p) = csv {
                write_csv(p, [&r])?;
            }
            write_report(suite, seed, r, out)
        }
    }
}
