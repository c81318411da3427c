//! Command-line argument model and the batch subcommands.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use labelsynth::compositor::{sample_variants, synthesize, StageToggles, SynthesisConfig};
use labelsynth::index::{ingest, load_index, save_index, ExemplarLibrary};
use labelsynth::io::{read_instances, read_labels};
use labelsynth::metrics::{label_agreement, reconstruction_accuracy, stage_report, StageReport};
use labelsynth::toygen::{write_dataset, ToySpec};

#[derive(Debug, Parser)]
#[command(name = "labelsynth", version, about = "Synthesize images from semantic and instance label maps")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build or inspect exemplar indexes.
    #[command(subcommand)]
    Index(IndexCommand),
    /// Write a synthetic toy dataset.
    Toygen(ToygenArgs),
    /// Synthesize images for one query.
    Synth(SynthArgs),
    /// Evaluate an index.
    #[command(subcommand)]
    Eval(EvalCommand),
    /// Run the HTTP service.
    Serve(ServeArgs),
}

#[derive(Debug, Subcommand)]
pub enum IndexCommand {
    /// Ingest a dataset directory and write an index file.
    Build {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct ToygenArgs {
    #[arg(long)]
    pub scenes: u32,
    #[arg(long)]
    pub categories: u16,
    #[arg(long)]
    pub size: u32,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub cliques: Option<u16>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub index: PathBuf,
    #[arg(long)]
    pub labels: PathBuf,
    #[arg(long)]
    pub instances: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub variants: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 100)]
    pub topn: usize,
    #[arg(long, default_value_t = 5)]
    pub topk: usize,
    #[arg(long, default_value_t = 50)]
    pub filter_side: u32,
    #[arg(long, default_value = "shape,part,pixel")]
    pub stages: String,
    /// Output size as WIDTHxHEIGHT; defaults to the query size.
    #[arg(long)]
    pub output_size: Option<String>,
    #[arg(long, default_value_t = 0)]
    pub workers: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum EvalCommand {
    /// Mean self-reconstruction over sampled exemplars.
    #[command(name = "self")]
    SelfRecon(EvalArgs),
    /// Stage fractions, pruning and timing over sampled exemplars.
    Report(EvalArgs),
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub index: PathBuf,
    #[arg(long, default_value_t = 20)]
    pub sample: usize,
    #[arg(long, default_value_t = 0)]
    pub workers: usize,
    /// Also write the result as JSON here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub index: PathBuf,
    #[arg(long)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    #[arg(long)]
    pub persist: Option<PathBuf>,
}

pub fn parse_size(s: &str) -> Result<(u32, u32)> {
    let (w, h) = s.split_once(['x', 'X']).context("output size must look like 256x256")?;
    Ok((w.trim().parse()?, h.trim().parse()?))
}

pub fn index_build(data: &Path, out: &Path) -> Result<()> {
    let ingested = ingest(data).with_context(|| format!("ingesting {}", data.display()))?;
    for w in &ingested.warnings {
        eprintln!("warning: {w}");
    }
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    save_index(&ingested.library, out)?;
    println!(
        "indexed {} exemplars, {} shapes, {} categories -> {}",
        ingested.library.len(),
        ingested.library.shape_count(),
        ingested.library.num_categories(),
        out.display()
    );
    Ok(())
}

pub fn toygen(args: &ToygenArgs) -> Result<()> {
    let spec = ToySpec {
        scenes: args.scenes,
        categories: args.categories,
        size: args.size,
        seed: args.seed,
        cliques: args.cliques,
    };
    write_dataset(&spec, &args.out).with_context(|| format!("writing {}", args.out.display()))?;
    println!("wrote {} scenes to {}", args.scenes, args.out.display());
    Ok(())
}

#[derive(Serialize)]
struct VariantReport {
    variant: usize,
    file: String,
    seed: u64,
    selections: Vec<usize>,
    label_agreement: f64,
    stages: StageReport,
}

#[derive(Serialize)]
struct SynthReport {
    digest: String,
    shapes: usize,
    config: SynthesisConfig,
    variants: Vec<VariantReport>,
}

pub fn synth(args: &SynthArgs) -> Result<()> {
    let lib = load_index(&args.index).with_context(|| format!("loading {}", args.index.display()))?;
    let labels = read_labels(&args.labels, lib.num_categories())?;
    let instances = read_instances(&args.instances)?;
    let config = SynthesisConfig {
        top_n: args.topn,
        top_k: args.topk,
        filter_side: args.filter_side,
        seed: args.seed,
        stages: StageToggles::parse(&args.stages)?,
        output_size: args.output_size.as_deref().map(parse_size).transpose()?,
        workers: args.workers,
    };
    if args.variants == 0 {
        bail!("--variants must be >= 1");
    }
    let variants = sample_variants(&labels, &instances, &lib, &config, args.variants)?;
    std::fs::create_dir_all(&args.out)?;
    let mut reports = Vec::new();
    for (i, v) in variants.iter().enumerate() {
        let file = format!("variant_{i}.png");
        v.image.save(args.out.join(&file))?;
        reports.push(VariantReport {
            variant: i,
            file,
            seed: config.seed.wrapping_add(i as u64),
            selections: v.selections.clone(),
            label_agreement: label_agreement(v, &labels, &lib),
            stages: stage_report(v),
        });
    }
    let first = &reports[0];
    let mut text = format!(
        "digest={}\nvariants={}\nseed={}\nshapes={}\nlabel_agreement={:.6}\n",
        variants[0].digest,
        variants.len(),
        config.seed,
        variants[0].selections.len(),
        first.label_agreement
    );
    text.push_str(&first.stages.to_key_values());
    std::fs::write(args.out.join("report.txt"), &text)?;
    let report = SynthReport {
        digest: variants[0].digest.clone(),
        shapes: variants[0].selections.len(),
        config,
        variants: reports,
    };
    std::fs::write(args.out.join("report.json"), serde_json::to_string_pretty(&report)?)?;
    print!("{text}");
    Ok(())
}

/// Evenly spaced exemplar ids.
pub fn sample_ids(lib: &ExemplarLibrary, sample: usize) -> Vec<u32> {
    let n = lib.len();
    let m = sample.clamp(1, n);
    (0..m).map(|i| (i * n / m) as u32).collect()
}

#[derive(Debug, Serialize)]
pub struct EvalSummary {
    pub exemplars: Vec<u32>,
    pub self_reconstruction: Vec<f64>,
    pub mean_self_reconstruction: f64,
    pub mean_shape_fraction: f64,
    pub mean_part_fraction: f64,
    pub mean_pixel_fraction: f64,
    pub mean_survivor_fraction: f64,
    pub mean_label_agreement: f64,
    pub mean_total_secs: f64,
}

pub fn evaluate(lib: &ExemplarLibrary, sample: usize, workers: usize) -> Result<EvalSummary> {
    let ids = sample_ids(lib, sample);
    let config = SynthesisConfig { workers, ..SynthesisConfig::default() };
    let mut s = EvalSummary {
        exemplars: ids.clone(),
        self_reconstruction: Vec::new(),
        mean_self_reconstruction: 0.0,
        mean_shape_fraction: 0.0,
        mean_part_fraction: 0.0,
        mean_pixel_fraction: 0.0,
        mean_survivor_fraction: 0.0,
        mean_label_agreement: 0.0,
        mean_total_secs: 0.0,
    };
    let n = ids.len() as f64;
    for &id in &ids {
        let rec = lib.record(id).expect("sampled ids exist");
        let c = synthesize(&rec.labels, &rec.instance_map(), lib, &config)?;
        let acc = reconstruction_accuracy(&c, &*rec.image()?);
        let r = stage_report(&c);
        s.self_reconstruction.push(acc);
        s.mean_self_reconstruction += acc / n;
        s.mean_shape_fraction += r.shape_fraction / n;
        s.mean_part_fraction += r.part_fraction / n;
        s.mean_pixel_fraction += r.pixel_fraction / n;
        s.mean_survivor_fraction += r.survivor_fraction / n;
        s.mean_label_agreement += label_agreement(&c, &rec.labels, lib) / n;
        s.mean_total_secs += r.total_secs() / n;
    }
    Ok(s)
}

pub fn eval(args: &EvalArgs, full_report: bool) -> Result<()> {
    let lib = load_index(&args.index).with_context(|| format!("loading {}", args.index.display()))?;
    let s = evaluate(&lib, args.sample, args.workers)?;
    println!("sample={}", s.exemplars.len());
    println!("mean_self_reconstruction={:.6}", s.mean_self_reconstruction);
    if full_report {
        println!("mean_shape_fraction={:.6}", s.mean_shape_fraction);
        println!("mean_part_fraction={:.6}", s.mean_part_fraction);
        println!("mean_pixel_fraction={:.6}", s.mean_pixel_fraction);
        println!("mean_survivor_fraction={:.6}", s.mean_survivor_fraction);
        println!("mean_label_agreement={:.6}", s.mean_label_agreement);
        println!("mean_total_secs={:.6}", s.mean_total_secs);
    }
    if let Some(out) = &args.out {
        std::fs::write(out, serde_json::to_string_pretty(&s)?)?;
    }
    Ok(())
}
