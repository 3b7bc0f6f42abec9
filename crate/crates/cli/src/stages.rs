//! One function per pipeline stage. Each reads its inputs from the run
//! directory and writes its outputs there, so `run` and a chain of single
//! stages produce the same files.

use std::collections::HashMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use dcdcsr::data::{chronological_split, load_ratings};
use dcdcsr::dnnmap::NormParams;
use dcdcsr::eval::{run_experiment_prefit, ExperimentReport, Method, Prefit};
use dcdcsr::factors::FactorHeader;
use dcdcsr::pipeline;
use dcdcsr::{FactorMatrix, MfModel, RatingDataset};
use serde::{Deserialize, Serialize};

use crate::config::{RunConfig, SNAPSHOT};
use crate::rundir::RunDir;

pub const SOURCE_MODEL: &str = "source";
pub const TARGET_MODEL: &str = "target";
pub const FINAL_MODEL: &str = "dcdcsr";
pub const BENCHMARK: &str = "benchmark.factors";
pub const BENCHMARK_TABLE: &str = "benchmark.csv";
pub const NETWORK: &str = "network.txt";
pub const NORM: &str = "norm.json";
pub const MAPPED: &str = "mapped.factors";
pub const CURVE: &str = "map_curve.csv";

/// Labels any failure inside `f` with the stage name.
pub fn stage<T>(name: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
    f().with_context(|| format!("stage `{name}` failed"))
}

fn load(path: &Path, cfg: &RunConfig) -> Result<RatingDataset> {
    load_ratings(path, cfg.scale).with_context(|| format!("cannot load ratings from {}", path.display()))
}

fn model_files(dir: &Path, prefix: &str) -> Vec<PathBuf> {
    MfModel::artifact_names(prefix).into_iter().map(|n| dir.join(n)).collect()
}

fn load_model(dir: &Path, prefix: &str) -> Result<MfModel> {
    MfModel::load(dir, prefix).with_context(|| format!("cannot load model `{prefix}` from {}", dir.display()))
}

fn write_with(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).with_context(|| format!("cannot create {}", path.display()))?);
    f(&mut w)?;
    w.flush()?;
    Ok(())
}

fn read_factors(path: &Path) -> Result<FactorMatrix> {
    let f = File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    Ok(FactorMatrix::read_text(BufReader::new(f)).with_context(|| format!("bad factor file {}", path.display()))?.0)
}

pub struct Inputs {
    pub source: RatingDataset,
    pub train: RatingDataset,
    pub test: RatingDataset,
}

fn inputs(cfg: &RunConfig, rd: &RunDir) -> Result<Inputs> {
    rd.check_format()?;
    rd.require(&[rd.train(), rd.test()], "split")?;
    Ok(Inputs {
        source: load(cfg.source(), cfg)?,
        train: load(&rd.train(), cfg)?,
        test: load(&rd.test(), cfg)?,
    })
}

/// Chronological split of the target ratings, plus the config snapshot.
pub fn split(cfg: &RunConfig, rd: &RunDir) -> Result<()> {
    let source = load(cfg.source(), cfg)?;
    let target = load(cfg.target(), cfg)?;
    pipeline::check_overlap(&source, &target, cfg.task)?;
    let (train, test) = chronological_split(&target, cfg.split)?;
    rd.init()?;
    fs::write(rd.root().join(SNAPSHOT), cfg.snapshot()?)?;
    fs::create_dir_all(rd.train().parent().expect("nested"))?;
    train.write_to(&rd.train(), ',')?;
    test.write_to(&rd.test(), ',')?;
    eprintln!("split: {} train / {} test ratings", train.len(), test.len());
    Ok(())
}

pub fn train_mf(cfg: &RunConfig, rd: &RunDir, seeds: &[u64]) -> Result<()> {
    let io = inputs(cfg, rd)?;
    for &seed in seeds {
        let dir = rd.seed_dir(seed);
        fs::create_dir_all(&dir)?;
        let (s, t) = pipeline::train_domain_models(&io.source, &io.train, &cfg.pipeline(seed))?;
        s.save(&dir, SOURCE_MODEL)?;
        t.save(&dir, TARGET_MODEL)?;
        eprintln!("train-mf: seed {seed} done");
    }
    Ok(())
}

pub fn bridge(cfg: &RunConfig, rd: &RunDir, seeds: &[u64]) -> Result<()> {
    let io = inputs(cfg, rd)?;
    for &seed in seeds {
        let dir = rd.seed_dir(seed);
        let mut need = model_files(&dir, SOURCE_MODEL);
        need.extend(model_files(&dir, TARGET_MODEL));
        rd.require(&need, "train-mf")?;
        let s = load_model(&dir, SOURCE_MODEL)?;
        let t = load_model(&dir, TARGET_MODEL)?;
        let b = pipeline::benchmark_stage(&s, &t, &io.source, &io.train, &cfg.pipeline(seed))?;
        let header = FactorHeader::new("benchmark", seed);
        write_with(&dir.join(BENCHMARK), |w| b.matrix.write_text(w, &header))?;
        write_with(&dir.join(BENCHMARK_TABLE), |w| b.write_csv(w))?;
        eprintln!("bridge: seed {seed}: {} common of {} entities", b.n_common(), b.matrix.len());
    }
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct NormFile {
    input: NormParams,
    output: NormParams,
}

pub fn map(cfg: &RunConfig, rd: &RunDir, seeds: &[u64]) -> Result<()> {
    rd.check_format()?;
    for &seed in seeds {
        let dir = rd.seed_dir(seed);
        rd.require(&[dir.join(BENCHMARK)], "bridge")?;
        rd.require(&model_files(&dir, TARGET_MODEL), "train-mf")?;
        let t = load_model(&dir, TARGET_MODEL)?;
        let bench = read_factors(&dir.join(BENCHMARK))?;
        let p = cfg.pipeline(seed);
        let m = pipeline::mapping_stage(t.factors(p.task.mapped_kind()), &bench, &p)?;
        write_with(&dir.join(NETWORK), |w| m.network().write_checkpoint(w))?;
        write_with(&dir.join(CURVE), |w| m.training.write_curve(w))?;
        let norm = NormFile {
            input: m.norm_in.clone(),
            output: m.norm_out.clone(),
        };
        fs::write(dir.join(NORM), serde_json::to_string_pretty(&norm)? + "\n")?;
        write_with(&dir.join(MAPPED), |w| m.mapped.write_text(w, &FactorHeader::new("mapped", seed)))?;
        eprintln!(
            "map: seed {seed}: loss {:.6} -> {:.6} (best epoch {})",
            m.training.losses[0],
            m.training.best_loss(),
            m.training.best_epoch
        );
    }
    Ok(())
}

pub fn finetune(cfg: &RunConfig, rd: &RunDir, seeds: &[u64]) -> Result<()> {
    let io = inputs(cfg, rd)?;
    for &seed in seeds {
        let dir = rd.seed_dir(seed);
        rd.require(&model_files(&dir, TARGET_MODEL), "train-mf")?;
        rd.require(&[dir.join(MAPPED)], "map")?;
        let t = load_model(&dir, TARGET_MODEL)?;
        let mapped = read_factors(&dir.join(MAPPED))?;
        let m = pipeline::finetune_stage(&t, mapped, &io.train, &cfg.pipeline(seed))?;
        m.save(&dir, FINAL_MODEL)?;
        eprintln!("finetune: seed {seed} done");
    }
    Ok(())
}

/// Scores every configured method on the test split and writes the reports.
/// Models saved by earlier stages are reused; everything else is trained here.
pub fn evaluate(cfg: &RunConfig, rd: &RunDir) -> Result<Vec<ExperimentReport>> {
    let io = inputs(cfg, rd)?;
    let exp = cfg.experiment();
    let kind = cfg.mf.model;
    let mut prefit = HashMap::new();
    for &seed in &exp.seeds {
        let dir = rd.seed_dir(seed);
        let mut need = model_files(&dir, SOURCE_MODEL);
        need.extend(model_files(&dir, TARGET_MODEL));
        rd.require(&need, "train-mf")?;
        let dcdcsr = if exp.methods.contains(&Method::Dcdcsr(kind)) {
            rd.require(&model_files(&dir, FINAL_MODEL), "finetune")?;
            Some(load_model(&dir, FINAL_MODEL)?)
        } else {
            None
        };
        let p = Prefit {
            source: load_model(&dir, SOURCE_MODEL)?,
            target: load_model(&dir, TARGET_MODEL)?,
            dcdcsr,
        };
        prefit.insert((seed, kind), p);
    }
    let reports = run_experiment_prefit(&io.source, &io.train, &io.test, &exp, &prefit)?;
    let out = rd.reports();
    fs::create_dir_all(&out)?;
    write_with(&out.join("seeds.csv"), |w| ExperimentReport::write_seed_csv(&reports, w))?;
    write_with(&out.join("summary.json"), |w| ExperimentReport::write_summary_json(&reports, w))?;
    write_with(&out.join("summary.txt"), |w| ExperimentReport::write_summary_text(&reports, w))?;
    Ok(reports)
}

/// Every stage in order for every configured seed.
pub fn run(cfg: &RunConfig, rd: &RunDir) -> Result<Vec<ExperimentReport>> {
    let seeds = &cfg.seeds;
    stage("split", || split(cfg, rd))?;
    stage("train-mf", || train_mf(cfg, rd, seeds))?;
    stage("bridge", || bridge(cfg, rd, seeds))?;
    stage("map", || map(cfg, rd, seeds))?;
    stage("finetune", || finetune(cfg, rd, seeds))?;
    let reports = stage("evaluate", || evaluate(cfg, rd))?;
    rd.write_manifest()?;
    Ok(reports)
}

/// Top-`n` unrated items for `user` from one seed's final model.
pub fn recommend(cfg: &RunConfig, rd: &RunDir, seed: u64, user: &str, n: usize) -> Result<Vec<(String, f64)>> {
    rd.check_format()?;
    let dir = rd.seed_dir(seed);
    rd.require(&[rd.train()], "split")?;
    rd.require(&model_files(&dir, FINAL_MODEL), "finetune")?;
    let train = load(&rd.train(), cfg)?;
    let model = load_model(&dir, FINAL_MODEL)?;
    Ok(pipeline::recommend(&model, user, &train, n))
}
