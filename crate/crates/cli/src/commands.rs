use anyhow::Context;
use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use prefsynth::analysis::{
    beta_summary, cost_report, length_ratio_stats, write_accuracy_csv, write_beta_csv, write_cost_csv,
    write_lenratio_csv, AccuracyRow,
};
use prefsynth::data::{read_jsonl, read_sft_jsonl, write_jsonl, DatasetSplit, SplitName, Strategy};
use prefsynth::llm::{build_backend, BackendKind};
use prefsynth::repro::{run_sim_repro, RunConfig};
use prefsynth::rm::{evaluate_accuracy, train as train_rm, write_log_csv, Checkpoint};
use prefsynth::sim::{compute_beta, BetaOptions, BetaStrategy};
use prefsynth::strategies::{gen_sim_real, generate as gen, GenContext, GenOutput, Prompt, ResponseScorer, UtilityScorer};

use crate::{usage, Failure, GenerateArgs};

fn validate(config: &RunConfig) -> Result<(), Failure> {
    config.world.validate().map_err(|e| usage(e.to_string()))?;
    config.backend.validate().map_err(|e| usage(e.to_string()))?;
    config.train.validate().map_err(|e| usage(e.to_string()))?;
    Ok(())
}

fn ensure_dir(dir: &Path) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn parent_dir(path: &Path) -> PathBuf {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

fn read_prompts(path: &Path) -> anyhow::Result<Vec<Prompt>> {
    let reader = BufReader::new(File::open(path).with_context(|| format!("opening {}", path.display()))?);
    let mut prompts = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        prompts.push(
            serde_json::from_str(&line).with_context(|| format!("{}:{}: bad prompt record", path.display(), i + 1))?,
        );
    }
    Ok(prompts)
}

fn with_suffix(out: &Path, suffix: &str) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    parent_dir(out).join(format!("{stem}{suffix}"))
}

fn write_drop_report(out: &Path, output: &GenOutput) -> anyhow::Result<()> {
    let path = with_suffix(out, ".drops.jsonl");
    let mut w = BufWriter::new(File::create(&path)?);
    for d in &output.drops {
        serde_json::to_writer(&mut w, d)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    let report = with_suffix(out, ".report.json");
    std::fs::write(&report, serde_json::to_string_pretty(&output.report)? + "\n")?;
    Ok(())
}

pub fn generate(config: &RunConfig, args: &GenerateArgs) -> Result<(), Failure> {
    validate(config)?;
    let sim = config.backend.kind == BackendKind::SimWorld;
    let strategy = config.strategy.strategy;
    let prompts = match &config.paths.prompts {
        Some(p) => read_prompts(p)?,
        None if sim => (args.offset..args.offset + args.n).map(|i| Prompt::sim(i, &config.world)).collect(),
        None => return Err(usage("--prompts is required unless the backend is sim")),
    };

    let output = if strategy == Strategy::Real {
        if !sim {
            return Err(usage("--strategy real simulates human labels and needs the sim backend"));
        }
        gen_sim_real(&prompts, &config.world, config.seed)?
    } else {
        config.strategy.validate().map_err(|e| usage(e.to_string()))?;
        let backend = build_backend(&config.backend, &config.world)?;
        let ctx = GenContext {
            backend: backend.as_ref(),
            backend_config: &config.backend,
            family: config.family,
            world: sim.then_some(&config.world),
            seed: config.seed,
        };
        let loaded;
        let oracle = UtilityScorer { world: &config.world };
        let scorer: Option<&dyn ResponseScorer> = match (&args.scorer, strategy) {
            (Some(p), _) => {
                loaded = Checkpoint::load(p)?;
                Some(&loaded)
            }
            (None, Strategy::WestOfN) if sim => {
                log::info!("no --scorer given; scoring the pool with the true utility");
                Some(&oracle)
            }
            (None, Strategy::WestOfN) => return Err(usage("west-of-n needs --scorer")),
            _ => None,
        };
        let sft = match (&args.sft, strategy) {
            (Some(p), _) => Some(
                read_sft_jsonl(p, SplitName::SftTrain)?
                    .records
                    .into_iter()
                    .map(|r| (r.id, r.reference))
                    .collect::<BTreeMap<_, _>>(),
            ),
            (None, Strategy::RmboostSft) => return Err(usage("rmboost-sft needs --sft")),
            _ => None,
        };
        gen(&prompts, &ctx, &config.strategy, scorer, sft.as_ref())?
    };

    let dir = parent_dir(&args.out);
    ensure_dir(&dir)?;
    write_jsonl(&DatasetSplit::new(SplitName::RmTrain, output.examples.clone()), &args.out)?;
    write_drop_report(&args.out, &output)?;
    config.write_resolved(&dir)?;
    println!(
        "{}: {} examples from {} prompts, {} dropped",
        strategy,
        output.report.n_emitted,
        output.report.n_prompts,
        output.report.n_dropped()
    );
    Ok(())
}

pub fn train(config: &RunConfig, out: &Path) -> Result<(), Failure> {
    validate(config)?;
    let data = config.paths.data.as_ref().ok_or_else(|| usage("train needs --data"))?;
    let val = config.paths.val.as_ref().ok_or_else(|| usage("train needs --val"))?;
    let train_split = read_jsonl(data, SplitName::RmTrain)?;
    let val_split = read_jsonl(val, SplitName::RmVal)?;
    let featurizer = config.featurizer.build(&config.world, config.seed);
    let mut train_cfg = config.train.clone();
    train_cfg.seed = config.seed;
    let outcome = train_rm(&train_split, &val_split, &featurizer, &train_cfg)?;
    ensure_dir(out)?;
    outcome.checkpoint.save(out.join("checkpoint.json"))?;
    write_log_csv(&outcome.log, out.join("train_log.csv"))?;
    config.write_resolved(out)?;
    println!(
        "val_accuracy {:.4} (step {}, {} training pairs)",
        outcome.checkpoint.val_accuracy,
        outcome.best_step,
        train_split.len()
    );
    Ok(())
}

pub fn eval(config: &RunConfig, out: &Path, name: &str, condition: &str) -> Result<(), Failure> {
    let ck_path = config.paths.checkpoint.as_ref().ok_or_else(|| usage("eval needs --checkpoint"))?;
    let test_path = config.paths.test.as_ref().ok_or_else(|| usage("eval needs --test"))?;
    let ck = Checkpoint::load(ck_path)?;
    let test = read_jsonl(test_path, SplitName::RmTest)?;
    let accuracy = evaluate_accuracy(&ck.params(), &test, &ck.featurizer)?;
    ensure_dir(out)?;
    write_accuracy_csv(
        out.join("accuracy.csv"),
        &[AccuracyRow {
            strategy: name.to_string(),
            condition: condition.to_string(),
            accuracy,
        }],
    )?;
    config.write_resolved(out)?;
    println!("accuracy {accuracy:.4} on {} pairs", test.len());
    Ok(())
}

pub fn analyze(config: &RunConfig, data: &[PathBuf], out: &Path) -> Result<(), Failure> {
    validate(config)?;
    let mut by_strategy: BTreeMap<Strategy, Vec<_>> = BTreeMap::new();
    for p in data {
        for ex in read_jsonl(p, SplitName::RmTrain)?.examples {
            by_strategy.entry(ex.meta.strategy).or_default().push(ex);
        }
    }
    let splits: Vec<(Strategy, DatasetSplit)> = by_strategy
        .into_iter()
        .map(|(s, ex)| (s, DatasetSplit::new(SplitName::RmTrain, ex)))
        .collect();
    ensure_dir(out)?;

    let bins = &config.repro.length_bins;
    let mut lens = Vec::new();
    for (s, split) in &splits {
        lens.push((config.seed, s.as_str().to_string(), length_ratio_stats(split, bins)?));
    }
    write_lenratio_csv(out, &lens)?;
    write_cost_csv(out, &[(config.seed, cost_report(&splits.iter().map(|(_, s)| s).collect::<Vec<_>>()))])?;

    if config.backend.kind == BackendKind::SimWorld {
        let mut records = Vec::new();
        for (s, split) in &splits {
            let bs = match s {
                Strategy::Rlaif => BetaStrategy::Rlaif,
                Strategy::Rlcd => BetaStrategy::Rlcd,
                Strategy::Rmboost => BetaStrategy::Rmboost,
                _ => continue,
            };
            let opts = BetaOptions {
                no_aspect: !config.strategy.aspects_enabled,
                label_prior: None,
            };
            for ex in &split.examples {
                records.push(compute_beta(ex, bs, &config.world, &opts)?);
            }
        }
        write_beta_csv(out, &[(config.seed, beta_summary(&records, &config.repro.beta_bins)?)])?;
    } else {
        log::info!("β needs the sim world's exact distributions; skipped for the {:?} backend", config.backend.kind);
    }
    config.write_resolved(out)?;
    for (s, split) in &splits {
        println!("{s}: {} examples", split.len());
    }
    Ok(())
}

pub fn sim_repro(config: &RunConfig, out: &Path) -> Result<(), Failure> {
    config.validate().map_err(|e| usage(e.to_string()))?;
    let result = run_sim_repro(config, out)?;
    println!("{:<12} {:<9} {:>8}", "strategy", "condition", "accuracy");
    for row in &result.accuracy {
        println!("{:<12} {:<9} {:>8.4}", row.strategy, row.condition, row.accuracy);
    }
    println!("reports written to {}", out.display());
    Ok(())
}
