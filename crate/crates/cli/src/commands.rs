use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use serde::Serialize;

use xmf_core::data::{GuardedDataset, ModalitySet, MultimodalDataset, CLASS_NAMES};
use xmf_core::datagen::{export, generate, import, GenSpec};
use xmf_core::error::Error as CoreError;
use xmf_core::fusion::{AttentionMode, ModelConfig};
use xmf_core::training::{
    ablation_matrix, cell_label, evaluate, grid_search, select_initialization, stratified_split, trials_csv,
    worker_count, CellReport, Grid, Retune, RunReport, SeedRun, SplitPlan,
};
use xmf_snp::filter::{removal_log_tsv, FilterKind};
use xmf_snp::synth::{synthesize, SynthSpec};
use xmf_snp::{encode, filter_variants, parse_bed, parse_variant_table, region_filter, SnpError, Thresholds};

use crate::Common;

pub const TEST_FRACTION: f64 = 0.1;
const SELECTION_SEEDS: u64 = 5;

/// A command-line misuse detected after argument parsing.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

pub fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<UsageError>() {
            return 1;
        }
        if let Some(e) = cause.downcast_ref::<CoreError>() {
            return match e {
                CoreError::Usage(_) | CoreError::Config(_) | CoreError::Parameter(_) => 1,
                CoreError::Diverged { .. } => 3,
                _ => 2,
            };
        }
        if cause.is::<SnpError>() || cause.is::<serde_json::Error>() || cause.is::<std::io::Error>() {
            return 2;
        }
    }
    2
}

#[derive(Args, Debug)]
pub struct DataArgs {
    /// Dataset directory written by `datagen`.
    #[arg(long)]
    pub data: PathBuf,
    /// Hyperparameter grid JSON (default: the full grid).
    #[arg(long)]
    pub grid: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct AblateArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Seeds per cell.
    #[arg(long, default_value_t = 5)]
    pub seeds: u64,
    /// Grid-search each cell before evaluating it.
    #[arg(long)]
    pub retune: bool,
}

#[derive(Args, Debug)]
pub struct PreprocessArgs {
    /// Variant table TSV (`#CHROM POS ID samples...`, cells `g:q`).
    #[arg(long)]
    pub variants: PathBuf,
    /// Gene regions as a 3-column BED file.
    #[arg(long)]
    pub regions: Option<PathBuf>,
    #[arg(long, default_value_t = 0.05)]
    pub hwe_p: f64,
    #[arg(long, default_value_t = 20.0)]
    pub min_gq: f64,
    #[arg(long, default_value_t = 0.01)]
    pub min_maf: f64,
    #[arg(long, default_value_t = 0.05)]
    pub max_missing: f64,
    /// Dataset supplying labels for forest ranking; its held-out split
    /// (from `--seed`) is excluded from the fit.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Number of top-ranked sites to keep (requires `--dataset`).
    #[arg(long)]
    pub k_out: Option<usize>,
    /// Trees in the forest: 50, 100, 150 or 200.
    #[arg(long, default_value_t = 100)]
    pub trees: usize,
}

fn out_dir(c: &Common) -> Result<&Path> {
    let dir = c.out.as_deref().ok_or_else(|| usage("--out is required"))?;
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)?).with_context(|| format!("writing {}", path.display()))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| CoreError::Config(format!("{}: {e}", path.display())).into())
}

pub fn datagen(c: &Common, variants: bool, variant_sites: usize) -> Result<()> {
    let mut spec: GenSpec = match &c.config {
        Some(p) => read_json(p)?,
        None => GenSpec::default(),
    };
    spec.seed = c.seed;
    let dir = out_dir(c)?;
    let data = generate(&spec)?;
    export(&data, dir, Some(&spec))?;
    let counts = data.class_counts();
    println!(
        "wrote {} samples ({}) with {} SNPs and {}x{} images to {}",
        data.len(),
        CLASS_NAMES
            .iter()
            .zip(counts)
            .map(|(n, k)| format!("{n} {k}"))
            .collect::<Vec<_>>()
            .join(", "),
        data.snp_count,
        data.image_size,
        data.image_size,
        dir.display()
    );
    if variants {
        let ids: Vec<String> = data.samples.iter().map(|s| s.id.clone()).collect();
        let labels: Vec<u8> = data.samples.iter().map(|s| s.label).collect();
        let syn = synthesize(
            &ids,
            Some(&labels),
            &SynthSpec {
                n_sites: variant_sites,
                seed: c.seed,
                ..SynthSpec::default()
            },
        )?;
        syn.table.write(&dir.join("variants.tsv"))?;
        std::fs::write(dir.join("regions.bed"), syn.regions.to_bed())?;
        println!("wrote variants.tsv ({} sites) and regions.bed", syn.table.n_sites());
    }
    Ok(())
}

pub fn preprocess_snps(c: &Common, a: &PreprocessArgs) -> Result<()> {
    if a.k_out.is_some() && a.dataset.is_none() {
        return Err(usage("--k-out needs --dataset for labels"));
    }
    if !xmf_snp::forest::TREE_COUNTS.contains(&a.trees) {
        return Err(usage(format!(
            "--trees must be one of {:?}",
            xmf_snp::forest::TREE_COUNTS
        )));
    }
    let dir = out_dir(c)?;
    let table = parse_variant_table(&a.variants)?;
    let th = Thresholds {
        hwe_p: a.hwe_p,
        min_mean_gq: a.min_gq,
        min_maf: a.min_maf,
        max_missing: a.max_missing,
    };
    let (filtered, log) = filter_variants(&table, &th);
    let filtered = match &a.regions {
        Some(p) => region_filter(&filtered, &parse_bed(p)?),
        None => filtered,
    };
    filtered.write(&dir.join("filtered.tsv"))?;
    std::fs::write(dir.join("removal_log.tsv"), removal_log_tsv(&log))?;

    let x = encode(&filtered);
    let mut csv = String::from("id");
    for s in &filtered.sites {
        csv.push(',');
        csv.push_str(&s.id);
    }
    csv.push('\n');
    for (id, row) in filtered.sample_ids.iter().zip(&x) {
        csv.push_str(id);
        for g in row {
            let _ = write!(csv, ",{g}");
        }
        csv.push('\n');
    }
    std::fs::write(dir.join("encoded.csv"), csv)?;

    let count = |k: FilterKind| log.iter().filter(|r| r.filter == k).count();
    println!("sites in            {:>8}", table.n_sites());
    for k in [FilterKind::Hwe, FilterKind::Gq, FilterKind::Maf, FilterKind::Missing] {
        println!("removed by {:<8} {:>8}", k.to_string(), count(k));
    }
    println!(
        "outside regions     {:>8}",
        table.n_sites() - log.len() - filtered.n_sites()
    );
    println!("sites kept          {:>8}", filtered.n_sites());

    if let (Some(ds), Some(k)) = (&a.dataset, a.k_out) {
        let data = import(ds)?;
        let plan = stratified_split(&data.labels(), TEST_FRACTION, c.seed)?;
        let by_id: HashMap<&str, usize> = filtered
            .sample_ids
            .iter()
            .enumerate()
            .map(|(i, s)| (s.as_str(), i))
            .collect();
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for &i in &plan.train {
            let s = &data.samples[i];
            if let Some(&j) = by_id.get(s.id.as_str()) {
                rows.push(x[j].clone());
                labels.push(s.label as usize);
            }
        }
        if rows.is_empty() {
            bail!(CoreError::Data(
                "no training samples of the dataset appear in the variant table".into()
            ));
        }
        let forest = xmf_snp::fit_forest(&rows, &labels, &xmf_snp::ForestParams::new(a.trees, c.seed))?;
        let ranked = forest.ranking();
        let mut out = String::from("rank\tsite\tid\timportance\n");
        for (r, &f) in ranked.iter().take(k).enumerate() {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{:.6e}",
                r + 1,
                f,
                filtered.sites[f].id,
                forest.importances[f]
            );
        }
        std::fs::write(dir.join("selected.tsv"), out)?;
        println!(
            "ranked {} sites on {} training samples; top {} written",
            ranked.len(),
            rows.len(),
            k.min(ranked.len())
        );
    }
    println!("outputs in {}", dir.display());
    Ok(())
}

struct Setup {
    data: MultimodalDataset,
    config: ModelConfig,
    plan: SplitPlan,
    workers: usize,
}

fn setup(c: &Common, a: &DataArgs) -> Result<Setup> {
    let data = import(&a.data)?;
    let config: ModelConfig = match &c.config {
        Some(p) => read_json(p)?,
        None => ModelConfig::default(),
    };
    let config = config.fit_to(&data).with_seed(c.seed);
    config.validate()?;
    let plan = stratified_split(&data.labels(), TEST_FRACTION, c.seed)?;
    Ok(Setup {
        data,
        config,
        plan,
        workers: worker_count(c.workers)?,
    })
}

fn load_grid(a: &DataArgs) -> Result<Grid> {
    match &a.grid {
        Some(p) => read_json(p),
        None => Ok(Grid::default()),
    }
}

#[derive(Serialize)]
struct TuneSummary<'a> {
    split_seed: u64,
    test_fraction: f64,
    trials: usize,
    best_index: usize,
    best_config_hash: String,
    best_mean_val_accuracy: f64,
    premature_test_reads: usize,
    grid: &'a Grid,
}

pub fn tune(c: &Common, a: &DataArgs) -> Result<()> {
    let dir = out_dir(c)?;
    let s = setup(c, a)?;
    let grid = load_grid(a)?;
    let guard = GuardedDataset::new(&s.data, &s.plan.test);
    let configs = grid.sample(&s.config, c.budget, c.seed);
    println!(
        "tuning {} of {} grid points with {} worker(s)",
        configs.len(),
        grid.len(),
        s.workers
    );
    let outcome = grid_search(&configs, &s.plan, &guard, s.workers)?;
    let reads = guard.premature_reads();

    write_json(&dir.join("best_config.json"), &outcome.best)?;
    std::fs::write(dir.join("trials.csv"), trials_csv(&outcome.trials))?;
    let best = &outcome.trials[outcome.best_index];
    write_json(
        &dir.join("tune.json"),
        &TuneSummary {
            split_seed: c.seed,
            test_fraction: TEST_FRACTION,
            trials: outcome.trials.len(),
            best_index: outcome.best_index,
            best_config_hash: best.config_hash.clone(),
            best_mean_val_accuracy: best.mean_val_accuracy,
            premature_test_reads: reads,
            grid: &grid,
        },
    )?;

    println!(
        "{:>5}  {:>8}  {:>15}  {:>5}  {:>6}  {:>8}",
        "trial", "lr", "dropout", "batch", "epochs", "cv acc"
    );
    for (i, t) in outcome.trials.iter().enumerate() {
        let mark = if i == outcome.best_index { " *" } else { "" };
        let d = t.config.dropout;
        println!(
            "{:>5}  {:>8}  {:>15}  {:>5}  {:>6}  {:>8.4}{mark}",
            i,
            t.config.learning_rate,
            format!("{}/{}/{}", d[0], d[1], d[2]),
            t.config.batch_size,
            t.config.epochs,
            t.mean_val_accuracy
        );
    }
    println!("held-out reads during tuning: {reads}");
    println!("best config written to {}", dir.join("best_config.json").display());
    if reads > 0 {
        bail!(CoreError::Data(format!("{reads} held-out reads during tuning")));
    }
    Ok(())
}

fn seed_list(base: u64, n: u64) -> Vec<u64> {
    (0..n).map(|i| base.wrapping_add(i)).collect()
}

pub fn train(c: &Common, a: &DataArgs) -> Result<()> {
    let dir = out_dir(c)?;
    let s = setup(c, a)?;
    let seeds = seed_list(c.seed, SELECTION_SEEDS);
    let guard = GuardedDataset::new(&s.data, &s.plan.test);
    let sel = select_initialization(&s.config, &guard, &s.plan.train, &seeds, s.workers)?;
    if guard.premature_reads() > 0 {
        bail!(CoreError::Data("held-out samples read during training".into()));
    }
    guard.release();

    let mut runs = Vec::with_capacity(seeds.len());
    for (score, model) in sel.scores.iter().zip(&sel.models) {
        runs.push(SeedRun::new(score.seed, evaluate(model, &guard, &s.plan.test)?));
    }
    sel.model.save(&dir.join("checkpoint"))?;

    let mut report = RunReport::new("train", &s.config, c.seed, TEST_FRACTION, &seeds);
    report.selected_seed = Some(sel.best_seed);
    report.cells.push(CellReport::new(
        cell_label(s.config.mode, &s.config.modalities),
        &s.config,
        runs,
    )?);
    report.write(dir)?;
    print!("{}", report.render());
    let best = report.cells[0]
        .runs
        .iter()
        .find(|r| r.seed == sel.best_seed)
        .expect("selected run");
    println!(
        "selected model: test accuracy {:.4}, macro-F1 {:.4}",
        best.accuracy, best.f1
    );
    println!("checkpoint and report written to {}", dir.display());
    Ok(())
}

fn ablate(
    c: &Common,
    a: &AblateArgs,
    command: &str,
    cells: Vec<(AttentionMode, ModalitySet)>,
    baseline: Option<String>,
) -> Result<()> {
    let dir = out_dir(c)?;
    let s = setup(c, &a.data)?;
    if a.seeds == 0 {
        return Err(usage("--seeds must be at least 1"));
    }
    let seeds = seed_list(c.seed, a.seeds);
    let retune = if a.retune {
        Some(Retune {
            grid: load_grid(&a.data)?,
            budget: c.budget,
        })
    } else {
        None
    };
    let reports = ablation_matrix(&s.config, &cells, &s.data, &s.plan, &seeds, retune.as_ref(), s.workers)?;
    let mut report = RunReport::new(command, &s.config, c.seed, TEST_FRACTION, &seeds);
    report.cells = reports;
    if let Some(b) = baseline {
        report.compare_against(&b)?;
    }
    report.write(dir)?;
    std::fs::write(dir.join("box.csv"), report.box_csv())?;
    print!("{}", report.render());
    println!("report written to {}", dir.display());
    Ok(())
}

pub fn ablate_attention(c: &Common, a: &AblateArgs) -> Result<()> {
    let mods = setup_modalities(c)?;
    let cells: Vec<_> = AttentionMode::ALL.iter().map(|&m| (m, mods.clone())).collect();
    let baseline = cell_label(AttentionMode::NoAttention, &mods);
    ablate(c, a, "ablate-attention", cells, Some(baseline))
}

pub fn ablate_modality(c: &Common, a: &AblateArgs) -> Result<()> {
    let mode = match &c.config {
        Some(p) => read_json::<ModelConfig>(p)?.mode,
        None => ModelConfig::default().mode,
    };
    let cells: Vec<_> = ModalitySet::subsets().into_iter().map(|m| (mode, m)).collect();
    ablate(c, a, "ablate-modality", cells, None)
}

fn setup_modalities(c: &Common) -> Result<ModalitySet> {
    Ok(match &c.config {
        Some(p) => read_json::<ModelConfig>(p)?.modalities,
        None => ModalitySet::all(),
    })
}

pub fn report(c: &Common, input: &Path) -> Result<()> {
    let report = RunReport::read(input)?;
    print!("{}", report.render());
    println!();
    print!("{}", report.box_csv());
    if let Some(dir) = &c.out {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("box.csv"), report.box_csv())?;
        std::fs::write(dir.join("summary.txt"), report.render())?;
    }
    Ok(())
}
