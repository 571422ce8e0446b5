use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use amoc_core::analysis::{frequency_table, layer_report, write_frequency_csv, write_importance_csv};
use amoc_core::compress::CandidateSpec;
use amoc_core::datagen::{self, JsonlSchema, ShiftSpec, Vocabulary};
use amoc_core::features::{read_records, write_records, CandidateRecord};
use amoc_core::pipeline::{
    self, attach_target_f1, evaluate_selection, fit_selector, load_or_train_base, oracle_test_f1, pair_features,
    prepare_source, read_oracle, select_for_unseen_pair, AuditedDomain, ExperimentConfig, PairKey,
};
use amoc_core::regress::RegressionModel;
use amoc_core::{Error, ErrorKind, Result};

#[derive(Parser)]
#[command(
    name = "amoc",
    version,
    about = "Layer-removal compression with effect-based candidate selection"
)]
struct Cli {
    /// Overrides the configuration seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads (default: all cores).
    #[arg(long, global = true, env = "AMOC_JOBS")]
    jobs: Option<usize>,

    /// Output directory (overrides the configuration).
    #[arg(long = "out-dir", global = true, env = "AMOC_OUT_DIR")]
    out_dir: Option<PathBuf>,

    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct PairArgs {
    /// Source and target domain, as `SOURCE,TARGET`.
    #[arg(long)]
    pair: String,

    /// Experiment configuration (TOML or JSON).
    #[arg(long)]
    config: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic multi-domain corpus as JSONL files.
    GenData {
        /// Shift specification (TOML or JSON).
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train (or reuse) the base model for the pair's source domain.
    TrainBase(PairArgs),
    /// Build, fine-tune and score compressed candidates for a pair.
    Compress {
        #[command(flatten)]
        pair: PairArgs,
        /// Comma-separated removal sizes.
        #[arg(long, value_delimiter = ',')]
        sizes: Option<Vec<usize>>,
        /// Candidates per size.
        #[arg(long)]
        count: Option<usize>,
        /// Leave target F1 empty (the pair is a selection target).
        #[arg(long)]
        unlabeled_target: bool,
        /// Output CSV (default: <out-dir>/pairs/<S>__<T>.records.csv).
        #[arg(long)]
        records_out: Option<PathBuf>,
    },
    /// Fit the stepwise selector on candidate records.
    FitSelector {
        /// Record CSV files or glob patterns.
        #[arg(long, required = true, num_args = 1..)]
        records: Vec<String>,
        #[arg(long, default_value_t = amoc_core::regress::DEFAULT_ALPHA)]
        alpha: f64,
        /// Output JSON (default: <out-dir>/selector.json).
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Rank a pair's candidates with a fitted selector.
    Select {
        #[command(flatten)]
        pair: PairArgs,
        #[arg(long)]
        selector: PathBuf,
    },
    /// Regret and rank of a chosen candidate against target test labels.
    Evaluate {
        #[command(flatten)]
        pair: PairArgs,
        /// Removed layers as a JSON array, e.g. `[2,5]`.
        #[arg(long)]
        chosen: String,
    },
    /// Layer frequency, importance regression and their rank correlation.
    Analyze {
        #[arg(long, required = true, num_args = 1..)]
        records: Vec<String>,
        /// Oracle CSVs with target test F1; without them the record target
        /// F1 decides the best candidate.
        #[arg(long, num_args = 1..)]
        oracle: Vec<String>,
        /// Encoder depth of the analysed models.
        #[arg(long, default_value_t = 6)]
        depth: usize,
    },
    /// Run the whole loop over every domain pair, resuming finished pairs.
    RunAll {
        #[arg(long)]
        config: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e.kind() {
                ErrorKind::Data => 3,
                ErrorKind::Numerical => 4,
                ErrorKind::Divergence => 5,
            })
        }
    }
}

fn dispatch(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::GenData { spec, out } => gen_data(spec, out),
        Command::TrainBase(p) => {
            let ctx = PairContext::load(cli, p)?;
            let model = load_or_train_base(&ctx.config, ctx.dims, &AuditedDomain::new(&ctx.source))?;
            let path = pipeline::base_model_path(&ctx.config.output_dir, &ctx.source.name);
            println!(
                "base model for {}: {} ({} layers, {} trainable parameters)",
                ctx.source.name,
                path.display(),
                model.active_layers().len(),
                model.trainable_parameter_count()
            );
            Ok(())
        }
        Command::Compress {
            pair,
            sizes,
            count,
            unlabeled_target,
            records_out,
        } => {
            let mut ctx = PairContext::load(cli, pair)?;
            if let Some(s) = sizes {
                ctx.config.sizes = s.clone();
            }
            if let Some(c) = count {
                ctx.config.count_per_size = *c;
            }
            ctx.config.validate()?;
            compress_pair(&ctx, *unlabeled_target, records_out.as_deref())
        }
        Command::FitSelector { records, alpha, output } => {
            let records = load_record_globs(records)?;
            let model = fit_selector(&records, *alpha)?;
            let path = output
                .clone()
                .unwrap_or_else(|| out_dir(cli, None).join("selector.json"));
            model.save(&path)?;
            print_regression(&model);
            println!("selector written to {}", path.display());
            Ok(())
        }
        Command::Select { pair, selector } => {
            let ctx = PairContext::load(cli, pair)?;
            let selector = RegressionModel::load(selector)?;
            select(&ctx, &selector)
        }
        Command::Evaluate { pair, chosen } => {
            let ctx = PairContext::load(cli, pair)?;
            evaluate(&ctx, &CandidateSpec::parse(chosen)?)
        }
        Command::Analyze { records, oracle, depth } => analyze(cli, records, oracle, *depth),
        Command::RunAll { config } => {
            let config = load_config(cli, config)?;
            let outcome = pipeline::run_all(&config)?;
            let s = &outcome.manifest.summary;
            println!(
                "pairs: {}  records: {}  failures: {}",
                s.n_pairs, s.n_records, s.n_failures
            );
            println!("top-quartile rate: {:.3}", s.top_quartile_rate);
            println!(
                "mean regret: {:.4}  (source-F1 rule: {:.4})",
                s.mean_regret, s.naive_mean_regret
            );
            println!(
                "selector adjusted R2: mean {:.3}, min {:.3}",
                s.mean_selector_adjusted_r2, s.min_selector_adjusted_r2
            );
            if let Some(rho) = s.layer_spearman {
                println!("layer rank correlation: {rho:.3}");
            }
            println!("manifest: {}", config.output_dir.join("manifest.json").display());
            Ok(())
        }
    }
}

fn out_dir(cli: &Cli, config: Option<&ExperimentConfig>) -> PathBuf {
    cli.out_dir
        .clone()
        .or_else(|| config.map(|c| c.output_dir.clone()))
        .unwrap_or_else(|| PathBuf::from("amoc-out"))
}

fn load_config(cli: &Cli, path: &Path) -> Result<ExperimentConfig> {
    let mut config = ExperimentConfig::load(path)?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if cli.jobs.is_some() {
        config.jobs = cli.jobs;
    }
    config.output_dir = out_dir(cli, Some(&config));
    config.validate()?;
    Ok(config)
}

struct PairContext {
    config: ExperimentConfig,
    dims: amoc_core::netcore::Dims,
    pair: PairKey,
    source: datagen::DomainDataset,
    target: datagen::DomainDataset,
}

impl PairContext {
    fn load(cli: &Cli, args: &PairArgs) -> Result<Self> {
        let config = load_config(cli, &args.config)?;
        let pair = PairKey::parse(&args.pair)?;
        let (domains, dims) = config.load_domains()?;
        let find = |name: &str| {
            domains
                .iter()
                .find(|d| d.name == name)
                .cloned()
                .ok_or_else(|| Error::Input(format!("unknown domain `{name}`")))
        };
        let source = find(&pair.source)?;
        let target = find(&pair.target)?;
        Ok(Self {
            config,
            dims,
            pair,
            source,
            target,
        })
    }

    fn with_pool<T: Send>(&self, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
        rayon_pool(self.config.jobs)?.install(f)
    }

    fn artifacts(&self) -> Result<pipeline::SourceArtifacts> {
        let source = AuditedDomain::new(&self.source);
        let base = load_or_train_base(&self.config, self.dims, &source)?;
        prepare_source(&self.config, &base, &source)
    }
}

fn rayon_pool(jobs: Option<usize>) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.unwrap_or(0))
        .build()
        .map_err(|e| Error::Internal(e.to_string()))
}

fn gen_data(spec_path: &Path, out: &Path) -> Result<()> {
    let text = std::fs::read_to_string(spec_path).map_err(|e| Error::Io {
        path: spec_path.to_path_buf(),
        source: e,
    })?;
    let parse_err = |message: String| Error::Parse {
        path: spec_path.to_path_buf(),
        line: 0,
        message,
    };
    let spec: ShiftSpec = if spec_path.extension().is_some_and(|e| e == "json") {
        serde_json::from_str(&text).map_err(|e| parse_err(e.to_string()))?
    } else {
        toml::from_str(&text).map_err(|e| parse_err(e.to_string()))?
    };
    let domains = datagen::generate(&spec)?;
    let vocab = Vocabulary::synthetic(spec.vocab_size);
    let schema = JsonlSchema {
        label_space: (0..spec.n_classes).map(|c| c.to_string()).collect(),
    };
    for d in &domains {
        let path = out.join(format!("{}.jsonl", d.name));
        datagen::write_jsonl(d, &schema, &vocab, &path)?;
        println!(
            "{}: {} lines",
            path.display(),
            d.labeled_train.len() + d.held_out.len() + d.test.len() + d.unlabeled.len()
        );
    }
    vocab.save(&out.join("vocab.json"))?;
    Ok(())
}

fn compress_pair(ctx: &PairContext, unlabeled_target: bool, records_out: Option<&Path>) -> Result<()> {
    let records = ctx.with_pool(|| {
        let artifacts = ctx.artifacts()?;
        let features = pair_features(
            &ctx.config,
            &artifacts,
            &AuditedDomain::new(&ctx.source),
            &AuditedDomain::new(&ctx.target),
        )?;
        let mut records = features.records;
        if !unlabeled_target {
            attach_target_f1(&mut records, &artifacts, &AuditedDomain::new(&ctx.target))?;
        }
        for f in &features.failures {
            eprintln!("candidate {} failed at {}: {}", f.spec, f.stage, f.error);
        }
        records.sort_by(|a, b| a.spec.cmp(&b.spec));
        Ok(records)
    })?;
    let path = records_out
        .map(Path::to_path_buf)
        .unwrap_or_else(|| pipeline::pair_file(&ctx.config.output_dir, &ctx.pair, "records.csv"));
    write_records(&path, &records)?;
    println!("{} records written to {}", records.len(), path.display());
    Ok(())
}

fn select(ctx: &PairContext, selector: &RegressionModel) -> Result<()> {
    let target = AuditedDomain::new(&ctx.target);
    let selection = ctx.with_pool(|| {
        let artifacts = ctx.artifacts()?;
        select_for_unseen_pair(
            &ctx.config,
            &artifacts,
            &AuditedDomain::new(&ctx.source),
            &target,
            selector,
        )
    })?;
    println!("chosen: {}", selection.chosen);
    println!("P(S|T): {:.4}", selection.p_s_given_t);
    println!("{:>4}  {:<16} {:>10} {:>8}", "rank", "removed", "predicted", "f1_s");
    for (i, r) in selection.ranked.iter().enumerate() {
        println!(
            "{:>4}  {:<16} {:>10.4} {:>8.4}",
            i + 1,
            r.spec.to_string(),
            r.predicted,
            r.f1_source
        );
    }
    println!("target label reads: {}", target.label_reads());
    Ok(())
}

fn evaluate(ctx: &PairContext, chosen: &CandidateSpec) -> Result<()> {
    let oracle = ctx.with_pool(|| {
        let artifacts = ctx.artifacts()?;
        let specs: Vec<CandidateSpec> = artifacts.candidates.iter().map(|c| c.spec.clone()).collect();
        let f1 = oracle_test_f1(&artifacts, &specs, &AuditedDomain::new(&ctx.target))?;
        Ok(specs.into_iter().zip(f1).collect::<Vec<_>>())
    })?;
    let report = evaluate_selection(chosen, &oracle)?;
    println!("chosen: {} (test F1 {:.4})", report.chosen, report.chosen_f1);
    println!("best:   {} (test F1 {:.4})", report.best, report.best_f1);
    println!("regret: {:.4}", report.regret);
    println!("rank:   {} of {}", report.rank, report.n_candidates);
    Ok(())
}

fn expand(patterns: &[String]) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for p in patterns {
        let matches: Vec<PathBuf> = glob::glob(p)
            .map_err(|e| Error::Input(format!("bad pattern `{p}`: {e}")))?
            .filter_map(|m| m.ok())
            .collect();
        if matches.is_empty() {
            return Err(Error::Input(format!("no files match `{p}`")));
        }
        out.extend(matches);
    }
    out.sort();
    out.dedup();
    Ok(out)
}

fn load_record_globs(patterns: &[String]) -> Result<Vec<CandidateRecord>> {
    let mut records = Vec::new();
    for path in expand(patterns)? {
        records.extend(read_records(&path)?);
    }
    Ok(records)
}

fn print_regression(model: &RegressionModel) {
    println!(
        "{:<16} {:>10} {:>10} {:>10} {:>10}",
        "term", "beta", "se", "p", "delta_r2"
    );
    println!(
        "{:<16} {:>10.4} {:>10.4} {:>10.2e} {:>10}",
        "(intercept)", model.intercept.beta, model.intercept.se, model.intercept.p, ""
    );
    for t in &model.terms {
        println!(
            "{:<16} {:>10.4} {:>10.4} {:>10.2e} {:>10.4}",
            t.name, t.beta, t.se, t.p, t.delta_r2
        );
    }
    println!(
        "n = {}  R2 = {:.4}  adjusted R2 = {:.4}",
        model.n, model.r2, model.adjusted_r2
    );
}

fn analyze(cli: &Cli, records: &[String], oracle: &[String], depth: usize) -> Result<()> {
    let records = load_record_globs(records)?;
    let mut by_pair: std::collections::BTreeMap<String, Vec<(CandidateSpec, f64)>> = Default::default();
    if oracle.is_empty() {
        log::warn!("no oracle files given; using record target F1 to pick each pair's best candidate");
        for r in &records {
            let f1 = r
                .target_f1
                .ok_or_else(|| Error::Input(format!("record {} {} has no target F1", r.pair_id, r.spec)))?;
            by_pair.entry(r.pair_id.clone()).or_default().push((r.spec.clone(), f1));
        }
    } else {
        for path in expand(oracle)? {
            for (pair, spec, f1) in read_oracle(&path)? {
                by_pair.entry(pair).or_default().push((spec, f1));
            }
        }
    }
    let best: Vec<CandidateSpec> = by_pair
        .values()
        .map(|scores| {
            scores
                .iter()
                .fold(None::<&(CandidateSpec, f64)>, |acc, c| match acc {
                    Some(b) if b.1 >= c.1 => Some(b),
                    _ => Some(c),
                })
                .map(|b| b.0.clone())
                .expect("nonempty")
        })
        .collect();
    let report = layer_report(&best, &records, depth)?;
    let dir = out_dir(cli, None).join("analysis");
    write_frequency_csv(&dir.join("frequency.csv"), &frequency_table(&best, depth)?)?;
    write_importance_csv(&dir.join("importance.csv"), &report.importance)?;
    println!("{:>5} {:>10} {:>12}", "layer", "kept", "coefficient");
    for l in 0..depth {
        let b = report.importance.coefficients[l]
            .map(|b| format!("{b:.4}"))
            .unwrap_or_else(|| "-".into());
        println!("{:>5} {:>10.3} {:>12}", l + 1, report.frequency[l], b);
    }
    match report.spearman {
        Some(rho) => println!("spearman (removal rate vs coefficient): {rho:.3}"),
        None => println!("spearman: undefined"),
    }
    println!("tables written to {}", dir.display());
    Ok(())
}
