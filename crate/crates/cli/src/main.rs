use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use mlet_core::experiment::{
    compress_checkpoint, load_records, run_and_persist, summarize, threads_from_env, write_report,
    CompressOptions, ExperimentConfig, ModeKind, OptimizerKind,
};
use mlet_core::gradflow::verify::{classification_table, verify_theory, TheoryOptions};
use mlet_core::gradflow::{census_identity_check, factor_census};
use mlet_core::synthdata::{
    generate_with_truth, import_csv, DatasetSource, FieldSpec, SyntheticSpec,
};
use mlet_core::MletError;

#[derive(Parser)]
#[command(
    name = "mlet",
    version,
    about = "Multi-layer embedding training experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic click dataset, or import a Criteo-style file.
    GenData(GenData),
    /// Check the update-reweighting identities on random instances.
    VerifyTheory(VerifyTheory),
    /// Train single-layer or factorized models over a grid of settings.
    Train(Train),
    /// Compress a trained checkpoint and re-evaluate it.
    Compress(Compress),
    /// Summarize one or more training output directories.
    Report(Report),
}

#[derive(Args)]
struct GenData {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Number of sparse fields.
    #[arg(long)]
    fields: Option<usize>,
    /// Categories per field.
    #[arg(long)]
    cardinality: Option<usize>,
    /// Zipf exponent of every field; 0 is uniform.
    #[arg(long)]
    zipf: Option<f64>,
    #[arg(long)]
    dense_dim: Option<usize>,
    #[arg(long)]
    n_train: Option<usize>,
    #[arg(long)]
    n_val: Option<usize>,
    #[arg(long)]
    n_test: Option<usize>,
    #[arg(long)]
    signal_scale: Option<f64>,
    #[arg(long)]
    noise_std: Option<f64>,
    #[arg(long)]
    popularity_shift: Option<f64>,
    /// Also write the hidden click model as JSON.
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Import this label/dense/categorical file instead of generating.
    #[arg(long)]
    from_csv: Option<PathBuf>,
    /// Numeric columns in the imported file.
    #[arg(long, default_value_t = 13)]
    csv_dense_dim: usize,
    /// Hash buckets per categorical column of the imported file.
    #[arg(long, default_value_t = 100_000)]
    buckets: usize,
}

#[derive(Args)]
struct VerifyTheory {
    #[arg(long, default_value_t = 100)]
    trials: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 2)]
    d_min: usize,
    #[arg(long, default_value_t = 6)]
    d_max: usize,
    #[arg(long, default_value_t = 5)]
    n_min: usize,
    #[arg(long, default_value_t = 20)]
    n_max: usize,
    /// Print the d=2, n=5 factor classification grid for k = 1, 2, 4.
    #[arg(long, alias = "table1")]
    grid: bool,
    /// Print closed-form factor counts for a table.
    #[arg(long, num_args = 3, value_names = ["N", "D", "K"])]
    census: Option<Vec<usize>>,
    /// Write the JSON report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Single,
    Mlet,
}

#[derive(Clone, Copy, ValueEnum)]
enum OptimizerArg {
    Sgd,
    Adagrad,
}

#[derive(Args)]
struct Train {
    /// JSON experiment config; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset file; without it the configured synthetic spec is generated.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Seed of the generated dataset.
    #[arg(long)]
    data_seed: Option<u64>,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    #[arg(long, value_delimiter = ',')]
    d: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    k: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    init_std: Option<Vec<f64>>,
    #[arg(long, value_enum)]
    optimizer: Option<OptimizerArg>,
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Hash every field wider than M buckets before training.
    #[arg(long, value_name = "M")]
    hash: Option<usize>,
    /// Also evaluate every run after int8 quantization.
    #[arg(long)]
    int8: bool,
    /// Also evaluate every run after a rank-R truncated SVD.
    #[arg(long, value_name = "R")]
    svd_rank: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct Compress {
    checkpoint: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_name = "R")]
    svd_rank: Option<usize>,
    #[arg(long)]
    int8: bool,
    /// Hash every field wider than M buckets and retrain.
    #[arg(long, value_name = "M")]
    hash: Option<usize>,
}

#[derive(Args)]
struct Report {
    #[arg(required = true)]
    runs: Vec<PathBuf>,
    /// Output directory; defaults to the first run directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenData(a) => gen_data(a),
        Command::VerifyTheory(a) => verify(a),
        Command::Train(a) => train(a),
        Command::Compress(a) => compress(a),
        Command::Report(a) => report(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

type CmdResult = Result<ExitCode, MletError>;

fn gen_data(a: GenData) -> CmdResult {
    if let Some(path) = &a.from_csv {
        let ds = import_csv(path, a.csv_dense_dim, a.buckets)?;
        ds.save(&a.out)?;
        println!(
            "imported {} records ({} fields, {} dense) -> {}",
            ds.len(),
            ds.num_fields(),
            ds.dense_dim(),
            a.out.display()
        );
        return Ok(ExitCode::SUCCESS);
    }
    let mut spec = SyntheticSpec::default();
    let fields = a.fields.unwrap_or(spec.fields.len());
    let field = FieldSpec {
        n: a.cardinality.unwrap_or(spec.fields[0].n),
        zipf: a.zipf.unwrap_or(spec.fields[0].zipf),
    };
    spec.fields = vec![field.clone(); fields];
    spec.dense_dim = a.dense_dim.unwrap_or(spec.dense_dim);
    spec.n_train = a.n_train.unwrap_or(spec.n_train);
    spec.n_val = a.n_val.unwrap_or(spec.n_val);
    spec.n_test = a.n_test.unwrap_or(spec.n_test);
    spec.signal_scale = a.signal_scale.unwrap_or(spec.signal_scale);
    spec.noise_std = a.noise_std.unwrap_or(spec.noise_std);
    spec.popularity_shift = a.popularity_shift.unwrap_or(spec.popularity_shift);

    let (ds, truth) = generate_with_truth(&spec, a.seed)?;
    ds.save(&a.out)?;
    if let Some(t) = &a.truth {
        std::fs::write(t, serde_json::to_string(&truth)?)?;
    }
    let skew = if field.zipf == 0.0 {
        "uniform".to_string()
    } else {
        format!("zipf {}", field.zipf)
    };
    println!(
        "{} records ({} train / {} val / {} test), {fields} fields x {} categories ({skew}), {} dense, positive rate {:.4} -> {}",
        ds.len(),
        spec.n_train,
        spec.n_val,
        spec.n_test,
        field.n,
        spec.dense_dim,
        ds.positive_rate(0..ds.len()),
        a.out.display()
    );
    if let DatasetSource::Synthetic { seed, .. } = ds.source() {
        println!("seed {seed}");
    }
    Ok(ExitCode::SUCCESS)
}

fn verify(a: VerifyTheory) -> CmdResult {
    if let Some(c) = &a.census {
        let (n, d, k) = (c[0], c[1], c[2]);
        if d == 0 || n == 0 || k == 0 {
            return Err(MletError::InvalidArgument(
                "census needs positive N D K".into(),
            ));
        }
        let census = factor_census(n, d, k);
        println!(
            "nonzero={}, zero={}",
            census.nonzero_count, census.zero_count
        );
        println!(
            "informative={} sigma2_active={}",
            census.informative_count, census.sigma2_active_count
        );
        if k < d && d <= n {
            println!("identity_holds={}", census_identity_check(n, d, k));
        }
        return Ok(ExitCode::SUCCESS);
    }
    if a.grid {
        let (d, n) = (2, 5);
        let rows = classification_table(d, n, &[1, 2, 4], a.seed)?;
        let mut header = format!("{:14}", "");
        for i in 1..=d {
            for j in 1..=n {
                header += &format!("{:>6}", format!("u{i}v{j}"));
            }
        }
        println!("{header}");
        for (label, cells) in rows {
            let mut line = format!("{label:14}");
            for c in cells {
                line += &format!("{:>6}", c.symbol());
            }
            println!("{line}");
        }
        println!("** both sigma1 and sigma2 non-zero, * sigma1 only, 0 zero sigma1, 1 unit weight");
        return Ok(ExitCode::SUCCESS);
    }
    let opts = TheoryOptions {
        trials: a.trials,
        seed: a.seed,
        d_range: (a.d_min, a.d_max),
        n_range: (a.n_min, a.n_max),
        ..Default::default()
    };
    if a.d_min > a.d_max || a.n_min > a.n_max {
        return Err(MletError::InvalidArgument("empty dimension range".into()));
    }
    let report = verify_theory(&opts)?;
    for c in &report.checks {
        eprintln!(
            "{:5} {:22} max residual {:.3e} (tol {:.0e}, {} instances)",
            if c.passed { "ok" } else { "FAIL" },
            c.name,
            c.max_residual,
            c.tolerance,
            c.instances
        );
    }
    let json = serde_json::to_string_pretty(&report)?;
    match &a.out {
        Some(p) => std::fs::write(p, json)?,
        None => println!("{json}"),
    }
    Ok(if report.passed {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    })
}

fn train(a: Train) -> CmdResult {
    let mut cfg = match &a.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(p) = a.dataset {
        cfg.dataset.path = Some(p);
    }
    if let Some(s) = a.data_seed {
        cfg.dataset.seed = s;
    }
    if let Some(m) = a.mode {
        cfg.mode = match m {
            ModeArg::Single => ModeKind::Single,
            ModeArg::Mlet => ModeKind::Mlet,
        };
    }
    if let Some(o) = a.optimizer {
        cfg.optimizer = match o {
            OptimizerArg::Sgd => OptimizerKind::Sgd,
            OptimizerArg::Adagrad => OptimizerKind::Adagrad,
        };
    }
    cfg.d = a.d.unwrap_or(cfg.d);
    cfg.k = a.k.unwrap_or(cfg.k);
    cfg.init_std = a.init_std.unwrap_or(cfg.init_std);
    cfg.eta = a.eta.or(cfg.eta);
    cfg.batch_size = a.batch_size.unwrap_or(cfg.batch_size);
    cfg.epochs = a.epochs.unwrap_or(cfg.epochs);
    cfg.seeds = a.seeds.unwrap_or(cfg.seeds);
    cfg.compress.hash = a.hash.or(cfg.compress.hash);
    cfg.compress.int8 |= a.int8;
    cfg.compress.svd_rank = a.svd_rank.or(cfg.compress.svd_rank);
    cfg.out = a.out.unwrap_or(cfg.out);

    let records = run_and_persist(&cfg, threads_from_env())?;
    for r in &records {
        for s in &r.seeds {
            println!(
                "{:28} seed {:3}  auc {:.4}  pr_auc {:.4}  logloss {:.4}  ({:.1}s)",
                r.label,
                s.seed,
                s.eval.full.auc,
                s.eval.full.pr_auc,
                s.eval.full.logloss,
                s.wall_clock_s
            );
        }
    }
    println!(
        "wrote {} run records under {}",
        records.len(),
        cfg.out.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn compress(a: Compress) -> CmdResult {
    let opts = CompressOptions {
        svd_rank: a.svd_rank,
        int8: a.int8,
        hash: a.hash,
    };
    let rep = compress_checkpoint(&a.checkpoint, &opts, &a.out)?;
    eprintln!(
        "{} seed {}: {} -> {} bytes ({:.2}x), auc {:.4} -> {:.4}",
        rep.label,
        rep.seed,
        rep.bytes_before,
        rep.bytes_after,
        rep.bytes_before as f64 / rep.bytes_after as f64,
        rep.before.full.auc,
        rep.after.full.auc
    );
    println!("{}", serde_json::to_string_pretty(&rep)?);
    Ok(ExitCode::SUCCESS)
}

fn report(a: Report) -> CmdResult {
    let records = load_records(&a.runs)?;
    let rep = summarize(&records)?;
    let out = a.out.unwrap_or_else(|| a.runs[0].clone());
    write_report(&rep, &out)?;
    println!(
        "{:28} {:>5} {:>8} {:>8} {:>8} {:>10}",
        "config", "seeds", "auc", "pr_auc", "logloss", "emb_params"
    );
    for r in &rep.rows {
        println!(
            "{:28} {:>5} {:>8.4} {:>8.4} {:>8.4} {:>10}",
            r.label, r.seeds, r.auc, r.pr_auc, r.logloss, r.inference_embedding_params
        );
    }
    for s in &rep.slice_deltas {
        println!(
            "{} vs {}: PR-AUC frequent {:+.2}%, rare {:+.2}%",
            s.label,
            s.baseline,
            100.0 * s.frequent_rel,
            100.0 * s.rare_rel
        );
    }
    for m in &rep.memory_reduction {
        match (&m.matched, m.factor) {
            (Some(label), Some(f)) => println!("{} matched by {label}: {f}x smaller d", m.baseline),
            _ => println!("{}: no factorized run reaches its AUC", m.baseline),
        }
    }
    println!("wrote {}", out.join("report.csv").display());
    Ok(ExitCode::SUCCESS)
}
