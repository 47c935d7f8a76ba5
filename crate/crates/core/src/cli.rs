//! Command-line front end: fit, transform, eval, ablate, upproject.

use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::autoenc::{AeConfig, LossKind};
use crate::baseline::up_project;
use crate::embedding::{EmbeddingView, EnsembleBatch};
use crate::error::{MetaError, Result};
use crate::eval::{evaluate, EvalReport, StsDataset};
use crate::fusion::{FitOptions, FusionModel, Method};
use crate::io::{load_model, read_embeddings, read_sts, save_model, write_embeddings, Dtype};

#[derive(Debug, Parser)]
#[command(name = "metaemb", version, about = "Fuse sentence embeddings from several encoders and score them on STS data")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a combiner on training views and write a model file.
    Fit(FitArgs),
    /// Apply a model (or a stateless conc/avg method) to views.
    Transform(TransformArgs),
    /// Score an embedding file against an STS file.
    Eval(EvalArgs),
    /// Leave-one-encoder-out ablation grid.
    Ablate(AblateArgs),
    /// Random up-projection baseline, one output file per seed.
    Upproject(UpprojectArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Conc,
    Avg,
    Svd,
    Gcca,
    Ae,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Conc => Method::Conc,
            MethodArg::Avg => Method::Avg,
            MethodArg::Svd => Method::Svd,
            MethodArg::Gcca => Method::Gcca,
            MethodArg::Ae => Method::Ae,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LossArg {
    Mse,
    Mae,
    Kld,
    Cossq,
}

impl From<LossArg> for LossKind {
    fn from(l: LossArg) -> Self {
        match l {
            LossArg::Mse => LossKind::Mse,
            LossArg::Mae => LossKind::Mae,
            LossArg::Kld => LossKind::Kld,
            LossArg::Cossq => LossKind::CosSq,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DtypeArg {
    F32,
    F64,
}

impl From<DtypeArg> for Dtype {
    fn from(d: DtypeArg) -> Self {
        match d {
            DtypeArg::F32 => Dtype::F32,
            DtypeArg::F64 => Dtype::F64,
        }
    }
}

/// Hyperparameters. Unset flags take the defaults (d=1024, tau=10,
/// loss=kld, hidden=1, epochs=500, batch-size=10000, lr=0.001,
/// beta1=0.9, beta2=0.999, seed=0).
#[derive(Debug, Clone, Default, Args)]
pub struct HyperArgs {
    /// Target dimension (svd, gcca, ae).
    #[arg(long)]
    pub d: Option<usize>,
    /// GCCA regularization strength.
    #[arg(long)]
    pub tau: Option<f64>,
    /// Autoencoder reconstruction loss.
    #[arg(long, value_enum)]
    pub loss: Option<LossArg>,
    /// Autoencoder hidden layers (0, 1 or 2).
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long = "batch-size")]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub beta1: Option<f64>,
    #[arg(long)]
    pub beta2: Option<f64>,
    /// Autoencoder initialization / shuffling seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

impl HyperArgs {
    /// Flags that were set but mean nothing for `method`.
    fn foreign_flags(&self, method: Method) -> Vec<&'static str> {
        let mut bad = Vec::new();
        let uses_d = matches!(method, Method::Svd | Method::Gcca | Method::Ae);
        if self.d.is_some() && !uses_d {
            bad.push("--d");
        }
        if self.tau.is_some() && method != Method::Gcca {
            bad.push("--tau");
        }
        if method != Method::Ae {
            let ae_flags = [
                ("--loss", self.loss.is_some()),
                ("--hidden", self.hidden.is_some()),
                ("--epochs", self.epochs.is_some()),
                ("--batch-size", self.batch_size.is_some()),
                ("--lr", self.lr.is_some()),
                ("--beta1", self.beta1.is_some()),
                ("--beta2", self.beta2.is_some()),
                ("--seed", self.seed.is_some()),
            ];
            bad.extend(ae_flags.iter().filter(|(_, set)| *set).map(|(f, _)| *f));
        }
        bad
    }

    pub fn to_options(&self) -> FitOptions {
        let defaults = FitOptions::default();
        let ae_default = AeConfig::default();
        let d = self.d.unwrap_or(defaults.d);
        FitOptions {
            d,
            tau: self.tau.unwrap_or(defaults.tau),
            ae: AeConfig {
                d,
                loss: self.loss.map(Into::into).unwrap_or(ae_default.loss),
                hidden_count: self.hidden.unwrap_or(ae_default.hidden_count),
                epochs: self.epochs.unwrap_or(ae_default.epochs),
                batch_size: self.batch_size.unwrap_or(ae_default.batch_size),
                lr: self.lr.unwrap_or(ae_default.lr),
                beta1: self.beta1.unwrap_or(ae_default.beta1),
                beta2: self.beta2.unwrap_or(ae_default.beta2),
                eps: ae_default.eps,
                seed: self.seed.unwrap_or(ae_default.seed),
            },
        }
    }
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long, value_enum)]
    pub method: MethodArg,
    /// Training embedding files, in ensemble order (repeatable).
    #[arg(long, num_args = 1.., required = true)]
    pub views: Vec<PathBuf>,
    #[command(flatten)]
    pub hyper: HyperArgs,
    /// Model file to write.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TransformArgs {
    /// Fitted model file.
    #[arg(long, conflicts_with = "method", required_unless_present = "method")]
    pub model: Option<PathBuf>,
    /// Stateless method (conc or avg) to use without a model file.
    #[arg(long, value_enum)]
    pub method: Option<MethodArg>,
    #[arg(long, num_args = 1.., required = true)]
    pub views: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "f64")]
    pub dtype: DtypeArg,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Embedding file of the unique sentences the STS file indexes into.
    #[arg(long)]
    pub embeddings: PathBuf,
    #[arg(long)]
    pub sts: PathBuf,
    /// Also write the report as JSON.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AggregateArg {
    Mean,
    Pooled,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    /// Training embedding files, in ensemble order.
    #[arg(long, num_args = 1.., required = true)]
    pub views: Vec<PathBuf>,
    /// Embedding files for the STS sentences, same encoder order. Defaults
    /// to the training views.
    #[arg(long = "eval-views", num_args = 1..)]
    pub eval_views: Vec<PathBuf>,
    #[arg(long)]
    pub sts: PathBuf,
    /// Methods to ablate (default: all five).
    #[arg(long, value_enum, value_delimiter = ',')]
    pub methods: Vec<MethodArg>,
    #[arg(long, value_enum, default_value = "mean")]
    pub aggregate: AggregateArg,
    #[command(flatten)]
    pub hyper: HyperArgs,
    /// Also write the grid as JSON.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct UpprojectArgs {
    #[arg(long)]
    pub view: PathBuf,
    #[arg(long, default_value_t = 1024)]
    pub d: usize,
    #[arg(long, value_delimiter = ',', default_values_t = [0u64, 1, 2, 3, 4, 5, 6, 7, 8, 9])]
    pub seeds: Vec<u64>,
    /// Output files are `<prefix>.seed<N>.emb`.
    #[arg(long = "out-prefix")]
    pub out_prefix: PathBuf,
    #[arg(long, value_enum, default_value = "f64")]
    pub dtype: DtypeArg,
    /// Optionally score every projection and print the seed average.
    #[arg(long)]
    pub sts: Option<PathBuf>,
}

/// Validated `fit` request.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub method: Method,
    pub view_paths: Vec<PathBuf>,
    pub options: FitOptions,
}

impl RunConfig {
    pub fn new(method: Method, view_paths: Vec<PathBuf>, hyper: &HyperArgs) -> Result<Self> {
        let foreign = hyper.foreign_flags(method);
        if !foreign.is_empty() {
            return Err(MetaError::invalid(format!(
                "{} not applicable to method {method}",
                foreign.join(", ")
            )));
        }
        if view_paths.is_empty() {
            return Err(MetaError::invalid("at least one --views file is required"));
        }
        if method == Method::Gcca && view_paths.len() < 2 {
            return Err(MetaError::invalid("gcca needs at least two --views files"));
        }
        Ok(Self {
            method,
            view_paths,
            options: hyper.to_options(),
        })
    }
}

pub fn load_batch(paths: &[PathBuf]) -> Result<EnsembleBatch> {
    let views = paths
        .iter()
        .map(read_embeddings)
        .collect::<Result<Vec<EmbeddingView>>>()?;
    EnsembleBatch::new(views)
}

pub fn run(cli: Cli) -> Result<()> {
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    run_with(cli, &mut out)
}

pub fn run_with(cli: Cli, out: &mut dyn Write) -> Result<()> {
    match cli.command {
        Command::Fit(a) => cmd_fit(&a, out),
        Command::Transform(a) => cmd_transform(&a, out),
        Command::Eval(a) => cmd_eval(&a, out),
        Command::Ablate(a) => cmd_ablate(&a, out),
        Command::Upproject(a) => cmd_upproject(&a, out),
    }
}

pub fn cmd_fit(args: &FitArgs, out: &mut dyn Write) -> Result<()> {
    let config = RunConfig::new(args.method.into(), args.views.clone(), &args.hyper)?;
    let batch = load_batch(&config.view_paths)?;
    let model = FusionModel::fit(config.method, &batch, &config.options)?;
    save_model(&model, &args.out)?;
    writeln!(out, "fitted on {} sentences x {} views", batch.n_sentences(), batch.n_views())?;
    writeln!(out, "{}", model.summary())?;
    writeln!(out, "model written to {}", args.out.display())?;
    Ok(())
}

pub fn cmd_transform(args: &TransformArgs, out: &mut dyn Write) -> Result<()> {
    let batch = load_batch(&args.views)?;
    let model = match (&args.model, args.method) {
        (Some(path), None) => load_model(path)?,
        (None, Some(m)) => {
            let method: Method = m.into();
            if !matches!(method, Method::Conc | Method::Avg) {
                return Err(MetaError::invalid(format!(
                    "method {method} needs a fitted --model file"
                )));
            }
            FusionModel::fit(method, &batch, &FitOptions::default())?
        }
        _ => return Err(MetaError::invalid("pass exactly one of --model or --method")),
    };
    let emb = model.apply(&batch)?;
    write_embeddings(&emb, &args.out, args.dtype.into())?;
    writeln!(
        out,
        "{} rows x {} dims written to {}",
        emb.n_rows(),
        emb.dim(),
        args.out.display()
    )?;
    Ok(())
}

pub fn cmd_eval(args: &EvalArgs, out: &mut dyn Write) -> Result<()> {
    let emb = read_embeddings(&args.embeddings)?;
    let ds = read_sts(&args.sts)?;
    let report = evaluate(&emb, &ds)?;
    write!(out, "{}", report.to_table())?;
    if let Some(path) = &args.report {
        write_report(path, &report.to_json())?;
    }
    Ok(())
}

fn write_report(path: &Path, text: &str) -> Result<()> {
    let mut text = text.to_string();
    if !text.ends_with('\n') {
        text.push('\n');
    }
    std::fs::write(path, text)?;
    Ok(())
}

/// One ablation cell: scores, or the error kind and message.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationCell {
    pub pearson: Option<f64>,
    pub spearman: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRow {
    pub method: String,
    pub cells: Vec<AblationCell>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationGrid {
    pub aggregate: String,
    pub columns: Vec<String>,
    pub rows: Vec<AblationRow>,
}

impl AblationGrid {
    pub fn to_table(&self) -> String {
        let cell_text = |c: &AblationCell| match (c.pearson, c.spearman, &c.error) {
            (Some(p), Some(s), _) => format!("{:.1}/{:.1}", p * 100.0, s * 100.0),
            (_, _, Some(e)) => format!("ERR({})", e.split(':').next().unwrap_or(e)),
            _ => "-".into(),
        };
        let mut grid: Vec<Vec<String>> = vec![std::iter::once("method".to_string())
            .chain(self.columns.iter().cloned())
            .collect()];
        for row in &self.rows {
            grid.push(
                std::iter::once(format!("meta:{}", row.method))
                    .chain(row.cells.iter().map(cell_text))
                    .collect(),
            );
        }
        let widths: Vec<usize> = (0..grid[0].len())
            .map(|c| grid.iter().map(|r| r[c].chars().count()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for (i, r) in grid.iter().enumerate() {
            let line: Vec<String> = r
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(c, (s, w))| {
                    if c == 0 {
                        format!("{s:<w$}")
                    } else {
                        format!("{s:>w$}")
                    }
                })
                .collect();
            let _ = writeln!(out, "{}", line.join("  "));
            if i == 0 {
                let _ = writeln!(out, "{}", "-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1)));
            }
        }
        out
    }
}

fn score_cell(
    method: Method,
    train: &EnsembleBatch,
    eval_batch: &EnsembleBatch,
    ds: &StsDataset,
    options: &FitOptions,
    aggregate: AggregateArg,
) -> AblationCell {
    let result = FusionModel::fit(method, train, options)
        .and_then(|m| m.apply(eval_batch))
        .and_then(|emb| evaluate(&emb, ds));
    match result {
        Ok(report) => {
            let row = match aggregate {
                AggregateArg::Mean => report.aggregate_mean,
                AggregateArg::Pooled => report.aggregate_pooled,
            };
            AblationCell {
                pearson: Some(row.pearson),
                spearman: Some(row.spearman),
                error: None,
            }
        }
        Err(e) => AblationCell {
            pearson: None,
            spearman: None,
            error: Some(format!("{}: {e}", e.kind())),
        },
    }
}

/// Refits every method from scratch on the full ensemble and on each
/// leave-one-out ensemble.
pub fn ablation_grid(
    train: &EnsembleBatch,
    eval_batch: &EnsembleBatch,
    ds: &StsDataset,
    methods: &[Method],
    options: &FitOptions,
    aggregate: AggregateArg,
) -> Result<AblationGrid> {
    if train.dims() != eval_batch.dims() {
        return Err(MetaError::invalid(format!(
            "training view dims {:?} differ from evaluation view dims {:?}",
            train.dims(),
            eval_batch.dims()
        )));
    }
    let mut columns = vec!["full ensemble".to_string()];
    columns.extend(
        train
            .views()
            .iter()
            .map(|v| format!("without {}", v.encoder_id())),
    );
    let mut rows = Vec::new();
    for &method in methods {
        let mut cells = vec![score_cell(method, train, eval_batch, ds, options, aggregate)];
        for j in 0..train.n_views() {
            let cell = match (train.without(j), eval_batch.without(j)) {
                (Ok(t), Ok(e)) => score_cell(method, &t, &e, ds, options, aggregate),
                (Err(e), _) | (_, Err(e)) => AblationCell {
                    pearson: None,
                    spearman: None,
                    error: Some(format!("{}: {e}", e.kind())),
                },
            };
            cells.push(cell);
        }
        rows.push(AblationRow {
            method: method.name().to_string(),
            cells,
        });
    }
    Ok(AblationGrid {
        aggregate: match aggregate {
            AggregateArg::Mean => "mean".into(),
            AggregateArg::Pooled => "pooled".into(),
        },
        columns,
        rows,
    })
}

pub fn cmd_ablate(args: &AblateArgs, out: &mut dyn Write) -> Result<()> {
    let train = load_batch(&args.views)?;
    let eval_batch = if args.eval_views.is_empty() {
        train.clone()
    } else {
        load_batch(&args.eval_views)?
    };
    let ds = read_sts(&args.sts)?;
    let methods: Vec<Method> = if args.methods.is_empty() {
        Method::ALL.to_vec()
    } else {
        args.methods.iter().map(|&m| m.into()).collect()
    };
    let grid = ablation_grid(
        &train,
        &eval_batch,
        &ds,
        &methods,
        &args.hyper.to_options(),
        args.aggregate,
    )?;
    writeln!(out, "aggregate: {} (pearson/spearman x100)", grid.aggregate)?;
    write!(out, "{}", grid.to_table())?;
    if let Some(path) = &args.report {
        write_report(path, &serde_json::to_string_pretty(&grid).expect("grid serializes"))?;
    }
    Ok(())
}

pub fn upproject_path(prefix: &Path, seed: u64) -> PathBuf {
    let mut name = prefix.as_os_str().to_owned();
    name.push(format!(".seed{seed}.emb"));
    PathBuf::from(name)
}

pub fn cmd_upproject(args: &UpprojectArgs, out: &mut dyn Write) -> Result<()> {
    if args.d == 0 {
        return Err(MetaError::invalid("--d must be positive"));
    }
    if args.seeds.is_empty() {
        return Err(MetaError::invalid("at least one seed is required"));
    }
    let view = read_embeddings(&args.view)?;
    let ds = args.sts.as_ref().map(read_sts).transpose()?;
    let mut reports: Vec<EvalReport> = Vec::new();
    for &seed in &args.seeds {
        let projected = up_project(&view, args.d, seed)?;
        let path = upproject_path(&args.out_prefix, seed);
        write_embeddings(&projected, &path, args.dtype.into())?;
        write!(out, "seed {seed}: {}", path.display())?;
        if let Some(ds) = &ds {
            let report = evaluate(&projected, ds)?;
            write!(
                out,
                "  mean {:.2}/{:.2}  pooled {:.2}/{:.2}",
                report.aggregate_mean.pearson * 100.0,
                report.aggregate_mean.spearman * 100.0,
                report.aggregate_pooled.pearson * 100.0,
                report.aggregate_pooled.spearman * 100.0
            )?;
            reports.push(report);
        }
        writeln!(out)?;
    }
    if !reports.is_empty() {
        let k = reports.len() as f64;
        let avg = |f: fn(&EvalReport) -> f64| reports.iter().map(f).sum::<f64>() / k * 100.0;
        writeln!(
            out,
            "average over {} seeds: mean {:.2}/{:.2}  pooled {:.2}/{:.2}",
            reports.len(),
            avg(|r| r.aggregate_mean.pearson),
            avg(|r| r.aggregate_mean.spearman),
            avg(|r| r.aggregate_pooled.pearson),
            avg(|r| r.aggregate_pooled.spearman)
        )?;
    }
    Ok(())
}
