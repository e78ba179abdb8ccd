//! Command-line front end.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data error,
//! 3 numerical failure.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::cifar::{parse_batch, serialize_batch, split_dataset, BATCH_FILES, NUM_CLASSES};
use crate::config::{RunConfig, CONFIG_ENV, TOOL_VERSION};
use crate::dictfile::{read_dictionary, write_dictionary};
use crate::error::{Error, Result};
use crate::lca::denoise;
use crate::learning::{train, training_log_csv};
use crate::metrics::{cell_observables, fraction_active, percent_err};
use crate::plot::{curves_svg, minima_svg, CURVES_SVG, MINIMA_SVG};
use crate::report::{
    analyze_records, curves_csv, exponents_txt, meta_line, minima_csv, parse_curve_rows, parse_key_values,
    parse_minima_rows, read_fit, read_table, CURVES_COLUMNS, CURVES_FILE, EXPONENTS_FILE, MINIMA_COLUMNS,
    MINIMA_FILE,
};
use crate::sweep::{read_results, run_sweep, ExperimentData, SweepOptions, SweepRecord};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "critical-sparse", version, about = "Convolutional LCA denoising and finite-size scaling sweeps")]
pub struct Cli {
    /// TOML config file; defaults are used when absent.
    #[arg(long, global = true, env = CONFIG_ENV)]
    pub config: Option<PathBuf>,
    /// Master seed; derives the noise and dictionary-initialization seeds.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Overrides `data.dir`.
    #[arg(long, global = true)]
    pub data: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse the dataset, check labels and round trips, print counts.
    IngestCheck,
    /// Train one dictionary.
    Train(TrainArgs),
    /// Denoise the test split with a trained dictionary.
    Denoise(DenoiseArgs),
    /// Run the (F, lambda) grid.
    Sweep(SweepArgs),
    /// Locate minima and fit exponents from sweep results.
    Analyze(AnalyzeArgs),
    /// Render SVG figures from the analysis CSVs.
    Plot(PlotArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Number of kernels.
    #[arg(long, short = 'F')]
    pub features: usize,
    #[arg(long)]
    pub lambda: f64,
}

#[derive(Debug, Args)]
pub struct DenoiseArgs {
    /// Dictionary file written by `train` or `sweep`.
    #[arg(long)]
    pub dict: PathBuf,
    /// Threshold; defaults to the one stored with the dictionary.
    #[arg(long)]
    pub lambda: Option<f64>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Continue an existing results file.
    #[arg(long)]
    pub resume: bool,
    /// Worker threads; overrides `sweep.workers`.
    #[arg(long)]
    pub workers: Option<usize>,
    /// Stop after this many newly computed cells.
    #[arg(long)]
    pub max_cells: Option<usize>,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// Results CSV; repeat to merge several files.
    #[arg(long, required = true)]
    pub results: Vec<PathBuf>,
    /// Accept results written under different config hashes.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    /// Directory holding curves.csv, minima.csv and exponents.txt;
    /// defaults to the output directory.
    #[arg(long)]
    pub from: Option<PathBuf>,
}

/// Parses `args` and runs the command, returning the process exit code.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match run(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.kind());
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    if e.is_numerical() {
        return EXIT_NUMERICAL;
    }
    match e {
        Error::Config(_) | Error::InvalidParam(_) => EXIT_USAGE,
        _ => EXIT_DATA,
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.override_seed(seed);
    }
    if let Some(dir) = &cli.data {
        cfg.data.dir = dir.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn create_out(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::IngestCheck => ingest_check(&load_config(cli)?),
        Command::Train(a) => cmd_train(cli, &load_config(cli)?, a),
        Command::Denoise(a) => cmd_denoise(cli, &load_config(cli)?, a),
        Command::Sweep(a) => cmd_sweep(cli, load_config(cli)?, a),
        Command::Analyze(a) => cmd_analyze(cli, &load_config(cli)?, a),
        Command::Plot(a) => cmd_plot(cli, a),
    }
}

fn ingest_check(cfg: &RunConfig) -> Result<()> {
    let dir = &cfg.data.dir;
    if !dir.is_dir() {
        return Err(Error::io(
            dir,
            std::io::Error::new(std::io::ErrorKind::NotFound, "data directory not found"),
        ));
    }
    let limit = cfg.data.record_limit();
    let mut records = Vec::new();
    let mut counts = [0usize; NUM_CLASSES as usize];
    for name in BATCH_FILES {
        if limit.is_some_and(|l| records.len() >= l) {
            break;
        }
        let path = dir.join(name);
        let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let batch = parse_batch(&bytes).map_err(|e| Error::format(&path, e.to_string()))?;
        if serialize_batch(&batch) != bytes {
            return Err(Error::format(&path, "re-serialized batch differs from file"));
        }
        for r in &batch {
            counts[r.label as usize] += 1;
        }
        println!("{name}: {} records", batch.len());
        records.extend(batch);
    }
    if let Some(l) = limit {
        records.truncate(l);
    }
    let total = records.len();
    let (train, test) = split_dataset(records, cfg.data.split_mode())?;
    println!("labels (files read): {counts:?}");
    println!("total {total}: train {} test {}", train.len(), test.len());
    Ok(())
}

fn cmd_train(cli: &Cli, cfg: &RunConfig, a: &TrainArgs) -> Result<()> {
    let data = ExperimentData::load(cfg)?;
    let channels = data.train.first().ok_or(Error::EmptyDataset)?.channels();
    let train_cfg = cfg.train.cell_config(a.features, a.lambda, channels);
    let outcome = train(&data.train, &train_cfg, &cfg.lca.params(a.lambda))?;
    let hash = cfg.config_hash();
    create_out(&cli.out)?;
    let stem = format!("F{}_lambda{}", a.features, a.lambda);
    let dict_path = cli.out.join(format!("{stem}.dict"));
    write_dictionary(&dict_path, &outcome.dictionary, a.lambda, Some(&train_cfg), &hash)?;
    let log = format!("{}\n{}", meta_line("training-log", &hash), training_log_csv(&outcome.log));
    write_file(&cli.out.join(format!("{stem}_train.csv")), log)?;
    println!("{}", dict_path.display());
    Ok(())
}

fn cmd_denoise(cli: &Cli, cfg: &RunConfig, a: &DenoiseArgs) -> Result<()> {
    let (header, dict) = read_dictionary(&a.dict)?;
    let lambda = a.lambda.unwrap_or(header.lambda);
    let params = cfg.lca.params(lambda);
    params.validate()?;
    let data = ExperimentData::load(cfg)?;
    let (h, w) = data
        .test_clean
        .first()
        .map(|i| (i.height(), i.width()))
        .ok_or(Error::EmptyDataset)?;
    let mask = dict.coverage_mask(h, w)?;
    let mut rows = Vec::with_capacity(data.test_clean.len());
    for (clean, noisy) in data.test_clean.iter().zip(&data.test_noisy) {
        let (recon, code) = denoise(noisy, &dict, &params)?;
        rows.push((percent_err(clean, &recon, &mask)?, fraction_active(&code)));
    }
    let obs = cell_observables(&rows)?;
    let hash = cfg.config_hash();
    let mut out = format!(
        "{}\n# dict_id={} lambda={lambda}\nimage,p_err,f_active\n",
        meta_line("denoise", &hash),
        header.dict_id
    );
    for (i, (p, f)) in rows.iter().enumerate() {
        let _ = writeln!(out, "{i},{p},{f}");
    }
    create_out(&cli.out)?;
    let stem = a.dict.file_stem().and_then(|s| s.to_str()).unwrap_or("dict");
    let path = cli.out.join(format!("denoise_{stem}.csv"));
    write_file(&path, out)?;
    println!(
        "p_err {:.6} +- {:.6}, f_active {:.6} +- {:.6} over {} images -> {}",
        obs.p_err,
        obs.stderr_p,
        obs.f_active,
        obs.stderr_f,
        obs.n_images,
        path.display()
    );
    Ok(())
}

fn cmd_sweep(cli: &Cli, mut cfg: RunConfig, a: &SweepArgs) -> Result<()> {
    if let Some(w) = a.workers {
        if w == 0 {
            return Err(Error::Config("--workers must be at least 1".into()));
        }
        cfg.sweep.workers = w;
    }
    crate::sweep::validate_grid(&cfg)?;
    let data = ExperimentData::load(&cfg)?;
    create_out(&cli.out)?;
    let opts = SweepOptions {
        results_path: cli.out.join(&cfg.sweep.results),
        resume: a.resume,
        workers: cfg.sweep.workers,
        dictionary_dir: cfg.sweep.save_dictionaries.then(|| cli.out.join("dictionaries")),
        max_new_cells: a.max_cells,
    };
    let outcome = run_sweep(&cfg, &data, &opts)?;
    println!(
        "{}: {} cells computed, {} skipped, {} recorded",
        opts.results_path.display(),
        outcome.computed,
        outcome.skipped,
        outcome.records.len()
    );
    Ok(())
}

fn cmd_analyze(cli: &Cli, cfg: &RunConfig, a: &AnalyzeArgs) -> Result<()> {
    let mut hashes: Vec<String> = Vec::new();
    let mut records: Vec<SweepRecord> = Vec::new();
    for path in &a.results {
        let file = read_results(path)?;
        if let Some(first) = hashes.first() {
            if *first != file.config_hash && !a.force {
                return Err(Error::format(
                    path,
                    format!(
                        "config hash {} differs from {first}; pass --force to merge",
                        file.config_hash
                    ),
                ));
            }
        }
        if !hashes.contains(&file.config_hash) {
            hashes.push(file.config_hash.clone());
        }
        records.extend(file.latest());
    }
    let hash = hashes.join("+");
    let analysis = analyze_records(&records, &cfg.analyze)?;
    create_out(&cli.out)?;
    write_file(&cli.out.join(CURVES_FILE), curves_csv(&analysis.curves, &hash))?;
    write_file(&cli.out.join(MINIMA_FILE), minima_csv(&analysis.minima, &hash))?;
    let exponents = analysis.exponents?;
    write_file(
        &cli.out.join(EXPONENTS_FILE),
        exponents_txt(&exponents, &cfg.analyze, &hash),
    )?;
    println!(
        "nu_bar = {:.4} +- {:.4}, gamma_bar = {:.4} +- {:.4}",
        exponents.nu_bar, exponents.nu_stderr, exponents.gamma_bar, exponents.gamma_stderr
    );
    for w in &exponents.warnings {
        log::warn!("{w}");
    }
    Ok(())
}

fn cmd_plot(cli: &Cli, a: &PlotArgs) -> Result<()> {
    let from = a.from.as_deref().unwrap_or(&cli.out);
    let curves_path = from.join(CURVES_FILE);
    let (curves_hash, rows) = read_table(&curves_path, CURVES_COLUMNS)?;
    let curves = parse_curve_rows(&curves_path, &rows)?;
    let minima_path = from.join(MINIMA_FILE);
    let (minima_hash, rows) = read_table(&minima_path, MINIMA_COLUMNS)?;
    let minima = parse_minima_rows(&minima_path, &rows)?;
    let exp_path = from.join(EXPONENTS_FILE);
    let (location, height) = match std::fs::read_to_string(&exp_path) {
        Ok(text) => {
            let (_, map) = parse_key_values(&text);
            (read_fit(&map, "location"), read_fit(&map, "height"))
        }
        Err(_) => {
            log::warn!("{} not readable; plotting minima without fits", exp_path.display());
            (None, None)
        }
    };
    create_out(&cli.out)?;
    let unknown = || "unknown".to_string();
    write_file(
        &cli.out.join(CURVES_SVG),
        curves_svg(&curves, &curves_hash.unwrap_or_else(unknown)),
    )?;
    write_file(
        &cli.out.join(MINIMA_SVG),
        minima_svg(
            &minima,
            location.as_ref(),
            height.as_ref(),
            &minima_hash.unwrap_or_else(unknown),
        ),
    )?;
    println!("wrote {} and {} ({TOOL_VERSION})", CURVES_SVG, MINIMA_SVG);
    Ok(())
}
