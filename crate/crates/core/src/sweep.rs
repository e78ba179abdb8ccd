//! Experiment grid over dictionary size `F` and threshold `lambda`.
//!
//! Every `(F, lambda)` cell trains its own dictionary on the clean training
//! images, denoises the noisy test set with the same `lambda`, and records
//! the mean percent error and fraction active. Records are appended to a
//! CSV results file in canonical grid order as soon as every earlier cell
//! is done, so the file is identical for any worker count and a killed
//! sweep resumes where the file ends.

use std::collections::{BTreeMap, HashSet};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::mpsc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cifar::{add_noise, load_records, split_dataset, to_image, NoiseSpec};
use crate::config::{RunConfig, TOOL_VERSION};
use crate::conv::Dictionary;
use crate::dictfile::{dict_id, write_dictionary};
use crate::error::{Error, Result};
use crate::image::{CoverageMask, Image};
use crate::lca::denoise;
use crate::learning::train;
use crate::metrics::{cell_observables, fraction_active, percent_err, CellObservables};

pub const SCHEMA_VERSION: u32 = 1;
pub const RESULTS_COLUMNS: &str = "F,lambda,f_active,p_err,stderr_p,n_images,dict_id,seed,status";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellStatus {
    Done,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub features: usize,
    pub lambda: f64,
    pub f_active: f64,
    pub p_err: f64,
    pub stderr_p: f64,
    pub n_images: usize,
    pub dict_id: String,
    pub seed: u64,
    pub status: CellStatus,
    /// Not persisted.
    #[serde(skip)]
    pub failure: Option<String>,
}

impl SweepRecord {
    pub fn is_done(&self) -> bool {
        self.status == CellStatus::Done
    }

    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.features,
            self.lambda,
            self.f_active,
            self.p_err,
            self.stderr_p,
            self.n_images,
            self.dict_id,
            self.seed,
            match self.status {
                CellStatus::Done => "done",
                CellStatus::Failed => "failed",
            }
        )
    }

    pub fn parse_csv_line(line: &str) -> std::result::Result<Self, String> {
        let cols: Vec<&str> = line.trim_end().split(',').collect();
        if cols.len() != 9 {
            return Err(format!("expected 9 columns, got {}", cols.len()));
        }
        let float = |s: &str| s.parse::<f64>().map_err(|e| format!("{s:?}: {e}"));
        let int = |s: &str| s.parse::<u64>().map_err(|e| format!("{s:?}: {e}"));
        Ok(Self {
            features: int(cols[0])? as usize,
            lambda: float(cols[1])?,
            f_active: float(cols[2])?,
            p_err: float(cols[3])?,
            stderr_p: float(cols[4])?,
            n_images: int(cols[5])? as usize,
            dict_id: cols[6].to_string(),
            seed: int(cols[7])?,
            status: match cols[8] {
                "done" => CellStatus::Done,
                "failed" => CellStatus::Failed,
                other => return Err(format!("unknown status {other:?}")),
            },
            failure: None,
        })
    }
}

/// Clean training images plus clean and noisy test images.
#[derive(Debug, Clone)]
pub struct ExperimentData {
    pub train: Vec<Image>,
    pub test_clean: Vec<Image>,
    pub test_noisy: Vec<Image>,
    /// Test images dropped because they carry no signal over the mask.
    pub dropped_test: usize,
}

impl ExperimentData {
    /// Noises the test set with per-image streams and drops test images
    /// whose clean energy over `mask` is zero (their percent error is
    /// undefined). Indices into the noise streams are positions in the
    /// original test order.
    pub fn new(train: Vec<Image>, test: Vec<Image>, noise: &NoiseSpec, mask: &CoverageMask) -> Result<Self> {
        let mut test_clean = Vec::with_capacity(test.len());
        let mut test_noisy = Vec::with_capacity(test.len());
        let mut dropped_test = 0;
        let noisy: Vec<Image> = test
            .par_iter()
            .enumerate()
            .map(|(i, img)| add_noise(img, noise, i as u64))
            .collect();
        for (clean, noisy) in test.into_iter().zip(noisy) {
            mask.check_image(&clean)?;
            let energy: f64 = clean
                .data
                .indexed_iter()
                .filter(|((_, r, c), _)| mask.is_covered(*r, *c))
                .map(|(_, v)| v * v)
                .sum();
            if energy == 0.0 {
                dropped_test += 1;
                continue;
            }
            test_clean.push(clean);
            test_noisy.push(noisy);
        }
        if dropped_test > 0 {
            log::warn!("dropped {dropped_test} test images with zero signal");
        }
        Ok(Self {
            train,
            test_clean,
            test_noisy,
            dropped_test,
        })
    }

    /// Loads CIFAR-10 batches from `cfg.data.dir` per the config.
    pub fn load(cfg: &RunConfig) -> Result<Self> {
        let records = load_records(&cfg.data.dir, cfg.data.record_limit())?;
        let (train_recs, test_recs) = split_dataset(records, cfg.data.split_mode())?;
        let mode = cfg.preprocess.mode;
        let train: Vec<Image> = train_recs.iter().map(|r| to_image(r, mode)).collect();
        let test: Vec<Image> = test_recs.iter().map(|r| to_image(r, mode)).collect();
        let mask = coverage_mask_for(cfg, &test)?;
        Self::new(train, test, &cfg.noise_spec()?, &mask)
    }
}

fn coverage_mask_for(cfg: &RunConfig, images: &[Image]) -> Result<CoverageMask> {
    let (h, w) = images
        .first()
        .map(|i| (i.height(), i.width()))
        .ok_or(Error::EmptyDataset)?;
    geometry_mask(cfg, h, w)
}

/// Coverage mask of the configured patch and stride; it does not depend on `F`.
pub fn geometry_mask(cfg: &RunConfig, height: usize, width: usize) -> Result<CoverageMask> {
    let probe = Dictionary::normalized(
        ndarray::Array2::ones((1, cfg.train.patch * cfg.train.patch)),
        1,
        cfg.train.patch,
        cfg.train.stride,
    )?;
    probe.coverage_mask(height, width)
}

#[derive(Debug, Clone)]
pub struct CellOutput {
    pub record: SweepRecord,
    pub dictionary: Option<Dictionary>,
    pub observables: Option<CellObservables>,
}

/// Trains at `(F, lambda)` and denoises the test set with the same threshold.
/// Numerical failures mark the record failed instead of returning an error.
pub fn run_cell(features: usize, lambda: f64, cfg: &RunConfig, data: &ExperimentData) -> Result<CellOutput> {
    let started = Instant::now();
    let channels = data.train.first().ok_or(Error::EmptyDataset)?.channels();
    let train_cfg = cfg.train.cell_config(features, lambda, channels);
    let params = cfg.lca.params(lambda);
    let failed = |reason: String| {
        log::warn!("cell F={features} lambda={lambda} failed: {reason}");
        CellOutput {
            record: SweepRecord {
                features,
                lambda,
                f_active: f64::NAN,
                p_err: f64::NAN,
                stderr_p: f64::NAN,
                n_images: 0,
                dict_id: "-".into(),
                seed: cfg.noise.seed,
                status: CellStatus::Failed,
                failure: Some(reason),
            },
            dictionary: None,
            observables: None,
        }
    };

    let dict = match train(&data.train, &train_cfg, &params) {
        Ok(out) => out.dictionary,
        Err(e) if e.is_numerical() => return Ok(failed(e.to_string())),
        Err(e) => return Err(e),
    };
    let (h, w) = data
        .test_clean
        .first()
        .map(|i| (i.height(), i.width()))
        .ok_or(Error::EmptyDataset)?;
    let mask = dict.coverage_mask(h, w)?;
    let per_image: Result<Vec<(f64, f64)>> = data
        .test_clean
        .par_iter()
        .zip(data.test_noisy.par_iter())
        .map(|(clean, noisy)| {
            let (recon, code) = denoise(noisy, &dict, &params)?;
            Ok((percent_err(clean, &recon, &mask)?, fraction_active(&code)))
        })
        .collect();
    let per_image = match per_image {
        Ok(v) => v,
        Err(e) if e.is_numerical() => return Ok(failed(e.to_string())),
        Err(e) => return Err(e),
    };
    let obs = cell_observables(&per_image)?;
    log::info!(
        "cell F={features} lambda={lambda}: p_err={:.5} f_active={:.5} ({:.1}s)",
        obs.p_err,
        obs.f_active,
        started.elapsed().as_secs_f64()
    );
    Ok(CellOutput {
        record: SweepRecord {
            features,
            lambda,
            f_active: obs.f_active,
            p_err: obs.p_err,
            stderr_p: obs.stderr_p,
            n_images: obs.n_images,
            dict_id: dict_id(&dict),
            seed: cfg.noise.seed,
            status: CellStatus::Done,
            failure: None,
        },
        dictionary: Some(dict),
        observables: Some(obs),
    })
}

/// Grid in canonical order: sizes outer, thresholds inner.
pub fn grid(cfg: &RunConfig) -> Vec<(usize, f64)> {
    let lambdas = cfg.sweep.lambda_grid();
    cfg.sweep
        .sizes
        .iter()
        .flat_map(|&f| lambdas.iter().map(move |&l| (f, l)))
        .collect()
}

pub fn validate_grid(cfg: &RunConfig) -> Result<()> {
    let sizes = &cfg.sweep.sizes;
    let lambdas = cfg.sweep.lambda_grid();
    if sizes.len() < 3 {
        return Err(Error::Config(format!("sweep needs >= 3 sizes, got {}", sizes.len())));
    }
    if lambdas.len() < 4 {
        return Err(Error::Config(format!("sweep needs >= 4 lambdas, got {}", lambdas.len())));
    }
    if sizes.contains(&0) || sizes.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config("sweep.sizes must be positive and strictly ascending".into()));
    }
    if lambdas.iter().any(|&l| !(l > 0.0 && l.is_finite())) || lambdas.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config("lambdas must be positive and strictly ascending".into()));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultsFile {
    pub config_hash: String,
    pub tool_version: String,
    pub records: Vec<SweepRecord>,
}

impl ResultsFile {
    /// Replays the append-only log: the last record of each cell wins.
    pub fn latest(&self) -> Vec<SweepRecord> {
        let mut index: BTreeMap<(usize, u64, u64), usize> = BTreeMap::new();
        let mut out: Vec<SweepRecord> = Vec::new();
        for r in &self.records {
            let key = (r.features, r.lambda.to_bits(), r.seed);
            match index.get(&key) {
                Some(&i) => out[i] = r.clone(),
                None => {
                    index.insert(key, out.len());
                    out.push(r.clone());
                }
            }
        }
        out
    }
}

pub fn results_header(config_hash: &str) -> String {
    format!(
        "# critical-sparse results schema={SCHEMA_VERSION} config_hash={config_hash} tool_version={}\n{RESULTS_COLUMNS}\n",
        TOOL_VERSION.replace(' ', "/")
    )
}

/// Value of `key=` in a `# ...` metadata line.
pub fn header_field<'a>(line: &'a str, key: &str) -> Option<&'a str> {
    line.trim_start_matches('#')
        .split_whitespace()
        .find_map(|kv| kv.strip_prefix(key).and_then(|v| v.strip_prefix('=')))
}

pub fn read_results(path: &Path) -> Result<ResultsFile> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines();
    let meta = lines
        .next()
        .transpose()
        .map_err(|e| Error::io(path, e))?
        .ok_or_else(|| Error::format(path, "empty results file"))?;
    let config_hash = header_field(&meta, "config_hash")
        .ok_or_else(|| Error::format(path, "missing config_hash header"))?
        .to_string();
    match header_field(&meta, "schema") {
        Some(v) if v == SCHEMA_VERSION.to_string() => {}
        other => {
            return Err(Error::format(path, format!("unsupported schema {other:?}")));
        }
    }
    let tool_version = header_field(&meta, "tool_version").unwrap_or("").replace('/', " ");
    let columns = lines
        .next()
        .transpose()
        .map_err(|e| Error::io(path, e))?
        .ok_or_else(|| Error::format(path, "missing column header"))?;
    if columns.trim_end() != RESULTS_COLUMNS {
        return Err(Error::format(path, format!("unexpected columns {columns:?}")));
    }
    let mut records = Vec::new();
    for (n, line) in lines.enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        records.push(
            SweepRecord::parse_csv_line(&line)
                .map_err(|m| Error::format(path, format!("line {}: {m}", n + 3)))?,
        );
    }
    Ok(ResultsFile {
        config_hash,
        tool_version,
        records,
    })
}

#[derive(Debug, Clone)]
pub struct SweepOptions {
    pub results_path: PathBuf,
    pub resume: bool,
    pub workers: usize,
    /// Where per-cell dictionaries go, if anywhere.
    pub dictionary_dir: Option<PathBuf>,
    /// Stop after this many newly computed cells (for interruption tests).
    pub max_new_cells: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct SweepOutcome {
    /// Latest record of every grid cell present in the file, in grid order.
    pub records: Vec<SweepRecord>,
    pub computed: usize,
    pub skipped: usize,
}

pub fn run_sweep(cfg: &RunConfig, data: &ExperimentData, opts: &SweepOptions) -> Result<SweepOutcome> {
    validate_grid(cfg)?;
    let hash = cfg.config_hash();
    let path = &opts.results_path;
    let mut done: HashSet<(usize, u64, u64)> = HashSet::new();
    if path.exists() {
        if !opts.resume {
            return Err(Error::Config(format!(
                "{} already exists; pass --resume to continue it",
                path.display()
            )));
        }
        let existing = read_results(path)?;
        if existing.config_hash != hash {
            return Err(Error::Config(format!(
                "{} was written under config hash {}, current config hashes to {hash}",
                path.display(),
                existing.config_hash
            )));
        }
        done.extend(
            existing
                .latest()
                .iter()
                .filter(|r| r.is_done())
                .map(|r| (r.features, r.lambda.to_bits(), r.seed)),
        );
    } else {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        std::fs::write(path, results_header(&hash)).map_err(|e| Error::io(path, e))?;
    }
    if let Some(dir) = &opts.dictionary_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }

    let seed = cfg.noise.seed;
    let all = grid(cfg);
    let mut pending: Vec<(usize, f64)> = all
        .iter()
        .copied()
        .filter(|&(f, l)| !done.contains(&(f, l.to_bits(), seed)))
        .collect();
    let skipped = all.len() - pending.len();
    if let Some(max) = opts.max_new_cells {
        pending.truncate(max);
    }
    log::info!("sweep: {} cells, {skipped} already done, {} to run", all.len(), pending.len());

    let mut out = OpenOptions::new()
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.workers.max(1))
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;

    let (tx, rx) = mpsc::channel::<(usize, Result<CellOutput>)>();
    let mut computed = 0;
    let mut first_error: Option<Error> = None;
    std::thread::scope(|scope| {
        let pending = &pending;
        scope.spawn(move || {
            pool.scope_fifo(|s| {
                for (i, &(f, l)) in pending.iter().enumerate() {
                    let tx = tx.clone();
                    s.spawn_fifo(move |_| {
                        let _ = tx.send((i, run_cell(f, l, cfg, data)));
                    });
                }
            });
        });

        // single writer: emit records in grid order as the prefix completes
        let mut parked: BTreeMap<usize, Result<CellOutput>> = BTreeMap::new();
        let mut next = 0;
        for (i, result) in rx.iter() {
            parked.insert(i, result);
            while let Some(result) = parked.remove(&next) {
                next += 1;
                if first_error.is_some() {
                    continue;
                }
                let written = result.and_then(|cell| {
                    if let (Some(dir), Some(dict)) = (&opts.dictionary_dir, &cell.dictionary) {
                        let name = format!("F{}_lambda{}.dict", cell.record.features, cell.record.lambda);
                        let train_cfg = cfg.train.cell_config(
                            cell.record.features,
                            cell.record.lambda,
                            dict.channels(),
                        );
                        write_dictionary(&dir.join(name), dict, cell.record.lambda, Some(&train_cfg), &hash)?;
                    }
                    writeln!(out, "{}", cell.record.csv_line())
                        .and_then(|_| out.flush())
                        .map_err(|e| Error::io(path, e))
                });
                match written {
                    Ok(()) => computed += 1,
                    Err(e) => first_error = Some(e),
                }
            }
        }
    });
    if let Some(e) = first_error {
        return Err(e);
    }

    let file = read_results(path)?;
    let latest = file.latest();
    let by_key: BTreeMap<(usize, u64), &SweepRecord> = latest
        .iter()
        .filter(|r| r.seed == seed)
        .map(|r| ((r.features, r.lambda.to_bits()), r))
        .collect();
    let records = all
        .iter()
        .filter_map(|&(f, l)| by_key.get(&(f, l.to_bits())).map(|r| (*r).clone()))
        .collect();
    Ok(SweepOutcome {
        records,
        computed,
        skipped,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CurvePoint {
    pub lambda: f64,
    pub f_active: f64,
    pub p_err: f64,
    pub stderr_p: f64,
}

/// One curve per size, sorted by `f_active` (ties by `lambda`); failed
/// cells are left out.
pub fn curves_by_size(records: &[SweepRecord]) -> BTreeMap<usize, Vec<CurvePoint>> {
    let mut curves: BTreeMap<usize, Vec<CurvePoint>> = BTreeMap::new();
    for r in records.iter().filter(|r| r.is_done()) {
        curves.entry(r.features).or_default().push(CurvePoint {
            lambda: r.lambda,
            f_active: r.f_active,
            p_err: r.p_err,
            stderr_p: r.stderr_p,
        });
    }
    for curve in curves.values_mut() {
        curve.sort_by(|a, b| a.f_active.total_cmp(&b.f_active).then(a.lambda.total_cmp(&b.lambda)));
    }
    curves
}
