//! The six subcommands. Each runs in two phases: a setup phase that loads
//! and validates inputs (failures exit 2) and a work phase (failures exit
//! 1). Every command with an output directory drops `experiment.toml` (the
//! resolved configuration) and `run.log` (wall-clock lines) next to its
//! artifacts, so a directory is a self-describing experiment record.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use forgenet::mesh::thickness_profile;
use forgenet::net::{init_params, load_checkpoint};
use forgenet::process::{
    deformation_degree, diameter_ratio, predict_albert, predict_ebertshauser, predict_haarscheidt,
    predict_storoschew,
};
use forgenet::rollout::{
    ablate_stride, grid_report, rollout_against, time_report, windowed_abtc, write_abtc_grid_csv,
    write_ablation_csv, write_rmse_curve_csv, write_thickness_diff_csv, write_timing_csv,
};
use forgenet::synth::{generate, make_split, read_dataset, write_dataset, RunConfig};
use forgenet::train::{train, TrainConfig};
use forgenet::{AblationTable, CellValue, SplitTag, TrajectoryDataset};
use rayon::prelude::*;

use crate::config::ExperimentConfig;

#[derive(Debug)]
pub enum CmdError {
    /// Bad configuration or unusable inputs; exit code 2.
    Config(String),
    /// Failure while doing the work; exit code 1.
    Runtime(String),
}

impl CmdError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CmdError::Config(_) => 2,
            CmdError::Runtime(_) => 1,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CmdError::Config(m) | CmdError::Runtime(m) => m,
        }
    }
}

fn config_err(e: impl std::fmt::Display) -> CmdError {
    CmdError::Config(e.to_string())
}

fn runtime_err(e: impl std::fmt::Display) -> CmdError {
    CmdError::Runtime(e.to_string())
}

/// Unix seconds, for the log only; CSV artifacts stay timestamp-free.
fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

struct RunLog {
    lines: String,
    started: Instant,
}

impl RunLog {
    fn begin(command: &str) -> Self {
        let mut lines = String::new();
        let _ = writeln!(lines, "command {command}");
        let _ = writeln!(lines, "started_unix {}", unix_now());
        RunLog { lines, started: Instant::now() }
    }

    fn note(&mut self, line: &str) {
        let _ = writeln!(self.lines, "{line}");
    }

    fn finish(mut self, dir: &Path) -> Result<(), CmdError> {
        let _ = writeln!(self.lines, "finished_unix {}", unix_now());
        let _ = writeln!(self.lines, "elapsed_seconds {:.3}", self.started.elapsed().as_secs_f64());
        std::fs::write(dir.join("run.log"), self.lines).map_err(runtime_err)
    }
}

/// The resolved configuration as it was actually used, for reproduction.
fn write_snapshot(dir: &Path, cfg: &ExperimentConfig) -> Result<(), CmdError> {
    let text = toml::to_string_pretty(cfg).map_err(runtime_err)?;
    std::fs::write(dir.join("experiment.toml"), text).map_err(runtime_err)
}

/// Fold a resolved single-run config back into the snapshot's `[run]` table
/// so the snapshot alone reproduces the dataset.
fn fold_run(cfg: &mut ExperimentConfig, run: &RunConfig) {
    let r = &mut cfg.run;
    r.phi = Some(run.phi_target);
    r.alpha_deg = Some(run.die.half_angle_deg);
    r.mu = Some(run.mu);
    r.outer_diameter_mm = Some(run.tube.outer_diameter_mm);
    r.wall_thickness_mm = Some(run.tube.wall_thickness_mm);
    r.length_mm = Some(run.tube.length_mm);
    r.element_size_mm = Some(run.tube.element_size_mm);
    r.stamp_speed_mm_s = Some(run.stamp_speed_mm_s);
    r.dt_s = Some(run.dt_s);
    r.n_steps = Some(run.n_steps);
    r.seed = Some(run.seed);
}

fn fold_train(cfg: &mut ExperimentConfig, tc: &TrainConfig) {
    let t = &mut cfg.train;
    t.epochs = Some(tc.epochs);
    t.batch_size = Some(tc.batch_size);
    t.lr_start = Some(tc.lr_start);
    t.lr_end = Some(tc.lr_end);
    t.noise_factor = Some(tc.noise_factor);
    t.contact_radius = Some(tc.contact_radius);
    t.step_stride = Some(tc.step_stride);
    t.seed = Some(tc.seed);
    t.checkpoint_every = tc.checkpoint_every;
    t.max_steps = tc.max_steps;
    t.stop_below = tc.stop_below;
}

/// A dataset directory, or a directory of dataset directories (sorted by
/// name). Errors name the offending path.
fn collect_datasets(data: &Path) -> Result<Vec<TrajectoryDataset>, CmdError> {
    if !data.is_dir() {
        return Err(CmdError::Config(format!("data directory {} does not exist", data.display())));
    }
    if data.join("manifest.json").is_file() {
        return Ok(vec![read_dataset(data).map_err(config_err)?]);
    }
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(data)
        .map_err(config_err)?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.join("manifest.json").is_file())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(CmdError::Config(format!(
            "{} holds no dataset directories (no manifest.json found)",
            data.display()
        )));
    }
    dirs.iter()
        .map(|d| {
            read_dataset(d)
                .map_err(|e| CmdError::Config(format!("dataset {}: {e}", d.display())))
        })
        .collect()
}

fn partition_split(
    datasets: Vec<TrajectoryDataset>,
) -> (Vec<TrajectoryDataset>, Vec<TrajectoryDataset>) {
    // Untagged trajectories count as training data.
    datasets.into_iter().partition(|ds| ds.split != Some(SplitTag::Test))
}

fn ensure_out_dir(out: &Path) -> Result<(), CmdError> {
    std::fs::create_dir_all(out)
        .map_err(|e| CmdError::Config(format!("cannot create {}: {e}", out.display())))
}

fn check_window(window: f64) -> Result<(), CmdError> {
    if !(window > 0.0 && window <= 1.0) {
        return Err(CmdError::Config(format!(
            "[eval].window must lie in (0, 1], got {window}"
        )));
    }
    Ok(())
}

pub fn cmd_generate(
    out: &Path,
    cfg: &ExperimentConfig,
    phi: Option<f64>,
    alpha: Option<f64>,
    mu: Option<f64>,
) -> Result<(), CmdError> {
    let mut log = RunLog::begin("generate");
    let single = match (phi.or(cfg.run.phi), alpha.or(cfg.run.alpha_deg)) {
        (Some(_), Some(_)) => true,
        (None, None) => false,
        (Some(_), None) => {
            return Err(CmdError::Config(
                "single-run generation needs --alpha (or [run].alpha_deg) alongside --phi".into(),
            ))
        }
        (None, Some(_)) => {
            return Err(CmdError::Config(
                "single-run generation needs --phi (or [run].phi) alongside --alpha".into(),
            ))
        }
    };

    if single {
        let config = cfg.resolved_run(phi, alpha, mu).map_err(CmdError::Config)?;
        config.validate().map_err(config_err)?;
        ensure_out_dir(out)?;

        let dataset = generate(&config).map_err(runtime_err)?;
        let dir = out.join(config.label());
        write_dataset(&dataset, &dir).map_err(runtime_err)?;
        let mut snapshot = cfg.clone();
        fold_run(&mut snapshot, &config);
        write_snapshot(out, &snapshot)?;
        log.note(&format!("dataset {}", dir.display()));
        log.note(&format!("frames {}", dataset.frames.len()));
        log.finish(out)?;
        println!("generated {}", dir.display());
        return Ok(());
    }

    let configs = cfg.campaign_configs(mu);
    for config in &configs {
        config.validate().map_err(config_err)?;
    }
    let split = make_split(&configs).map_err(config_err)?;
    ensure_out_dir(out)?;

    let tag_of = |index: usize| {
        if split.test.contains(&index) {
            SplitTag::Test
        } else {
            SplitTag::Train
        }
    };
    configs
        .par_iter()
        .enumerate()
        .try_for_each(|(index, config)| -> Result<(), CmdError> {
            let mut dataset = generate(config).map_err(|e| {
                CmdError::Runtime(format!("config {}: {e}", config.label()))
            })?;
            dataset.split = Some(tag_of(index));
            write_dataset(&dataset, &out.join(config.label())).map_err(runtime_err)
        })?;

    let label_list = |indices: &[usize]| -> Vec<String> {
        indices.iter().map(|&i| configs[i].label()).collect()
    };
    let split_json = serde_json::json!({
        "train": label_list(&split.train),
        "test": label_list(&split.test),
    });
    std::fs::write(
        out.join("split.json"),
        serde_json::to_vec_pretty(&split_json).map_err(runtime_err)?,
    )
    .map_err(runtime_err)?;

    write_snapshot(out, cfg)?;
    log.note(&format!(
        "datasets {} (train {}, test {})",
        configs.len(),
        split.train.len(),
        split.test.len()
    ));
    log.finish(out)?;
    println!(
        "generated {} datasets ({} train, {} test) in {}",
        configs.len(),
        split.train.len(),
        split.test.len(),
        out.display()
    );
    Ok(())
}

pub fn cmd_train(data: &Path, out: &Path, cfg: &ExperimentConfig) -> Result<(), CmdError> {
    let mut log = RunLog::begin("train");
    let (train_sets, test_sets) = partition_split(collect_datasets(data)?);
    if train_sets.is_empty() {
        return Err(CmdError::Config(format!(
            "{} holds only test-tagged datasets; nothing to train on",
            data.display()
        )));
    }
    let tc = cfg.resolved_train().map_err(CmdError::Config)?;
    tc.validate().map_err(config_err)?;
    let spec = cfg.net_spec();
    spec.validate().map_err(config_err)?;
    ensure_out_dir(out)?;

    let model = init_params(&spec, tc.seed).map_err(runtime_err)?;
    let outcome = train(model, &train_sets, &tc, Some(out)).map_err(runtime_err)?;

    let mut snapshot = cfg.clone();
    fold_train(&mut snapshot, &tc);
    write_snapshot(out, &snapshot)?;
    let final_loss = outcome.history.last().map(|r| r.loss);
    log.note(&format!("train_datasets {}", train_sets.len()));
    log.note(&format!("held_out_datasets {}", test_sets.len()));
    log.note(&format!("optimizer_steps {}", outcome.history.len()));
    if let Some(loss) = final_loss {
        log.note(&format!("final_loss {loss:e}"));
    }
    log.finish(out)?;
    match final_loss {
        Some(loss) => println!(
            "trained on {} dataset(s), {} steps, final loss {loss:.3e}; checkpoint at {}",
            train_sets.len(),
            outcome.history.len(),
            out.join("final").display()
        ),
        None => println!(
            "zero-step run; untrained checkpoint at {}",
            out.join("final").display()
        ),
    }
    Ok(())
}

pub fn cmd_rollout(
    checkpoint: &Path,
    dataset_dir: &Path,
    out: &Path,
    stride_flag: Option<usize>,
    cfg: &ExperimentConfig,
) -> Result<(), CmdError> {
    let mut log = RunLog::begin("rollout");
    let model = load_checkpoint(checkpoint)
        .map_err(|e| CmdError::Config(format!("checkpoint {}: {e}", checkpoint.display())))?;
    let dataset = read_dataset(dataset_dir)
        .map_err(|e| CmdError::Config(format!("dataset {}: {e}", dataset_dir.display())))?;
    let tc = cfg.resolved_train().map_err(CmdError::Config)?;
    let stride = stride_flag.unwrap_or(tc.step_stride);
    if stride == 0 {
        return Err(CmdError::Config("--stride must be at least 1".into()));
    }
    let window = cfg.eval.window;
    check_window(window)?;
    ensure_out_dir(out)?;

    let result = rollout_against(&model, &dataset, stride, tc.contact_radius).map_err(runtime_err)?;
    let last_source = ((dataset.frames.len() - 1) / stride) * stride;
    let reference = thickness_profile(&dataset.frames[last_source], &dataset.topology)
        .map_err(runtime_err)?;
    let initial = dataset.initial_profile().map_err(runtime_err)?;
    let abtc = windowed_abtc(&result.final_profile, &reference, window).map_err(runtime_err)?;

    write_rmse_curve_csv(&out.join("rmse_curve.csv"), &result).map_err(runtime_err)?;
    write_thickness_diff_csv(
        &out.join("thickness_diff.csv"),
        &result.final_profile,
        &reference,
        &initial,
        window,
    )
    .map_err(runtime_err)?;
    let entries = grid_report(&model, std::slice::from_ref(&dataset), stride, tc.contact_radius, window);
    write_abtc_grid_csv(&out.join("abtc_grid.csv"), &entries).map_err(runtime_err)?;
    let table = AblationTable {
        strides: vec![stride],
        labels: vec![dataset.config.label()],
        cells: vec![vec![CellValue::Value(abtc)]],
        totals: vec![CellValue::Value(abtc)],
    };
    write_ablation_csv(&out.join("ablation.csv"), &table).map_err(runtime_err)?;
    let timing = time_report(&model, &dataset.config, stride, tc.contact_radius).map_err(runtime_err)?;
    write_timing_csv(&out.join("timing.csv"), &timing).map_err(runtime_err)?;

    write_snapshot(out, cfg)?;
    let final_rmse = result.rmse_per_step.last().copied().unwrap_or(f64::NAN);
    log.note(&format!("dataset {}", dataset.config.label()));
    log.note(&format!("stride {stride}"));
    log.note(&format!("rollout_steps {}", result.rmse_per_step.len()));
    log.note(&format!("rollout_seconds {:.3}", result.duration.as_secs_f64()));
    log.finish(out)?;
    println!(
        "rolled {} steps at stride {stride}: final RMSE {final_rmse:.3e} m, windowed ABTC {abtc:.3e} mm^2; artifacts in {}",
        result.rmse_per_step.len(),
        out.display()
    );
    Ok(())
}

pub fn cmd_evaluate(
    checkpoint: &Path,
    data: &Path,
    out: Option<&Path>,
    stride_flag: Option<usize>,
    cfg: &ExperimentConfig,
) -> Result<(), CmdError> {
    let mut log = RunLog::begin("evaluate");
    let model = load_checkpoint(checkpoint)
        .map_err(|e| CmdError::Config(format!("checkpoint {}: {e}", checkpoint.display())))?;
    let datasets = collect_datasets(data)?;
    let tc = cfg.resolved_train().map_err(CmdError::Config)?;
    let stride = stride_flag.unwrap_or(tc.step_stride);
    if stride == 0 {
        return Err(CmdError::Config("--stride must be at least 1".into()));
    }
    check_window(cfg.eval.window)?;

    let entries = grid_report(&model, &datasets, stride, tc.contact_radius, cfg.eval.window);
    let failed: Vec<&forgenet::GridReportEntry> =
        entries.iter().filter(|e| e.error.is_some()).collect();
    if failed.len() == entries.len() {
        return Err(CmdError::Runtime(format!(
            "every rollout failed; first: {} ({})",
            failed[0].label,
            failed[0].error.as_deref().unwrap_or("unknown")
        )));
    }

    let summarize = |tag: Option<SplitTag>| -> Option<(usize, f64, f64)> {
        let values: Vec<f64> = entries
            .iter()
            .filter(|e| e.split == tag || (tag == Some(SplitTag::Train) && e.split.is_none()))
            .filter_map(|e| e.abtc)
            .collect();
        if values.is_empty() {
            return None;
        }
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        let max = values.iter().cloned().fold(f64::MIN, f64::max);
        Some((values.len(), mean, max))
    };
    if let Some((n, mean, max)) = summarize(Some(SplitTag::Train)) {
        println!("train cells {n}: mean ABTC {mean:.4e} mm^2, max {max:.4e}");
    }
    if let Some((n, mean, max)) = summarize(Some(SplitTag::Test)) {
        println!("test  cells {n}: mean ABTC {mean:.4e} mm^2, max {max:.4e}");
    }
    for entry in &failed {
        println!("failed {}: {}", entry.label, entry.error.as_deref().unwrap_or("unknown"));
    }

    if let Some(dir) = out {
        ensure_out_dir(dir)?;
        write_abtc_grid_csv(&dir.join("abtc_grid.csv"), &entries).map_err(runtime_err)?;
        write_snapshot(dir, cfg)?;
        log.note(&format!("cells {} failed {}", entries.len(), failed.len()));
        log.finish(dir)?;
        println!("grid written to {}", dir.join("abtc_grid.csv").display());
    }
    Ok(())
}

pub fn cmd_ablate(
    data: &Path,
    out: &Path,
    strides_flag: Option<Vec<usize>>,
    cfg: &ExperimentConfig,
) -> Result<(), CmdError> {
    let mut log = RunLog::begin("ablate");
    let (train_sets, test_sets) = partition_split(collect_datasets(data)?);
    if train_sets.is_empty() || test_sets.is_empty() {
        return Err(CmdError::Config(format!(
            "stride ablation needs both train- and test-tagged datasets; {} has {} train, {} test",
            data.display(),
            train_sets.len(),
            test_sets.len()
        )));
    }
    let tc = cfg.resolved_train().map_err(CmdError::Config)?;
    tc.validate().map_err(config_err)?;
    let spec = cfg.net_spec();
    spec.validate().map_err(config_err)?;
    let strides = strides_flag.unwrap_or_else(|| cfg.eval.strides.clone());
    if strides.is_empty() || strides.contains(&0) {
        return Err(CmdError::Config("strides must be a non-empty list of positive values".into()));
    }
    check_window(cfg.eval.window)?;
    ensure_out_dir(out)?;

    let table = ablate_stride(&train_sets, &test_sets, &spec, &tc, &strides, cfg.eval.window)
        .map_err(runtime_err)?;
    write_ablation_csv(&out.join("ablation.csv"), &table).map_err(runtime_err)?;

    let mut snapshot = cfg.clone();
    fold_train(&mut snapshot, &tc);
    snapshot.eval.strides = strides.clone();
    write_snapshot(out, &snapshot)?;
    for (stride, total) in table.strides.iter().zip(&table.totals) {
        println!("stride {stride}: total ABTC {total}");
        log.note(&format!("stride_{stride}_total {total}"));
    }
    log.finish(out)?;
    println!("table written to {}", out.join("ablation.csv").display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub fn cmd_analytic(
    da0: f64,
    da1: f64,
    s0: f64,
    alpha: f64,
    mu: f64,
    da1_end: Option<f64>,
    rows: usize,
    out: Option<&Path>,
) -> Result<(), CmdError> {
    let points: Vec<f64> = match da1_end {
        None => vec![da1],
        Some(end) => {
            if rows < 2 {
                return Err(CmdError::Config(
                    "--rows must be at least 2 when sweeping --da1-end".into(),
                ));
            }
            (0..rows)
                .map(|i| da1 + (end - da1) * i as f64 / (rows - 1) as f64)
                .collect()
        }
    };

    let mut csv = String::from(
        "d_a0,d_a1,s0,alpha,mu,phi,q,ds_haarscheidt,ds_ebertshauser,ds_albert,ds_storoschew\n",
    );
    for &d in &points {
        let phi = deformation_degree(da0, d).map_err(config_err)?;
        let q = diameter_ratio(da0 - 2.0 * s0, da0).map_err(config_err)?;
        let haarscheidt = predict_haarscheidt(da0, d, s0, alpha).map_err(config_err)?;
        let ebertshauser = predict_ebertshauser(da0, d, s0).map_err(config_err)?;
        let albert = predict_albert(phi, s0, da0, alpha);
        let storoschew = predict_storoschew(s0, da0, d).map_err(config_err)?;
        let _ = writeln!(
            csv,
            "{da0},{d},{s0},{alpha},{mu},{phi},{q},{haarscheidt},{ebertshauser},{albert},{storoschew}"
        );
    }

    match out {
        Some(path) => std::fs::write(path, csv).map_err(runtime_err)?,
        None => print!("{csv}"),
    }
    Ok(())
}
