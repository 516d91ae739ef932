//! Forward-integration rollout of a trained surrogate plus the evaluation
//! metrics used to score it: per-step RMSE over tube nodes and the area
//! between thickness curves (ABTC).
//!
//! ABTC treats both curves as piecewise-linear, splits them at their
//! intersection points and accumulates the absolute enclosed area per
//! segment; on linear pieces the trapezoid rule is exact, so the result is
//! the exact integral of |f - g| over the shared domain.

use std::path::Path;
use std::time::{Duration, Instant};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::mesh::{thickness_profile, MeshState, NodeKind, Topology};
use crate::net::{self, init_params, GraphBatch, ModelParameters, NetSpec};
use crate::synth::{generate, RunConfig, SplitTag, TrajectoryDataset};
use crate::train::{train, TrainConfig};

/// Tube wall thickness as a piecewise-linear function of position along the
/// tube, both in mm. Positions are strictly increasing, thickness positive.
#[derive(Debug, Clone, PartialEq)]
pub struct ThicknessProfile {
    samples: Vec<(f64, f64)>,
}

impl ThicknessProfile {
    pub fn new(samples: Vec<(f64, f64)>) -> Result<Self> {
        if samples.len() < 2 {
            return Err(Error::invalid(format!(
                "a thickness profile needs at least 2 samples, got {}",
                samples.len()
            )));
        }
        for (i, &(p, s)) in samples.iter().enumerate() {
            if !(p.is_finite() && s.is_finite()) {
                return Err(Error::invalid(format!("non-finite profile sample {i}")));
            }
            if s <= 0.0 {
                return Err(Error::invalid(format!("non-positive thickness {s} at sample {i}")));
            }
            if i > 0 && p <= samples[i - 1].0 {
                return Err(Error::invalid(format!(
                    "profile positions must strictly increase, sample {i} at {p}"
                )));
            }
        }
        Ok(ThicknessProfile { samples })
    }

    pub fn samples(&self) -> &[(f64, f64)] {
        &self.samples
    }

    pub fn start(&self) -> f64 {
        self.samples[0].0
    }

    pub fn end(&self) -> f64 {
        self.samples[self.samples.len() - 1].0
    }

    /// Arc length covered by the profile.
    pub fn length(&self) -> f64 {
        self.end() - self.start()
    }

    /// Linear interpolation; clamps to the end values outside the domain.
    pub fn value_at(&self, pos: f64) -> f64 {
        if pos <= self.start() {
            return self.samples[0].1;
        }
        if pos >= self.end() {
            return self.samples[self.samples.len() - 1].1;
        }
        let idx = self.samples.partition_point(|&(p, _)| p < pos);
        let (p1, s1) = self.samples[idx];
        if p1 == pos {
            return s1;
        }
        let (p0, s0) = self.samples[idx - 1];
        let t = (pos - p0) / (p1 - p0);
        s0 + t * (s1 - s0)
    }

    /// Restrict the profile to [lo, hi], interpolating the window edges in.
    pub fn clip(&self, lo: f64, hi: f64) -> Result<ThicknessProfile> {
        if !(lo < hi) {
            return Err(Error::invalid(format!("empty clip window [{lo}, {hi}]")));
        }
        let lo = lo.max(self.start());
        let hi = hi.min(self.end());
        if !(lo < hi) {
            return Err(Error::domain(format!(
                "clip window misses the profile domain [{}, {}]",
                self.start(),
                self.end()
            )));
        }
        let mut samples = vec![(lo, self.value_at(lo))];
        for &(p, s) in &self.samples {
            if p > lo && p < hi {
                samples.push((p, s));
            }
        }
        samples.push((hi, self.value_at(hi)));
        ThicknessProfile::new(samples)
    }
}

/// Root-mean-square of per-node euclidean displacement between two aligned
/// states, over tube nodes only. Output in meters.
pub fn rmse(predicted: &MeshState, reference: &MeshState) -> Result<f64> {
    if predicted.len() != reference.len() {
        return Err(Error::invalid(format!(
            "state size mismatch: {} vs {}",
            predicted.len(),
            reference.len()
        )));
    }
    if predicted.kinds != reference.kinds {
        return Err(Error::invalid("node kinds differ between states"));
    }
    let mut sum = 0.0;
    let mut n = 0usize;
    for ((p, r), &k) in predicted
        .positions
        .iter()
        .zip(&reference.positions)
        .zip(&predicted.kinds)
    {
        if k == NodeKind::Tube {
            let dx = p.x - r.x;
            let dz = p.z - r.z;
            sum += dx * dx + dz * dz;
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::invalid("no tube nodes to compare"));
    }
    Ok((sum / n as f64).sqrt())
}

fn abtc_on(f: &ThicknessProfile, g: &ThicknessProfile, lo: f64, hi: f64) -> f64 {
    let mut xs: Vec<f64> = Vec::with_capacity(f.samples.len() + g.samples.len() + 2);
    xs.push(lo);
    for &(p, _) in f.samples() {
        if p > lo && p < hi {
            xs.push(p);
        }
    }
    for &(p, _) in g.samples() {
        if p > lo && p < hi {
            xs.push(p);
        }
    }
    xs.push(hi);
    xs.sort_unstable_by(f64::total_cmp);
    xs.dedup();

    let mut area = 0.0;
    let mut prev_x = xs[0];
    let mut prev_h = f.value_at(prev_x) - g.value_at(prev_x);
    for &x in &xs[1..] {
        let h = f.value_at(x) - g.value_at(x);
        if prev_h * h < 0.0 {
            // The curves cross inside this interval; split there so each
            // side contributes its absolute area.
            let t = prev_x + (x - prev_x) * prev_h / (prev_h - h);
            area += 0.5 * (t - prev_x) * prev_h.abs();
            area += 0.5 * (x - t) * h.abs();
        } else {
            area += 0.5 * (x - prev_x) * (prev_h.abs() + h.abs());
        }
        prev_x = x;
        prev_h = h;
    }
    area
}

/// Area between two thickness curves over their shared domain, in mm².
/// Curves are segmented at their intersection points, so coincident
/// stretches contribute nothing and sign changes cannot cancel.
pub fn abtc(f: &ThicknessProfile, g: &ThicknessProfile) -> Result<f64> {
    let lo = f.start().max(g.start());
    let hi = f.end().min(g.end());
    if !(lo < hi) {
        return Err(Error::domain(format!(
            "profiles share no domain: [{}, {}] vs [{}, {}]",
            f.start(),
            f.end(),
            g.start(),
            g.end()
        )));
    }
    Ok(abtc_on(f, g, lo, hi))
}

/// ABTC restricted to the leading `cutoff` fraction of the shared domain,
/// measured from its start. Scores ignore the tube tip this way.
pub fn windowed_abtc(f: &ThicknessProfile, g: &ThicknessProfile, cutoff: f64) -> Result<f64> {
    if !(cutoff > 0.0 && cutoff <= 1.0) {
        return Err(Error::invalid(format!("cutoff must be in (0, 1], got {cutoff}")));
    }
    let lo = f.start().max(g.start());
    let hi = f.end().min(g.end());
    if !(lo < hi) {
        return Err(Error::domain("profiles share no domain"));
    }
    Ok(abtc_on(f, g, lo, lo + cutoff * (hi - lo)))
}

/// Pointwise thickness change final(l) - initial(l) over the leading
/// `cutoff` fraction of the shared domain. Returns (relative length,
/// thickness change [mm]) pairs at the union of both sample grids, where
/// relative length 1 marks the full shared domain.
pub fn thickness_difference_curve(
    final_profile: &ThicknessProfile,
    initial: &ThicknessProfile,
    cutoff: f64,
) -> Result<Vec<(f64, f64)>> {
    if !(cutoff > 0.0 && cutoff <= 1.0) {
        return Err(Error::invalid(format!("cutoff must be in (0, 1], got {cutoff}")));
    }
    let lo = final_profile.start().max(initial.start());
    let full = final_profile.end().min(initial.end()) - lo;
    if !(full > 0.0) {
        return Err(Error::domain("profiles share no domain"));
    }
    let hi = lo + cutoff * full;

    let mut xs: Vec<f64> = vec![lo];
    for &(p, _) in final_profile.samples() {
        if p > lo && p < hi {
            xs.push(p);
        }
    }
    for &(p, _) in initial.samples() {
        if p > lo && p < hi {
            xs.push(p);
        }
    }
    xs.push(hi);
    xs.sort_unstable_by(f64::total_cmp);
    xs.dedup();

    Ok(xs
        .into_iter()
        .map(|x| ((x - lo) / full, final_profile.value_at(x) - initial.value_at(x)))
        .collect())
}

/// Knobs of a single rollout. `feed_per_step` is the stamp advance per
/// source frame in meters; the rollout moves it by `stride` frames per
/// network step.
#[derive(Debug, Clone, Copy)]
pub struct RolloutOptions {
    pub n_steps: usize,
    pub stride: usize,
    pub contact_radius: f64,
    pub mu: f64,
    pub feed_per_step: f64,
}

/// Outcome of one rollout: the predicted frame sequence, per-step RMSE
/// against a reference trajectory when one was given, the final tube
/// thickness profile, ABTC against the reference final profile, and the
/// wall-clock time spent stepping the model.
#[derive(Debug, Clone)]
pub struct RolloutResult {
    pub frames: Vec<MeshState>,
    pub rmse_per_step: Vec<f64>,
    pub final_profile: ThicknessProfile,
    pub abtc_vs_reference: Option<f64>,
    pub duration: Duration,
}

/// Autoregressive rollout: each step rebuilds contact edges from the
/// current state, applies the predicted tube delta, and advances the stamp
/// kinematically by `stride` source frames; the die never moves. With a
/// reference trajectory, records tube RMSE against the matching source
/// frame after every step and ABTC against the reference final profile.
pub fn rollout(
    model: &ModelParameters,
    topology: &Topology,
    initial: &MeshState,
    options: &RolloutOptions,
    reference: Option<&[MeshState]>,
) -> Result<RolloutResult> {
    if options.n_steps == 0 || options.stride == 0 {
        return Err(Error::invalid("rollout needs n_steps >= 1 and stride >= 1"));
    }
    if !(options.contact_radius > 0.0) || !options.feed_per_step.is_finite() {
        return Err(Error::invalid(format!(
            "bad rollout options: contact radius {}, feed {}",
            options.contact_radius, options.feed_per_step
        )));
    }
    initial.validate()?;
    if initial.len() != topology.node_count {
        return Err(Error::InconsistentMesh(format!(
            "initial state has {} nodes, topology {}",
            initial.len(),
            topology.node_count
        )));
    }
    let last_source = options.n_steps * options.stride;
    if let Some(frames) = reference {
        if frames.len() <= last_source {
            return Err(Error::invalid(format!(
                "reference holds {} frames, rollout needs source frame {last_source}",
                frames.len()
            )));
        }
    }

    let tube_range = topology.tube_range();
    let stamp_range = topology.range_of(NodeKind::Stamp).unwrap_or(0..0);
    let mut current = initial.clone();
    let stamp_z0: Vec<f64> =
        current.positions[stamp_range.clone()].iter().map(|p| p.z).collect();

    let started = Instant::now();
    let mut frames = Vec::with_capacity(options.n_steps + 1);
    frames.push(current.clone());
    let mut rmse_per_step = Vec::with_capacity(if reference.is_some() { options.n_steps } else { 0 });
    for step in 1..=options.n_steps {
        let batch =
            GraphBatch::from_state(&current, topology, options.contact_radius, options.mu)?;
        let delta = net::predict_delta(model, &batch)?;
        for i in tube_range.clone() {
            let x = current.positions[i].x + delta[[i, 0]];
            let z = current.positions[i].z + delta[[i, 1]];
            if !(x.is_finite() && z.is_finite()) {
                return Err(Error::RolloutDiverged { step, node: i });
            }
            current.positions[i].x = x;
            current.positions[i].z = z;
        }
        let source_frame = step * options.stride;
        for (offset, i) in stamp_range.clone().enumerate() {
            current.positions[i].z =
                stamp_z0[offset] - source_frame as f64 * options.feed_per_step;
        }
        if let Some(refs) = reference {
            rmse_per_step.push(rmse(&current, &refs[source_frame])?);
        }
        frames.push(current.clone());
    }
    let duration = started.elapsed();

    let final_profile = thickness_profile(&current, topology)?;
    let abtc_vs_reference = match reference {
        Some(refs) => {
            let ref_final = thickness_profile(&refs[last_source], topology)?;
            Some(abtc(&final_profile, &ref_final)?)
        }
        None => None,
    };
    Ok(RolloutResult { frames, rmse_per_step, final_profile, abtc_vs_reference, duration })
}

/// Roll the model over one recorded trajectory at the given stride, using
/// as many steps as the recording covers.
pub fn rollout_against(
    model: &ModelParameters,
    dataset: &TrajectoryDataset,
    stride: usize,
    contact_radius: f64,
) -> Result<RolloutResult> {
    if stride == 0 {
        return Err(Error::invalid("stride must be at least 1"));
    }
    let n_steps = (dataset.frames.len() - 1) / stride;
    if n_steps == 0 {
        return Err(Error::invalid(format!(
            "trajectory of {} frames cannot be rolled at stride {stride}",
            dataset.frames.len()
        )));
    }
    let options = RolloutOptions {
        n_steps,
        stride,
        contact_radius,
        mu: dataset.config.mu,
        feed_per_step: dataset.config.feed_per_step_m(),
    };
    rollout(model, &dataset.topology, dataset.initial_state(), &options, Some(&dataset.frames))
}

/// Windowed ABTC of a full-trajectory rollout against its own reference.
pub fn windowed_rollout_abtc(
    model: &ModelParameters,
    dataset: &TrajectoryDataset,
    stride: usize,
    contact_radius: f64,
    window: f64,
) -> Result<f64> {
    let result = rollout_against(model, dataset, stride, contact_radius)?;
    let last_source = ((dataset.frames.len() - 1) / stride) * stride;
    let ref_final = thickness_profile(&dataset.frames[last_source], &dataset.topology)?;
    windowed_abtc(&result.final_profile, &ref_final, window)
}

/// One table cell: a number, or why there is none.
#[derive(Debug, Clone, PartialEq)]
pub enum CellValue {
    Value(f64),
    Failed(String),
}

impl std::fmt::Display for CellValue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CellValue::Value(v) => write!(f, "{v}"),
            CellValue::Failed(_) => f.write_str("failed"),
        }
    }
}

/// Step-stride comparison: one trained model per stride, evaluated by
/// windowed ABTC on every test trajectory, plus per-stride totals.
#[derive(Debug, Clone)]
pub struct AblationTable {
    pub strides: Vec<usize>,
    pub labels: Vec<String>,
    /// cells[row][column] follows labels x strides.
    pub cells: Vec<Vec<CellValue>>,
    pub totals: Vec<CellValue>,
}

/// Train one model per stride under an otherwise identical budget and fill
/// the ABTC table. A failed training marks its whole column; a failed
/// rollout marks its cell; nothing is skipped silently.
pub fn ablate_stride(
    train_sets: &[TrajectoryDataset],
    test_sets: &[TrajectoryDataset],
    spec: &NetSpec,
    base: &TrainConfig,
    strides: &[usize],
    window: f64,
) -> Result<AblationTable> {
    if strides.is_empty() || strides.contains(&0) {
        return Err(Error::invalid("strides must be a non-empty list of positive values"));
    }
    if test_sets.is_empty() {
        return Err(Error::invalid("stride ablation needs test trajectories"));
    }

    let labels: Vec<String> = test_sets.iter().map(|ds| ds.config.label()).collect();
    let mut columns: Vec<Vec<CellValue>> = Vec::with_capacity(strides.len());
    for &stride in strides {
        let config = TrainConfig { step_stride: stride, ..*base };
        let trained = init_params(spec, base.seed)
            .and_then(|model| train(model, train_sets, &config, None));
        let column = match trained {
            Err(e) => vec![CellValue::Failed(format!("training failed: {e}")); test_sets.len()],
            Ok(outcome) => test_sets
                .par_iter()
                .map(|ds| {
                    match windowed_rollout_abtc(
                        &outcome.model,
                        ds,
                        stride,
                        config.contact_radius,
                        window,
                    ) {
                        Ok(v) => CellValue::Value(v),
                        Err(e) => CellValue::Failed(e.to_string()),
                    }
                })
                .collect(),
        };
        columns.push(column);
    }

    let totals = columns
        .iter()
        .map(|col| {
            let failed = col.iter().filter(|c| matches!(c, CellValue::Failed(_))).count();
            if failed > 0 {
                CellValue::Failed(format!("{failed} of {} cells failed", col.len()))
            } else {
                CellValue::Value(
                    col.iter()
                        .map(|c| match c {
                            CellValue::Value(v) => *v,
                            CellValue::Failed(_) => unreachable!(),
                        })
                        .sum(),
                )
            }
        })
        .collect();

    let cells = (0..test_sets.len())
        .map(|row| (0..strides.len()).map(|col| columns[col][row].clone()).collect())
        .collect();
    Ok(AblationTable { strides: strides.to_vec(), labels, cells, totals })
}

/// One process point's rollout accuracy for the campaign heat map.
#[derive(Debug, Clone)]
pub struct GridReportEntry {
    pub label: String,
    pub phi: f64,
    pub alpha: f64,
    pub mu: f64,
    pub split: Option<SplitTag>,
    pub abtc: Option<f64>,
    pub error: Option<String>,
}

/// Roll the model over every dataset and report windowed ABTC per cell.
/// Failures land in the entry instead of aborting the report.
pub fn grid_report(
    model: &ModelParameters,
    datasets: &[TrajectoryDataset],
    stride: usize,
    contact_radius: f64,
    window: f64,
) -> Vec<GridReportEntry> {
    datasets
        .par_iter()
        .map(|ds| {
            let (abtc, error) =
                match windowed_rollout_abtc(model, ds, stride, contact_radius, window) {
                    Ok(v) => (Some(v), None),
                    Err(e) => (None, Some(e.to_string())),
                };
            GridReportEntry {
                label: ds.config.label(),
                phi: ds.config.phi_target,
                alpha: ds.config.die.half_angle_deg,
                mu: ds.config.mu,
                split: ds.split,
                abtc,
                error,
            }
        })
        .collect()
}

/// Published full-scale timings quoted for context: (label, minutes, steps).
/// They come from an industrial-scale study on different hardware and are
/// not reproducible by this crate; the timing report echoes them as-is.
pub const REFERENCE_TIMINGS: [(&str, f64, usize); 3] = [
    ("fem_solver_full_scale_cpu", 301.0, 4500),
    ("surrogate_full_scale_cpu", 23.0, 4500),
    ("surrogate_full_scale_gpu", 3.5, 4500),
];

#[derive(Debug, Clone)]
pub struct TimingRow {
    pub label: String,
    pub steps: usize,
    pub total_seconds: f64,
    pub ms_per_step: f64,
    /// False for quoted reference rows.
    pub measured: bool,
}

#[derive(Debug, Clone)]
pub struct TimeReport {
    pub rows: Vec<TimingRow>,
}

/// Measure generator and surrogate wall-clock cost on one config and line
/// the numbers up against the published reference timings.
pub fn time_report(
    model: &ModelParameters,
    config: &RunConfig,
    stride: usize,
    contact_radius: f64,
) -> Result<TimeReport> {
    let started = Instant::now();
    let dataset = generate(config)?;
    let generator_seconds = started.elapsed().as_secs_f64();

    let result = rollout_against(model, &dataset, stride, contact_radius)?;
    let surrogate_steps = result.frames.len() - 1;
    let surrogate_seconds = result.duration.as_secs_f64();

    let mut rows = vec![
        TimingRow {
            label: "generator_desk_scale".into(),
            steps: config.n_steps,
            total_seconds: generator_seconds,
            ms_per_step: 1e3 * generator_seconds / config.n_steps as f64,
            measured: true,
        },
        TimingRow {
            label: "surrogate_desk_scale".into(),
            steps: surrogate_steps,
            total_seconds: surrogate_seconds,
            ms_per_step: 1e3 * surrogate_seconds / surrogate_steps as f64,
            measured: true,
        },
    ];
    for (label, minutes, steps) in REFERENCE_TIMINGS {
        let total_seconds = minutes * 60.0;
        rows.push(TimingRow {
            label: label.into(),
            steps,
            total_seconds,
            ms_per_step: 1e3 * total_seconds / steps as f64,
            measured: false,
        });
    }
    Ok(TimeReport { rows })
}

/// `step,rmse_m` rows, one per rollout step.
pub fn write_rmse_curve_csv(path: &Path, result: &RolloutResult) -> Result<()> {
    if result.rmse_per_step.is_empty() {
        return Err(Error::invalid("rollout carried no reference, so there is no RMSE curve"));
    }
    let mut csv = String::from("step,rmse_m\n");
    for (i, v) in result.rmse_per_step.iter().enumerate() {
        csv.push_str(&format!("{},{v}\n", i + 1));
    }
    std::fs::write(path, csv)?;
    Ok(())
}

/// `rel_length,ds_mm_pred,ds_mm_ref` over the leading `cutoff` fraction of
/// the common profile domain, sampled at every breakpoint of the three
/// curves.
pub fn write_thickness_diff_csv(
    path: &Path,
    predicted_final: &ThicknessProfile,
    reference_final: &ThicknessProfile,
    initial: &ThicknessProfile,
    cutoff: f64,
) -> Result<()> {
    if !(cutoff > 0.0 && cutoff <= 1.0) {
        return Err(Error::invalid(format!("cutoff must lie in (0, 1], got {cutoff}")));
    }
    let lo = predicted_final.start().max(reference_final.start()).max(initial.start());
    let hi_full = predicted_final.end().min(reference_final.end()).min(initial.end());
    if !(lo < hi_full) {
        return Err(Error::domain("profiles do not share a domain".to_string()));
    }
    let hi = lo + cutoff * (hi_full - lo);
    let mut xs = vec![lo, hi];
    for profile in [predicted_final, reference_final, initial] {
        xs.extend(
            profile.samples().iter().map(|s| s.0).filter(|&x| x > lo && x < hi),
        );
    }
    xs.sort_unstable_by(f64::total_cmp);
    xs.dedup();

    let mut csv = String::from("rel_length,ds_mm_pred,ds_mm_ref\n");
    for x in xs {
        let rel = (x - lo) / (hi_full - lo);
        let pred = predicted_final.value_at(x) - initial.value_at(x);
        let reference = reference_final.value_at(x) - initial.value_at(x);
        csv.push_str(&format!("{rel},{pred},{reference}\n"));
    }
    std::fs::write(path, csv)?;
    Ok(())
}

/// Rectangular phi-by-alpha grid. Cells hold `value:tag`; grid positions
/// with no dataset are written as `absent`, failed rollouts as `failed`.
pub fn write_abtc_grid_csv(path: &Path, entries: &[GridReportEntry]) -> Result<()> {
    let mut phis: Vec<f64> = Vec::new();
    let mut alphas: Vec<f64> = Vec::new();
    for e in entries {
        if !phis.iter().any(|&p| (p - e.phi).abs() < 1e-12) {
            phis.push(e.phi);
        }
        if !alphas.iter().any(|&a| (a - e.alpha).abs() < 1e-12) {
            alphas.push(e.alpha);
        }
    }
    phis.sort_by(f64::total_cmp);
    alphas.sort_by(f64::total_cmp);

    let mut csv = String::from("phi");
    for a in &alphas {
        csv.push_str(&format!(",alpha_{a}"));
    }
    csv.push('\n');
    for &phi in &phis {
        csv.push_str(&format!("{phi}"));
        for &alpha in &alphas {
            let cell = entries
                .iter()
                .find(|e| (e.phi - phi).abs() < 1e-12 && (e.alpha - alpha).abs() < 1e-12);
            let text = match cell {
                None => "absent".to_string(),
                Some(e) => match (e.abtc, &e.split) {
                    (Some(v), Some(tag)) => format!("{v}:{tag}"),
                    (Some(v), None) => format!("{v}:untagged"),
                    (None, _) => "failed".to_string(),
                },
            };
            csv.push_str(&format!(",{text}"));
        }
        csv.push('\n');
    }
    std::fs::write(path, csv)?;
    Ok(())
}

/// `config` label rows by `stride_*` columns, with a closing totals row.
pub fn write_ablation_csv(path: &Path, table: &AblationTable) -> Result<()> {
    let mut csv = String::from("config");
    for s in &table.strides {
        csv.push_str(&format!(",stride_{s}"));
    }
    csv.push('\n');
    for (label, row) in table.labels.iter().zip(&table.cells) {
        csv.push_str(label);
        for cell in row {
            csv.push_str(&format!(",{cell}"));
        }
        csv.push('\n');
    }
    csv.push_str("total");
    for cell in &table.totals {
        csv.push_str(&format!(",{cell}"));
    }
    csv.push('\n');
    std::fs::write(path, csv)?;
    Ok(())
}

/// `label,steps,total_seconds,ms_per_step,source` rows; quoted reference
/// rows are marked `published`, locally timed rows `measured`.
pub fn write_timing_csv(path: &Path, report: &TimeReport) -> Result<()> {
    let mut csv = String::from("label,steps,total_seconds,ms_per_step,source\n");
    for row in &report.rows {
        let source = if row.measured { "measured" } else { "published" };
        csv.push_str(&format!(
            "{},{},{},{},{source}\n",
            row.label, row.steps, row.total_seconds, row.ms_per_step
        ));
    }
    std::fs::write(path, csv)?;
    Ok(())
}
