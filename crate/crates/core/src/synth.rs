//! Synthetic nosing trajectories and their on-disk dataset format.
//!
//! The generator drives the tube kinematically: each step the stamp and all
//! tube rings advance by the stamp feed (attenuated by 1/(1+mu) for rings
//! touching the narrowing die), nodes radially outside the die contour are
//! projected back onto it, and reduced rings thicken ring-wise by
//! sqrt(r0/r), redistributing wall nodes linearly. That produces smooth,
//! wall-thickness-growing trajectories with the contact structure a learned
//! one-step model needs, at a few microseconds per step.
//!
//! A dataset directory holds `manifest.json` (config, topology, kinds,
//! split tag, checksum) and `frames.bin`, a little-endian float64 array of
//! shape [n_frames, n_nodes, 2] in (x, z) node order. Round-trips are
//! bit-exact.

use std::path::Path;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::{
    build_die_mesh, build_tube_mesh, thickness_profile, DieContour, DieGeometry, MeshState,
    NodeKind, Point, Topology,
};
use crate::net::sha256_hex;
use crate::rollout::ThicknessProfile;
use crate::MM;

const DATASET_VERSION: u32 = 1;

/// Initial tube-coordinate jitter, meters. Breaks exact mesh symmetry so
/// trajectories with different seeds differ, without touching the physics.
const JITTER_M: f64 = 1e-8;

/// Radial clearance between tube outer surface and die entry bore, mm.
const ENTRY_CLEARANCE_MM: f64 = 0.05;

/// Stamp standoff above the tube top edge, as a fraction of element size.
const STAMP_STANDOFF_FRACTION: f64 = 0.25;

/// Which side of the train/test split a trajectory belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitTag {
    Train,
    Test,
}

impl std::fmt::Display for SplitTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SplitTag::Train => "train",
            SplitTag::Test => "test",
        })
    }
}

/// Blank tube geometry, millimeters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TubeSpec {
    pub outer_diameter_mm: f64,
    pub wall_thickness_mm: f64,
    pub length_mm: f64,
    pub element_size_mm: f64,
}

/// Everything needed to produce one trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub tube: TubeSpec,
    pub die: DieGeometry,
    /// Logarithmic outer-diameter strain the die is cut for.
    pub phi_target: f64,
    /// Friction coefficient, also written onto contact edge features.
    pub mu: f64,
    pub stamp_speed_mm_s: f64,
    pub dt_s: f64,
    pub n_steps: usize,
    pub seed: u64,
}

impl RunConfig {
    /// Desk-scale default: 30 x 1.5 mm tube shortened to 16 mm, reduction
    /// 30 -> 27 mm through a 15 degree cone, 500 steps of 15 um feed.
    pub fn desk_default() -> Self {
        RunConfig::with_phi_alpha(2.0 * (30.0f64 / 27.0).ln(), 15.0)
    }

    /// Desk-scale config for one (phi, alpha) grid cell: the die reduction
    /// radius is derived from phi, everything else stays at the defaults.
    pub fn with_phi_alpha(phi: f64, alpha_deg: f64) -> Self {
        RunConfig::with_phi_alpha_tube(
            phi,
            alpha_deg,
            TubeSpec {
                outer_diameter_mm: 30.0,
                wall_thickness_mm: 1.5,
                length_mm: 16.0,
                element_size_mm: 0.4,
            },
        )
    }

    /// Same, for an arbitrary blank: the die is cut for this tube's outer
    /// radius and the requested strain.
    pub fn with_phi_alpha_tube(phi: f64, alpha_deg: f64, tube: TubeSpec) -> Self {
        let outer_radius = tube.outer_diameter_mm / 2.0;
        RunConfig {
            tube,
            die: DieGeometry {
                entry_radius_mm: outer_radius + ENTRY_CLEARANCE_MM,
                reduction_radius_mm: outer_radius * (-phi / 2.0).exp(),
                half_angle_deg: alpha_deg,
                rounding_radius_mm: 1.0,
                calibration_length_mm: 3.0,
            },
            phi_target: phi,
            mu: 0.05,
            stamp_speed_mm_s: 1000.0,
            dt_s: 1.5e-5,
            n_steps: 500,
            seed: 1,
        }
    }

    /// Stamp advance per step, meters.
    pub fn feed_per_step_m(&self) -> f64 {
        self.stamp_speed_mm_s * self.dt_s * MM
    }

    /// Short directory-friendly identifier of the process point.
    pub fn label(&self) -> String {
        format!(
            "phi{:.4}_alpha{:.2}_mu{:.3}",
            self.phi_target, self.die.half_angle_deg, self.mu
        )
    }

    pub fn validate(&self) -> Result<()> {
        self.die.validate()?;
        let t = &self.tube;
        for (name, v) in [
            ("outer_diameter_mm", t.outer_diameter_mm),
            ("wall_thickness_mm", t.wall_thickness_mm),
            ("length_mm", t.length_mm),
            ("element_size_mm", t.element_size_mm),
            ("phi_target", self.phi_target),
            ("stamp_speed_mm_s", self.stamp_speed_mm_s),
            ("dt_s", self.dt_s),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::invalid(format!("{name} must be positive and finite, got {v}")));
            }
        }
        if !(self.mu.is_finite() && (0.0..=1.0).contains(&self.mu)) {
            return Err(Error::invalid(format!("mu must lie in [0, 1], got {}", self.mu)));
        }
        if self.n_steps == 0 {
            return Err(Error::invalid("n_steps must be at least 1"));
        }
        let outer_radius = t.outer_diameter_mm / 2.0;
        if self.die.entry_radius_mm <= outer_radius {
            return Err(Error::invalid(format!(
                "die entry radius {} mm does not admit a tube of outer radius {} mm",
                self.die.entry_radius_mm, outer_radius
            )));
        }
        let implied_reduction = outer_radius * (-self.phi_target / 2.0).exp();
        if (self.die.reduction_radius_mm - implied_reduction).abs() > 1e-6 {
            return Err(Error::invalid(format!(
                "phi_target {} implies reduction radius {:.6} mm, die has {} mm",
                self.phi_target, implied_reduction, self.die.reduction_radius_mm
            )));
        }
        Ok(())
    }
}

/// One generated (or loaded) trajectory: static topology plus a frame per
/// step, frame 0 being the initial state.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryDataset {
    pub config: RunConfig,
    pub topology: Topology,
    pub frames: Vec<MeshState>,
    pub split: Option<SplitTag>,
}

impl TrajectoryDataset {
    pub fn initial_state(&self) -> &MeshState {
        &self.frames[0]
    }

    pub fn final_state(&self) -> &MeshState {
        self.frames.last().unwrap()
    }

    pub fn kinds(&self) -> &[NodeKind] {
        &self.frames[0].kinds
    }

    pub fn initial_profile(&self) -> Result<ThicknessProfile> {
        thickness_profile(self.initial_state(), &self.topology)
    }

    pub fn final_profile(&self) -> Result<ThicknessProfile> {
        thickness_profile(self.final_state(), &self.topology)
    }

    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        self.topology.validate()?;
        if self.frames.len() != self.config.n_steps + 1 {
            return Err(Error::invalid(format!(
                "config says {} steps, dataset holds {} frames",
                self.config.n_steps,
                self.frames.len()
            )));
        }
        for frame in &self.frames {
            if frame.len() != self.topology.node_count {
                return Err(Error::InconsistentMesh(format!(
                    "frame has {} nodes, topology {}",
                    frame.len(),
                    self.topology.node_count
                )));
            }
        }
        Ok(())
    }
}

/// Meridional cross-section area of the tube wall, square meters, from the
/// quad grid. Tracks material conservation of the generator.
pub fn section_area(state: &MeshState, topology: &Topology) -> Result<f64> {
    let grid = topology
        .tube_grid
        .ok_or_else(|| Error::invalid("section area needs the structured tube grid"))?;
    let base = topology.tube_range().start;
    let mut area = 0.0;
    for row in 0..grid.rows - 1 {
        for col in 0..grid.cols - 1 {
            let a = state.positions[base + grid.node(row, col)];
            let b = state.positions[base + grid.node(row, col + 1)];
            let c = state.positions[base + grid.node(row + 1, col + 1)];
            let d = state.positions[base + grid.node(row + 1, col)];
            let twice = a.x * (b.z - d.z) + b.x * (c.z - a.z) + c.x * (d.z - b.z) + d.x * (a.z - c.z);
            area += 0.5 * twice.abs();
        }
    }
    Ok(area)
}

/// Generate one trajectory. Deterministic: equal configs give bitwise-equal
/// frames. The only random draws are the initial tube jitter.
pub fn generate(config: &RunConfig) -> Result<TrajectoryDataset> {
    config.validate()?;
    let t = &config.tube;
    let (tube_state, tube_topo) =
        build_tube_mesh(t.outer_diameter_mm, t.wall_thickness_mm, t.length_mm, t.element_size_mm)?;
    let (die_state, die_topo) = build_die_mesh(&config.die, t.element_size_mm)?;
    let grid = tube_topo.tube_grid.expect("tube mesh is structured");

    // Stamp: one node row above the tube's top edge, matching its columns.
    let standoff = STAMP_STANDOFF_FRACTION * t.element_size_mm * MM;
    let top_z = t.length_mm * MM + standoff;
    let stamp_points: Vec<Point> = (0..grid.cols)
        .map(|c| Point::new(tube_state.positions[grid.node(0, c)].x, top_z))
        .collect();

    let topology = Topology::assemble(&tube_topo, &die_topo, stamp_points.len());
    let mut positions = tube_state.positions;
    positions.extend_from_slice(&die_state.positions);
    positions.extend_from_slice(&stamp_points);
    let mut kinds = tube_state.kinds;
    kinds.extend_from_slice(&die_state.kinds);
    kinds.extend(std::iter::repeat(NodeKind::Stamp).take(stamp_points.len()));

    let mut rng = ChaCha20Rng::seed_from_u64(config.seed);
    for p in positions[topology.tube_range()].iter_mut() {
        p.x += rng.gen_range(-JITTER_M..JITTER_M);
        p.z += rng.gen_range(-JITTER_M..JITTER_M);
    }

    let contour = DieContour::from_geometry(&config.die)?;
    let feed = config.feed_per_step_m();
    let outer_col = grid.cols - 1;
    let ring_r0: Vec<f64> = (0..grid.rows)
        .map(|row| positions[grid.node(row, outer_col)].x)
        .collect();
    let ring_s0: Vec<f64> = (0..grid.rows)
        .map(|row| positions[grid.node(row, outer_col)].x - positions[grid.node(row, 0)].x)
        .collect();
    let stamp_range = topology.range_of(NodeKind::Stamp).unwrap();
    let stamp_z0: Vec<f64> = positions[stamp_range.clone()].iter().map(|p| p.z).collect();

    let mut frames = Vec::with_capacity(config.n_steps + 1);
    frames.push(MeshState { positions: positions.clone(), kinds: kinds.clone() });

    for step in 1..=config.n_steps {
        // Contact state is judged before anything moves.
        let in_contact: Vec<bool> = (0..grid.rows)
            .map(|row| {
                let p = positions[grid.node(row, outer_col)];
                let wall = contour.radius_at(p.z);
                p.x >= wall - 1e-9 && wall < contour.entry_radius - 1e-12
            })
            .collect();
        if in_contact[0] {
            return Err(Error::domain(format!(
                "stroke reaches the tube's top ring at step {step}; reduce n_steps or feed"
            )));
        }

        for row in 0..grid.rows {
            let dz = if in_contact[row] { feed / (1.0 + config.mu) } else { feed };
            for col in 0..grid.cols {
                positions[grid.node(row, col)].z -= dz;
            }
        }
        for (offset, i) in stamp_range.clone().enumerate() {
            positions[i].z = stamp_z0[offset] - step as f64 * feed;
        }

        for p in positions[topology.tube_range()].iter_mut() {
            let wall = contour.radius_at(p.z);
            if p.x > wall {
                p.x = wall;
            }
        }

        for row in 0..grid.rows {
            let outer_x = positions[grid.node(row, outer_col)].x;
            if outer_x < ring_r0[row] - 1e-12 {
                let thickness = ring_s0[row] * (ring_r0[row] / outer_x).sqrt();
                let inner_x = outer_x - thickness;
                if inner_x <= 0.0 {
                    return Err(Error::domain(format!(
                        "ring {row} thickens past the axis at step {step}"
                    )));
                }
                for col in 0..outer_col {
                    let frac = col as f64 / outer_col as f64;
                    positions[grid.node(row, col)].x = inner_x + frac * (outer_x - inner_x);
                }
            }
        }

        frames.push(MeshState { positions: positions.clone(), kinds: kinds.clone() });
    }

    Ok(TrajectoryDataset { config: *config, topology, frames, split: None })
}

/// The (phi, alpha) plane of the full evaluation campaign: 7 phi rows by 9
/// cone angles, minus 14 infeasible or skipped cells, at mu = 0.05.
const TABLE2_PHI_COUNT: usize = 7;
const TABLE2_ALPHA_COUNT: usize = 9;
/// Cells absent from the campaign, as (phi index, alpha index).
const TABLE2_ABSENT: [(usize, usize); 14] = [
    (4, 7),
    (4, 8),
    (5, 4),
    (5, 5),
    (5, 6),
    (5, 7),
    (5, 8),
    (6, 0),
    (6, 3),
    (6, 4),
    (6, 5),
    (6, 6),
    (6, 7),
    (6, 8),
];
/// Held-out evaluation cells.
const TABLE2_TEST: [(usize, usize); 9] = [
    (1, 5),
    (1, 7),
    (2, 2),
    (2, 4),
    (2, 6),
    (3, 0),
    (3, 3),
    (4, 2),
    (6, 1),
];

pub fn table2_phi(index: usize) -> f64 {
    0.05 * (index + 1) as f64
}

pub fn table2_alpha(index: usize) -> f64 {
    5.0 + 2.5 * index as f64
}

/// All 49 campaign configs in phi-major order, desk-scale geometry, with a
/// distinct seed per cell.
pub fn table2_grid() -> Vec<RunConfig> {
    let mut configs = Vec::new();
    for i in 0..TABLE2_PHI_COUNT {
        for j in 0..TABLE2_ALPHA_COUNT {
            if TABLE2_ABSENT.contains(&(i, j)) {
                continue;
            }
            let mut config = RunConfig::with_phi_alpha(table2_phi(i), table2_alpha(j));
            config.seed = 1000 + (i * TABLE2_ALPHA_COUNT + j) as u64;
            configs.push(config);
        }
    }
    configs
}

/// Indices into the config list, disjoint and covering.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

fn near(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

/// Deterministic train/test assignment over a config grid.
///
/// The full campaign grid is recognized exactly and gets its fixed nine
/// held-out cells. Any other grid holds out the middle-angle cell of each
/// interior phi row with at least three cells; degenerate grids fall back
/// to holding out a single middle config, and two configs split 1/1.
pub fn make_split(configs: &[RunConfig]) -> Result<Split> {
    if configs.len() < 2 {
        return Err(Error::invalid(format!(
            "{} config(s) cannot be split into train and test",
            configs.len()
        )));
    }
    for (i, a) in configs.iter().enumerate() {
        for b in configs.iter().skip(i + 1) {
            if near(a.phi_target, b.phi_target, 1e-12)
                && near(a.die.half_angle_deg, b.die.half_angle_deg, 1e-12)
                && near(a.mu, b.mu, 1e-12)
            {
                return Err(Error::invalid(format!(
                    "duplicate process point {}",
                    a.label()
                )));
            }
        }
    }

    let split_from_test = |test: Vec<usize>| {
        let train = (0..configs.len()).filter(|i| !test.contains(i)).collect();
        Split { train, test }
    };

    // Exact-campaign detection: same mu everywhere and the (phi, alpha)
    // multiset matches the 49 campaign cells.
    if configs.len() == TABLE2_PHI_COUNT * TABLE2_ALPHA_COUNT - TABLE2_ABSENT.len()
        && configs.iter().all(|c| near(c.mu, configs[0].mu, 1e-9))
    {
        let find_cell = |phi: f64, alpha: f64| {
            let mut hits = configs
                .iter()
                .enumerate()
                .filter(|(_, c)| {
                    near(c.phi_target, phi, 1e-9) && near(c.die.half_angle_deg, alpha, 1e-9)
                })
                .map(|(i, _)| i);
            let first = hits.next();
            if hits.next().is_some() {
                None
            } else {
                first
            }
        };
        let mut cells = Vec::new();
        for i in 0..TABLE2_PHI_COUNT {
            for j in 0..TABLE2_ALPHA_COUNT {
                if !TABLE2_ABSENT.contains(&(i, j)) {
                    cells.push(((i, j), find_cell(table2_phi(i), table2_alpha(j))));
                }
            }
        }
        if cells.iter().all(|(_, found)| found.is_some()) {
            let test = TABLE2_TEST
                .iter()
                .map(|cell| {
                    cells
                        .iter()
                        .find(|(c, _)| c == cell)
                        .and_then(|(_, found)| *found)
                        .expect("test cells are campaign cells")
                })
                .collect();
            return Ok(split_from_test(test));
        }
    }

    if configs.len() == 2 {
        let key = |c: &RunConfig| (c.phi_target, c.die.half_angle_deg, c.mu);
        let test = if key(&configs[1]) > key(&configs[0]) { vec![1] } else { vec![0] };
        return Ok(split_from_test(test));
    }

    // Cluster configs into phi rows.
    let mut phis: Vec<f64> = Vec::new();
    for c in configs {
        if !phis.iter().any(|&p| near(p, c.phi_target, 1e-9)) {
            phis.push(c.phi_target);
        }
    }
    phis.sort_by(|a, b| a.total_cmp(b));

    let mut test = Vec::new();
    let interior: &[f64] = if phis.len() >= 3 { &phis[1..phis.len() - 1] } else { &[] };
    for &phi in interior {
        let mut row: Vec<usize> = configs
            .iter()
            .enumerate()
            .filter(|(_, c)| near(c.phi_target, phi, 1e-9))
            .map(|(i, _)| i)
            .collect();
        if row.len() < 3 {
            continue;
        }
        row.sort_by(|&a, &b| configs[a].die.half_angle_deg.total_cmp(&configs[b].die.half_angle_deg));
        test.push(row[row.len() / 2]);
    }
    if test.is_empty() {
        let mut order: Vec<usize> = (0..configs.len()).collect();
        order.sort_by(|&a, &b| {
            let key = |c: &RunConfig| (c.phi_target, c.die.half_angle_deg, c.mu);
            key(&configs[a]).partial_cmp(&key(&configs[b])).unwrap()
        });
        test.push(order[order.len() / 2]);
    }
    test.sort_unstable();
    Ok(split_from_test(test))
}

#[derive(Debug, Serialize, Deserialize)]
struct DatasetManifest {
    format_version: u32,
    config: RunConfig,
    n_frames: usize,
    node_count: usize,
    kinds: Vec<NodeKind>,
    topology: Topology,
    split: Option<SplitTag>,
    frames_sha256: String,
}

fn frame_bytes(frames: &[MeshState]) -> Vec<u8> {
    let per_frame = frames.first().map_or(0, |f| f.len() * 16);
    let mut bytes = Vec::with_capacity(frames.len() * per_frame);
    for frame in frames {
        for p in &frame.positions {
            bytes.extend_from_slice(&p.x.to_le_bytes());
            bytes.extend_from_slice(&p.z.to_le_bytes());
        }
    }
    bytes
}

/// Write `manifest.json` and `frames.bin` into `dir`, creating it.
pub fn write_dataset(dataset: &TrajectoryDataset, dir: &Path) -> Result<()> {
    dataset.validate()?;
    std::fs::create_dir_all(dir)?;
    let bytes = frame_bytes(&dataset.frames);
    let manifest = DatasetManifest {
        format_version: DATASET_VERSION,
        config: dataset.config,
        n_frames: dataset.frames.len(),
        node_count: dataset.topology.node_count,
        kinds: dataset.kinds().to_vec(),
        topology: dataset.topology.clone(),
        split: dataset.split,
        frames_sha256: sha256_hex(&bytes),
    };
    std::fs::write(dir.join("manifest.json"), serde_json::to_vec_pretty(&manifest)?)?;
    std::fs::write(dir.join("frames.bin"), bytes)?;
    Ok(())
}

pub fn read_dataset(dir: &Path) -> Result<TrajectoryDataset> {
    let manifest_path = dir.join("manifest.json");
    let manifest: DatasetManifest = serde_json::from_slice(&std::fs::read(&manifest_path)?)?;
    if manifest.format_version != DATASET_VERSION {
        return Err(Error::UnsupportedVersion {
            found: manifest.format_version,
            expected: DATASET_VERSION,
        });
    }
    if manifest.kinds.len() != manifest.node_count
        || manifest.topology.node_count != manifest.node_count
    {
        return Err(Error::CorruptArtifact {
            path: manifest_path.display().to_string(),
            reason: "node count, kinds, and topology disagree".into(),
        });
    }

    let bin_path = dir.join("frames.bin");
    let bytes = std::fs::read(&bin_path)?;
    let expected = manifest.n_frames * manifest.node_count * 16;
    if bytes.len() != expected {
        return Err(Error::CorruptArtifact {
            path: bin_path.display().to_string(),
            reason: format!("expected {expected} bytes, found {}", bytes.len()),
        });
    }
    if sha256_hex(&bytes) != manifest.frames_sha256 {
        return Err(Error::CorruptArtifact {
            path: bin_path.display().to_string(),
            reason: "checksum mismatch".into(),
        });
    }

    let mut values = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap()));
    let mut frames = Vec::with_capacity(manifest.n_frames);
    for _ in 0..manifest.n_frames {
        let positions: Vec<Point> = (0..manifest.node_count)
            .map(|_| {
                let x = values.next().unwrap();
                let z = values.next().unwrap();
                Point::new(x, z)
            })
            .collect();
        frames.push(MeshState { positions, kinds: manifest.kinds.clone() });
    }

    let dataset = TrajectoryDataset {
        config: manifest.config,
        topology: manifest.topology,
        frames,
        split: manifest.split,
    };
    dataset.validate()?;
    Ok(dataset)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::process;

    /// Ring-wise thickening limit for the default 30 -> 27 mm reduction,
    /// frozen from sqrt over the frozen radius ratio.
    const STOROSCHEW_DESK: f64 = 1.5811388300841898;

    fn quick_config(n_steps: usize) -> RunConfig {
        let mut config = RunConfig::desk_default();
        config.n_steps = n_steps;
        config
    }

    #[test]
    fn desk_default_is_valid_and_consistent_with_process_model() {
        let config = RunConfig::desk_default();
        config.validate().unwrap();
        let d_a1 = 2.0 * config.die.reduction_radius_mm;
        let phi = process::deformation_degree(config.tube.outer_diameter_mm, d_a1).unwrap();
        assert!((phi - config.phi_target).abs() < 1e-12);
        assert!((config.feed_per_step_m() - 1.5e-5).abs() < 1e-20);
    }

    #[test]
    fn validation_rejects_inconsistent_phi_and_tight_die() {
        let mut config = RunConfig::desk_default();
        config.phi_target = 0.3;
        assert!(config.validate().is_err());

        let mut config = RunConfig::desk_default();
        config.die.entry_radius_mm = 14.9;
        assert!(config.validate().is_err());

        let mut config = RunConfig::desk_default();
        config.n_steps = 0;
        assert!(config.validate().is_err());
    }

    #[test]
    fn pre_contact_motion_is_pure_axial_translation() {
        // Contact starts once the bottom ring clears the 0.05 mm entry gap,
        // around step 13; before that every tube node just translates.
        let config = quick_config(8);
        let ds = generate(&config).unwrap();
        let feed = config.feed_per_step_m();
        let first = ds.initial_state();
        let last = ds.final_state();
        for i in ds.topology.tube_range() {
            assert_eq!(first.positions[i].x, last.positions[i].x, "node {i} moved radially");
            let dz = last.positions[i].z - first.positions[i].z;
            assert!((dz + 8.0 * feed).abs() < 1e-12, "node {i}: dz {dz}");
        }
        let p0 = ds.initial_profile().unwrap();
        let p1 = ds.final_profile().unwrap();
        for (a, b) in p0.samples().iter().zip(p1.samples()) {
            assert!((a.1 - b.1).abs() < 1e-9);
        }
    }

    #[test]
    fn quasi_stationary_thickness_matches_ringwise_limit() {
        let ds = generate(&RunConfig::desk_default()).unwrap();
        let profile = ds.final_profile().unwrap();
        let max = profile.samples().iter().map(|s| s.1).fold(0.0, f64::max);
        // Rings that reached the calibration zone carry the full reduction.
        assert!(
            (max / STOROSCHEW_DESK - 1.0).abs() < 3e-3,
            "deepest ring thickness {max}"
        );
        // No ring exceeds the limit (beyond the initial jitter).
        assert!(max <= STOROSCHEW_DESK * (1.0 + 1e-4));
        // Thickness falls off away from the die end at position 0.
        let s = profile.samples();
        for pair in s.windows(2) {
            assert!(pair[1].1 <= pair[0].1 + 1e-3);
        }
        // The stamp-side end is still at the blank thickness.
        assert!((s[s.len() - 1].1 - 1.5).abs() < 1e-3);
    }

    #[test]
    fn section_area_is_conserved_within_two_percent() {
        let ds = generate(&RunConfig::desk_default()).unwrap();
        let a0 = section_area(ds.initial_state(), &ds.topology).unwrap();
        for (k, frame) in ds.frames.iter().enumerate().step_by(50) {
            let a = section_area(frame, &ds.topology).unwrap();
            assert!((a / a0 - 1.0).abs() < 0.02, "frame {k}: area ratio {}", a / a0);
        }
        let a_final = section_area(ds.final_state(), &ds.topology).unwrap();
        assert!((a_final / a0 - 1.0).abs() < 0.02);
    }

    #[test]
    fn rigid_bodies_follow_their_prescription() {
        let config = quick_config(120);
        let ds = generate(&config).unwrap();
        let die_range = ds.topology.range_of(NodeKind::Die).unwrap();
        let stamp_range = ds.topology.range_of(NodeKind::Stamp).unwrap();
        let feed = config.feed_per_step_m();
        let first = ds.initial_state();
        for (t, frame) in ds.frames.iter().enumerate() {
            for i in die_range.clone() {
                assert_eq!(frame.positions[i], first.positions[i], "die node {i} moved");
            }
            for i in stamp_range.clone() {
                assert_eq!(frame.positions[i].x, first.positions[i].x);
                let expected = first.positions[i].z - t as f64 * feed;
                assert_eq!(frame.positions[i].z, expected, "stamp node {i} at frame {t}");
            }
        }
    }

    #[test]
    fn tube_never_penetrates_the_die() {
        let config = quick_config(400);
        let ds = generate(&config).unwrap();
        let contour = DieContour::from_geometry(&config.die).unwrap();
        for frame in ds.frames.iter() {
            for i in ds.topology.tube_range() {
                let p = frame.positions[i];
                assert!(p.x <= contour.radius_at(p.z) + 1e-9);
            }
        }
    }

    #[test]
    fn generation_is_deterministic_and_seed_sensitive() {
        let config = quick_config(60);
        let a = generate(&config).unwrap();
        let b = generate(&config).unwrap();
        assert_eq!(a.frames, b.frames);

        let mut other = config;
        other.seed = 2;
        let c = generate(&other).unwrap();
        assert_ne!(a.frames[0], c.frames[0]);
    }

    #[test]
    fn overlong_stroke_is_rejected_at_runtime() {
        let config = quick_config(1400);
        let err = generate(&config).unwrap_err();
        assert!(matches!(err, Error::OutOfDomain(_)), "{err}");
    }

    #[test]
    fn dataset_roundtrip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let mut ds = generate(&quick_config(40)).unwrap();
        ds.split = Some(SplitTag::Test);
        write_dataset(&ds, dir.path()).unwrap();
        let back = read_dataset(dir.path()).unwrap();
        assert_eq!(ds.config, back.config);
        assert_eq!(ds.topology, back.topology);
        assert_eq!(ds.frames, back.frames);
        assert_eq!(back.split, Some(SplitTag::Test));
    }

    #[test]
    fn dataset_corruption_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        let ds = generate(&quick_config(10)).unwrap();
        write_dataset(&ds, dir.path()).unwrap();

        let bin = dir.path().join("frames.bin");
        let mut bytes = std::fs::read(&bin).unwrap();
        bytes[33] ^= 0x01;
        std::fs::write(&bin, &bytes).unwrap();
        assert!(matches!(read_dataset(dir.path()), Err(Error::CorruptArtifact { .. })));

        write_dataset(&ds, dir.path()).unwrap();
        let bytes = std::fs::read(&bin).unwrap();
        std::fs::write(&bin, &bytes[..bytes.len() - 16]).unwrap();
        assert!(matches!(read_dataset(dir.path()), Err(Error::CorruptArtifact { .. })));

        // A manifest that disagrees with the frame count is a validation
        // error even when the checksum is refreshed.
        let mut shorter = ds.clone();
        shorter.frames.pop();
        assert!(write_dataset(&shorter, dir.path()).is_err());
    }

    #[test]
    fn campaign_grid_has_forty_nine_valid_cells() {
        let grid = table2_grid();
        assert_eq!(grid.len(), 49);
        for config in &grid {
            config.validate().unwrap();
        }
        // Seeds are distinct so trajectories differ.
        let mut seeds: Vec<u64> = grid.iter().map(|c| c.seed).collect();
        seeds.sort_unstable();
        seeds.dedup();
        assert_eq!(seeds.len(), 49);
    }

    #[test]
    fn campaign_split_holds_out_the_nine_fixed_cells() {
        let grid = table2_grid();
        let split = make_split(&grid).unwrap();
        assert_eq!(split.train.len(), 40);
        assert_eq!(split.test.len(), 9);
        let mut all: Vec<usize> = split.train.iter().chain(&split.test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..49).collect::<Vec<_>>());

        let expected: Vec<(f64, f64)> = TABLE2_TEST
            .iter()
            .map(|&(i, j)| (table2_phi(i), table2_alpha(j)))
            .collect();
        for &idx in &split.test {
            let c = &grid[idx];
            assert!(
                expected
                    .iter()
                    .any(|&(p, a)| near(p, c.phi_target, 1e-9) && near(a, c.die.half_angle_deg, 1e-9)),
                "unexpected test cell {}",
                c.label()
            );
        }
    }

    #[test]
    fn three_by_three_split_holds_out_the_center() {
        let mut grid = Vec::new();
        for &phi in &[0.15, 0.20, 0.25] {
            for &alpha in &[7.5, 10.0, 12.5] {
                grid.push(RunConfig::with_phi_alpha(phi, alpha));
            }
        }
        let split = make_split(&grid).unwrap();
        assert_eq!(split.test, vec![4]);
        assert_eq!(split.train.len(), 8);
    }

    #[test]
    fn tiny_splits_and_degenerate_grids() {
        let two = vec![RunConfig::with_phi_alpha(0.15, 10.0), RunConfig::with_phi_alpha(0.20, 10.0)];
        let split = make_split(&two).unwrap();
        assert_eq!(split.test, vec![1]);
        assert_eq!(split.train, vec![0]);

        assert!(make_split(&two[..1]).is_err());

        let dup = vec![two[0], two[0]];
        assert!(make_split(&dup).is_err());

        // Single phi row: falls back to a middle config.
        let row: Vec<RunConfig> = [5.0, 10.0, 15.0, 20.0]
            .iter()
            .map(|&a| RunConfig::with_phi_alpha(0.2, a))
            .collect();
        let split = make_split(&row).unwrap();
        assert_eq!(split.test.len(), 1);
        let held = split.test[0];
        assert!(held != 0 && held != row.len() - 1);
    }
}
