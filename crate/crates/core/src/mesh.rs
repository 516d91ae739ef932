//! Mesh and graph data model for the axisymmetric nosing scene.
//!
//! The scene is a 2D section in the (x, z) half-plane: x is the radial
//! coordinate (x >= 0), z the axial one. Three objects exist — the
//! deformable tube (a structured quad grid spanning its wall), the fixed die
//! (a band of nodes sampled along its working contour, carrying no internal
//! edges), and the moving stamp (a single node row above the tube). The tube
//! sits above the die and is pressed downward, so z decreases along the feed
//! direction.
//!
//! Static topology covers only tube mesh edges; die and stamp couple to the
//! tube exclusively through dynamic contact edges rebuilt from node
//! positions each step.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rollout::ThicknessProfile;
use crate::MM;

/// Radial cut applied to die nodes: the working band ends at x = 17 mm.
pub const DIE_RADIAL_CUTOFF_M: f64 = 0.017;

/// Axial length of the straight entry section above the cone mouth.
pub(crate) const DIE_ENTRY_SECTION_MM: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub z: f64,
}

impl Point {
    pub fn new(x: f64, z: f64) -> Self {
        Point { x, z }
    }

    pub fn distance(self, other: Point) -> f64 {
        let dx = self.x - other.x;
        let dz = self.z - other.z;
        (dx * dx + dz * dz).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeKind {
    Tube,
    Die,
    Stamp,
}

impl NodeKind {
    pub fn is_rigid(self) -> bool {
        !matches!(self, NodeKind::Tube)
    }
}

/// Node positions plus their kinds; the mutable part of the graph.
#[derive(Debug, Clone, PartialEq)]
pub struct MeshState {
    pub positions: Vec<Point>,
    pub kinds: Vec<NodeKind>,
}

impl MeshState {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.positions.is_empty() || self.positions.len() != self.kinds.len() {
            return Err(Error::InconsistentMesh(format!(
                "{} positions vs {} kinds",
                self.positions.len(),
                self.kinds.len()
            )));
        }
        for (i, p) in self.positions.iter().enumerate() {
            if !(p.x.is_finite() && p.z.is_finite()) {
                return Err(Error::InconsistentMesh(format!("non-finite coordinate at node {i}")));
            }
            if p.x < 0.0 {
                return Err(Error::InconsistentMesh(format!(
                    "node {i} at x = {} outside the half-plane",
                    p.x
                )));
            }
        }
        Ok(())
    }
}

/// Directed edge between node indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Edge {
    pub src: u32,
    pub dst: u32,
}

/// Contiguous node-index range owned by one object.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObjectRange {
    pub kind: NodeKind,
    pub start: usize,
    pub end: usize,
}

/// Row/column extents of the tube grid. Row 0 is the tube top (stamp side);
/// column 0 the inner wall surface.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridDims {
    pub rows: usize,
    pub cols: usize,
}

impl GridDims {
    pub fn node(self, row: usize, col: usize) -> usize {
        row * self.cols + col
    }
}

/// Static graph structure: tube mesh edges and object index ranges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Topology {
    /// Directed tube mesh edges, both directions present, sorted (src, dst).
    pub tube_edges: Vec<Edge>,
    pub node_count: usize,
    pub objects: Vec<ObjectRange>,
    pub tube_grid: Option<GridDims>,
}

impl Topology {
    pub fn range_of(&self, kind: NodeKind) -> Option<std::ops::Range<usize>> {
        self.objects
            .iter()
            .find(|o| o.kind == kind)
            .map(|o| o.start..o.end)
    }

    pub fn tube_range(&self) -> std::ops::Range<usize> {
        self.range_of(NodeKind::Tube).unwrap_or(0..0)
    }

    /// Combine a tube and a die topology with a stamp row of `stamp_nodes`
    /// appended last. Tube indices stay put, so its edge list carries over.
    pub fn assemble(tube: &Topology, die: &Topology, stamp_nodes: usize) -> Topology {
        let die_start = tube.node_count;
        let stamp_start = die_start + die.node_count;
        Topology {
            tube_edges: tube.tube_edges.clone(),
            node_count: stamp_start + stamp_nodes,
            objects: vec![
                ObjectRange { kind: NodeKind::Tube, start: 0, end: tube.node_count },
                ObjectRange { kind: NodeKind::Die, start: die_start, end: stamp_start },
                ObjectRange {
                    kind: NodeKind::Stamp,
                    start: stamp_start,
                    end: stamp_start + stamp_nodes,
                },
            ],
            tube_grid: tube.tube_grid,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for e in &self.tube_edges {
            if e.src as usize >= self.node_count || e.dst as usize >= self.node_count {
                return Err(Error::InconsistentMesh(format!(
                    "edge ({}, {}) outside {} nodes",
                    e.src, e.dst, self.node_count
                )));
            }
        }
        let mut covered = 0;
        for o in &self.objects {
            if o.start != covered || o.end < o.start {
                return Err(Error::InconsistentMesh("object ranges must tile the index space".into()));
            }
            covered = o.end;
        }
        if covered != self.node_count {
            return Err(Error::InconsistentMesh(format!(
                "object ranges cover {covered} of {} nodes",
                self.node_count
            )));
        }
        Ok(())
    }
}

/// One edge population with per-edge features, row-aligned with `edges`.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeSet {
    pub edges: Vec<Edge>,
    pub features: Array2<f64>,
}

impl EdgeSet {
    pub fn empty(feature_dim: usize) -> Self {
        EdgeSet { edges: Vec::new(), features: Array2::zeros((0, feature_dim)) }
    }

    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }
}

/// The three edge populations of one graph snapshot.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeSets {
    /// Tube mesh edges: features (dx, dz, dist).
    pub tube: EdgeSet,
    /// Tube-die contact edges: features (dx, dz, dist, mu).
    pub die: EdgeSet,
    /// Tube-stamp contact edges: features (dx, dz, dist, mu).
    pub stamp: EdgeSet,
}

impl EdgeSets {
    pub fn build(state: &MeshState, topology: &Topology, contact_radius: f64, mu: f64) -> Result<Self> {
        let tube = tube_edge_features(state, topology);
        let (die, stamp) = dynamic_contact_edges(state, contact_radius, mu)?;
        Ok(EdgeSets { tube, die, stamp })
    }
}

/// Build the tube wall section as a structured quad grid. Arguments in mm,
/// output coordinates in meters. Rows run from the tube top (z = length)
/// down to z = 0; columns from the inner to the outer wall surface.
pub fn build_tube_mesh(
    d_a0: f64,
    s0: f64,
    length: f64,
    element_size: f64,
) -> Result<(MeshState, Topology)> {
    for (name, v) in [("d_a0", d_a0), ("s0", s0), ("length", length), ("element_size", element_size)] {
        if !(v.is_finite() && v > 0.0) {
            return Err(Error::invalid(format!("{name} must be positive and finite, got {v}")));
        }
    }
    if d_a0 <= 2.0 * s0 {
        return Err(Error::invalid(format!(
            "wall of {s0} mm does not fit a tube of outer diameter {d_a0} mm"
        )));
    }
    let rows = (length / element_size).round() as usize + 1;
    let cols = (s0 / element_size).round() as usize + 1;
    if rows < 2 || cols < 2 {
        return Err(Error::invalid(format!(
            "element size {element_size} mm leaves a degenerate {rows}x{cols} grid"
        )));
    }

    let inner = (d_a0 / 2.0 - s0) * MM;
    let dx = s0 * MM / (cols - 1) as f64;
    let dz = length * MM / (rows - 1) as f64;
    let top = length * MM;

    let mut positions = Vec::with_capacity(rows * cols);
    for row in 0..rows {
        let z = top - row as f64 * dz;
        for col in 0..cols {
            positions.push(Point::new(inner + col as f64 * dx, z));
        }
    }

    let grid = GridDims { rows, cols };
    let mut edges = Vec::with_capacity(4 * rows * cols);
    for row in 0..rows {
        for col in 0..cols {
            let src = grid.node(row, col) as u32;
            let mut push = |r: isize, c: isize| {
                if (0..rows as isize).contains(&r) && (0..cols as isize).contains(&c) {
                    edges.push(Edge { src, dst: grid.node(r as usize, c as usize) as u32 });
                }
            };
            push(row as isize - 1, col as isize);
            push(row as isize + 1, col as isize);
            push(row as isize, col as isize - 1);
            push(row as isize, col as isize + 1);
        }
    }
    edges.sort_unstable();

    let state = MeshState { positions, kinds: vec![NodeKind::Tube; rows * cols] };
    let topology = Topology {
        tube_edges: edges,
        node_count: rows * cols,
        objects: vec![ObjectRange { kind: NodeKind::Tube, start: 0, end: rows * cols }],
        tube_grid: Some(grid),
    };
    Ok((state, topology))
}

/// Die geometry, all lengths in mm. The working contour runs: straight entry
/// section at `entry_radius`, cone at `half_angle_deg`, rounding arc of
/// radius `rounding_radius` into the calibration cylinder at
/// `reduction_radius`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DieGeometry {
    pub entry_radius_mm: f64,
    pub reduction_radius_mm: f64,
    pub half_angle_deg: f64,
    pub rounding_radius_mm: f64,
    pub calibration_length_mm: f64,
}

impl DieGeometry {
    pub fn validate(&self) -> Result<()> {
        if !(self.reduction_radius_mm > 0.0 && self.entry_radius_mm > self.reduction_radius_mm) {
            return Err(Error::invalid(format!(
                "need entry radius > reduction radius > 0, got ({}, {})",
                self.entry_radius_mm, self.reduction_radius_mm
            )));
        }
        crate::process::check_half_angle(self.half_angle_deg)?;
        if self.rounding_radius_mm < 0.0 || self.calibration_length_mm < 0.0 {
            return Err(Error::invalid("rounding radius and calibration length must be >= 0"));
        }
        Ok(())
    }
}

/// Piecewise die contour x(z) in meters: entry cylinder for z >= 0, cone for
/// z below, rounding arc tangent to cone and calibration cylinder.
#[derive(Debug, Clone, Copy)]
pub(crate) struct DieContour {
    pub entry_radius: f64,
    pub reduction_radius: f64,
    tan_alpha: f64,
    half_angle_rad: f64,
    rounding: f64,
    /// Arc center (reduction_radius + rounding, center_z).
    center_z: f64,
    /// z where the arc meets the cone tangentially.
    arc_top_z: f64,
    pub entry_top_z: f64,
    pub bottom_z: f64,
}

impl DieContour {
    pub fn from_geometry(geometry: &DieGeometry) -> Result<Self> {
        geometry.validate()?;
        let entry = geometry.entry_radius_mm * MM;
        let red = geometry.reduction_radius_mm * MM;
        let rm = geometry.rounding_radius_mm * MM;
        let alpha = geometry.half_angle_deg.to_radians();
        let tan_alpha = alpha.tan();

        // Tangency: the arc center sits rounding-distance from both the
        // calibration line x = red and the cone line x = entry + z*tan(a).
        let center_z = (red - entry + rm * (1.0 - 1.0 / alpha.cos())) / tan_alpha;
        let arc_top_z = center_z + rm * alpha.sin();
        if arc_top_z > 0.0 || red + rm * (1.0 - alpha.cos()) > entry {
            return Err(Error::invalid(format!(
                "rounding radius {} mm does not fit the cone",
                geometry.rounding_radius_mm
            )));
        }
        Ok(DieContour {
            entry_radius: entry,
            reduction_radius: red,
            tan_alpha,
            half_angle_rad: alpha,
            rounding: rm,
            center_z,
            arc_top_z,
            entry_top_z: DIE_ENTRY_SECTION_MM * MM,
            bottom_z: center_z - geometry.calibration_length_mm * MM,
        })
    }

    /// Contour radius at axial position z. Constant beyond either end.
    pub fn radius_at(&self, z: f64) -> f64 {
        if z >= 0.0 {
            self.entry_radius
        } else if z >= self.arc_top_z {
            self.entry_radius + z * self.tan_alpha
        } else if z >= self.center_z {
            let dz = z - self.center_z;
            self.reduction_radius + self.rounding - (self.rounding * self.rounding - dz * dz).sqrt()
        } else {
            self.reduction_radius
        }
    }

    /// Axial extent of the cone piece (mouth to arc tangency).
    pub fn cone_extent(&self) -> f64 {
        -self.arc_top_z
    }

    /// Sample the contour at roughly `spacing` intervals of arc length, from
    /// the entry section down to the calibration end.
    pub fn sample(&self, spacing: f64) -> Vec<Point> {
        struct Piece {
            length: f64,
            at: Box<dyn Fn(f64) -> Point>,
        }
        let entry_r = self.entry_radius;
        let entry_top = self.entry_top_z;
        let tan_alpha = self.tan_alpha;
        let alpha = self.half_angle_rad;
        let cone_dz = self.cone_extent();
        let center = Point::new(self.reduction_radius + self.rounding, self.center_z);
        let rounding = self.rounding;
        let red = self.reduction_radius;
        let cal_len = self.center_z - self.bottom_z;
        let center_z = self.center_z;

        let pieces = [
            Piece {
                length: entry_top,
                at: Box::new(move |t| Point::new(entry_r, entry_top * (1.0 - t))),
            },
            Piece {
                length: cone_dz / alpha.cos(),
                at: Box::new(move |t| {
                    let z = -cone_dz * t;
                    Point::new(entry_r + z * tan_alpha, z)
                }),
            },
            Piece {
                length: rounding * alpha,
                at: Box::new(move |t| {
                    let psi = alpha * (1.0 - t);
                    Point::new(center.x - rounding * psi.cos(), center.z + rounding * psi.sin())
                }),
            },
            Piece {
                length: cal_len,
                at: Box::new(move |t| Point::new(red, center_z - cal_len * t)),
            },
        ];

        let total: f64 = pieces.iter().map(|p| p.length).sum();
        let n = ((total / spacing).round() as usize).max(1) + 1;
        let mut points = Vec::with_capacity(n);
        for i in 0..n {
            let mut s = total * i as f64 / (n - 1) as f64;
            let mut chosen = None;
            for piece in &pieces {
                if piece.length <= 0.0 {
                    continue;
                }
                if s <= piece.length {
                    chosen = Some((piece.at)(s / piece.length));
                    break;
                }
                s -= piece.length;
            }
            // Accumulated rounding can leave s marginally past the last piece.
            let p = chosen.unwrap_or_else(|| {
                let last = pieces.iter().rev().find(|p| p.length > 0.0).unwrap();
                (last.at)(1.0)
            });
            points.push(p);
        }
        points
    }
}

/// Sample the die working surface as a node band. No internal edges: the die
/// is rigid and reaches the tube only through contact edges.
pub fn build_die_mesh(geometry: &DieGeometry, element_size: f64) -> Result<(MeshState, Topology)> {
    if !(element_size.is_finite() && element_size > 0.0) {
        return Err(Error::invalid(format!("element size must be positive, got {element_size}")));
    }
    let contour = DieContour::from_geometry(geometry)?;
    let positions: Vec<Point> = contour
        .sample(element_size * MM)
        .into_iter()
        .filter(|p| p.x <= DIE_RADIAL_CUTOFF_M)
        .collect();
    if positions.is_empty() {
        return Err(Error::invalid("die contour lies entirely outside the radial cutoff"));
    }
    let n = positions.len();
    let state = MeshState { positions, kinds: vec![NodeKind::Die; n] };
    let topology = Topology {
        tube_edges: Vec::new(),
        node_count: n,
        objects: vec![ObjectRange { kind: NodeKind::Die, start: 0, end: n }],
        tube_grid: None,
    };
    Ok((state, topology))
}

/// Features (dx, dz[, dist, mu]) for a directed edge: relative coordinates
/// of src with respect to dst plus their euclidean distance.
fn edge_feature(state: &MeshState, e: Edge, mu: Option<f64>) -> [f64; 4] {
    let ps = state.positions[e.src as usize];
    let pd = state.positions[e.dst as usize];
    let dx = ps.x - pd.x;
    let dz = ps.z - pd.z;
    [dx, dz, (dx * dx + dz * dz).sqrt(), mu.unwrap_or(0.0)]
}

/// Recompute tube mesh edge features from current node positions.
pub fn tube_edge_features(state: &MeshState, topology: &Topology) -> EdgeSet {
    let mut features = Array2::zeros((topology.tube_edges.len(), 3));
    for (row, &e) in topology.tube_edges.iter().enumerate() {
        let f = edge_feature(state, e, None);
        features[[row, 0]] = f[0];
        features[[row, 1]] = f[1];
        features[[row, 2]] = f[2];
    }
    EdgeSet { edges: topology.tube_edges.clone(), features }
}

/// Build both dynamic contact populations: every (tube, die) and
/// (tube, stamp) node pair strictly closer than `contact_radius` contributes
/// edges in both directions, carrying (dx, dz, dist, mu). Edges are sorted
/// by (src, dst).
pub fn dynamic_contact_edges(
    state: &MeshState,
    contact_radius: f64,
    mu: f64,
) -> Result<(EdgeSet, EdgeSet)> {
    if !(contact_radius > 0.0) {
        return Err(Error::invalid(format!(
            "contact radius must be positive, got {contact_radius}"
        )));
    }
    let mut tube = Vec::new();
    let mut die = Vec::new();
    let mut stamp = Vec::new();
    for (i, &k) in state.kinds.iter().enumerate() {
        match k {
            NodeKind::Tube => tube.push(i as u32),
            NodeKind::Die => die.push(i as u32),
            NodeKind::Stamp => stamp.push(i as u32),
        }
    }

    let pair_up = |rigid: &[u32]| -> EdgeSet {
        let mut edges = Vec::new();
        for &t in &tube {
            let pt = state.positions[t as usize];
            for &r in rigid {
                if pt.distance(state.positions[r as usize]) < contact_radius {
                    edges.push(Edge { src: t, dst: r });
                    edges.push(Edge { src: r, dst: t });
                }
            }
        }
        edges.sort_unstable();
        let mut features = Array2::zeros((edges.len(), 4));
        for (row, &e) in edges.iter().enumerate() {
            let f = edge_feature(state, e, Some(mu));
            features.row_mut(row).assign(&ndarray::arr1(&f));
        }
        EdgeSet { edges, features }
    };

    Ok((pair_up(&die), pair_up(&stamp)))
}

/// Extract the wall-thickness profile of the tube: one sample per grid row,
/// positioned by mid-surface arc length from the tube top, thickness as the
/// radial wall extent. Output in mm.
pub fn thickness_profile(state: &MeshState, topology: &Topology) -> Result<ThicknessProfile> {
    let grid = topology
        .tube_grid
        .ok_or_else(|| Error::InconsistentMesh("topology has no tube grid".into()))?;
    let tube_start = topology.tube_range().start;

    // Position 0 is the die-side end of the tube, the last sample the
    // stamp-side end; windows anchored at 0 keep the formed region.
    let mut samples = Vec::with_capacity(grid.rows);
    let mut arc = 0.0;
    let mut prev_mid: Option<Point> = None;
    for row in (0..grid.rows).rev() {
        let inner = state.positions[tube_start + grid.node(row, 0)];
        let outer = state.positions[tube_start + grid.node(row, grid.cols - 1)];
        let thickness = outer.x - inner.x;
        if thickness <= 0.0 {
            return Err(Error::InconsistentMesh(format!(
                "inverted wall at row {row}: outer x {} <= inner x {}",
                outer.x, inner.x
            )));
        }
        let mid = Point::new(0.5 * (inner.x + outer.x), 0.5 * (inner.z + outer.z));
        if let Some(prev) = prev_mid {
            let step = mid.distance(prev);
            if step <= 0.0 {
                return Err(Error::InconsistentMesh(format!("collapsed rows at {row}")));
            }
            arc += step;
        }
        prev_mid = Some(mid);
        samples.push((arc / MM, thickness / MM));
    }
    ThicknessProfile::new(samples)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn tube_mesh_counts_match_element_size() {
        let (state, topo) = build_tube_mesh(30.0, 1.5, 60.0, 0.4).unwrap();
        let grid = topo.tube_grid.unwrap();
        assert_eq!(grid.cols, 5);
        assert_eq!(grid.rows, 151);
        assert_eq!(state.len(), 151 * 5);
        state.validate().unwrap();
        topo.validate().unwrap();
        // Radial span [13.5, 15] mm, axial [0, 60] mm.
        let xs: Vec<f64> = state.positions.iter().map(|p| p.x).collect();
        let x_min = xs.iter().cloned().fold(f64::INFINITY, f64::min);
        let x_max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert!((x_min - 0.0135).abs() < 1e-12);
        assert!((x_max - 0.0150).abs() < 1e-12);
    }

    #[test]
    fn smallest_grid_has_interior_degree_four() {
        let (_, topo) = build_tube_mesh(30.0, 1.0, 1.0, 0.5).unwrap();
        let grid = topo.tube_grid.unwrap();
        assert_eq!((grid.rows, grid.cols), (3, 3));
        let center = grid.node(1, 1) as u32;
        let out: Vec<_> = topo.tube_edges.iter().filter(|e| e.src == center).collect();
        assert_eq!(out.len(), 4);
    }

    #[test]
    fn grid_degrees_by_position() {
        let (_, topo) = build_tube_mesh(30.0, 1.5, 4.0, 0.4).unwrap();
        let grid = topo.tube_grid.unwrap();
        let mut out_degree = vec![0usize; topo.node_count];
        for e in &topo.tube_edges {
            out_degree[e.src as usize] += 1;
        }
        for row in 0..grid.rows {
            for col in 0..grid.cols {
                let on_row_edge = row == 0 || row == grid.rows - 1;
                let on_col_edge = col == 0 || col == grid.cols - 1;
                let expected = match (on_row_edge, on_col_edge) {
                    (true, true) => 2,
                    (false, false) => 4,
                    _ => 3,
                };
                assert_eq!(out_degree[grid.node(row, col)], expected, "({row}, {col})");
            }
        }
    }

    #[test]
    fn tube_mesh_rejects_degenerate_inputs() {
        assert!(build_tube_mesh(30.0, 31.0, 60.0, 0.4).is_err());
        assert!(build_tube_mesh(30.0, 15.0, 60.0, 0.4).is_err());
        assert!(build_tube_mesh(-30.0, 1.5, 60.0, 0.4).is_err());
        assert!(build_tube_mesh(30.0, 1.5, 0.1, 0.4).is_err());
        assert!(build_tube_mesh(30.0, 1.5, 60.0, f64::NAN).is_err());
    }

    fn desk_die(phi: f64, alpha: f64) -> DieGeometry {
        DieGeometry {
            entry_radius_mm: 15.05,
            reduction_radius_mm: 15.0 * (-phi / 2.0f64).exp(),
            half_angle_deg: alpha,
            rounding_radius_mm: 1.0,
            calibration_length_mm: 3.0,
        }
    }

    #[test]
    fn die_contour_is_continuous_and_monotone() {
        let contour = DieContour::from_geometry(&desk_die(0.3, 10.0)).unwrap();
        let mut prev = f64::INFINITY;
        let mut z = contour.entry_top_z;
        while z > contour.bottom_z {
            let r = contour.radius_at(z);
            assert!(r <= prev + 1e-12, "contour widens at z = {z}");
            prev = r;
            z -= 1e-5;
        }
        assert!((contour.radius_at(0.0) - contour.entry_radius).abs() < 1e-12);
        assert!((contour.radius_at(contour.bottom_z) - contour.reduction_radius).abs() < 1e-12);
    }

    #[test]
    fn cone_extent_without_rounding_matches_forming_zone() {
        // With no rounding arc the cone spans the full forming-zone length.
        let mut geometry = desk_die(0.3, 10.0);
        geometry.rounding_radius_mm = 0.0;
        let contour = DieContour::from_geometry(&geometry).unwrap();
        let expected = crate::process::forming_zone_length(
            geometry.entry_radius_mm,
            geometry.reduction_radius_mm,
            geometry.half_angle_deg,
        )
        .unwrap();
        assert!((contour.cone_extent() / MM - expected).abs() < 1e-9);
    }

    #[test]
    fn die_nodes_respect_radial_cutoff() {
        // Entry radius beyond 17 mm: the entry band is trimmed away.
        let geometry = DieGeometry {
            entry_radius_mm: 25.0,
            reduction_radius_mm: 10.0,
            half_angle_deg: 15.0,
            rounding_radius_mm: 1.0,
            calibration_length_mm: 3.0,
        };
        let (state, topo) = build_die_mesh(&geometry, 0.4).unwrap();
        assert!(state.positions.iter().all(|p| p.x <= DIE_RADIAL_CUTOFF_M));
        assert!(topo.tube_edges.is_empty());
        assert!(state.len() > 10);
    }

    #[test]
    fn die_mesh_zero_length_calibration_is_closed() {
        let mut geometry = desk_die(0.2, 10.0);
        geometry.calibration_length_mm = 0.0;
        let (state, _) = build_die_mesh(&geometry, 0.4).unwrap();
        for w in state.positions.windows(2) {
            assert!(w[0] != w[1], "duplicate die nodes");
        }
        // Contour still reaches the reduction radius.
        let x_min = state.positions.iter().map(|p| p.x).fold(f64::INFINITY, f64::min);
        assert!((x_min / MM - geometry.reduction_radius_mm).abs() < 0.05);
    }

    #[test]
    fn die_mesh_rejects_inverted_radii() {
        let geometry = DieGeometry {
            entry_radius_mm: 10.0,
            reduction_radius_mm: 15.0,
            half_angle_deg: 10.0,
            rounding_radius_mm: 1.0,
            calibration_length_mm: 3.0,
        };
        assert!(build_die_mesh(&geometry, 0.4).is_err());
    }

    fn two_node_state(tube: Point, other: Point, kind: NodeKind) -> MeshState {
        MeshState { positions: vec![tube, other], kinds: vec![NodeKind::Tube, kind] }
    }

    #[test]
    fn contact_edge_hand_example() {
        let state = two_node_state(
            Point::new(0.0150, 0.0),
            Point::new(0.0155, 0.0),
            NodeKind::Die,
        );
        let (die, stamp) = dynamic_contact_edges(&state, 0.8e-3, 0.05).unwrap();
        assert_eq!(die.len(), 2);
        assert!(stamp.is_empty());
        assert_eq!(die.edges[0], Edge { src: 0, dst: 1 });
        assert_eq!(die.edges[1], Edge { src: 1, dst: 0 });
        assert!((die.features[[0, 2]] - 0.0005).abs() < 1e-15);
        assert_eq!(die.features[[0, 3]], 0.05);
        // Forward and reverse carry negated relative coordinates.
        assert_eq!(die.features[[0, 0]], -die.features[[1, 0]]);
    }

    #[test]
    fn contact_predicate_is_strict() {
        let state = two_node_state(
            Point::new(0.0150, 0.0),
            Point::new(0.0158, 0.0),
            NodeKind::Die,
        );
        // dist == r exactly: no edge.
        let (die, _) = dynamic_contact_edges(&state, 0.8e-3, 0.05).unwrap();
        assert!(die.is_empty());
        let (die, _) = dynamic_contact_edges(&state, 0.8e-3 + 1e-9, 0.05).unwrap();
        assert_eq!(die.len(), 2);
    }

    #[test]
    fn distant_bodies_produce_no_edges() {
        let state = two_node_state(
            Point::new(0.0150, 0.0),
            Point::new(0.0150, 0.5),
            NodeKind::Die,
        );
        let (die, stamp) = dynamic_contact_edges(&state, 0.8e-3, 0.05).unwrap();
        assert!(die.is_empty() && stamp.is_empty());
    }

    #[test]
    fn thickness_profile_of_fresh_tube_is_constant() {
        let (state, topo) = build_tube_mesh(30.0, 1.5, 16.0, 0.4).unwrap();
        let profile = thickness_profile(&state, &topo).unwrap();
        assert_eq!(profile.samples().len(), 41);
        for &(_, s) in profile.samples() {
            assert!((s - 1.5).abs() < 1e-9);
        }
        assert!((profile.length() - 16.0).abs() < 1e-9);
    }

    #[test]
    fn thickness_profile_sees_uniform_compression() {
        let (mut state, topo) = build_tube_mesh(30.0, 1.5, 16.0, 0.4).unwrap();
        let grid = topo.tube_grid.unwrap();
        for row in 0..grid.rows {
            state.positions[grid.node(row, grid.cols - 1)].x -= 0.1 * MM;
        }
        let profile = thickness_profile(&state, &topo).unwrap();
        for &(_, s) in profile.samples() {
            assert!((s - 1.4).abs() < 1e-9);
        }
    }

    #[test]
    fn thickness_profile_rejects_inverted_wall() {
        let (mut state, topo) = build_tube_mesh(30.0, 1.5, 16.0, 0.4).unwrap();
        let grid = topo.tube_grid.unwrap();
        state.positions[grid.node(3, grid.cols - 1)].x = 0.001;
        assert!(thickness_profile(&state, &topo).is_err());
    }

    proptest! {
        /// Contact construction agrees with an independent all-pairs scan.
        #[test]
        fn contact_edges_match_brute_force(
            tube_xs in proptest::collection::vec((0.0f64..0.02, -0.01f64..0.03), 1..20),
            die_xs in proptest::collection::vec((0.0f64..0.02, -0.01f64..0.03), 1..20),
            radius in 1e-4f64..5e-3,
        ) {
            let mut positions = Vec::new();
            let mut kinds = Vec::new();
            for (x, z) in &tube_xs {
                positions.push(Point::new(*x, *z));
                kinds.push(NodeKind::Tube);
            }
            for (x, z) in &die_xs {
                positions.push(Point::new(*x, *z));
                kinds.push(NodeKind::Die);
            }
            let state = MeshState { positions, kinds };
            let (die, _) = dynamic_contact_edges(&state, radius, 0.1).unwrap();

            let mut expected = Vec::new();
            for i in 0..tube_xs.len() {
                for j in tube_xs.len()..state.len() {
                    let d = state.positions[i].distance(state.positions[j]);
                    if d < radius {
                        expected.push(Edge { src: i as u32, dst: j as u32 });
                        expected.push(Edge { src: j as u32, dst: i as u32 });
                    }
                }
            }
            expected.sort_unstable();
            prop_assert_eq!(&die.edges, &expected);

            // Stored features reproduce bit-exactly from endpoints, and the
            // reverse edge negates the relative coordinates.
            for (row, e) in die.edges.iter().enumerate() {
                let ps = state.positions[e.src as usize];
                let pd = state.positions[e.dst as usize];
                prop_assert_eq!(die.features[[row, 0]], ps.x - pd.x);
                prop_assert_eq!(die.features[[row, 1]], ps.z - pd.z);
                let dist = ((ps.x - pd.x).powi(2) + (ps.z - pd.z).powi(2)).sqrt();
                prop_assert_eq!(die.features[[row, 2]], dist);
                let reverse = die.edges.binary_search(&Edge { src: e.dst, dst: e.src });
                prop_assert!(reverse.is_ok());
            }
        }

        #[test]
        fn tube_edges_are_symmetric_and_sorted(
            rows in 2usize..7,
            cols in 2usize..5,
        ) {
            let (_, topo) = build_tube_mesh(
                30.0,
                0.4 * (cols - 1) as f64,
                0.4 * (rows - 1) as f64,
                0.4,
            ).unwrap();
            let grid = topo.tube_grid.unwrap();
            prop_assert_eq!((grid.rows, grid.cols), (rows, cols));
            let mut sorted = topo.tube_edges.clone();
            sorted.sort_unstable();
            prop_assert_eq!(&sorted, &topo.tube_edges);
            for e in &topo.tube_edges {
                let reverse = Edge { src: e.dst, dst: e.src };
                prop_assert!(topo.tube_edges.binary_search(&reverse).is_ok());
            }
        }
    }
}
