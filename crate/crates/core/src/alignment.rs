//! Human-view / robot-view object correspondence.
//!
//! Workspace objects are projected through a pinhole camera into normalized
//! boxes, candidate pairs are gated by IoU, and the remaining pairs are
//! matched by minimum-cost assignment on the L2 distance between boxes.

use nalgebra::{Quaternion, UnitQuaternion, Vector3};
use rand::Rng;
use rand_distr::{Distribution, LogNormal, Normal};
use serde::{Deserialize, Serialize};

use crate::scene::{BBox, WorkspaceObject};

pub const DEFAULT_IOU_MIN: f64 = 0.6;

/// World-to-camera transform plus pinhole intrinsics. A world point `p`
/// maps to camera coordinates `R * p + t`; the camera looks along +z with
/// image x to the right and y down.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraPose {
    /// `[w, x, y, z]`
    pub rotation: [f64; 4],
    pub translation: Vector3<f64>,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl CameraPose {
    pub fn rotation(&self) -> UnitQuaternion<f64> {
        let [w, x, y, z] = self.rotation;
        UnitQuaternion::new_normalize(Quaternion::new(w, x, y, z))
    }

    pub fn identity(fx: f64, fy: f64, cx: f64, cy: f64) -> Self {
        Self { rotation: [1.0, 0.0, 0.0, 0.0], translation: Vector3::zeros(), fx, fy, cx, cy }
    }

    /// Camera at `eye` looking at `target`, with world +z as the up hint.
    pub fn look_at(eye: Vector3<f64>, target: Vector3<f64>, fx: f64, fy: f64, cx: f64, cy: f64) -> Self {
        let forward = (target - eye).normalize();
        let up_hint = if forward.cross(&Vector3::z()).norm() < 1e-6 { Vector3::y() } else { Vector3::z() };
        let right = forward.cross(&up_hint).normalize();
        let down = forward.cross(&right);
        // rows: camera axes expressed in world coordinates
        let m = nalgebra::Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        let rot = UnitQuaternion::from_matrix(&m);
        let q = rot.quaternion();
        Self {
            rotation: [q.w, q.i, q.j, q.k],
            translation: -(rot * eye),
            fx,
            fy,
            cx,
            cy,
        }
    }

    pub fn project(&self, p: &Vector3<f64>) -> Option<(f64, f64)> {
        let c = self.rotation() * p + self.translation;
        (c.z > 1e-9).then(|| (self.fx * c.x / c.z + self.cx, self.fy * c.y / c.z + self.cy))
    }
}

/// Box normalized by image size, center-anchored.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormBox {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl NormBox {
    pub fn from_pixels(b: &BBox, image_w: f64, image_h: f64) -> Self {
        Self { cx: (b.x + b.w / 2.0) / image_w, cy: (b.y + b.h / 2.0) / image_h, w: b.w / image_w, h: b.h / image_h }
    }

    pub fn to_pixels(&self, image_w: f64, image_h: f64) -> BBox {
        BBox {
            x: (self.cx - self.w / 2.0) * image_w,
            y: (self.cy - self.h / 2.0) * image_h,
            w: self.w * image_w,
            h: self.h * image_h,
        }
    }

    fn bounds(&self) -> (f64, f64, f64, f64) {
        (self.cx - self.w / 2.0, self.cy - self.h / 2.0, self.cx + self.w / 2.0, self.cy + self.h / 2.0)
    }

    /// Euclidean distance between the `[cx, cy, w, h]` vectors.
    pub fn distance(&self, other: &NormBox) -> f64 {
        let d = [self.cx - other.cx, self.cy - other.cy, self.w - other.w, self.h - other.h];
        d.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Projects the object's surface points and returns their clipped,
/// normalized bounding box, or `None` when nothing lands in the image.
pub fn project_object(obj: &WorkspaceObject, pose: &CameraPose, image_w: f64, image_h: f64) -> Option<NormBox> {
    let pts: Vec<(f64, f64)> = obj.surface_points.iter().filter_map(|p| pose.project(p)).collect();
    if pts.is_empty() {
        return None;
    }
    let (mut x0, mut y0, mut x1, mut y1) = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for (u, v) in pts {
        x0 = x0.min(u);
        y0 = y0.min(v);
        x1 = x1.max(u);
        y1 = y1.max(v);
    }
    let (x0, x1) = (x0.max(0.0), x1.min(image_w));
    let (y0, y1) = (y0.max(0.0), y1.min(image_h));
    if x1 <= x0 || y1 <= y0 {
        return None;
    }
    Some(NormBox {
        cx: (x0 + x1) / 2.0 / image_w,
        cy: (y0 + y1) / 2.0 / image_h,
        w: (x1 - x0) / image_w,
        h: (y1 - y0) / image_h,
    })
}

pub fn iou(a: &NormBox, b: &NormBox) -> f64 {
    let (ax0, ay0, ax1, ay1) = a.bounds();
    let (bx0, by0, bx1, by1) = b.bounds();
    let iw = (ax1.min(bx1) - ax0.max(bx0)).max(0.0);
    let ih = (ay1.min(by1) - ay0.max(by0)).max(0.0);
    let inter = iw * ih;
    let area_a = (ax1 - ax0) * (ay1 - ay0);
    let area_b = (bx1 - bx0) * (by1 - by0);
    let union = area_a + area_b - inter;
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Assignment {
    /// `(projected index, detected index)`, sorted by projected index.
    pub pairs: Vec<(usize, usize)>,
    pub total_cost: f64,
}

impl Assignment {
    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn detected_for(&self, projected: usize) -> Option<usize> {
        self.pairs.iter().find(|(m, _)| *m == projected).map(|(_, n)| *n)
    }
}

/// Cost matrix entry: `None` marks a forbidden pair.
pub type CostMatrix = Vec<Vec<Option<f64>>>;

/// Sum of pair costs in ascending row order.
pub fn pairing_cost(costs: &CostMatrix, pairs: &[(usize, usize)]) -> f64 {
    let mut sorted = pairs.to_vec();
    sorted.sort_unstable();
    sorted.iter().map(|&(m, n)| costs[m][n].expect("pair must be admissible")).sum()
}

/// Minimum-cost square assignment (shortest augmenting paths with potentials).
/// Returns the column assigned to each row.
pub fn solve_square(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    if n == 0 {
        return Vec::new();
    }
    let inf = f64::INFINITY;
    // 1-based arrays; column 0 is the virtual source
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut row_of = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        row_of[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = row_of[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[row_of[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if row_of[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            row_of[j0] = row_of[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut col_of_row = vec![0usize; n];
    for j in 1..=n {
        if row_of[j] > 0 {
            col_of_row[row_of[j] - 1] = j - 1;
        }
    }
    col_of_row
}

/// Maximum-cardinality, then minimum-cost matching over admissible pairs of
/// the given rows and columns.
fn optimal_restricted(costs: &CostMatrix, rows: &[usize], cols: &[usize]) -> (usize, f64, Vec<(usize, usize)>) {
    let size = rows.len().max(cols.len());
    if size == 0 {
        return (0, 0.0, Vec::new());
    }
    let max_cost = rows
        .iter()
        .flat_map(|&m| cols.iter().filter_map(move |&n| costs[m][n]))
        .fold(0.0f64, f64::max);
    // any additional real pair outweighs every possible cost difference
    let penalty = 1.0 + 2.0 * size as f64 * max_cost;
    let square: Vec<Vec<f64>> = (0..size)
        .map(|i| {
            (0..size)
                .map(|j| match (rows.get(i), cols.get(j)) {
                    (Some(&m), Some(&n)) => costs[m][n].unwrap_or(penalty),
                    _ => penalty,
                })
                .collect()
        })
        .collect();
    let sol = solve_square(&square);
    let mut pairs = Vec::new();
    for (i, &j) in sol.iter().enumerate() {
        if let (Some(&m), Some(&n)) = (rows.get(i), cols.get(j)) {
            if costs[m][n].is_some() {
                pairs.push((m, n));
            }
        }
    }
    pairs.sort_unstable();
    let cost = pairing_cost(costs, &pairs);
    (pairs.len(), cost, pairs)
}

fn same_cost(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1.0)
}

/// Rectangular assignment with forbidden pairs.
///
/// Maximizes the number of matched pairs, then minimizes their summed cost.
/// Among optimal matchings the lexicographically smallest `(m, n)` list is
/// returned: rows are fixed in ascending order, each taking the smallest
/// admissible column that keeps the optimum (or staying unmatched).
pub fn solve_assignment(costs: &CostMatrix) -> Assignment {
    let rows_n = costs.len();
    let cols_n = costs.first().map_or(0, Vec::len);
    let all_rows: Vec<usize> = (0..rows_n).collect();
    let all_cols: Vec<usize> = (0..cols_n).collect();
    let (best_card, best_cost, _) = optimal_restricted(costs, &all_rows, &all_cols);
    if best_card == 0 {
        return Assignment::default();
    }

    let mut fixed: Vec<(usize, usize)> = Vec::new();
    let mut free_cols = all_cols;
    for m in 0..rows_n {
        let rest_rows: Vec<usize> = (m + 1..rows_n).collect();
        let fixed_cost = pairing_cost(costs, &fixed);
        let mut chosen = None;
        for (pos, &n) in free_cols.iter().enumerate() {
            let Some(c) = costs[m][n] else { continue };
            let mut cols = free_cols.clone();
            cols.remove(pos);
            let (card, cost, _) = optimal_restricted(costs, &rest_rows, &cols);
            if fixed.len() + 1 + card == best_card && same_cost(fixed_cost + c + cost, best_cost) {
                chosen = Some(pos);
                break;
            }
        }
        if let Some(pos) = chosen {
            fixed.push((m, free_cols.remove(pos)));
        }
    }
    let total_cost = pairing_cost(costs, &fixed);
    Assignment { pairs: fixed, total_cost }
}

/// IoU-gated optimal correspondence between projected and detected boxes.
/// An empty result signals alignment failure.
pub fn match_objects(projected: &[NormBox], detected: &[NormBox], iou_min: f64) -> Assignment {
    let costs: CostMatrix = projected
        .iter()
        .map(|p| detected.iter().map(|d| (iou(p, d) > iou_min).then(|| p.distance(d))).collect())
        .collect();
    solve_assignment(&costs)
}

/// Fraction of ground-truth pairs present in the assignment.
pub fn alignment_accuracy(assignment: &Assignment, ground_truth: &[(usize, usize)]) -> f64 {
    if ground_truth.is_empty() {
        return 0.0;
    }
    let hits = ground_truth.iter().filter(|gt| assignment.pairs.contains(gt)).count();
    hits as f64 / ground_truth.len() as f64
}

/// Detection noise used by alignment sweeps: Gaussian on centers and
/// log-normal on sizes, both growing with viewing distance and angle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionNoise {
    /// Center standard deviation (fraction of image) per meter of distance.
    pub center_per_meter: f64,
    /// Log-size standard deviation per meter of distance.
    pub size_per_meter: f64,
    /// Extra relative noise at 180 degrees of relative viewing angle.
    pub angle_gain: f64,
}

impl Default for DetectionNoise {
    fn default() -> Self {
        Self { center_per_meter: 0.02, size_per_meter: 0.08, angle_gain: 0.3 }
    }
}

impl DetectionNoise {
    pub fn perturb<R: Rng>(&self, b: &NormBox, distance_m: f64, angle_deg: f64, rng: &mut R) -> NormBox {
        let scale = distance_m * (1.0 + self.angle_gain * (angle_deg.abs() / 180.0).min(1.0));
        let center = Normal::new(0.0, (self.center_per_meter * scale).max(1e-12)).expect("finite sigma");
        let size = LogNormal::new(0.0, (self.size_per_meter * scale).max(1e-12)).expect("finite sigma");
        NormBox {
            cx: b.cx + center.sample(rng),
            cy: b.cy + center.sample(rng),
            w: b.w * size.sample(rng),
            h: b.h * size.sample(rng),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{ObjectId, Pose};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn nb(cx: f64, cy: f64, w: f64, h: f64) -> NormBox {
        NormBox { cx, cy, w, h }
    }

    fn object_with_points(points: Vec<Vector3<f64>>) -> WorkspaceObject {
        WorkspaceObject {
            object_id: ObjectId::from("o"),
            label: "o".into(),
            position: Vector3::zeros(),
            pre_grasp: Pose { position: Vector3::new(0.0, 0.0, 1.0), orientation: [1.0, 0.0, 0.0, 0.0] },
            footprint: vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0]],
            z_extent: [0.0, 0.5],
            surface_points: points,
        }
    }

    fn square_at_depth(z: f64) -> WorkspaceObject {
        let mut pts = Vec::new();
        for sx in [-0.05, 0.05] {
            for sy in [-0.05, 0.05] {
                pts.push(Vector3::new(sx, sy, z));
            }
        }
        object_with_points(pts)
    }

    #[test]
    fn on_axis_projection() {
        let pose = CameraPose::identity(500.0, 500.0, 320.0, 240.0);
        let b = project_object(&square_at_depth(1.0), &pose, 640.0, 480.0).unwrap();
        assert_abs_diff_eq!(b.cx, 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(b.cy, 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(b.w, 50.0 / 640.0, epsilon = 1e-12);
        assert_abs_diff_eq!(b.h, 50.0 / 480.0, epsilon = 1e-12);
    }

    #[test]
    fn behind_camera_is_none() {
        let pose = CameraPose::identity(500.0, 500.0, 320.0, 240.0);
        assert_eq!(project_object(&square_at_depth(-1.0), &pose, 640.0, 480.0), None);
    }

    #[test]
    fn image_plane_translation_only_moves_center() {
        let obj = square_at_depth(1.0);
        let a = CameraPose::identity(500.0, 500.0, 320.0, 240.0);
        let b = CameraPose { translation: Vector3::new(0.02, -0.01, 0.0), ..a };
        let pa = project_object(&obj, &a, 640.0, 480.0).unwrap();
        let pb = project_object(&obj, &b, 640.0, 480.0).unwrap();
        assert_abs_diff_eq!(pa.w, pb.w, epsilon = 1e-12);
        assert_abs_diff_eq!(pa.h, pb.h, epsilon = 1e-12);
        assert_abs_diff_eq!(pb.cx - pa.cx, 10.0 / 640.0, epsilon = 1e-12);
        assert_abs_diff_eq!(pb.cy - pa.cy, -5.0 / 480.0, epsilon = 1e-12);
    }

    #[test]
    fn look_at_centers_target() {
        let pose = CameraPose::look_at(Vector3::new(0.0, -0.6, 0.5), Vector3::new(0.0, 0.0, 0.0), 500.0, 500.0, 320.0, 240.0);
        let (u, v) = pose.project(&Vector3::zeros()).unwrap();
        assert_abs_diff_eq!(u, 320.0, epsilon = 1e-9);
        assert_abs_diff_eq!(v, 240.0, epsilon = 1e-9);
        // world +x appears to the right
        let (u2, _) = pose.project(&Vector3::new(0.1, 0.0, 0.0)).unwrap();
        assert!(u2 > u);
    }

    #[test]
    fn iou_examples() {
        let a = nb(0.5, 0.5, 0.2, 0.2);
        assert_abs_diff_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&a, &nb(0.1, 0.1, 0.1, 0.1)), 0.0);
        // 2x2 boxes offset by 1: 2 / (8 - 2)
        assert_abs_diff_eq!(iou(&nb(1.0, 1.0, 2.0, 2.0), &nb(2.0, 1.0, 2.0, 2.0)), 1.0 / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn single_identical_pair() {
        let a = nb(0.5, 0.5, 0.2, 0.2);
        let m = match_objects(&[a], &[a], DEFAULT_IOU_MIN);
        assert_eq!(m.pairs, vec![(0, 0)]);
        assert_eq!(m.total_cost, 0.0);
    }

    #[test]
    fn two_by_two_cost_matrix() {
        let costs: CostMatrix = vec![vec![Some(1.0), Some(2.0)], vec![Some(2.0), Some(1.0)]];
        let a = solve_assignment(&costs);
        assert_eq!(a.pairs, vec![(0, 0), (1, 1)]);
        assert_eq!(a.total_cost, 2.0);
    }

    #[test]
    fn ties_break_lexicographically() {
        let costs: CostMatrix = vec![vec![Some(1.0), Some(1.0)], vec![Some(1.0), Some(1.0)]];
        assert_eq!(solve_assignment(&costs).pairs, vec![(0, 0), (1, 1)]);
    }

    #[test]
    fn cardinality_beats_cost() {
        // matching (0,1),(1,0) is the only way to match both rows
        let costs: CostMatrix = vec![vec![Some(0.1), Some(5.0)], vec![Some(5.0), None]];
        let a = solve_assignment(&costs);
        assert_eq!(a.pairs, vec![(0, 1), (1, 0)]);
    }

    #[test]
    fn rectangular_and_forbidden() {
        let costs: CostMatrix = vec![vec![None, Some(0.3), Some(0.1)]];
        assert_eq!(solve_assignment(&costs).pairs, vec![(0, 2)]);
        let costs: CostMatrix = vec![vec![None], vec![Some(0.2)], vec![Some(0.1)]];
        assert_eq!(solve_assignment(&costs).pairs, vec![(2, 0)]);
        let costs: CostMatrix = vec![vec![None, None]];
        assert!(solve_assignment(&costs).is_empty());
        assert!(match_objects(&[], &[nb(0.5, 0.5, 0.1, 0.1)], 0.6).is_empty());
    }

    #[test]
    fn perturbed_grid_matches_identity() {
        let grid: Vec<NormBox> =
            (0..9).map(|k| nb(0.2 + 0.3 * (k % 3) as f64, 0.2 + 0.3 * (k / 3) as f64, 0.12, 0.12)).collect();
        let offsets = [(0.01, 0.0), (-0.01, 0.0), (0.0, 0.01), (0.0, -0.01), (0.007, 0.007)];
        let detected: Vec<NormBox> = grid
            .iter()
            .enumerate()
            .map(|(k, b)| {
                let (dx, dy) = offsets[k % offsets.len()];
                nb(b.cx + dx, b.cy + dy, b.w, b.h)
            })
            .collect();
        // reverse the detection order so identity is not trivially the index order
        let reversed: Vec<NormBox> = detected.iter().rev().copied().collect();
        let a = match_objects(&grid, &reversed, DEFAULT_IOU_MIN);
        let truth: Vec<(usize, usize)> = (0..9).map(|k| (k, 8 - k)).collect();
        assert_eq!(a.pairs, truth);
        assert_eq!(alignment_accuracy(&a, &truth), 1.0);
    }

    #[test]
    fn accuracy_counts() {
        let truth: Vec<(usize, usize)> = (0..9).map(|k| (k, k)).collect();
        let mut pairs = truth.clone();
        pairs[3] = (3, 4);
        let a = Assignment { pairs, total_cost: 0.0 };
        assert_abs_diff_eq!(alignment_accuracy(&a, &truth), 8.0 / 9.0);
        assert_eq!(alignment_accuracy(&Assignment::default(), &truth), 0.0);
    }

    proptest! {
        #[test]
        fn iou_symmetric(a in (0.0..1.0f64, 0.0..1.0f64, 0.01..0.5f64, 0.01..0.5f64),
                         b in (0.0..1.0f64, 0.0..1.0f64, 0.01..0.5f64, 0.01..0.5f64)) {
            let (a, b) = (nb(a.0, a.1, a.2, a.3), nb(b.0, b.1, b.2, b.3));
            prop_assert_eq!(iou(&a, &b), iou(&b, &a));
            prop_assert!((0.0..=1.0).contains(&iou(&a, &b)));
        }

        #[test]
        fn reindexing_preserves_cost(costs in proptest::collection::vec(proptest::collection::vec(0.0..1.0f64, 4), 4),
                                     shift in 0usize..4) {
            let m: CostMatrix = costs.iter().map(|r| r.iter().map(|c| Some(*c)).collect()).collect();
            let rotated: CostMatrix = (0..4).map(|i| m[(i + shift) % 4].clone()).collect();
            let a = solve_assignment(&m);
            let b = solve_assignment(&rotated);
            prop_assert!((a.total_cost - b.total_cost).abs() < 1e-12);
        }
    }
}
