//! Pose graph: odometry edges, loop-closure edges, GNSS position factors,
//! optimized by Levenberg-Marquardt on the SE(3) manifold.
//!
//! Perturbations are right-multiplicative (`X <- X * exp(delta)`). The gauge
//! is fixed by at least one GNSS factor, or by anchoring node 0 when there
//! are none. Loop edges carry a Huber kernel against false closures.

use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::geometry::{se3_right_jacobian_inv, Pose};
use crate::odometry::{register, OdometryConfig, VoxelHashMap};
use crate::time::Timestamp;
use nalgebra::{DMatrix, DVector, Matrix3, Matrix6, Vector3, Vector6};

/// Huber threshold on loop edges, in weighted residual norm units.
const LOOP_HUBER_DELTA: f64 = 1.0;

#[derive(Clone, Debug)]
pub struct GraphNode {
    pub id: usize,
    pub stamp: Timestamp,
    pub pose: Pose<f64>,
    /// Keyframe cloud in the node's own frame, used for loop detection.
    pub keyframe: Option<PointCloud>,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum EdgeKind {
    Odometry,
    Loop,
}

#[derive(Clone, Debug)]
pub struct BinaryEdge {
    pub from: usize,
    pub to: usize,
    /// Measured relative pose: from-frame -> to-frame (X_from^{-1} X_to).
    pub measurement: Pose<f64>,
    pub information: Matrix6<f64>,
    pub kind: EdgeKind,
}

#[derive(Clone, Debug)]
pub struct GnssFactor {
    pub node: usize,
    /// Measured position in the world frame, meters.
    pub position: Vector3<f64>,
    pub information: Matrix3<f64>,
}

#[derive(Clone, Debug, Default)]
pub struct PoseGraph {
    pub nodes: Vec<GraphNode>,
    pub edges: Vec<BinaryEdge>,
    pub gnss: Vec<GnssFactor>,
}

/// Diagonal information from per-axis sigmas.
pub fn information_from_sigmas(trans_sigma: f64, rot_sigma: f64) -> Matrix6<f64> {
    let mut info = Matrix6::zeros();
    for i in 0..3 {
        info[(i, i)] = 1.0 / (trans_sigma * trans_sigma);
        info[(i + 3, i + 3)] = 1.0 / (rot_sigma * rot_sigma);
    }
    info
}

pub fn gnss_information(sigma: f64) -> Matrix3<f64> {
    Matrix3::identity() / (sigma * sigma)
}

impl PoseGraph {
    pub fn add_node(&mut self, stamp: Timestamp, pose: Pose<f64>, keyframe: Option<PointCloud>) -> usize {
        let id = self.nodes.len();
        self.nodes.push(GraphNode {
            id,
            stamp,
            pose,
            keyframe,
        });
        id
    }

    pub fn add_odometry_edge(&mut self, from: usize, to: usize, measurement: Pose<f64>, information: Matrix6<f64>) {
        debug_assert!(from < to, "odometry edges run forward in time");
        self.edges.push(BinaryEdge {
            from,
            to,
            measurement,
            information,
            kind: EdgeKind::Odometry,
        });
    }

    pub fn validate(&self) -> Result<()> {
        for (i, n) in self.nodes.iter().enumerate() {
            if n.id != i {
                return Err(Error::invalid("pose graph", format!("node id {} at index {i}", n.id)));
            }
        }
        for w in self.nodes.windows(2) {
            if w[1].stamp < w[0].stamp {
                return Err(Error::invalid("pose graph", "node stamps must be ordered"));
            }
        }
        for e in &self.edges {
            if e.from >= self.nodes.len() || e.to >= self.nodes.len() {
                return Err(Error::invalid("pose graph", "edge references missing node"));
            }
            if e.kind == EdgeKind::Odometry && e.from >= e.to {
                return Err(Error::invalid("pose graph", "odometry edge must have from < to"));
            }
            if e.information.clone().cholesky().is_none() {
                return Err(Error::invalid("pose graph", "edge information must be SPD"));
            }
        }
        for g in &self.gnss {
            if g.node >= self.nodes.len() {
                return Err(Error::invalid("pose graph", "gnss factor references missing node"));
            }
            if !g.position.iter().all(|v| v.is_finite()) {
                return Err(Error::invalid("pose graph", "gnss position must be finite"));
            }
        }
        Ok(())
    }

    /// Components under binary-edge connectivity; each entry lists node ids.
    fn components(&self) -> Vec<Vec<usize>> {
        let n = self.nodes.len();
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(parent: &mut Vec<usize>, mut x: usize) -> usize {
            while parent[x] != x {
                parent[x] = parent[parent[x]];
                x = parent[x];
            }
            x
        }
        for e in &self.edges {
            let (a, b) = (find(&mut parent, e.from), find(&mut parent, e.to));
            if a != b {
                parent[a] = b;
            }
        }
        let mut groups: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
        for i in 0..n {
            let root = find(&mut parent, i);
            groups.entry(root).or_default().push(i);
        }
        groups.into_values().collect()
    }
}

// Between-edge residual r = log(Z^{-1} Xi^{-1} Xj) and its Jacobians with
// respect to right perturbations of Xi and Xj.
pub fn between_residual(z: &Pose<f64>, xi: &Pose<f64>, xj: &Pose<f64>) -> Vector6<f64> {
    z.inverse().compose(&xi.inverse()).compose(xj).log()
}

pub fn between_jacobians(
    z: &Pose<f64>,
    xi: &Pose<f64>,
    xj: &Pose<f64>,
) -> (Vector6<f64>, Matrix6<f64>, Matrix6<f64>) {
    let r = between_residual(z, xi, xj);
    let jr_inv = se3_right_jacobian_inv(&r);
    let jj = jr_inv;
    let ji = -jr_inv * xj.inverse().compose(xi).adjoint();
    (r, ji, jj)
}

// GNSS residual r = z - t(X); Jacobian is [-R | 0] for X <- X exp(delta).
pub fn gnss_residual(z: &Vector3<f64>, x: &Pose<f64>) -> Vector3<f64> {
    z - x.translation
}

pub fn gnss_jacobian(x: &Pose<f64>) -> nalgebra::Matrix3x6<f64> {
    let mut j = nalgebra::Matrix3x6::zeros();
    j.fixed_view_mut::<3, 3>(0, 0).copy_from(&(-x.rotation_matrix()));
    j
}

#[derive(Clone, Copy, Debug)]
pub struct OptimizeOptions {
    pub max_iterations: usize,
    pub initial_lambda: f64,
    /// Terminate when the relative cost decrease drops below this.
    pub relative_cost_eps: f64,
}

impl Default for OptimizeOptions {
    fn default() -> Self {
        OptimizeOptions {
            max_iterations: 100,
            initial_lambda: 1e-6,
            relative_cost_eps: 1e-9,
        }
    }
}

#[derive(Clone, Debug)]
pub struct OptimizeReport {
    pub iterations: usize,
    pub initial_cost: f64,
    pub final_cost: f64,
    /// Cost after every accepted step.
    pub accepted_costs: Vec<f64>,
}

fn edge_robust_scale(e: &BinaryEdge, r: &Vector6<f64>) -> f64 {
    if e.kind != EdgeKind::Loop {
        return 1.0;
    }
    let en = (r.transpose() * e.information * r)[(0, 0)].sqrt();
    if en <= LOOP_HUBER_DELTA {
        1.0
    } else {
        LOOP_HUBER_DELTA / en
    }
}

fn total_cost(graph: &PoseGraph, poses: &[Pose<f64>]) -> f64 {
    let mut cost = 0.0;
    for e in &graph.edges {
        let r = between_residual(&e.measurement, &poses[e.from], &poses[e.to]);
        let q = (r.transpose() * e.information * r)[(0, 0)];
        if e.kind == EdgeKind::Loop {
            let en = q.sqrt();
            cost += if en <= LOOP_HUBER_DELTA {
                q
            } else {
                2.0 * LOOP_HUBER_DELTA * en - LOOP_HUBER_DELTA * LOOP_HUBER_DELTA
            };
        } else {
            cost += q;
        }
    }
    for g in &graph.gnss {
        let r = gnss_residual(&g.position, &poses[g.node]);
        cost += (r.transpose() * g.information * r)[(0, 0)];
    }
    cost
}

/// Levenberg-Marquardt over all node poses. Returns the report; node poses
/// are updated in place.
pub fn optimize(graph: &mut PoseGraph, options: &OptimizeOptions) -> Result<OptimizeReport> {
    graph.validate()?;
    if graph.nodes.is_empty() {
        return Ok(OptimizeReport {
            iterations: 0,
            initial_cost: 0.0,
            final_cost: 0.0,
            accepted_costs: Vec::new(),
        });
    }

    let components = graph.components();
    if components.len() > 1 {
        let detached = components
            .iter()
            .find(|c| !c.contains(&0))
            .expect("more than one component");
        let preview: Vec<String> = detached.iter().take(8).map(|i| i.to_string()).collect();
        return Err(Error::Underdetermined(format!(
            "nodes {{{}}} are not connected to the rest of the graph",
            preview.join(", ")
        )));
    }

    // gauge: anchor node 0 unless GNSS factors pin the graph
    let anchor = if graph.gnss.is_empty() { Some(0usize) } else { None };
    let n = graph.nodes.len();
    let var_of: Vec<Option<usize>> = {
        let mut v = Vec::with_capacity(n);
        let mut next = 0usize;
        for i in 0..n {
            if Some(i) == anchor {
                v.push(None);
            } else {
                v.push(Some(next));
                next += 1;
            }
        }
        v
    };
    let num_vars = var_of.iter().flatten().count() * 6;
    if num_vars == 0 {
        return Ok(OptimizeReport {
            iterations: 0,
            initial_cost: total_cost(graph, &graph.nodes.iter().map(|n| n.pose).collect::<Vec<_>>()),
            final_cost: 0.0,
            accepted_costs: Vec::new(),
        });
    }

    let mut poses: Vec<Pose<f64>> = graph.nodes.iter().map(|n| n.pose).collect();
    let initial_cost = total_cost(graph, &poses);
    let mut cost = initial_cost;
    let mut lambda = options.initial_lambda;
    let mut accepted_costs = Vec::new();
    let mut iterations = 0usize;

    for _ in 0..options.max_iterations {
        iterations += 1;
        let mut h = DMatrix::<f64>::zeros(num_vars, num_vars);
        let mut b = DVector::<f64>::zeros(num_vars);

        let add_block =
            |h: &mut DMatrix<f64>, b: &mut DVector<f64>, vi: Option<usize>, vj: Option<usize>,
             ji: &DMatrix<f64>, jj: &DMatrix<f64>, r: &DVector<f64>, info: &DMatrix<f64>, scale: f64| {
                let blocks = [(vi, ji), (vj, jj)];
                for (va, ja) in &blocks {
                    let Some(va) = va else { continue };
                    let ba = ja.transpose() * info * r * scale;
                    for k in 0..6 {
                        b[va * 6 + k] += ba[k];
                    }
                    for (vb, jb) in &blocks {
                        let Some(vb) = vb else { continue };
                        let hab = ja.transpose() * info * *jb * scale;
                        for p in 0..6 {
                            for q in 0..6 {
                                h[(va * 6 + p, vb * 6 + q)] += hab[(p, q)];
                            }
                        }
                    }
                }
            };

        for e in &graph.edges {
            let (r, ji, jj) = between_jacobians(&e.measurement, &poses[e.from], &poses[e.to]);
            let scale = edge_robust_scale(e, &r);
            add_block(
                &mut h,
                &mut b,
                var_of[e.from],
                var_of[e.to],
                &DMatrix::from_iterator(6, 6, ji.iter().copied()),
                &DMatrix::from_iterator(6, 6, jj.iter().copied()),
                &DVector::from_iterator(6, r.iter().copied()),
                &DMatrix::from_iterator(6, 6, e.information.iter().copied()),
                scale,
            );
        }
        for g in &graph.gnss {
            let Some(v) = var_of[g.node] else { continue };
            let r = gnss_residual(&g.position, &poses[g.node]);
            let j = gnss_jacobian(&poses[g.node]);
            let jt_info = j.transpose() * g.information;
            let bb = jt_info * r;
            let hh = jt_info * j;
            for k in 0..6 {
                b[v * 6 + k] += bb[k];
            }
            for p in 0..6 {
                for q in 0..6 {
                    h[(v * 6 + p, v * 6 + q)] += hh[(p, q)];
                }
            }
        }

        // damped step, retry with larger lambda on rejection
        let mut stepped = false;
        for _ in 0..12 {
            let mut hd = h.clone();
            for k in 0..num_vars {
                hd[(k, k)] += lambda * (1.0 + h[(k, k)]);
            }
            let Some(chol) = hd.cholesky() else {
                lambda *= 10.0;
                continue;
            };
            let delta = chol.solve(&(-&b));
            let mut candidate = poses.clone();
            for i in 0..n {
                if let Some(v) = var_of[i] {
                    let d = Vector6::from_iterator(delta.rows(v * 6, 6).iter().copied());
                    candidate[i] = candidate[i].compose(&Pose::exp(&d));
                }
            }
            let new_cost = total_cost(graph, &candidate);
            if new_cost <= cost {
                let rel = if cost > 0.0 { (cost - new_cost) / cost } else { 0.0 };
                poses = candidate;
                cost = new_cost;
                accepted_costs.push(cost);
                lambda = (lambda * 0.5).max(1e-12);
                stepped = true;
                if rel < options.relative_cost_eps {
                    for (node, pose) in graph.nodes.iter_mut().zip(&poses) {
                        node.pose = *pose;
                    }
                    return Ok(OptimizeReport {
                        iterations,
                        initial_cost,
                        final_cost: cost,
                        accepted_costs,
                    });
                }
                break;
            }
            lambda *= 10.0;
        }
        if !stepped {
            break;
        }
    }

    for (node, pose) in graph.nodes.iter_mut().zip(&poses) {
        node.pose = *pose;
    }
    Ok(OptimizeReport {
        iterations,
        initial_cost,
        final_cost: cost,
        accepted_costs,
    })
}

#[derive(Clone, Copy, Debug)]
pub struct LoopParams {
    /// Candidate pairs must be within this distance, meters.
    pub search_radius: f64,
    /// And at least this far apart in time, seconds.
    pub min_temporal_gap_s: f64,
    /// Accept when the ICP mean residual is below this, meters.
    pub fitness_threshold: f64,
}

impl Default for LoopParams {
    fn default() -> Self {
        LoopParams {
            search_radius: 10.0,
            min_temporal_gap_s: 30.0,
            fitness_threshold: 0.2,
        }
    }
}

/// Detect loop closures between keyframe nodes by running scan-to-scan
/// semantic ICP on spatially close, temporally distant pairs.
pub fn detect_loops(graph: &PoseGraph, params: &LoopParams, icp_cfg: &OdometryConfig) -> Vec<BinaryEdge> {
    let mut out = Vec::new();
    let gap_ns = (params.min_temporal_gap_s * 1e9) as i64;
    let keyed: Vec<&GraphNode> = graph.nodes.iter().filter(|n| n.keyframe.is_some()).collect();
    for (a, &ni) in keyed.iter().enumerate() {
        for &nj in keyed.iter().skip(a + 1) {
            if (nj.stamp - ni.stamp) < gap_ns {
                continue;
            }
            if (ni.pose.translation - nj.pose.translation).norm() > params.search_radius {
                continue;
            }
            let ci = ni.keyframe.as_ref().unwrap();
            let cj = nj.keyframe.as_ref().unwrap();
            let mut map = VoxelHashMap::new(icp_cfg.map_voxel, icp_cfg.max_points_per_voxel);
            map.insert_cloud(ci);
            let init = ni.pose.inverse().compose(&nj.pose);
            let result = register(cj, &map, &init, icp_cfg, icp_cfg.initial_tau);
            if result.degenerate || result.mean_residual >= params.fitness_threshold {
                continue;
            }
            let sigma = result.mean_residual.max(0.01);
            out.push(BinaryEdge {
                from: ni.id,
                to: nj.id,
                measurement: result.pose,
                information: information_from_sigmas(sigma, sigma),
                kind: EdgeKind::Loop,
            });
        }
    }
    out
}
