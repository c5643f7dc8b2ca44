use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::rotation::{orientation, Dim, RotationMatrix};
use crate::error::{invalid, GeocalError, Result};

/// Minimum node-to-event separation for which a DoA is defined (meters).
pub const DEFAULT_MIN_SEPARATION: f64 = 1e-3;

/// Position and orientation generator of one sensor node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NodePose {
    pub position: Vector3<f64>,
    pub theta: Vector3<f64>,
}

impl NodePose {
    pub fn new(position: Vector3<f64>, theta: Vector3<f64>) -> Self {
        Self { position, theta }
    }
}

/// Node poses and event positions in a 2-D or 3-D scene.
///
/// Planar scenes are stored embedded in 3-D: positions have `z = 0` and
/// generators are rotations about z.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SceneWire", into = "SceneWire")]
pub struct SceneGeometry {
    dim: Dim,
    nodes: Vec<NodePose>,
    events: Vec<Vector3<f64>>,
}

impl SceneGeometry {
    pub fn new(dim: Dim, nodes: Vec<NodePose>, events: Vec<Vector3<f64>>) -> Result<Self> {
        if nodes.len() < 2 {
            return Err(invalid(format!("a scene needs at least 2 nodes, got {}", nodes.len())));
        }
        if events.is_empty() {
            return Err(invalid("a scene needs at least 1 event"));
        }
        let finite = |v: &Vector3<f64>| v.iter().all(|x| x.is_finite());
        for (i, node) in nodes.iter().enumerate() {
            if !finite(&node.position) || !finite(&node.theta) {
                return Err(invalid(format!("node {i} has non-finite coordinates")));
            }
            if dim == Dim::Two && (node.position.z != 0.0 || node.theta.x != 0.0 || node.theta.y != 0.0) {
                return Err(invalid(format!("node {i} leaves the plane of a 2-D scene")));
            }
        }
        for (j, event) in events.iter().enumerate() {
            if !finite(event) {
                return Err(invalid(format!("event {j} has non-finite coordinates")));
            }
            if dim == Dim::Two && event.z != 0.0 {
                return Err(invalid(format!("event {j} leaves the plane of a 2-D scene")));
            }
        }
        Ok(Self { dim, nodes, events })
    }

    /// Build a scene from length-D positions and generators.
    pub fn from_slices(dim: usize, nodes: &[(&[f64], &[f64])], events: &[&[f64]]) -> Result<Self> {
        let dim = Dim::try_from(dim).map_err(invalid)?;
        let nodes = nodes
            .iter()
            .map(|(p, t)| Ok(NodePose::new(dim.embed(p)?, dim.embed_generator(t)?)))
            .collect::<Result<Vec<_>>>()?;
        let events = events.iter().map(|e| dim.embed(e)).collect::<Result<Vec<_>>>()?;
        Self::new(dim, nodes, events)
    }

    pub fn dim(&self) -> Dim {
        self.dim
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn n_events(&self) -> usize {
        self.events.len()
    }

    pub fn nodes(&self) -> &[NodePose] {
        &self.nodes
    }

    pub fn events(&self) -> &[Vector3<f64>] {
        &self.events
    }

    pub fn rotation(&self, i: usize) -> RotationMatrix {
        RotationMatrix::from_matrix(self.dim, orientation(&self.nodes[i].theta, self.dim))
    }

    /// `‖s_j − n_i‖`.
    pub fn distance(&self, i: usize, j: usize) -> f64 {
        (self.events[j] - self.nodes[i].position).norm()
    }

    /// Check every node-event separation against `d_min`.
    pub fn check_separation(&self, d_min: f64) -> Result<()> {
        for i in 0..self.n_nodes() {
            for j in 0..self.n_events() {
                let separation = self.distance(i, j);
                if separation < d_min {
                    return Err(GeocalError::DegenerateGeometry { node: i, event: j, separation });
                }
            }
        }
        Ok(())
    }

    /// Apply `f` to every node and event position.
    pub(crate) fn map_positions(&self, f: impl Fn(&Vector3<f64>) -> Vector3<f64>) -> Self {
        Self {
            dim: self.dim,
            nodes: self
                .nodes
                .iter()
                .map(|n| NodePose::new(f(&n.position), n.theta))
                .collect(),
            events: self.events.iter().map(f).collect(),
        }
    }
}

fn check_indices(scene: &SceneGeometry, i: usize, j: usize) -> Result<()> {
    if i >= scene.n_nodes() || j >= scene.n_events() {
        return Err(invalid(format!(
            "index ({i}, {j}) out of range for {} nodes and {} events",
            scene.n_nodes(),
            scene.n_events()
        )));
    }
    Ok(())
}

/// Position of event `j` in the local frame of node `i`: `B_i (s_j − n_i)`.
pub fn relative_vector(scene: &SceneGeometry, i: usize, j: usize) -> Result<Vector3<f64>> {
    check_indices(scene, i, j)?;
    Ok(scene.rotation(i).matrix() * (scene.events[j] - scene.nodes[i].position))
}

/// Unit direction of arrival of event `j` at node `i`, in the node frame.
pub fn doa_vector(scene: &SceneGeometry, i: usize, j: usize) -> Result<Vector3<f64>> {
    let p = relative_vector(scene, i, j)?;
    let separation = p.norm();
    if separation < DEFAULT_MIN_SEPARATION {
        return Err(GeocalError::DegenerateGeometry { node: i, event: j, separation });
    }
    Ok(p / separation)
}

/// Express the scene in the frame of node 0: that node moves to the origin
/// with identity orientation. All DoAs and distances are preserved.
pub fn gauge_fix(scene: &SceneGeometry) -> SceneGeometry {
    let anchor = scene.nodes[0];
    if anchor.position == Vector3::zeros() && anchor.theta == Vector3::zeros() {
        return scene.clone();
    }
    let b0 = scene.rotation(0);
    let b0m = *b0.matrix();
    let mut nodes: Vec<NodePose> = scene
        .nodes
        .iter()
        .enumerate()
        .map(|(i, n)| {
            let rotated = scene.rotation(i) * b0.transpose();
            NodePose::new(b0m * (n.position - anchor.position), rotated.generator())
        })
        .collect();
    nodes[0] = NodePose::new(Vector3::zeros(), Vector3::zeros());
    let events = scene.events.iter().map(|s| b0m * (s - anchor.position)).collect();
    let mut out = SceneGeometry { dim: scene.dim, nodes, events };
    if out.dim == Dim::Two {
        // keep the planar embedding exact
        out = out.map_positions(|p| Vector3::new(p.x, p.y, 0.0));
    }
    out
}

#[derive(Serialize, Deserialize)]
struct NodeWire {
    position: Vec<f64>,
    theta: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct SceneWire {
    dim: usize,
    nodes: Vec<NodeWire>,
    events: Vec<Vec<f64>>,
}

impl TryFrom<SceneWire> for SceneGeometry {
    type Error = GeocalError;

    fn try_from(w: SceneWire) -> Result<Self> {
        let nodes: Vec<(&[f64], &[f64])> = w
            .nodes
            .iter()
            .map(|n| (n.position.as_slice(), n.theta.as_slice()))
            .collect();
        let events: Vec<&[f64]> = w.events.iter().map(Vec::as_slice).collect();
        SceneGeometry::from_slices(w.dim, &nodes, &events)
    }
}

impl From<SceneGeometry> for SceneWire {
    fn from(s: SceneGeometry) -> Self {
        let d = s.dim;
        SceneWire {
            dim: d.value(),
            nodes: s
                .nodes
                .iter()
                .map(|n| NodeWire {
                    position: d.truncate(&n.position),
                    theta: d.truncate_generator(&n.theta),
                })
                .collect(),
            events: s.events.iter().map(|e| d.truncate(e)).collect(),
        }
    }
}
