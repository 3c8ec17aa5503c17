//! Mesh and displacement-data handling: shape-function gradients, quadrature
//! weights and per-quadrature-point deformation gradients.
//!
//! Geometry lives in the 2D reference configuration (mm). Two element types
//! are supported: bilinear quadrilaterals (`quad4`, 2x2 Gauss rule) and linear
//! triangles (`tri3`, single centroid point). Deformation gradients are stored
//! as full 3x3 tensors; the out-of-plane component is fixed by the chosen
//! [`KinematicMode`].

use std::collections::BTreeMap;
use std::io::Read;

use nalgebra::{DMatrix, DVector, Matrix2, Matrix3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Element family of a mesh. One kind per mesh.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ElementKind {
    Quad4,
    Tri3,
}

impl ElementKind {
    pub fn nodes_per_element(self) -> usize {
        match self {
            ElementKind::Quad4 => 4,
            ElementKind::Tri3 => 3,
        }
    }
}

/// Out-of-plane closure applied when building 3x3 deformation gradients from
/// 2D displacement fields.
///
/// `PlaneStrain` fixes F33 = 1. `IncompressiblePlaneStress` enforces
/// det F = 1 through F33 = 1/det(F_2D), which suits thin nearly
/// incompressible rubber sheets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KinematicMode {
    PlaneStrain,
    IncompressiblePlaneStress,
}

/// 2D reference-configuration mesh with named node sets.
///
/// Invariants (established by [`load_mesh`] / [`Mesh::validate`]):
/// element connectivity is in-bounds and repeat-free, every element has a
/// positive Jacobian determinant at each of its quadrature points, and node
/// sets reference valid nodes. Element connectivity is stored
/// counter-clockwise.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Mesh {
    /// Node coordinates (mm).
    pub nodes: Vec<[f64; 2]>,
    pub elements: Elements,
    /// Named node sets (sorted, unique indices). BTreeMap keeps iteration
    /// order deterministic.
    pub node_sets: BTreeMap<String, Vec<usize>>,
    /// Out-of-plane thickness (mm).
    pub thickness: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Elements {
    pub kind: ElementKind,
    pub connectivity: Vec<Vec<usize>>,
}

/// One quasi-static load increment: a nodal displacement field plus measured
/// reaction forces per grip node-set.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LoadStep {
    pub step_id: u64,
    /// Per-node displacement (mm); same length as `Mesh::nodes`.
    pub displacements: Vec<[f64; 2]>,
    /// Measured reaction per node-set name: force vector (N) and a component
    /// mask marking which components the load cell actually measured.
    pub reactions: BTreeMap<String, Reaction>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Reaction {
    pub force: [f64; 2],
    pub mask: [bool; 2],
}

/// A sequence of load steps sharing one mesh.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Dataset {
    pub steps: Vec<LoadStep>,
}

/// Precomputed integration data for one quadrature point.
#[derive(Debug, Clone)]
pub struct QuadPoint {
    /// Owning element index.
    pub element: usize,
    /// Reference shape-function gradients dN_a/dX (1/mm), one row per
    /// element node.
    pub grads: Vec<[f64; 2]>,
    /// Integration weight w * det(J) * thickness (mm^3).
    pub weight: f64,
}

const QUAD4_GAUSS: [[f64; 2]; 4] = {
    let g = 0.577_350_269_189_625_8; // 1/sqrt(3)
    [[-g, -g], [g, -g], [g, g], [-g, g]]
};

/// Bilinear shape-function derivatives w.r.t. natural coordinates at (xi, eta).
fn quad4_dn_dnat(xi: f64, eta: f64) -> [[f64; 2]; 4] {
    [
        [-0.25 * (1.0 - eta), -0.25 * (1.0 - xi)],
        [0.25 * (1.0 - eta), -0.25 * (1.0 + xi)],
        [0.25 * (1.0 + eta), 0.25 * (1.0 + xi)],
        [-0.25 * (1.0 + eta), 0.25 * (1.0 - xi)],
    ]
}

fn signed_area(nodes: &[[f64; 2]], conn: &[usize]) -> f64 {
    let mut a = 0.0;
    for i in 0..conn.len() {
        let p = nodes[conn[i]];
        let q = nodes[conn[(i + 1) % conn.len()]];
        a += p[0] * q[1] - q[0] * p[1];
    }
    0.5 * a
}

impl Mesh {
    /// Validate all type invariants and normalize element orientation to
    /// counter-clockwise. Called by [`load_mesh`]; call directly when
    /// constructing meshes in code.
    pub fn validate(&mut self) -> Result<()> {
        let n = self.nodes.len();
        if self.thickness <= 0.0 {
            return Err(Error::MeshInvalid(format!(
                "thickness must be positive, got {}",
                self.thickness
            )));
        }
        let npe = self.elements.kind.nodes_per_element();
        for (e, conn) in self.elements.connectivity.iter_mut().enumerate() {
            if conn.len() != npe {
                return Err(Error::MeshInvalid(format!(
                    "element {e} has {} nodes, expected {npe}",
                    conn.len()
                )));
            }
            for &i in conn.iter() {
                if i >= n {
                    return Err(Error::MeshInvalid(format!(
                        "element {e} references node {i} but the mesh has {n} nodes"
                    )));
                }
            }
            for a in 0..npe {
                for b in (a + 1)..npe {
                    if conn[a] == conn[b] {
                        return Err(Error::MeshInvalid(format!(
                            "element {e} repeats node {}",
                            conn[a]
                        )));
                    }
                }
            }
            // Normalize to counter-clockwise, keeping the first node first.
            if signed_area(&self.nodes, conn) < 0.0 {
                conn[1..].reverse();
            }
        }
        for (name, set) in &mut self.node_sets {
            set.sort_unstable();
            set.dedup();
            for &i in set.iter() {
                if i >= n {
                    return Err(Error::DanglingNodeSet {
                        set: name.clone(),
                        index: i,
                        node_count: n,
                    });
                }
            }
        }
        // Positive Jacobian at every quadrature point (checked post
        // orientation fix; still fails for e.g. self-intersecting quads).
        for (e, conn) in self.elements.connectivity.iter().enumerate() {
            match self.elements.kind {
                ElementKind::Quad4 => {
                    for gp in &QUAD4_GAUSS {
                        let (_, det) = quad4_jacobian(&self.nodes, conn, gp[0], gp[1]);
                        if det <= 0.0 {
                            return Err(Error::InvertedElement { element: e });
                        }
                    }
                }
                ElementKind::Tri3 => {
                    if signed_area(&self.nodes, conn) <= 0.0 {
                        return Err(Error::InvertedElement { element: e });
                    }
                }
            }
        }
        Ok(())
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn element_count(&self) -> usize {
        self.elements.connectivity.len()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("mesh serializes")
    }
}

/// Jacobian of the isoparametric map and its determinant at (xi, eta).
fn quad4_jacobian(nodes: &[[f64; 2]], conn: &[usize], xi: f64, eta: f64) -> (Matrix2<f64>, f64) {
    let dn = quad4_dn_dnat(xi, eta);
    let mut j = Matrix2::zeros();
    for (a, &node) in conn.iter().enumerate() {
        let x = nodes[node];
        j[(0, 0)] += dn[a][0] * x[0];
        j[(0, 1)] += dn[a][0] * x[1];
        j[(1, 0)] += dn[a][1] * x[0];
        j[(1, 1)] += dn[a][1] * x[1];
    }
    let det = j.determinant();
    (j, det)
}

/// Parse and validate a mesh from a JSON byte stream.
pub fn load_mesh<R: Read>(reader: R) -> Result<Mesh> {
    let mut mesh: Mesh = serde_json::from_reader(reader)?;
    mesh.validate()?;
    Ok(mesh)
}

/// Parse a dataset from a JSON byte stream and check it against its mesh.
pub fn load_dataset<R: Read>(reader: R, mesh: &Mesh) -> Result<Dataset> {
    let dataset: Dataset = serde_json::from_reader(reader)?;
    validate_dataset(&dataset, mesh)?;
    Ok(dataset)
}

pub fn validate_dataset(dataset: &Dataset, mesh: &Mesh) -> Result<()> {
    for step in &dataset.steps {
        if step.displacements.len() != mesh.node_count() {
            return Err(Error::DatasetInvalid(format!(
                "step {}: {} displacement entries for a mesh with {} nodes",
                step.step_id,
                step.displacements.len(),
                mesh.node_count()
            )));
        }
        for (name, reaction) in &step.reactions {
            if !mesh.node_sets.contains_key(name) {
                return Err(Error::DatasetInvalid(format!(
                    "step {}: reaction set \"{name}\" is not a mesh node set",
                    step.step_id
                )));
            }
            if !reaction.mask[0] && !reaction.mask[1] {
                return Err(Error::DatasetInvalid(format!(
                    "step {}: reaction set \"{name}\" masks out both components",
                    step.step_id
                )));
            }
        }
    }
    Ok(())
}

/// Precompute shape-function gradients and integration weights for every
/// quadrature point of the mesh.
///
/// quad4 elements get the 2x2 Gauss rule (4 points), tri3 elements a single
/// centroid point. Weights include the mesh thickness, so summing them over
/// all points yields the reference volume.
pub fn precompute_quadrature(mesh: &Mesh) -> Vec<QuadPoint> {
    let mut points = Vec::new();
    for (e, conn) in mesh.elements.connectivity.iter().enumerate() {
        match mesh.elements.kind {
            ElementKind::Quad4 => {
                for gp in &QUAD4_GAUSS {
                    let dn = quad4_dn_dnat(gp[0], gp[1]);
                    let (j, det) = quad4_jacobian(&mesh.nodes, conn, gp[0], gp[1]);
                    let jinv = j.try_inverse().expect("validated mesh has det J > 0");
                    let grads = dn
                        .iter()
                        .map(|d| {
                            // Rows of J are dX/dxi_i, so dN/dxi = J dN/dX.
                            [
                                jinv[(0, 0)] * d[0] + jinv[(0, 1)] * d[1],
                                jinv[(1, 0)] * d[0] + jinv[(1, 1)] * d[1],
                            ]
                        })
                        .collect();
                    points.push(QuadPoint {
                        element: e,
                        grads,
                        weight: det * mesh.thickness, // Gauss weight 1 at each of the 4 points
                    });
                }
            }
            ElementKind::Tri3 => {
                let [x1, x2, x3] = [
                    mesh.nodes[conn[0]],
                    mesh.nodes[conn[1]],
                    mesh.nodes[conn[2]],
                ];
                let det = (x2[0] - x1[0]) * (x3[1] - x1[1]) - (x3[0] - x1[0]) * (x2[1] - x1[1]);
                let area = 0.5 * det;
                let grads = vec![
                    [(x2[1] - x3[1]) / det, (x3[0] - x2[0]) / det],
                    [(x3[1] - x1[1]) / det, (x1[0] - x3[0]) / det],
                    [(x1[1] - x2[1]) / det, (x2[0] - x1[0]) / det],
                ];
                points.push(QuadPoint {
                    element: e,
                    grads,
                    weight: area * mesh.thickness,
                });
            }
        }
    }
    points
}

/// In-plane deformation gradient F_2D = I + sum_a u_a (x) dN_a/dX at one
/// quadrature point.
pub fn in_plane_f(qp: &QuadPoint, conn: &[usize], u: &[[f64; 2]]) -> Matrix2<f64> {
    let mut f = Matrix2::identity();
    for (a, &node) in conn.iter().enumerate() {
        let ua = u[node];
        let g = qp.grads[a];
        f[(0, 0)] += ua[0] * g[0];
        f[(0, 1)] += ua[0] * g[1];
        f[(1, 0)] += ua[1] * g[0];
        f[(1, 1)] += ua[1] * g[1];
    }
    f
}

/// Embed an in-plane gradient into the full 3x3 tensor for `mode`.
pub fn embed_f(f2: Matrix2<f64>, mode: KinematicMode) -> Matrix3<f64> {
    let f33 = match mode {
        KinematicMode::PlaneStrain => 1.0,
        KinematicMode::IncompressiblePlaneStress => 1.0 / f2.determinant(),
    };
    let mut f = Matrix3::identity();
    f[(0, 0)] = f2[(0, 0)];
    f[(0, 1)] = f2[(0, 1)];
    f[(1, 0)] = f2[(1, 0)];
    f[(1, 1)] = f2[(1, 1)];
    f[(2, 2)] = f33;
    f
}

/// Per-quadrature-point deformation gradients for a nodal displacement field.
///
/// Fails with the offending element id if det(F_2D) <= 0 anywhere.
pub fn deformation_gradient(
    mesh: &Mesh,
    quad: &[QuadPoint],
    u: &[[f64; 2]],
    mode: KinematicMode,
) -> Result<Vec<Matrix3<f64>>> {
    assert_eq!(
        u.len(),
        mesh.node_count(),
        "displacement field length must match node count"
    );
    let mut out = Vec::with_capacity(quad.len());
    for qp in quad {
        let conn = &mesh.elements.connectivity[qp.element];
        let f2 = in_plane_f(qp, conn, u);
        if f2.determinant() <= 0.0 {
            return Err(Error::InvertedDeformation {
                element: qp.element,
            });
        }
        out.push(embed_f(f2, mode));
    }
    Ok(out)
}

/// Largest principal stretch of a deformation gradient: the square root of
/// the largest eigenvalue of C = F^T F.
pub fn max_principal_stretch(f: &Matrix3<f64>) -> f64 {
    let c = f.transpose() * f;
    c.symmetric_eigenvalues()
        .iter()
        .fold(f64::NEG_INFINITY, |a, &b| a.max(b))
        .sqrt()
}

/// Denoise a measured displacement field by least-squares projection onto
/// the polynomial space of total degree `degree` in the reference
/// coordinates, per step and per component.
///
/// Full-field measurements carry pointwise noise that finite-difference
/// strain computation amplifies by the inverse element size; projecting the
/// field onto a smooth basis before differentiation is the standard remedy.
/// The projection is exact on fields that already lie in the basis, so a
/// homogeneous (affine) deformation passes through degree >= 1 unchanged.
/// Reactions and step ids are preserved.
pub fn smooth_dataset(dataset: &Dataset, mesh: &Mesh, degree: usize) -> Result<Dataset> {
    let fit = SpatialFit::build(mesh, degree)?;
    let coeffs = fit.project(dataset)?;
    Ok(fit.reconstruct(dataset, &coeffs))
}

/// Like [`smooth_dataset`], but additionally fits every spatial coefficient's
/// trajectory across load steps with a polynomial of degree `step_degree`.
///
/// A quasi-static experiment evolves smoothly along its load program, so the
/// per-step fit coefficients are themselves smooth functions of the step
/// index; projecting the trajectories suppresses the per-step scatter the
/// spatial fit alone cannot remove.
pub fn smooth_dataset_spacetime(
    dataset: &Dataset,
    mesh: &Mesh,
    degree: usize,
    step_degree: usize,
) -> Result<Dataset> {
    let n_steps = dataset.steps.len();
    if step_degree + 1 > n_steps {
        return Err(Error::Config(format!(
            "step smoothing degree {step_degree} needs {} samples but the dataset has only {n_steps} steps",
            step_degree + 1
        )));
    }
    let fit = SpatialFit::build(mesh, degree)?;
    let mut coeffs = fit.project(dataset)?;

    // Vandermonde over the normalized step index, shared by every
    // coefficient trajectory.
    let t = |k: usize| -> f64 {
        if n_steps == 1 {
            0.0
        } else {
            2.0 * k as f64 / (n_steps - 1) as f64 - 1.0
        }
    };
    let mut a = DMatrix::zeros(n_steps, step_degree + 1);
    for k in 0..n_steps {
        for d in 0..=step_degree {
            a[(k, d)] = t(k).powi(d as i32);
        }
    }
    let svd = a.clone().svd(true, true);
    let n_basis = fit.basis.len();
    for comp in 0..2 {
        for idx in 0..n_basis {
            let b = DVector::from_iterator(n_steps, (0..n_steps).map(|k| coeffs[k][comp][idx]));
            let c = svd
                .solve(&b, 1e-12)
                .map_err(|e| Error::Config(format!("smoothing projection failed: {e}")))?;
            let fitted = &a * c;
            for (k, row) in coeffs.iter_mut().enumerate() {
                row[comp][idx] = fitted[k];
            }
        }
    }
    Ok(fit.reconstruct(dataset, &coeffs))
}

/// Least-squares projector onto 2D polynomials over the mesh nodes.
struct SpatialFit {
    basis: Vec<(usize, usize)>,
    a: DMatrix<f64>,
    svd: nalgebra::SVD<f64, nalgebra::Dyn, nalgebra::Dyn>,
}

impl SpatialFit {
    fn build(mesh: &Mesh, degree: usize) -> Result<Self> {
        let n = mesh.node_count();
        let basis: Vec<(usize, usize)> = (0..=degree)
            .flat_map(|d| (0..=d).map(move |j| (d - j, j)))
            .collect();
        if basis.len() > n {
            return Err(Error::Config(format!(
                "smoothing degree {degree} needs {} basis functions but the mesh has only {n} nodes",
                basis.len()
            )));
        }

        // Center and scale coordinates so the Vandermonde matrix stays well
        // conditioned regardless of specimen size.
        let (mut cx, mut cy) = (0.0, 0.0);
        for p in &mesh.nodes {
            cx += p[0];
            cy += p[1];
        }
        cx /= n as f64;
        cy /= n as f64;
        let scale = mesh
            .nodes
            .iter()
            .map(|p| (p[0] - cx).abs().max((p[1] - cy).abs()))
            .fold(f64::MIN_POSITIVE, f64::max);

        let mut a = DMatrix::zeros(n, basis.len());
        for (row, p) in mesh.nodes.iter().enumerate() {
            let (x, y) = ((p[0] - cx) / scale, (p[1] - cy) / scale);
            for (col, &(i, j)) in basis.iter().enumerate() {
                a[(row, col)] = x.powi(i as i32) * y.powi(j as i32);
            }
        }
        let svd = a.clone().svd(true, true);
        Ok(SpatialFit { basis, a, svd })
    }

    /// Fit coefficients per step and component: `coeffs[step][comp][basis]`.
    fn project(&self, dataset: &Dataset) -> Result<Vec<[DVector<f64>; 2]>> {
        let n = self.a.nrows();
        dataset
            .steps
            .iter()
            .map(|step| {
                let fit_comp = |comp: usize| {
                    let b = DVector::from_iterator(n, step.displacements.iter().map(|u| u[comp]));
                    self.svd
                        .solve(&b, 1e-12)
                        .map_err(|e| Error::Config(format!("smoothing projection failed: {e}")))
                };
                Ok([fit_comp(0)?, fit_comp(1)?])
            })
            .collect()
    }

    fn reconstruct(&self, dataset: &Dataset, coeffs: &[[DVector<f64>; 2]]) -> Dataset {
        let mut out = dataset.clone();
        for (step, c) in out.steps.iter_mut().zip(coeffs) {
            for comp in 0..2 {
                let fitted = &self.a * &c[comp];
                for (node, u) in step.displacements.iter_mut().enumerate() {
                    u[comp] = fitted[node];
                }
            }
        }
        out
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use approx::assert_relative_eq;

    pub(crate) fn unit_square_mesh(thickness: f64) -> Mesh {
        let mut mesh = Mesh {
            nodes: vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]],
            elements: Elements {
                kind: ElementKind::Quad4,
                connectivity: vec![vec![0, 1, 2, 3]],
            },
            node_sets: BTreeMap::new(),
            thickness,
        };
        mesh.validate().unwrap();
        mesh
    }

    #[test]
    fn load_minimal_quad_mesh() {
        let json = r#"{
            "nodes": [[0,0],[1,0],[1,1],[0,1]],
            "elements": {"kind": "quad4", "connectivity": [[0,1,2,3]]},
            "node_sets": {"grip": [0,1]},
            "thickness": 1.0
        }"#;
        let mesh = load_mesh(json.as_bytes()).unwrap();
        assert_eq!(mesh.node_count(), 4);
        assert_eq!(mesh.element_count(), 1);
    }

    #[test]
    fn clockwise_connectivity_is_reordered() {
        let json = r#"{
            "nodes": [[0,0],[1,0],[1,1],[0,1]],
            "elements": {"kind": "quad4", "connectivity": [[0,3,2,1]]},
            "node_sets": {},
            "thickness": 1.0
        }"#;
        let mesh = load_mesh(json.as_bytes()).unwrap();
        assert_eq!(mesh.elements.connectivity[0], vec![0, 1, 2, 3]);
        assert!(signed_area(&mesh.nodes, &mesh.elements.connectivity[0]) > 0.0);
    }

    #[test]
    fn dangling_node_set_is_rejected() {
        let json = r#"{
            "nodes": [[0,0],[1,0],[1,1],[0,1]],
            "elements": {"kind": "quad4", "connectivity": [[0,1,2,3]]},
            "node_sets": {"grip": [0, 7]},
            "thickness": 1.0
        }"#;
        let err = load_mesh(json.as_bytes()).unwrap_err();
        assert!(matches!(err, Error::DanglingNodeSet { index: 7, .. }));
    }

    #[test]
    fn self_intersecting_quad_is_rejected() {
        let json = r#"{
            "nodes": [[0,0],[1,0],[0,1],[1,1]],
            "elements": {"kind": "quad4", "connectivity": [[0,1,2,3]]},
            "node_sets": {},
            "thickness": 1.0
        }"#;
        let err = load_mesh(json.as_bytes()).unwrap_err();
        assert!(matches!(err, Error::InvertedElement { element: 0 }));
    }

    #[test]
    fn quadrature_volume_unit_square() {
        let mesh = unit_square_mesh(2.0);
        let quad = precompute_quadrature(&mesh);
        assert_eq!(quad.len(), 4);
        let vol: f64 = quad.iter().map(|q| q.weight).sum();
        assert_relative_eq!(vol, 2.0, max_relative = 1e-12);
    }

    #[test]
    fn quadrature_volume_right_triangle() {
        let mut mesh = Mesh {
            nodes: vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]],
            elements: Elements {
                kind: ElementKind::Tri3,
                connectivity: vec![vec![0, 1, 2]],
            },
            node_sets: BTreeMap::new(),
            thickness: 1.0,
        };
        mesh.validate().unwrap();
        let quad = precompute_quadrature(&mesh);
        assert_eq!(quad.len(), 1);
        assert_relative_eq!(quad[0].weight, 0.5, max_relative = 1e-12);
    }

    #[test]
    fn quadrature_volume_distorted_quad_matches_shoelace() {
        let nodes = vec![[0.0, 0.0], [2.0, 0.0], [2.2, 1.1], [0.0, 1.0]];
        // Shoelace-formula oracle for the polygon area.
        let mut area = 0.0;
        for i in 0..4 {
            let p = nodes[i];
            let q = nodes[(i + 1) % 4];
            area += p[0] * q[1] - q[0] * p[1];
        }
        area *= 0.5;
        let mut mesh = Mesh {
            nodes,
            elements: Elements {
                kind: ElementKind::Quad4,
                connectivity: vec![vec![0, 1, 2, 3]],
            },
            node_sets: BTreeMap::new(),
            thickness: 1.5,
        };
        mesh.validate().unwrap();
        let quad = precompute_quadrature(&mesh);
        let vol: f64 = quad.iter().map(|q| q.weight).sum();
        assert_relative_eq!(vol, area * 1.5, max_relative = 1e-12);
    }

    #[test]
    fn gradient_partition_of_unity() {
        let nodes = vec![[0.0, 0.0], [2.0, 0.1], [2.2, 1.1], [-0.1, 1.3]];
        let mut mesh = Mesh {
            nodes,
            elements: Elements {
                kind: ElementKind::Quad4,
                connectivity: vec![vec![0, 1, 2, 3]],
            },
            node_sets: BTreeMap::new(),
            thickness: 1.0,
        };
        mesh.validate().unwrap();
        for qp in precompute_quadrature(&mesh) {
            let sum = qp
                .grads
                .iter()
                .fold([0.0, 0.0], |acc, g| [acc[0] + g[0], acc[1] + g[1]]);
            assert!(sum[0].abs() < 1e-12 && sum[1].abs() < 1e-12);
        }
    }

    #[test]
    fn zero_displacement_gives_identity() {
        let mesh = unit_square_mesh(1.0);
        let quad = precompute_quadrature(&mesh);
        let u = vec![[0.0, 0.0]; 4];
        let fs = deformation_gradient(&mesh, &quad, &u, KinematicMode::PlaneStrain).unwrap();
        for f in fs {
            assert_relative_eq!((f - Matrix3::identity()).norm(), 0.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn affine_field_reproduced_exactly() {
        // u(X) = A X with A = [[0.1, 0], [0, -0.05]].
        let nodes = vec![[0.0, 0.0], [2.0, 0.1], [2.2, 1.1], [-0.1, 1.3]];
        let mut mesh = Mesh {
            nodes: nodes.clone(),
            elements: Elements {
                kind: ElementKind::Quad4,
                connectivity: vec![vec![0, 1, 2, 3]],
            },
            node_sets: BTreeMap::new(),
            thickness: 1.0,
        };
        mesh.validate().unwrap();
        let quad = precompute_quadrature(&mesh);
        let a = [[0.1, 0.0], [0.0, -0.05]];
        let u: Vec<[f64; 2]> = nodes
            .iter()
            .map(|x| {
                [
                    a[0][0] * x[0] + a[0][1] * x[1],
                    a[1][0] * x[0] + a[1][1] * x[1],
                ]
            })
            .collect();
        let fs = deformation_gradient(&mesh, &quad, &u, KinematicMode::PlaneStrain).unwrap();
        for f in &fs {
            assert_relative_eq!(f[(0, 0)], 1.1, max_relative = 1e-12);
            assert_relative_eq!(f[(1, 1)], 0.95, max_relative = 1e-12);
            assert_relative_eq!(f[(2, 2)], 1.0, max_relative = 1e-15);
            assert!(f[(0, 1)].abs() < 1e-12 && f[(1, 0)].abs() < 1e-12);
        }
        // Same field under the incompressible closure: F33 = 1/(1.1*0.95).
        let fs = deformation_gradient(&mesh, &quad, &u, KinematicMode::IncompressiblePlaneStress)
            .unwrap();
        for f in &fs {
            assert_relative_eq!(f[(2, 2)], 1.0 / (1.1 * 0.95), max_relative = 1e-12);
            assert_relative_eq!(f.determinant(), 1.0, max_relative = 1e-12);
        }
    }

    #[test]
    fn rigid_translation_gives_identity() {
        let mesh = unit_square_mesh(1.0);
        let quad = precompute_quadrature(&mesh);
        let u = vec![[0.37, -1.2]; 4];
        let fs = deformation_gradient(&mesh, &quad, &u, KinematicMode::PlaneStrain).unwrap();
        for f in fs {
            assert_relative_eq!((f - Matrix3::identity()).norm(), 0.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn inverted_deformation_reports_element() {
        let mesh = unit_square_mesh(1.0);
        let quad = precompute_quadrature(&mesh);
        // Collapse the element: push the right edge past the left.
        let u = vec![[0.0, 0.0], [-2.0, 0.0], [-2.0, 0.0], [0.0, 0.0]];
        let err = deformation_gradient(&mesh, &quad, &u, KinematicMode::PlaneStrain).unwrap_err();
        assert!(matches!(err, Error::InvertedDeformation { element: 0 }));
    }

    #[test]
    fn dataset_validation_catches_mismatches() {
        let mesh = unit_square_mesh(1.0);
        let ds = Dataset {
            steps: vec![LoadStep {
                step_id: 0,
                displacements: vec![[0.0, 0.0]; 3],
                reactions: BTreeMap::new(),
            }],
        };
        assert!(validate_dataset(&ds, &mesh).is_err());

        let mut reactions = BTreeMap::new();
        reactions.insert(
            "top".to_string(),
            Reaction {
                force: [0.0, 1.0],
                mask: [true, true],
            },
        );
        let ds = Dataset {
            steps: vec![LoadStep {
                step_id: 0,
                displacements: vec![[0.0, 0.0]; 4],
                reactions,
            }],
        };
        // "top" is not a node set of this mesh.
        assert!(validate_dataset(&ds, &mesh).is_err());
    }

    fn grid_mesh(nx: usize, ny: usize) -> Mesh {
        let mut nodes = Vec::new();
        for j in 0..=ny {
            for i in 0..=nx {
                nodes.push([i as f64 * 0.5, j as f64 * 0.5]);
            }
        }
        let mut connectivity = Vec::new();
        for j in 0..ny {
            for i in 0..nx {
                let n0 = j * (nx + 1) + i;
                connectivity.push(vec![n0, n0 + 1, n0 + nx + 2, n0 + nx + 1]);
            }
        }
        let mut mesh = Mesh {
            nodes,
            elements: Elements {
                kind: ElementKind::Quad4,
                connectivity,
            },
            node_sets: BTreeMap::new(),
            thickness: 1.0,
        };
        mesh.validate().unwrap();
        mesh
    }

    fn affine_step(mesh: &Mesh, a: [f64; 2], gx: [f64; 2], gy: [f64; 2], id: u64) -> LoadStep {
        LoadStep {
            step_id: id,
            displacements: mesh
                .nodes
                .iter()
                .map(|p| {
                    [
                        a[0] + gx[0] * p[0] + gy[0] * p[1],
                        a[1] + gx[1] * p[0] + gy[1] * p[1],
                    ]
                })
                .collect(),
            reactions: BTreeMap::new(),
        }
    }

    #[test]
    fn smoothing_is_identity_on_polynomial_fields() {
        let mesh = grid_mesh(4, 6);
        let clean = Dataset {
            steps: vec![
                affine_step(&mesh, [0.1, -0.2], [0.03, 0.01], [-0.02, 0.05], 0),
                affine_step(&mesh, [0.0, 0.0], [0.06, 0.02], [-0.04, 0.10], 1),
            ],
        };
        let smoothed = smooth_dataset(&clean, &mesh, 1).unwrap();
        for (s, c) in smoothed.steps.iter().zip(&clean.steps) {
            assert_eq!(s.step_id, c.step_id);
            for (us, uc) in s.displacements.iter().zip(&c.displacements) {
                assert_relative_eq!(us[0], uc[0], epsilon = 1e-12);
                assert_relative_eq!(us[1], uc[1], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn smoothing_shrinks_noise_toward_the_underlying_field() {
        use rand::{Rng, SeedableRng};
        let mesh = grid_mesh(8, 10);
        let truth = affine_step(&mesh, [0.0, 0.0], [0.08, 0.0], [0.0, 0.12], 0);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let sigma = 0.01;
        let mut noisy = truth.clone();
        for u in &mut noisy.displacements {
            u[0] += sigma * rng.gen_range(-1.73..1.73);
            u[1] += sigma * rng.gen_range(-1.73..1.73);
        }
        let ds = Dataset { steps: vec![noisy] };
        let smoothed = smooth_dataset(&ds, &mesh, 1).unwrap();
        let rms = |a: &LoadStep| -> f64 {
            let sum: f64 = a
                .displacements
                .iter()
                .zip(&truth.displacements)
                .map(|(x, t)| (x[0] - t[0]).powi(2) + (x[1] - t[1]).powi(2))
                .sum();
            (sum / a.displacements.len() as f64).sqrt()
        };
        // 99 nodes and 3 basis functions: the projection should cut the
        // noise by roughly sqrt(99/3); demand a conservative factor 3.
        assert!(rms(&smoothed.steps[0]) < rms(&ds.steps[0]) / 3.0);
    }

    #[test]
    fn spacetime_smoothing_projects_coefficient_trajectories() {
        let mesh = grid_mesh(3, 3);
        // Gradients grow linearly with the step index, so a degree-1
        // trajectory fit must reproduce the data exactly.
        let steps: Vec<LoadStep> = (0..5)
            .map(|k| {
                let g = 0.02 * k as f64;
                affine_step(&mesh, [0.0, 0.0], [g, 0.0], [0.0, -g], k as u64)
            })
            .collect();
        let clean = Dataset { steps };
        let smoothed = smooth_dataset_spacetime(&clean, &mesh, 1, 1).unwrap();
        for (s, c) in smoothed.steps.iter().zip(&clean.steps) {
            for (us, uc) in s.displacements.iter().zip(&c.displacements) {
                assert_relative_eq!(us[0], uc[0], epsilon = 1e-12);
                assert_relative_eq!(us[1], uc[1], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn smoothing_rejects_underdetermined_bases() {
        let mesh = unit_square_mesh(1.0);
        let ds = Dataset {
            steps: vec![affine_step(&mesh, [0.0, 0.0], [0.01, 0.0], [0.0, 0.01], 0)],
        };
        // Degree 2 needs 6 basis functions but the mesh has 4 nodes.
        assert!(matches!(
            smooth_dataset(&ds, &mesh, 2).unwrap_err(),
            Error::Config(_)
        ));
        // A cubic trajectory needs 4 steps but there is only one.
        assert!(matches!(
            smooth_dataset_spacetime(&ds, &mesh, 1, 3).unwrap_err(),
            Error::Config(_)
        ));
    }
}
