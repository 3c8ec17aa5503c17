//! Synthetic experiment generation.
//!
//! Builds structured strip meshes (optionally notched), solves the forward
//! equilibrium problem for a known ground-truth material under a program of
//! grip stretches with a total-Lagrangian Newton method, and optionally
//! corrupts the resulting dataset with Gaussian measurement noise. The
//! output is a [`Dataset`] in the same format the identification side
//! consumes, which closes the loop: data generated here must score a
//! near-zero equilibrium gap under the material that produced it.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use nalgebra::{DMatrix, DVector, Matrix2, Matrix3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::equilibrium::{internal_forces, StressLaw};
use crate::error::{Error, Result};
use crate::kinematics::{
    deformation_gradient, max_principal_stretch, precompute_quadrature, Dataset, ElementKind,
    Elements, KinematicMode, LoadStep, Mesh, QuadPoint, Reaction,
};
use crate::material::{effective_in_plane_stress, neo_hookean_energy, neo_hookean_stress};

/// Known material used to manufacture synthetic data.
///
/// Units are MPa for all moduli. The Mooney-Rivlin variant is the compressible
/// extension
///
/// ```text
/// W = c10 (I1 - 3) + c01 (I2 - 3) - 2 (c10 + 2 c01) ln J + lambda_v/2 (J - 1)^2,
/// ```
///
/// whose log-term coefficient is fixed so that the reference state is
/// stress-free. With `c01 = 0` it reduces to the Neo-Hookean law.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GroundTruthMaterial {
    NeoHookean { mu: f64, lambda_v: f64 },
    MooneyRivlin { c10: f64, c01: f64, lambda_v: f64 },
}

impl GroundTruthMaterial {
    /// Check that the moduli define a stable material: shear-like moduli
    /// strictly positive, volumetric modulus non-negative.
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            GroundTruthMaterial::NeoHookean { mu, lambda_v } => mu > 0.0 && lambda_v >= 0.0,
            GroundTruthMaterial::MooneyRivlin { c10, c01, lambda_v } => {
                c10 > 0.0 && c01 >= 0.0 && lambda_v >= 0.0
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "ground-truth moduli out of range: {self:?}"
            )))
        }
    }

    /// Strain energy density of the full 3D law.
    pub fn energy3(&self, f: &Matrix3<f64>) -> f64 {
        match *self {
            GroundTruthMaterial::NeoHookean { mu, lambda_v } => neo_hookean_energy(mu, lambda_v, f),
            GroundTruthMaterial::MooneyRivlin { c10, c01, lambda_v } => {
                let c = f.transpose() * f;
                let i1 = c.trace();
                let i2 = 0.5 * (i1 * i1 - (c * c).trace());
                let j = f.determinant();
                c10 * (i1 - 3.0) + c01 * (i2 - 3.0) - 2.0 * (c10 + 2.0 * c01) * j.ln()
                    + 0.5 * lambda_v * (j - 1.0) * (j - 1.0)
            }
        }
    }

    /// First Piola-Kirchhoff stress P = dW/dF of the full 3D law.
    pub fn stress3(&self, f: &Matrix3<f64>) -> Matrix3<f64> {
        match *self {
            GroundTruthMaterial::NeoHookean { mu, lambda_v } => neo_hookean_stress(mu, lambda_v, f),
            GroundTruthMaterial::MooneyRivlin { c10, c01, lambda_v } => {
                let c = f.transpose() * f;
                let i1 = c.trace();
                let j = f.determinant();
                let f_inv_t = f.try_inverse().expect("det F > 0").transpose();
                2.0 * c10 * f + 2.0 * c01 * (i1 * f - f * c) - 2.0 * (c10 + 2.0 * c01) * f_inv_t
                    + lambda_v * j * (j - 1.0) * f_inv_t
            }
        }
    }

    /// View the material as an in-plane stress law under the given
    /// kinematic mode, suitable for assembly and forward solves.
    pub fn as_law(&self, mode: KinematicMode) -> GroundTruthLaw<'_> {
        GroundTruthLaw {
            material: self,
            mode,
        }
    }
}

/// A ground-truth material paired with a kinematic mode.
#[derive(Debug, Clone, Copy)]
pub struct GroundTruthLaw<'a> {
    material: &'a GroundTruthMaterial,
    mode: KinematicMode,
}

impl StressLaw for GroundTruthLaw<'_> {
    fn in_plane_stress(&self, f2: &Matrix2<f64>) -> Matrix2<f64> {
        let f3 = crate::kinematics::embed_f(*f2, self.mode);
        effective_in_plane_stress(self.mode, f2, &self.material.stress3(&f3))
    }
}

/// Specimen geometry, meshed with bilinear quads.
///
/// Both variants produce an `nx` by `ny` structured grid of a `width` by
/// `height` rectangle (mm) with node sets `"bottom"` (y = 0) and `"top"`
/// (y = height). The notched variant removes the listed element indices
/// (row-major, `j * nx + i`) and drops the nodes that become unreferenced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Geometry {
    Strip {
        width: f64,
        height: f64,
        nx: usize,
        ny: usize,
    },
    NotchedStrip {
        width: f64,
        height: f64,
        nx: usize,
        ny: usize,
        notch: Vec<usize>,
    },
}

/// Element indices for a rectangular edge notch at mid-height: `cols`
/// element columns deep from the x = 0 edge, `rows` element rows centered
/// on the middle of the strip.
pub fn edge_notch(nx: usize, ny: usize, cols: usize, rows: usize) -> Vec<usize> {
    let j0 = (ny - rows.min(ny)) / 2;
    let mut out = Vec::new();
    for j in j0..j0 + rows.min(ny) {
        for i in 0..cols.min(nx) {
            out.push(j * nx + i);
        }
    }
    out
}

/// Build the mesh for a geometry. Fails if a notch disconnects the mesh or
/// consumes an entire grip row.
pub fn generate_mesh(geometry: &Geometry) -> Result<Mesh> {
    match geometry {
        Geometry::Strip {
            width,
            height,
            nx,
            ny,
        } => structured_grid(*width, *height, *nx, *ny, &[]),
        Geometry::NotchedStrip {
            width,
            height,
            nx,
            ny,
            notch,
        } => structured_grid(*width, *height, *nx, *ny, notch),
    }
}

fn structured_grid(
    width: f64,
    height: f64,
    nx: usize,
    ny: usize,
    removed: &[usize],
) -> Result<Mesh> {
    if !(width > 0.0 && height > 0.0) {
        return Err(Error::MeshInvalid(format!(
            "strip dimensions must be positive, got {width} x {height}"
        )));
    }
    if nx == 0 || ny == 0 {
        return Err(Error::MeshInvalid(format!(
            "grid must have at least one element per direction, got {nx} x {ny}"
        )));
    }
    let removed: BTreeSet<usize> = removed.iter().copied().collect();
    if let Some(&bad) = removed.iter().find(|&&e| e >= nx * ny) {
        return Err(Error::MeshInvalid(format!(
            "notch element {bad} out of range for a {nx} x {ny} grid"
        )));
    }

    let node_id = |i: usize, j: usize| j * (nx + 1) + i;
    let mut nodes = Vec::with_capacity((nx + 1) * (ny + 1));
    for j in 0..=ny {
        for i in 0..=nx {
            nodes.push([width * i as f64 / nx as f64, height * j as f64 / ny as f64]);
        }
    }
    let mut connectivity = Vec::new();
    for j in 0..ny {
        for i in 0..nx {
            if removed.contains(&(j * nx + i)) {
                continue;
            }
            connectivity.push(vec![
                node_id(i, j),
                node_id(i + 1, j),
                node_id(i + 1, j + 1),
                node_id(i, j + 1),
            ]);
        }
    }
    if connectivity.is_empty() {
        return Err(Error::MeshInvalid(
            "notch removes every element".to_string(),
        ));
    }
    check_connected(&connectivity)?;

    // Drop unreferenced nodes and renumber.
    let referenced: BTreeSet<usize> = connectivity.iter().flatten().copied().collect();
    let remap: BTreeMap<usize, usize> = referenced
        .iter()
        .enumerate()
        .map(|(new, &old)| (old, new))
        .collect();
    let nodes: Vec<[f64; 2]> = referenced.iter().map(|&old| nodes[old]).collect();
    let connectivity: Vec<Vec<usize>> = connectivity
        .iter()
        .map(|conn| conn.iter().map(|n| remap[n]).collect())
        .collect();

    let grip_row = |j: usize| -> Vec<usize> {
        (0..=nx)
            .filter_map(|i| remap.get(&node_id(i, j)).copied())
            .collect()
    };
    let bottom = grip_row(0);
    let top = grip_row(ny);
    if bottom.is_empty() || top.is_empty() {
        return Err(Error::MeshInvalid(
            "notch removes an entire grip row".to_string(),
        ));
    }

    let mut node_sets = BTreeMap::new();
    node_sets.insert("bottom".to_string(), bottom);
    node_sets.insert("top".to_string(), top);
    let mut mesh = Mesh {
        nodes,
        elements: Elements {
            kind: ElementKind::Quad4,
            connectivity,
        },
        node_sets,
        thickness: 1.0,
    };
    mesh.validate()?;
    Ok(mesh)
}

/// Breadth-first search over elements that share at least one node.
fn check_connected(connectivity: &[Vec<usize>]) -> Result<()> {
    let mut node_elems: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (e, conn) in connectivity.iter().enumerate() {
        for &n in conn {
            node_elems.entry(n).or_default().push(e);
        }
    }
    let mut seen = vec![false; connectivity.len()];
    let mut queue = VecDeque::from([0usize]);
    seen[0] = true;
    while let Some(e) = queue.pop_front() {
        for &n in &connectivity[e] {
            for &other in &node_elems[&n] {
                if !seen[other] {
                    seen[other] = true;
                    queue.push_back(other);
                }
            }
        }
    }
    if seen.iter().all(|&s| s) {
        Ok(())
    } else {
        Err(Error::MeshInvalid("notch disconnects the mesh".to_string()))
    }
}

/// How the grips constrain the specimen ends.
///
/// `Clamped` fixes both displacement components on the bottom row and
/// prescribes a pure vertical translation of the top row. `Frictionless`
/// constrains only the vertical component on both rows (plus one bottom
/// corner pinned horizontally to remove the rigid translation), letting the
/// ends contract laterally; a homogeneous strip then deforms homogeneously.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GripStyle {
    Clamped,
    Frictionless,
}

/// Quasi-static loading program: a sequence of nominal grip stretches.
///
/// The stretch is the deformed grip separation divided by the reference
/// separation; targets must be at least 1 and strictly increasing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadProgram {
    pub grip_style: GripStyle,
    pub mode: KinematicMode,
    pub stretches: Vec<f64>,
}

impl LoadProgram {
    pub fn validate(&self) -> Result<()> {
        if self.stretches.is_empty() {
            return Err(Error::Config(
                "load program has no stretch targets".to_string(),
            ));
        }
        for (k, &s) in self.stretches.iter().enumerate() {
            if !s.is_finite() || s < 1.0 {
                return Err(Error::Config(format!(
                    "stretch target {k} is {s}, must be finite and >= 1"
                )));
            }
            if k > 0 && s <= self.stretches[k - 1] {
                return Err(Error::Config(format!(
                    "stretch targets must be strictly increasing, target {k} is {s}"
                )));
            }
        }
        Ok(())
    }
}

/// Gaussian measurement noise, mm on displacements and N on reactions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub sigma_u: f64,
    pub sigma_r: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<()> {
        if self.sigma_u >= 0.0 && self.sigma_r >= 0.0 {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "noise levels must be non-negative, got sigma_u = {}, sigma_r = {}",
                self.sigma_u, self.sigma_r
            )))
        }
    }
}

/// Add i.i.d. Gaussian noise to every displacement component and every
/// reaction component. The draw order is fixed (steps in order, nodes in
/// order, then reactions in set order), so a given seed always produces the
/// same perturbation.
pub fn add_noise(dataset: &Dataset, spec: &NoiseSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let dist_u = Normal::new(0.0, spec.sigma_u).expect("validated sigma");
    let dist_r = Normal::new(0.0, spec.sigma_r).expect("validated sigma");
    let mut out = dataset.clone();
    for step in &mut out.steps {
        for u in &mut step.displacements {
            u[0] += dist_u.sample(&mut rng);
            u[1] += dist_u.sample(&mut rng);
        }
        for reaction in step.reactions.values_mut() {
            reaction.force[0] += dist_r.sample(&mut rng);
            reaction.force[1] += dist_r.sample(&mut rng);
        }
    }
    Ok(out)
}

/// Solve the forward problem for a ground-truth material.
///
/// Convenience wrapper around [`forward_solve_with`].
pub fn forward_solve(
    mesh: &Mesh,
    material: &GroundTruthMaterial,
    program: &LoadProgram,
    tol: f64,
    max_iter: usize,
) -> Result<Dataset> {
    material.validate()?;
    forward_solve_with(mesh, &material.as_law(program.mode), program, tol, max_iter)
}

/// Solve the forward problem for an arbitrary in-plane stress law.
///
/// For each stretch target, the top grip row is displaced vertically by
/// `(stretch - 1) * height` and the interior equilibrium `f_a = 0` is solved
/// with a full Newton method (finite-difference tangent, LU solve) to an
/// infinity-norm force residual below `tol` (N). Solutions warm-start from
/// the previous target; if a step diverges, the increment is bisected toward
/// the last converged state. One [`LoadStep`] per target is emitted, with
/// the summed internal force on the `"top"` set recorded as the reaction.
pub fn forward_solve_with<M: StressLaw>(
    mesh: &Mesh,
    law: &M,
    program: &LoadProgram,
    tol: f64,
    max_iter: usize,
) -> Result<Dataset> {
    program.validate()?;
    if !(tol > 0.0 && max_iter > 0) {
        return Err(Error::Config(format!(
            "solver needs tol > 0 and max_iter > 0, got {tol} and {max_iter}"
        )));
    }
    let solver = ForwardSolver::new(mesh, law, program.grip_style, tol, max_iter)?;

    let mut u = vec![[0.0; 2]; mesh.node_count()];
    let mut last = 1.0;
    let mut steps = Vec::with_capacity(program.stretches.len());
    for (k, &target) in program.stretches.iter().enumerate() {
        solver.advance(&mut u, &mut last, target)?;
        let forces = internal_forces(mesh, &solver.quad, law, &u)?;
        let top = &mesh.node_sets["top"];
        let mut reaction = [0.0; 2];
        for &n in top {
            reaction[0] += forces[n][0];
            reaction[1] += forces[n][1];
        }
        let mut reactions = BTreeMap::new();
        reactions.insert(
            "top".to_string(),
            Reaction {
                force: reaction,
                mask: [true, true],
            },
        );
        steps.push(LoadStep {
            step_id: k as u64,
            displacements: u.clone(),
            reactions,
        });
    }
    Ok(Dataset { steps })
}

enum NewtonOutcome {
    Converged(Vec<[f64; 2]>),
    Diverged,
}

struct ForwardSolver<'a, M: StressLaw> {
    mesh: &'a Mesh,
    law: &'a M,
    quad: Vec<QuadPoint>,
    /// Grip separation in the reference configuration.
    height: f64,
    /// Prescribed value per constrained dof, as a function of the grip
    /// displacement delta: value = base + scale * delta.
    constraints: Vec<[Option<(f64, f64)>; 2]>,
    free: Vec<(usize, usize)>,
    tol: f64,
    max_iter: usize,
}

impl<'a, M: StressLaw> ForwardSolver<'a, M> {
    fn new(
        mesh: &'a Mesh,
        law: &'a M,
        grip_style: GripStyle,
        tol: f64,
        max_iter: usize,
    ) -> Result<Self> {
        let (bottom, top) = match (mesh.node_sets.get("bottom"), mesh.node_sets.get("top")) {
            (Some(b), Some(t)) => (b, t),
            _ => {
                return Err(Error::Config(
                    "forward solve needs \"bottom\" and \"top\" node sets".to_string(),
                ))
            }
        };
        let ys: Vec<f64> = mesh.nodes.iter().map(|n| n[1]).collect();
        let y_min = ys.iter().cloned().fold(f64::INFINITY, f64::min);
        let y_max = ys.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let height = y_max - y_min;
        if height.is_nan() || height <= 0.0 {
            return Err(Error::MeshInvalid(
                "grip separation must be positive".to_string(),
            ));
        }

        let mut constraints: Vec<[Option<(f64, f64)>; 2]> = vec![[None, None]; mesh.node_count()];
        match grip_style {
            GripStyle::Clamped => {
                for &n in bottom {
                    constraints[n] = [Some((0.0, 0.0)), Some((0.0, 0.0))];
                }
                for &n in top {
                    constraints[n] = [Some((0.0, 0.0)), Some((0.0, 1.0))];
                }
            }
            GripStyle::Frictionless => {
                for &n in bottom {
                    constraints[n][1] = Some((0.0, 0.0));
                }
                for &n in top {
                    constraints[n][1] = Some((0.0, 1.0));
                }
                // Pin the leftmost bottom node horizontally to remove the
                // rigid-body translation.
                let pin = *bottom
                    .iter()
                    .min_by(|&&a, &&b| {
                        mesh.nodes[a][0]
                            .partial_cmp(&mesh.nodes[b][0])
                            .expect("finite coordinates")
                    })
                    .expect("non-empty grip row");
                constraints[pin][0] = Some((0.0, 0.0));
            }
        }
        let mut free = Vec::new();
        for (n, c) in constraints.iter().enumerate() {
            for (comp, slot) in c.iter().enumerate() {
                if slot.is_none() {
                    free.push((n, comp));
                }
            }
        }
        if free.is_empty() {
            return Err(Error::EmptyFreeSet);
        }
        Ok(Self {
            mesh,
            law,
            quad: precompute_quadrature(mesh),
            height,
            constraints,
            free,
            tol,
            max_iter,
        })
    }

    fn apply_constraints(&self, u: &mut [[f64; 2]], delta: f64) {
        for (n, c) in self.constraints.iter().enumerate() {
            for comp in 0..2 {
                if let Some((base, scale)) = c[comp] {
                    u[n][comp] = base + scale * delta;
                }
            }
        }
    }

    /// Internal forces at the free dofs, or None when the trial state is
    /// outside the domain of the law (inverted or non-finite).
    fn residual(&self, u: &[[f64; 2]]) -> Result<Option<DVector<f64>>> {
        let forces = match internal_forces(self.mesh, &self.quad, self.law, u) {
            Ok(f) => f,
            Err(Error::InvertedDeformation { .. }) | Err(Error::NonFiniteForce { .. }) => {
                return Ok(None)
            }
            Err(e) => return Err(e),
        };
        let r = DVector::from_iterator(
            self.free.len(),
            self.free.iter().map(|&(n, comp)| forces[n][comp]),
        );
        if r.iter().all(|v| v.is_finite()) {
            Ok(Some(r))
        } else {
            Ok(None)
        }
    }

    /// Central finite-difference tangent over the free dofs.
    fn tangent(&self, u: &mut [[f64; 2]]) -> Result<Option<DMatrix<f64>>> {
        let h = 1e-6;
        let n = self.free.len();
        let mut k = DMatrix::zeros(n, n);
        for (col, &(node, comp)) in self.free.iter().enumerate() {
            let saved = u[node][comp];
            u[node][comp] = saved + h;
            let plus = self.residual(u)?;
            u[node][comp] = saved - h;
            let minus = self.residual(u)?;
            u[node][comp] = saved;
            let (plus, minus) = match (plus, minus) {
                (Some(p), Some(m)) => (p, m),
                _ => return Ok(None),
            };
            for row in 0..n {
                k[(row, col)] = (plus[row] - minus[row]) / (2.0 * h);
            }
        }
        Ok(Some(k))
    }

    fn newton(&self, start: &[[f64; 2]], delta: f64) -> Result<NewtonOutcome> {
        let mut u = start.to_vec();
        self.apply_constraints(&mut u, delta);
        for _ in 0..self.max_iter {
            let r = match self.residual(&u)? {
                Some(r) => r,
                None => return Ok(NewtonOutcome::Diverged),
            };
            if r.amax() < self.tol {
                return Ok(NewtonOutcome::Converged(u));
            }
            let k = match self.tangent(&mut u)? {
                Some(k) => k,
                None => return Ok(NewtonOutcome::Diverged),
            };
            let step = match k.lu().solve(&(-&r)) {
                Some(s) if s.iter().all(|v| v.is_finite()) => s,
                _ => return Ok(NewtonOutcome::Diverged),
            };
            for (i, &(node, comp)) in self.free.iter().enumerate() {
                u[node][comp] += step[i];
            }
        }
        Ok(NewtonOutcome::Diverged)
    }

    /// Move the state from the stretch `last` to `target`, bisecting the
    /// increment whenever Newton fails to converge.
    fn advance(&self, u: &mut Vec<[f64; 2]>, last: &mut f64, target: f64) -> Result<()> {
        let mut stack = vec![target];
        let mut bisections = 0usize;
        while let Some(&next) = stack.last() {
            match self.newton(u, (next - 1.0) * self.height)? {
                NewtonOutcome::Converged(new_u) => {
                    *u = new_u;
                    *last = next;
                    stack.pop();
                }
                NewtonOutcome::Diverged => {
                    bisections += 1;
                    let mid = 0.5 * (*last + next);
                    if bisections > 60 || mid - *last < 1e-10 {
                        return Err(Error::SolverDiverged {
                            last_converged: *last,
                            failing: next,
                        });
                    }
                    stack.push(mid);
                }
            }
        }
        Ok(())
    }
}

/// Largest principal stretch attained at any quadrature point of any step.
pub fn max_local_stretch(
    mesh: &Mesh,
    quad: &[QuadPoint],
    dataset: &Dataset,
    mode: KinematicMode,
) -> Result<f64> {
    let mut best = f64::NEG_INFINITY;
    for step in &dataset.steps {
        for f in deformation_gradient(mesh, quad, &step.displacements, mode)? {
            best = best.max(max_principal_stretch(&f));
        }
    }
    Ok(best)
}

fn default_mode() -> KinematicMode {
    KinematicMode::PlaneStrain
}

fn default_grips() -> GripStyle {
    GripStyle::Clamped
}

fn default_tol() -> f64 {
    1e-9
}

fn default_max_iter() -> usize {
    25
}

/// Everything needed to manufacture one synthetic experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateConfig {
    pub material: GroundTruthMaterial,
    pub geometry: Geometry,
    pub stretches: Vec<f64>,
    #[serde(default)]
    pub noise: Option<NoiseSpec>,
    #[serde(default = "default_mode")]
    pub mode: KinematicMode,
    #[serde(default = "default_grips")]
    pub grips: GripStyle,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
}

impl GenerateConfig {
    pub fn program(&self) -> LoadProgram {
        LoadProgram {
            grip_style: self.grips,
            mode: self.mode,
            stretches: self.stretches.clone(),
        }
    }

    /// Run the full generation pipeline: mesh, forward solve, noise.
    pub fn run(&self) -> Result<GeneratedExperiment> {
        let mesh = generate_mesh(&self.geometry)?;
        let clean = forward_solve(
            &mesh,
            &self.material,
            &self.program(),
            self.tol,
            self.max_iter,
        )?;
        let quad = precompute_quadrature(&mesh);
        let max_stretch = max_local_stretch(&mesh, &quad, &clean, self.mode)?;
        let dataset = match &self.noise {
            Some(spec) => add_noise(&clean, spec)?,
            None => clean,
        };
        Ok(GeneratedExperiment {
            mesh,
            dataset,
            max_stretch,
        })
    }
}

/// Artifacts of one generation run.
#[derive(Debug, Clone)]
pub struct GeneratedExperiment {
    pub mesh: Mesh,
    pub dataset: Dataset,
    /// Largest local principal stretch of the clean solution, before noise.
    pub max_stretch: f64,
}

/// Evenly spaced stretch targets from just above 1 up to `max`.
pub fn stretch_ramp(max: f64, n: usize) -> Vec<f64> {
    (1..=n)
        .map(|k| 1.0 + (max - 1.0) * k as f64 / n as f64)
        .collect()
}

/// Default uniaxial experiment on a plain strip: 10 x 30 mm, 8 x 24
/// elements, clamped grips, 26 steps to 40% nominal stretch.
pub fn default_strip_config(material: GroundTruthMaterial) -> GenerateConfig {
    GenerateConfig {
        material,
        geometry: Geometry::Strip {
            width: 10.0,
            height: 30.0,
            nx: 8,
            ny: 24,
        },
        stretches: stretch_ramp(1.4, 26),
        noise: None,
        mode: default_mode(),
        grips: default_grips(),
        tol: default_tol(),
        max_iter: default_max_iter(),
    }
}

/// Default experiment on an edge-notched strip of the same outline. The
/// notch concentrates strain, so moderate grip stretch drives local
/// principal stretches well past the nominal value.
pub fn default_notched_config(material: GroundTruthMaterial) -> GenerateConfig {
    GenerateConfig {
        material,
        geometry: Geometry::NotchedStrip {
            width: 10.0,
            height: 30.0,
            nx: 8,
            ny: 24,
            notch: edge_notch(8, 24, 4, 2),
        },
        stretches: stretch_ramp(1.5, 20),
        noise: None,
        mode: default_mode(),
        grips: default_grips(),
        tol: default_tol(),
        max_iter: default_max_iter(),
    }
}

/// Default moduli for the Mooney-Rivlin ground truth (MPa).
pub fn default_mooney_rivlin() -> GroundTruthMaterial {
    GroundTruthMaterial::MooneyRivlin {
        c10: 0.3,
        c01: 0.2,
        lambda_v: 4.0,
    }
}

/// Default moduli for the Neo-Hookean ground truth (MPa).
pub fn default_neo_hookean() -> GroundTruthMaterial {
    GroundTruthMaterial::NeoHookean {
        mu: 0.4,
        lambda_v: 4.0,
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::equilibrium::{equilibrium_loss, DofPartition};
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    fn mr_test_material() -> GroundTruthMaterial {
        GroundTruthMaterial::MooneyRivlin {
            c10: 0.3,
            c01: 0.2,
            lambda_v: 2.0,
        }
    }

    #[test]
    fn mooney_rivlin_reference_state_is_stress_free() {
        for (c10, c01, lv) in [(0.3, 0.2, 2.0), (1.0, 0.0, 0.0), (0.1, 0.7, 9.0)] {
            let mat = GroundTruthMaterial::MooneyRivlin {
                c10,
                c01,
                lambda_v: lv,
            };
            let p = mat.stress3(&Matrix3::identity());
            assert_abs_diff_eq!(p.norm(), 0.0, epsilon = 1e-14);
            assert_abs_diff_eq!(mat.energy3(&Matrix3::identity()), 0.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn mooney_rivlin_stress_matches_energy_gradient() {
        let mat = mr_test_material();
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..10 {
            let f = crate::invariants::tests::random_f(&mut rng, 0.3);
            let p = mat.stress3(&f);
            let h = 1e-6;
            for i in 0..3 {
                for j in 0..3 {
                    let mut fp = f;
                    let mut fm = f;
                    fp[(i, j)] += h;
                    fm[(i, j)] -= h;
                    let fd = (mat.energy3(&fp) - mat.energy3(&fm)) / (2.0 * h);
                    assert_relative_eq!(p[(i, j)], fd, epsilon = 1e-6, max_relative = 1e-6);
                }
            }
        }
    }

    #[test]
    fn strip_mesh_counts_and_sets() {
        let mesh = generate_mesh(&Geometry::Strip {
            width: 10.0,
            height: 30.0,
            nx: 2,
            ny: 6,
        })
        .unwrap();
        assert_eq!(mesh.node_count(), 21);
        assert_eq!(mesh.elements.connectivity.len(), 12);
        assert_eq!(mesh.node_sets["bottom"], vec![0, 1, 2]);
        assert_eq!(mesh.node_sets["top"], vec![18, 19, 20]);
        for &n in &mesh.node_sets["top"] {
            assert_abs_diff_eq!(mesh.nodes[n][1], 30.0);
        }
    }

    #[test]
    fn notch_removes_elements_and_orphan_nodes() {
        // 3 x 3 grid, remove the bottom-left element: the corner node (0,0)
        // loses its only element and must be dropped from the mesh and from
        // the bottom grip set.
        let mesh = generate_mesh(&Geometry::NotchedStrip {
            width: 3.0,
            height: 3.0,
            nx: 3,
            ny: 3,
            notch: vec![0],
        })
        .unwrap();
        assert_eq!(mesh.elements.connectivity.len(), 8);
        assert_eq!(mesh.node_count(), 15);
        // Bottom-left corner node (0,0) is gone; bottom set keeps the rest.
        assert_eq!(mesh.node_sets["bottom"].len(), 3);
        for &n in &mesh.node_sets["bottom"] {
            assert!(mesh.nodes[n][0] > 0.0 || mesh.nodes[n][1] > 0.0);
        }
    }

    #[test]
    fn notch_across_full_width_is_rejected() {
        let err = generate_mesh(&Geometry::NotchedStrip {
            width: 2.0,
            height: 4.0,
            nx: 2,
            ny: 4,
            notch: edge_notch(2, 4, 2, 1),
        })
        .unwrap_err();
        assert!(matches!(err, Error::MeshInvalid(_)));
    }

    #[test]
    fn notch_out_of_range_is_rejected() {
        let err = generate_mesh(&Geometry::NotchedStrip {
            width: 2.0,
            height: 2.0,
            nx: 2,
            ny: 2,
            notch: vec![4],
        })
        .unwrap_err();
        assert!(matches!(err, Error::MeshInvalid(_)));
    }

    #[test]
    fn zero_stretch_program_yields_zero_response() {
        let mesh = generate_mesh(&Geometry::Strip {
            width: 2.0,
            height: 4.0,
            nx: 2,
            ny: 4,
        })
        .unwrap();
        let program = LoadProgram {
            grip_style: GripStyle::Clamped,
            mode: KinematicMode::PlaneStrain,
            stretches: vec![1.0],
        };
        let data = forward_solve(&mesh, &default_neo_hookean(), &program, 1e-9, 25).unwrap();
        assert_eq!(data.steps.len(), 1);
        for u in &data.steps[0].displacements {
            assert_abs_diff_eq!(u[0], 0.0);
            assert_abs_diff_eq!(u[1], 0.0);
        }
        let r = data.steps[0].reactions["top"].force;
        assert_abs_diff_eq!(r[0], 0.0);
        assert_abs_diff_eq!(r[1], 0.0);
    }

    /// With frictionless grips a homogeneous strip deforms homogeneously:
    /// every quadrature point sees the same F, which must also match the
    /// solution on a single-element mesh of the same material.
    #[test]
    fn frictionless_stretch_is_a_patch_test() {
        let program = LoadProgram {
            grip_style: GripStyle::Frictionless,
            mode: KinematicMode::PlaneStrain,
            stretches: vec![1.1],
        };
        let mat = mr_test_material();

        let mut f_per_mesh = Vec::new();
        for (nx, ny) in [(1, 1), (2, 6)] {
            let mesh = generate_mesh(&Geometry::Strip {
                width: 2.0,
                height: 4.0,
                nx,
                ny,
            })
            .unwrap();
            let data = forward_solve(&mesh, &mat, &program, 1e-11, 25).unwrap();
            let quad = precompute_quadrature(&mesh);
            let fs = deformation_gradient(
                &mesh,
                &quad,
                &data.steps[0].displacements,
                KinematicMode::PlaneStrain,
            )
            .unwrap();
            for f in &fs {
                assert_abs_diff_eq!(*f, fs[0], epsilon = 1e-10);
            }
            f_per_mesh.push(fs[0]);
        }
        assert_abs_diff_eq!(f_per_mesh[0], f_per_mesh[1], epsilon = 1e-9);
        // Uniaxial: stretched vertically, contracted laterally, no shear.
        let f = f_per_mesh[1];
        assert_abs_diff_eq!(f[(1, 1)], 1.1, epsilon = 1e-10);
        assert!(f[(0, 0)] < 1.0);
        assert_abs_diff_eq!(f[(0, 1)], 0.0, epsilon = 1e-10);
        assert_abs_diff_eq!(f[(1, 0)], 0.0, epsilon = 1e-10);
    }

    /// Independent 1D oracle for plane-strain Neo-Hookean uniaxial stress:
    /// find the lateral stretch `a` with P11(diag(a, b, 1)) = 0 by
    /// bisection on the closed-form stress, then compare the reaction.
    #[test]
    fn frictionless_reaction_matches_analytic_uniaxial_solution() {
        let (mu, lambda_v) = (0.4, 4.0);
        let b = 1.1;
        let p11 = |a: f64| {
            let j = a * b;
            mu * (a - 1.0 / a) + lambda_v * j * (j - 1.0) / a
        };
        let (mut lo, mut hi) = (0.5, 1.0);
        assert!(p11(lo) < 0.0 && p11(hi) > 0.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if p11(mid) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let a = 0.5 * (lo + hi);
        let j = a * b;
        let p22 = mu * (b - 1.0 / b) + lambda_v * j * (j - 1.0) / b;

        let width = 2.0;
        let mesh = generate_mesh(&Geometry::Strip {
            width,
            height: 4.0,
            nx: 2,
            ny: 4,
        })
        .unwrap();
        let program = LoadProgram {
            grip_style: GripStyle::Frictionless,
            mode: KinematicMode::PlaneStrain,
            stretches: vec![b],
        };
        let mat = GroundTruthMaterial::NeoHookean { mu, lambda_v };
        let data = forward_solve(&mesh, &mat, &program, 1e-11, 25).unwrap();

        let quad = precompute_quadrature(&mesh);
        let fs = deformation_gradient(
            &mesh,
            &quad,
            &data.steps[0].displacements,
            KinematicMode::PlaneStrain,
        )
        .unwrap();
        assert_relative_eq!(fs[0][(0, 0)], a, epsilon = 1e-9);
        // Reaction = P22 * width * thickness for the homogeneous state.
        let r = data.steps[0].reactions["top"].force;
        assert_relative_eq!(r[1], p22 * width * mesh.thickness, epsilon = 1e-8);
        assert_abs_diff_eq!(r[0], 0.0, epsilon = 1e-9);
    }

    /// Every noise-free step must sit in equilibrium under the material
    /// that generated it: the closed loop that justifies the whole scheme.
    #[test]
    fn generated_steps_are_in_equilibrium() {
        for mode in [
            KinematicMode::PlaneStrain,
            KinematicMode::IncompressiblePlaneStress,
        ] {
            let mesh = generate_mesh(&Geometry::Strip {
                width: 2.0,
                height: 4.0,
                nx: 2,
                ny: 4,
            })
            .unwrap();
            let program = LoadProgram {
                grip_style: GripStyle::Clamped,
                mode,
                stretches: vec![1.05, 1.12],
            };
            let mat = mr_test_material();
            let data = forward_solve(&mesh, &mat, &program, 1e-9, 25).unwrap();

            let quad = precompute_quadrature(&mesh);
            let part =
                DofPartition::build(&mesh, &["top".to_string()], &["bottom".to_string()]).unwrap();
            let law = mat.as_law(mode);
            for step in &data.steps {
                let report = equilibrium_loss(&mesh, &quad, &part, &law, step, 100.0).unwrap();
                assert!(
                    report.loss < 1e-8,
                    "closed-loop loss {} at step {}",
                    report.loss,
                    step.step_id
                );
                assert_abs_diff_eq!(report.boundary_residual, 0.0);
            }
        }
    }

    /// Mirroring the notch across the strip axis mirrors the solution:
    /// the vertical reaction is unchanged and the horizontal one flips.
    #[test]
    fn mirrored_notch_mirrors_reactions() {
        let (nx, ny) = (4, 8);
        // Off-center notch: a mid-height notch would make the specimen
        // symmetric under the horizontal mirror too, which forces the net
        // grip shear to zero exactly.
        let notch_left: Vec<usize> = (1..3)
            .flat_map(|j| (0..2).map(move |i| j * nx + i))
            .collect();
        let notch_right: Vec<usize> = notch_left
            .iter()
            .map(|e| {
                let (j, i) = (e / nx, e % nx);
                j * nx + (nx - 1 - i)
            })
            .collect();
        let program = LoadProgram {
            grip_style: GripStyle::Clamped,
            mode: KinematicMode::PlaneStrain,
            stretches: vec![1.1],
        };
        let mat = mr_test_material();
        let mut reactions = Vec::new();
        for notch in [notch_left, notch_right] {
            let mesh = generate_mesh(&Geometry::NotchedStrip {
                width: 2.0,
                height: 4.0,
                nx,
                ny,
                notch,
            })
            .unwrap();
            let data = forward_solve(&mesh, &mat, &program, 1e-11, 25).unwrap();
            reactions.push(data.steps[0].reactions["top"].force);
        }
        assert_abs_diff_eq!(reactions[0][1], reactions[1][1], epsilon = 1e-9);
        assert_abs_diff_eq!(reactions[0][0], -reactions[1][0], epsilon = 1e-9);
        assert!(reactions[0][0].abs() > 1e-6, "notch should induce shear");
    }

    #[test]
    fn reaction_stiffens_with_modulus() {
        let mesh = generate_mesh(&Geometry::Strip {
            width: 2.0,
            height: 4.0,
            nx: 2,
            ny: 4,
        })
        .unwrap();
        let program = LoadProgram {
            grip_style: GripStyle::Clamped,
            mode: KinematicMode::PlaneStrain,
            stretches: vec![1.1],
        };
        let total = |mu: f64| {
            let mat = GroundTruthMaterial::NeoHookean { mu, lambda_v: 0.0 };
            let data = forward_solve(&mesh, &mat, &program, 1e-11, 25).unwrap();
            data.steps[0].reactions["top"].force[1]
        };
        // With lambda_v = 0 the response is exactly linear in mu.
        let r1 = total(0.4);
        let r2 = total(0.8);
        assert!(r1 > 0.0);
        assert_relative_eq!(r2, 2.0 * r1, epsilon = 1e-7);
    }

    #[test]
    fn diverging_program_reports_last_converged_stretch() {
        let mesh = generate_mesh(&Geometry::Strip {
            width: 1.0,
            height: 1.0,
            nx: 2,
            ny: 2,
        })
        .unwrap();
        let program = LoadProgram {
            grip_style: GripStyle::Clamped,
            mode: KinematicMode::PlaneStrain,
            stretches: vec![50.0],
        };
        // A single Newton iteration cannot reach the huge target from any
        // warm start, so bisection exhausts its budget.
        let err = forward_solve(&mesh, &default_neo_hookean(), &program, 1e-9, 1).unwrap_err();
        match err {
            Error::SolverDiverged {
                last_converged,
                failing,
            } => {
                assert!(last_converged >= 1.0);
                assert!(failing > last_converged);
            }
            other => panic!("expected SolverDiverged, got {other:?}"),
        }
    }

    #[test]
    fn noise_is_deterministic_and_calibrated() {
        let n_nodes = 120;
        let steps = (0..50)
            .map(|k| {
                let mut reactions = BTreeMap::new();
                reactions.insert(
                    "top".to_string(),
                    Reaction {
                        force: [0.0, 1.0],
                        mask: [true, true],
                    },
                );
                LoadStep {
                    step_id: k,
                    displacements: vec![[0.0; 2]; n_nodes],
                    reactions,
                }
            })
            .collect();
        let clean = Dataset { steps };

        let spec = NoiseSpec {
            sigma_u: 0.125,
            sigma_r: 0.5,
            seed: 7,
        };
        let a = add_noise(&clean, &spec).unwrap();
        let b = add_noise(&clean, &spec).unwrap();
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );

        let zero = add_noise(
            &clean,
            &NoiseSpec {
                sigma_u: 0.0,
                sigma_r: 0.0,
                seed: 7,
            },
        )
        .unwrap();
        assert_eq!(
            serde_json::to_string(&zero).unwrap(),
            serde_json::to_string(&clean).unwrap()
        );

        let samples: Vec<f64> = a
            .steps
            .iter()
            .flat_map(|s| s.displacements.iter().flatten().copied())
            .collect();
        let n = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / n;
        let var = samples.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        assert_relative_eq!(var.sqrt(), spec.sigma_u, max_relative = 0.05);

        let mut other = spec;
        other.seed = 8;
        let c = add_noise(&clean, &other).unwrap();
        assert_ne!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&c).unwrap()
        );
    }

    #[test]
    fn invalid_programs_and_materials_are_rejected() {
        let mesh = generate_mesh(&Geometry::Strip {
            width: 1.0,
            height: 1.0,
            nx: 1,
            ny: 1,
        })
        .unwrap();
        let bad_programs = [
            vec![],
            vec![0.9],
            vec![1.2, 1.1],
            vec![1.1, 1.1],
            vec![f64::NAN],
        ];
        for stretches in bad_programs {
            let program = LoadProgram {
                grip_style: GripStyle::Clamped,
                mode: KinematicMode::PlaneStrain,
                stretches,
            };
            let err = forward_solve(&mesh, &default_neo_hookean(), &program, 1e-9, 25).unwrap_err();
            assert!(matches!(err, Error::Config(_)));
        }
        let bad = GroundTruthMaterial::MooneyRivlin {
            c10: -0.1,
            c01: 0.0,
            lambda_v: 1.0,
        };
        assert!(bad.validate().is_err());
        assert!(default_mooney_rivlin().validate().is_ok());
    }

    #[test]
    fn max_local_stretch_sees_notch_concentration() {
        let geometry = Geometry::NotchedStrip {
            width: 2.0,
            height: 4.0,
            nx: 4,
            ny: 8,
            notch: edge_notch(4, 8, 2, 2),
        };
        let mesh = generate_mesh(&geometry).unwrap();
        let program = LoadProgram {
            grip_style: GripStyle::Clamped,
            mode: KinematicMode::PlaneStrain,
            stretches: vec![1.2],
        };
        let data = forward_solve(&mesh, &mr_test_material(), &program, 1e-9, 25).unwrap();
        let quad = precompute_quadrature(&mesh);
        let peak = max_local_stretch(&mesh, &quad, &data, KinematicMode::PlaneStrain).unwrap();
        assert!(
            peak > 1.25,
            "strain concentration should exceed the nominal stretch, got {peak}"
        );
    }

    #[test]
    fn config_json_round_trip() {
        let config = default_notched_config(default_mooney_rivlin());
        let text = serde_json::to_string_pretty(&config).unwrap();
        let back: GenerateConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, config);

        // Omitted optional fields take defaults.
        let minimal: GenerateConfig = serde_json::from_str(
            r#"{
                "material": {"kind": "neo_hookean", "mu": 0.4, "lambda_v": 4.0},
                "geometry": {"kind": "strip", "width": 10.0, "height": 30.0, "nx": 2, "ny": 6},
                "stretches": [1.1, 1.2]
            }"#,
        )
        .unwrap();
        assert_eq!(minimal.mode, KinematicMode::PlaneStrain);
        assert_eq!(minimal.grips, GripStyle::Clamped);
        assert!(minimal.noise.is_none());
        assert_eq!(minimal.tol, 1e-9);
        assert_eq!(minimal.max_iter, 25);
    }

    /// Principal stretch helper sanity: diagonal and rotated states.
    #[test]
    fn principal_stretch_is_rotation_invariant() {
        let f = Matrix3::from_diagonal(&nalgebra::Vector3::new(2.0, 0.5, 1.0));
        assert_relative_eq!(max_principal_stretch(&f), 2.0, epsilon = 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..5 {
            let r = crate::invariants::tests::random_rotation(&mut rng);
            assert_relative_eq!(max_principal_stretch(&(r * f)), 2.0, epsilon = 1e-10);
        }
    }
}
