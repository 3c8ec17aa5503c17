//! Weak-form internal-force assembly and the equilibrium-gap loss.
//!
//! Given a displacement field and a candidate constitutive model, the nodal
//! internal forces are
//!
//! ```text
//! f_a = sum_q weight_q P(F_q) dN_a/dX|_q        (in-plane rows, N)
//! ```
//!
//! On equilibrium-consistent data every free node carries zero force and
//! each grip's force sum equals the measured reaction. The loss scores the
//! violation of both, normalized by the largest measured reaction magnitude
//! so steps of different load levels are commensurate:
//!
//! ```text
//! loss = sum_{a free} |f_a|^2 / s^2
//!      + lambda_r sum_beta |mask_beta o (sum_{a in beta} f_a - R_beta)|^2 / s^2
//! s    = max_beta |R_beta|, floored at 1 N.
//! ```
//!
//! [`loss_gradient`] backpropagates the summed loss of a list of steps to
//! the raw model parameters, in a fixed accumulation order (step, then
//! element, then quadrature point) so results are bit-reproducible.

use nalgebra::{Matrix2, Vector2};

use crate::error::{Error, Result};
use crate::kinematics::{in_plane_f, LoadStep, Mesh, QuadPoint};
use crate::material::PreparedModel;

/// Anything that maps an in-plane deformation gradient to an effective
/// in-plane first Piola-Kirchhoff stress. Implemented by identified models
/// and by the synthetic ground-truth materials.
pub trait StressLaw {
    fn in_plane_stress(&self, f2: &Matrix2<f64>) -> Matrix2<f64>;
}

impl StressLaw for PreparedModel {
    fn in_plane_stress(&self, f2: &Matrix2<f64>) -> Matrix2<f64> {
        self.stress(f2)
    }
}

/// Role of a node in the equilibrium loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeClass {
    /// Interior or traction-free boundary: enters the inner residual.
    Free,
    /// Clamped grip without force measurement: enters neither term.
    Fixed,
    /// Member of reaction set beta: enters that set's force sum.
    Reaction(usize),
}

/// Partition of the mesh nodes into free, fixed and reaction nodes.
#[derive(Debug, Clone)]
pub struct DofPartition {
    pub node_class: Vec<NodeClass>,
    /// Names of the reaction sets, in the order their indices refer to.
    pub reaction_sets: Vec<String>,
    /// Resolved node lists per reaction set, same order.
    pub reaction_nodes: Vec<Vec<usize>>,
    pub n_free: usize,
}

impl DofPartition {
    /// Classify nodes by set membership; every node not in a reaction or
    /// fixed set is free. Sets must exist in the mesh and may not overlap.
    pub fn build(mesh: &Mesh, reaction_sets: &[String], fixed_sets: &[String]) -> Result<Self> {
        let mut node_class = vec![NodeClass::Free; mesh.node_count()];
        let resolve = |name: &String| {
            mesh.node_sets.get(name).cloned().ok_or_else(|| {
                Error::Config(format!("node set \"{name}\" does not exist in the mesh"))
            })
        };
        for name in fixed_sets {
            for node in resolve(name)? {
                if node_class[node] != NodeClass::Free {
                    return Err(Error::Config(format!(
                        "node {node} appears in more than one grip set"
                    )));
                }
                node_class[node] = NodeClass::Fixed;
            }
        }
        let mut reaction_nodes = Vec::with_capacity(reaction_sets.len());
        for (beta, name) in reaction_sets.iter().enumerate() {
            let nodes = resolve(name)?;
            for &node in &nodes {
                if node_class[node] != NodeClass::Free {
                    return Err(Error::Config(format!(
                        "node {node} appears in more than one grip set"
                    )));
                }
                node_class[node] = NodeClass::Reaction(beta);
            }
            reaction_nodes.push(nodes);
        }
        let n_free = node_class.iter().filter(|c| **c == NodeClass::Free).count();
        if n_free == 0 {
            return Err(Error::EmptyFreeSet);
        }
        Ok(DofPartition {
            node_class,
            reaction_sets: reaction_sets.to_vec(),
            reaction_nodes,
            n_free,
        })
    }
}

/// Loss value and its physical decomposition for one load step.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct EquilibriumReport {
    /// Normalized loss: inner term + lambda_r * boundary term.
    pub loss: f64,
    /// Mean squared free-node force (N^2), before normalization.
    pub inner_residual: f64,
    /// Squared masked reaction mismatch summed over sets (N^2).
    pub boundary_residual: f64,
    /// Normalization scale s (N).
    pub force_scale: f64,
    /// Assembled per-node forces (N) for map export.
    pub node_forces: Vec<[f64; 2]>,
}

/// Assemble nodal internal forces for a displacement field.
pub fn internal_forces<M: StressLaw>(
    mesh: &Mesh,
    quad: &[QuadPoint],
    law: &M,
    u: &[[f64; 2]],
) -> Result<Vec<[f64; 2]>> {
    let mut forces = vec![[0.0; 2]; mesh.node_count()];
    assemble_forces(mesh, quad, law, u, &mut forces, |_| {})?;
    Ok(forces)
}

/// Shared assembly loop; `record` observes (index, F_2D) per quadrature
/// point so gradient passes can reuse the kinematics.
fn assemble_forces<M: StressLaw>(
    mesh: &Mesh,
    quad: &[QuadPoint],
    law: &M,
    u: &[[f64; 2]],
    forces: &mut [[f64; 2]],
    mut record: impl FnMut((usize, &Matrix2<f64>)),
) -> Result<()> {
    assert_eq!(u.len(), mesh.node_count(), "displacement field length");
    for (q, qp) in quad.iter().enumerate() {
        let conn = &mesh.elements.connectivity[qp.element];
        let f2 = in_plane_f(qp, conn, u);
        if f2.determinant() <= 0.0 {
            return Err(Error::InvertedDeformation {
                element: qp.element,
            });
        }
        let p = law.in_plane_stress(&f2);
        if !p.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFiniteForce {
                element: qp.element,
            });
        }
        for (a, &node) in conn.iter().enumerate() {
            let g = qp.grads[a];
            let fa = p * Vector2::new(g[0], g[1]) * qp.weight;
            forces[node][0] += fa[0];
            forces[node][1] += fa[1];
        }
        record((q, &f2));
    }
    Ok(())
}

/// Loss ingredients computed from assembled forces: scale, per-set masked
/// mismatches, and the report.
fn score_forces(
    part: &DofPartition,
    step: &LoadStep,
    forces: Vec<[f64; 2]>,
    lambda_r: f64,
) -> Result<(EquilibriumReport, Vec<[f64; 2]>)> {
    let mut scale: f64 = 1.0;
    for name in &part.reaction_sets {
        let r = step.reactions.get(name).ok_or_else(|| {
            Error::DatasetInvalid(format!(
                "step {}: no measured reaction for set \"{name}\"",
                step.step_id
            ))
        })?;
        scale = scale.max((r.force[0] * r.force[0] + r.force[1] * r.force[1]).sqrt());
    }

    let mut inner_sum = 0.0;
    for (node, f) in forces.iter().enumerate() {
        if part.node_class[node] == NodeClass::Free {
            inner_sum += f[0] * f[0] + f[1] * f[1];
        }
    }

    let mut boundary_sum = 0.0;
    let mut mismatches = Vec::with_capacity(part.reaction_sets.len());
    for (beta, name) in part.reaction_sets.iter().enumerate() {
        let r = &step.reactions[name];
        let mut sum = [0.0; 2];
        for &node in &part.reaction_nodes[beta] {
            sum[0] += forces[node][0];
            sum[1] += forces[node][1];
        }
        let mut mismatch = [0.0; 2];
        for i in 0..2 {
            if r.mask[i] {
                mismatch[i] = sum[i] - r.force[i];
                boundary_sum += mismatch[i] * mismatch[i];
            }
        }
        mismatches.push(mismatch);
    }

    let s2 = scale * scale;
    let loss = inner_sum / s2 + lambda_r * boundary_sum / s2;
    if !loss.is_finite() {
        return Err(Error::NonFiniteLoss {
            step_id: step.step_id,
            element: None,
        });
    }
    Ok((
        EquilibriumReport {
            loss,
            inner_residual: inner_sum / part.n_free as f64,
            boundary_residual: boundary_sum,
            force_scale: scale,
            node_forces: forces,
        },
        mismatches,
    ))
}

fn tag_step(err: Error, step_id: u64) -> Error {
    match err {
        Error::NonFiniteForce { element } => Error::NonFiniteLoss {
            step_id,
            element: Some(element),
        },
        other => other,
    }
}

/// Score one load step against a model.
pub fn equilibrium_loss<M: StressLaw>(
    mesh: &Mesh,
    quad: &[QuadPoint],
    part: &DofPartition,
    law: &M,
    step: &LoadStep,
    lambda_r: f64,
) -> Result<EquilibriumReport> {
    let forces = internal_forces(mesh, quad, law, &step.displacements)
        .map_err(|e| tag_step(e, step.step_id))?;
    let (report, _) = score_forces(part, step, forces, lambda_r)?;
    Ok(report)
}

/// Gradient of the summed loss over `steps` with respect to the raw model
/// parameters, accumulated into `grad` (flat layout). Returns the per-step
/// reports.
///
/// The loss depends on the parameters only through the stresses, so per
/// quadrature point the upstream seed for
/// [`stress_and_weight_gradient`](PreparedModel::stress_and_weight_gradient)
/// is
///
/// ```text
/// U_q = sum_a lambda_a (x) (weight_q dN_a/dX),
/// lambda_a = dloss/df_a = (2/s^2) f_a                 free nodes
///          = (2 lambda_r/s^2) mask o mismatch_beta    reaction nodes
///          = 0                                        fixed nodes.
/// ```
pub fn loss_gradient(
    mesh: &Mesh,
    quad: &[QuadPoint],
    part: &DofPartition,
    prepared: &PreparedModel,
    steps: &[&LoadStep],
    lambda_r: f64,
    grad: &mut [f64],
) -> Result<Vec<EquilibriumReport>> {
    let mut reports = Vec::with_capacity(steps.len());
    let mut f2s: Vec<Matrix2<f64>> = Vec::with_capacity(quad.len());
    for step in steps {
        f2s.clear();
        let mut forces = vec![[0.0; 2]; mesh.node_count()];
        assemble_forces(
            mesh,
            quad,
            prepared,
            &step.displacements,
            &mut forces,
            |(_, f2)| {
                f2s.push(*f2);
            },
        )
        .map_err(|e| tag_step(e, step.step_id))?;
        let (report, mismatches) = score_forces(part, step, forces, lambda_r)?;

        let s2 = report.force_scale * report.force_scale;
        let multipliers: Vec<[f64; 2]> = (0..mesh.node_count())
            .map(|node| match part.node_class[node] {
                NodeClass::Free => {
                    let f = report.node_forces[node];
                    [2.0 * f[0] / s2, 2.0 * f[1] / s2]
                }
                NodeClass::Fixed => [0.0; 2],
                NodeClass::Reaction(beta) => {
                    let m = mismatches[beta];
                    [2.0 * lambda_r * m[0] / s2, 2.0 * lambda_r * m[1] / s2]
                }
            })
            .collect();

        let mut s_total = 0.0;
        for (q, qp) in quad.iter().enumerate() {
            let conn = &mesh.elements.connectivity[qp.element];
            let mut upstream = Matrix2::zeros();
            for (a, &node) in conn.iter().enumerate() {
                let lam = multipliers[node];
                let g = qp.grads[a];
                let w = qp.weight;
                upstream[(0, 0)] += lam[0] * w * g[0];
                upstream[(0, 1)] += lam[0] * w * g[1];
                upstream[(1, 0)] += lam[1] * w * g[0];
                upstream[(1, 1)] += lam[1] * w * g[1];
            }
            let (_, s_coef) = prepared.stress_and_weight_gradient(&f2s[q], &upstream, grad);
            s_total += s_coef;
        }
        prepared.finish_weight_gradient(s_total, grad);
        reports.push(report);
    }
    Ok(reports)
}
