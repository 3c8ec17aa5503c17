//! Constitutive models: energy density W(F) and first Piola-Kirchhoff
//! stress P = dW/dF, plus the parameter gradients training needs.
//!
//! Two model families share one serialized representation:
//!
//! * [`PannModel`]: a physics-augmented ICNN energy over the invariants
//!   (I1, I2, J, -J), normalized so that W(I) = 0 and P(I) = 0 exactly:
//!
//!   ```text
//!   W(F) = NN(x(F)) - NN(x0) - n0 (J - 1)
//!   n0   = 2 g0_1 + 4 g0_2 + g0_3 - g0_4,   g0 = dNN/dx at x0
//!   ```
//!
//!   The energy offset removes NN(x0), and the n0 term cancels the spurious
//!   stress of the raw network at F = I because dx/dF there is
//!   (2I, 4I, I, -I). Both corrections depend on the parameters and are
//!   differentiated through during training.
//!
//! * [`NeoHookeanModel`]: the compressible Neo-Hooke baseline
//!   W = mu/2 (I1 - 3 - 2 ln J) + lambda_v/2 (J - 1)^2 with
//!   mu = sp(theta_1), lambda_v = sp(theta_2).
//!
//! Both carry a [`KinematicMode`] fixing how 2D displacement data extends
//! out of plane. Under `IncompressiblePlaneStress` the reported in-plane
//! stress is the effective one, with the F33 = 1/det(F_2D) dependence
//! chained in. Units: stresses in MPa, energies in MPa (mJ/mm^3).

use nalgebra::{Matrix2, Matrix3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::icnn::{sigmoid, softplus, IcnnNet, IcnnParams};
use crate::invariants::{invariant_derivatives, invariants, reference_invariants, N_INVARIANTS};
use crate::kinematics::KinematicMode;

/// Coefficients of dx/dF at F = I along the identity: dx_k/dF|_I = w_k I.
const REFERENCE_SLOPES: [f64; N_INVARIANTS] = [2.0, 4.0, 1.0, -1.0];

/// ICNN-based polyconvex energy with built-in normalization.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PannModel {
    #[serde(flatten)]
    pub params: IcnnParams,
    pub mode: KinematicMode,
}

/// Neo-Hookean baseline; `theta = [theta_mu, theta_lambda]` map through
/// softplus to the shear modulus mu (MPa) and the volumetric modulus
/// lambda_v (MPa).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NeoHookeanModel {
    pub mode: KinematicMode,
    pub theta: Vec<f64>,
}

/// A serializable constitutive model of either family.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Model {
    Pann(PannModel),
    NeoHookean(NeoHookeanModel),
}

impl NeoHookeanModel {
    pub fn new(mode: KinematicMode, theta: Vec<f64>) -> Result<Self> {
        if theta.len() != 2 {
            return Err(Error::Config(format!(
                "Neo-Hookean model takes 2 parameters, got {}",
                theta.len()
            )));
        }
        Ok(NeoHookeanModel { mode, theta })
    }

    /// Raw parameters whose softplus lands on the given moduli.
    pub fn from_moduli(mode: KinematicMode, mu: f64, lambda_v: f64) -> Result<Self> {
        if mu <= 0.0 || lambda_v < 0.0 {
            return Err(Error::Config(format!(
                "need mu > 0 and lambda_v >= 0, got mu = {mu}, lambda_v = {lambda_v}"
            )));
        }
        let theta_l = if lambda_v == 0.0 {
            crate::icnn::ZERO_WEIGHT_RAW
        } else {
            crate::icnn::inv_softplus(lambda_v)
        };
        NeoHookeanModel::new(mode, vec![crate::icnn::inv_softplus(mu), theta_l])
    }

    pub fn mu(&self) -> f64 {
        softplus(self.theta[0])
    }

    pub fn lambda_v(&self) -> f64 {
        softplus(self.theta[1])
    }
}

impl Model {
    pub fn pann(params: IcnnParams, mode: KinematicMode) -> Model {
        Model::Pann(PannModel { params, mode })
    }

    /// Neo-Hookean model with raw parameters matching the given moduli.
    pub fn neo_hookean(mode: KinematicMode, mu: f64, lambda_v: f64) -> Result<Model> {
        NeoHookeanModel::from_moduli(mode, mu, lambda_v).map(Model::NeoHookean)
    }

    pub fn mode(&self) -> KinematicMode {
        match self {
            Model::Pann(m) => m.mode,
            Model::NeoHookean(m) => m.mode,
        }
    }

    pub fn theta(&self) -> &[f64] {
        match self {
            Model::Pann(m) => &m.params.theta,
            Model::NeoHookean(m) => &m.theta,
        }
    }

    pub fn theta_mut(&mut self) -> &mut [f64] {
        match self {
            Model::Pann(m) => &mut m.params.theta,
            Model::NeoHookean(m) => &mut m.theta,
        }
    }

    pub fn count_parameters(&self) -> usize {
        self.theta().len()
    }

    pub fn from_json(json: &str) -> Result<Model> {
        let model: Model = serde_json::from_str(json)?;
        model.validate()?;
        Ok(model)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Model::Pann(m) => {
                IcnnParams::new(m.params.arch.clone(), m.params.theta.clone())?;
            }
            Model::NeoHookean(m) => {
                NeoHookeanModel::new(m.mode, m.theta.clone())?;
            }
        }
        Ok(())
    }

    /// Unpack once for a batch of evaluations at fixed parameters.
    pub fn prepare(&self) -> PreparedModel {
        match self {
            Model::Pann(m) => {
                let net = m.params.unpack();
                let x0 = reference_invariants();
                let (y0, g0) = net.forward_and_grad(&x0);
                let n0 = REFERENCE_SLOPES.iter().zip(&g0).map(|(w, g)| w * g).sum();
                PreparedModel::Pann(Box::new(PreparedPann {
                    net,
                    mode: m.mode,
                    y0,
                    n0,
                }))
            }
            Model::NeoHookean(m) => PreparedModel::NeoHookean(PreparedNh {
                mode: m.mode,
                mu: m.mu(),
                lambda_v: m.lambda_v(),
                sig_mu: sigmoid(m.theta[0]),
                sig_lambda: sigmoid(m.theta[1]),
            }),
        }
    }

    /// Energy density of the full 3D law.
    pub fn energy3(&self, f: &Matrix3<f64>) -> f64 {
        self.prepare().energy3(f)
    }

    /// First Piola-Kirchhoff stress of the full 3D law.
    pub fn stress3(&self, f: &Matrix3<f64>) -> Matrix3<f64> {
        self.prepare().stress3(f)
    }
}

/// Neo-Hookean energy density for given moduli.
pub fn neo_hookean_energy(mu: f64, lambda_v: f64, f: &Matrix3<f64>) -> f64 {
    let i1 = (f.transpose() * f).trace();
    let j = f.determinant();
    0.5 * mu * (i1 - 3.0 - 2.0 * j.ln()) + 0.5 * lambda_v * (j - 1.0) * (j - 1.0)
}

/// Neo-Hookean first Piola-Kirchhoff stress for given moduli.
pub fn neo_hookean_stress(mu: f64, lambda_v: f64, f: &Matrix3<f64>) -> Matrix3<f64> {
    let j = f.determinant();
    let f_inv_t = f.try_inverse().expect("det F > 0").transpose();
    mu * (f - f_inv_t) + (lambda_v * j * (j - 1.0)) * f_inv_t
}

/// Model with parameters unpacked for repeated evaluation.
pub enum PreparedModel {
    Pann(Box<PreparedPann>),
    NeoHookean(PreparedNh),
}

pub struct PreparedPann {
    net: IcnnNet,
    mode: KinematicMode,
    y0: f64,
    n0: f64,
}

pub struct PreparedNh {
    mode: KinematicMode,
    mu: f64,
    lambda_v: f64,
    sig_mu: f64,
    sig_lambda: f64,
}

/// Embed an in-plane tensor into 3x3 with zeros elsewhere.
fn embed2(m: &Matrix2<f64>) -> Matrix3<f64> {
    let mut out = Matrix3::zeros();
    out[(0, 0)] = m[(0, 0)];
    out[(0, 1)] = m[(0, 1)];
    out[(1, 0)] = m[(1, 0)];
    out[(1, 1)] = m[(1, 1)];
    out
}

fn block2(m: &Matrix3<f64>) -> Matrix2<f64> {
    Matrix2::new(m[(0, 0)], m[(0, 1)], m[(1, 0)], m[(1, 1)])
}

/// Reduce a full 3D stress at the embedded gradient to the effective
/// in-plane stress dW(F(F_2D))/dF_2D.
///
/// Plane strain passes the in-plane block through. The incompressible
/// plane-stress closure adds the chain term from F33 = 1/det(F_2D):
///
/// ```text
/// P_eff = P_2D - (P33 / d) F_2D^{-T},   d = det F_2D.
/// ```
pub fn effective_in_plane_stress(
    mode: KinematicMode,
    f2: &Matrix2<f64>,
    p3: &Matrix3<f64>,
) -> Matrix2<f64> {
    match mode {
        KinematicMode::PlaneStrain => block2(p3),
        KinematicMode::IncompressiblePlaneStress => {
            let d = f2.determinant();
            let f2_inv_t = f2.try_inverse().expect("det F_2D > 0").transpose();
            block2(p3) - (p3[(2, 2)] / d) * f2_inv_t
        }
    }
}

/// Lift an upstream on the effective in-plane stress to an upstream on the
/// full 3D stress, the adjoint of [`effective_in_plane_stress`]: embedding,
/// plus the 33-component the plane-stress chain term induces.
fn effective_upstream(
    mode: KinematicMode,
    f2: &Matrix2<f64>,
    upstream: &Matrix2<f64>,
) -> Matrix3<f64> {
    let mut u3 = embed2(upstream);
    if mode == KinematicMode::IncompressiblePlaneStress {
        let d = f2.determinant();
        let f2_inv_t = f2.try_inverse().expect("det F_2D > 0").transpose();
        u3[(2, 2)] = -upstream.dot(&f2_inv_t) / d;
    }
    u3
}

impl PreparedModel {
    pub fn mode(&self) -> KinematicMode {
        match self {
            PreparedModel::Pann(p) => p.mode,
            PreparedModel::NeoHookean(p) => p.mode,
        }
    }

    /// Energy density of the full 3D law.
    pub fn energy3(&self, f: &Matrix3<f64>) -> f64 {
        match self {
            PreparedModel::Pann(p) => {
                let x = invariants(f);
                let j = x[2];
                p.net.forward(&x) - p.y0 - p.n0 * (j - 1.0)
            }
            PreparedModel::NeoHookean(p) => neo_hookean_energy(p.mu, p.lambda_v, f),
        }
    }

    /// First Piola-Kirchhoff stress of the full 3D law:
    /// P = sum_k g_k(x) dx_k/dF - n0 J F^{-T} for the PANN family.
    pub fn stress3(&self, f: &Matrix3<f64>) -> Matrix3<f64> {
        match self {
            PreparedModel::Pann(p) => {
                let x = invariants(f);
                let g = p.net.grad_input(&x);
                let d = invariant_derivatives(f);
                let mut stress = Matrix3::zeros();
                for k in 0..N_INVARIANTS {
                    stress += g[k] * d[k];
                }
                stress - p.n0 * d[2]
            }
            PreparedModel::NeoHookean(p) => neo_hookean_stress(p.mu, p.lambda_v, f),
        }
    }

    /// Extend an in-plane gradient to 3D per the model's kinematic mode.
    pub fn embed_f(&self, f2: &Matrix2<f64>) -> Matrix3<f64> {
        crate::kinematics::embed_f(*f2, self.mode())
    }

    /// Energy density as a function of the in-plane deformation gradient.
    pub fn energy(&self, f2: &Matrix2<f64>) -> f64 {
        self.energy3(&self.embed_f(f2))
    }

    /// Effective in-plane stress dW(F(F_2D))/dF_2D, see
    /// [`effective_in_plane_stress`].
    pub fn stress(&self, f2: &Matrix2<f64>) -> Matrix2<f64> {
        let p3 = self.stress3(&self.embed_f(f2));
        effective_in_plane_stress(self.mode(), f2, &p3)
    }

    /// Effective in-plane stress together with the raw-parameter gradient of
    /// the projection `upstream : P_eff`.
    ///
    /// The gradient contribution tied to the evaluation point is added into
    /// `grad` immediately. The part flowing through the stress
    /// normalization, which is evaluated at the reference invariants x0 for
    /// every point alike, is linear in one scalar per point; that scalar is
    /// returned so callers can sum it over all quadrature points and settle
    /// it with a single [`finish_weight_gradient`](Self::finish_weight_gradient)
    /// call.
    pub fn stress_and_weight_gradient(
        &self,
        f2: &Matrix2<f64>,
        upstream: &Matrix2<f64>,
        grad: &mut [f64],
    ) -> (Matrix2<f64>, f64) {
        let f3 = self.embed_f(f2);
        match self {
            PreparedModel::Pann(p) => {
                let x = invariants(&f3);
                let g = p.net.grad_input(&x);
                let d = invariant_derivatives(&f3);
                let mut p3 = Matrix3::zeros();
                for k in 0..N_INVARIANTS {
                    p3 += g[k] * d[k];
                }
                p3 -= p.n0 * d[2];

                let p_eff = effective_in_plane_stress(p.mode, f2, &p3);
                let u3 = effective_upstream(p.mode, f2, upstream);

                let c: Vec<f64> = (0..N_INVARIANTS).map(|k| u3.dot(&d[k])).collect();
                p.net.backward_params(&x, 0.0, &c, grad);
                // n0-term coefficient, settled at x0 by finish_weight_gradient.
                let s = u3.dot(&d[2]);
                (p_eff, s)
            }
            PreparedModel::NeoHookean(p) => {
                let j = f3.determinant();
                let f_inv_t = f3.try_inverse().expect("det F > 0").transpose();
                let d_mu = f3 - f_inv_t;
                let d_lambda = (j * (j - 1.0)) * f_inv_t;
                let p3 = p.mu * d_mu + p.lambda_v * d_lambda;

                let p_eff = effective_in_plane_stress(p.mode, f2, &p3);
                let u3 = effective_upstream(p.mode, f2, upstream);

                grad[0] += u3.dot(&d_mu) * p.sig_mu;
                grad[1] += u3.dot(&d_lambda) * p.sig_lambda;
                (p_eff, 0.0)
            }
        }
    }

    /// Settle the accumulated normalization coefficient: adds the gradient
    /// of `-s_total * n0(theta)` into `grad`. No-op for models without a
    /// parameter-dependent stress normalization.
    pub fn finish_weight_gradient(&self, s_total: f64, grad: &mut [f64]) {
        if let PreparedModel::Pann(p) = self {
            let x0 = reference_invariants();
            let c: Vec<f64> = REFERENCE_SLOPES.iter().map(|w| -s_total * w).collect();
            p.net.backward_params(&x0, 0.0, &c, grad);
        }
    }
}
