//! Input-convex neural networks (ICNN) over a small invariant vector.
//!
//! Architecture, for input x of width `n_in` and hidden widths h_1..h_L:
//!
//! ```text
//! s_1 = W_1 x + b_1                 z_1 = sp(s_1)
//! s_l = W_l z_{l-1} + U_l x + b_l   z_l = sp(s_l)      l = 2..L
//! y   = w_out . z_L + b_out
//! ```
//!
//! with sp the softplus. The passthrough matrices U_l exist only when
//! `IcnnArch::passthrough` is set. Every weight entry of W_l, U_l and w_out
//! is the softplus of a raw parameter, hence non-negative; biases are raw.
//! Softplus is convex and non-decreasing, so y is convex and componentwise
//! non-decreasing in x, which is exactly what the polyconvex energy
//! construction needs.
//!
//! Besides the forward pass the module provides the input gradient dy/dx in
//! closed form and [`backward_params`](IcnnParams::backward_params), the
//! gradient with respect to the raw parameters of the scalar
//!
//! ```text
//! G(theta) = a * y(x; theta) + c . dy/dx(x; theta)
//! ```
//!
//! obtained by reverse-mode differentiation through both the forward pass
//! and the input-gradient pass. Training on stresses (first derivatives of
//! the energy) needs precisely this second-order quantity.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Raw parameter value whose effective weight underflows to exactly 0.0
/// (softplus(-800) evaluates to zero in f64, as does its slope).
pub const ZERO_WEIGHT_RAW: f64 = -800.0;

/// Numerically stable softplus sp(t) = ln(1 + e^t).
pub fn softplus(t: f64) -> f64 {
    t.max(0.0) + (-t.abs()).exp().ln_1p()
}

/// Logistic sigmoid, the softplus derivative.
pub fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// Inverse softplus: the raw value whose softplus is `y` (y > 0).
pub fn inv_softplus(y: f64) -> f64 {
    assert!(y > 0.0, "inv_softplus needs a positive target");
    // ln(e^y - 1), written with expm1 for small y.
    y.exp_m1().ln()
}

/// Network shape: input width, hidden widths, and whether layers past the
/// first receive the input directly through passthrough matrices U_l.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IcnnArch {
    pub n_in: usize,
    pub widths: Vec<usize>,
    pub passthrough: bool,
}

impl IcnnArch {
    pub fn new(n_in: usize, widths: Vec<usize>, passthrough: bool) -> Result<Self> {
        let arch = IcnnArch {
            n_in,
            widths,
            passthrough,
        };
        arch.validate()?;
        Ok(arch)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_in == 0 {
            return Err(Error::Config("ICNN input width must be positive".into()));
        }
        if self.widths.is_empty() || self.widths.contains(&0) {
            return Err(Error::Config(
                "ICNN needs at least one hidden layer, all widths positive".into(),
            ));
        }
        Ok(())
    }

    pub fn depth(&self) -> usize {
        self.widths.len()
    }

    /// Whether layer `l` (1-based) has a passthrough matrix U_l.
    fn has_u(&self, l: usize) -> bool {
        self.passthrough && l >= 2
    }

    /// Total number of raw parameters under the flat layout described on
    /// [`IcnnParams`].
    pub fn count_parameters(&self) -> usize {
        let mut count = 0;
        let mut prev = self.n_in;
        for (idx, &h) in self.widths.iter().enumerate() {
            count += h * prev + h; // W_l and b_l
            if self.has_u(idx + 1) {
                count += h * self.n_in;
            }
            prev = h;
        }
        count + prev + 1 // w_out and b_out
    }
}

/// Raw parameter vector for an [`IcnnArch`].
///
/// Flat layout of `theta`, in order:
///
/// 1. per layer l = 1..L: W_l row-major (h_l x h_{l-1}, with h_0 = n_in),
///    then U_l row-major (h_l x n_in, only when the layer has passthrough),
///    then b_l (h_l);
/// 2. w_out (h_L), then b_out.
///
/// Weight entries are raw values mapped through softplus; bias entries are
/// used as-is.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IcnnParams {
    pub arch: IcnnArch,
    pub theta: Vec<f64>,
}

impl IcnnParams {
    pub fn new(arch: IcnnArch, theta: Vec<f64>) -> Result<Self> {
        arch.validate()?;
        if theta.len() != arch.count_parameters() {
            return Err(Error::Config(format!(
                "parameter vector has {} entries, architecture needs {}",
                theta.len(),
                arch.count_parameters()
            )));
        }
        Ok(IcnnParams { arch, theta })
    }

    /// Seeded random initialization. Effective weights are drawn as
    /// U(0.05, 1.95) / sqrt(fan_in) and mapped back through the inverse
    /// softplus; biases start at zero. Draws happen in flat-layout order, so
    /// equal seeds give equal parameters.
    pub fn init(arch: IcnnArch, seed: u64) -> Result<Self> {
        use rand::{Rng, SeedableRng};
        arch.validate()?;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut theta = Vec::with_capacity(arch.count_parameters());
        let mut draw_weights = |theta: &mut Vec<f64>, rows: usize, cols: usize, fan_in: usize| {
            let scale = 1.0 / (fan_in as f64).sqrt();
            for _ in 0..rows * cols {
                let eff = rng.gen_range(0.05..1.95) * scale;
                theta.push(inv_softplus(eff));
            }
        };
        let mut prev = arch.n_in;
        for (idx, &h) in arch.widths.iter().enumerate() {
            draw_weights(&mut theta, h, prev, prev);
            if arch.has_u(idx + 1) {
                draw_weights(&mut theta, h, arch.n_in, arch.n_in);
            }
            theta.extend(std::iter::repeat_n(0.0, h)); // b_l
            prev = h;
        }
        draw_weights(&mut theta, prev, 1, prev); // w_out
        theta.push(0.0); // b_out
        IcnnParams::new(arch, theta)
    }

    /// Unpack the raw vector into effective weight matrices once; the
    /// returned network serves many evaluations without re-running softplus
    /// over theta.
    pub fn unpack(&self) -> IcnnNet {
        let arch = &self.arch;
        let depth = arch.depth();
        let mut pos = 0;
        let mut take = |n: usize| {
            let s = &self.theta[pos..pos + n];
            pos += n;
            s
        };
        let mut w = Vec::with_capacity(depth);
        let mut w_sig = Vec::with_capacity(depth);
        let mut u = Vec::with_capacity(depth);
        let mut u_sig = Vec::with_capacity(depth);
        let mut b = Vec::with_capacity(depth);
        let mut prev = arch.n_in;
        for (idx, &h) in arch.widths.iter().enumerate() {
            let raw = take(h * prev);
            w.push(DMatrix::from_row_slice(h, prev, raw).map(softplus));
            w_sig.push(DMatrix::from_row_slice(h, prev, raw).map(sigmoid));
            if arch.has_u(idx + 1) {
                let raw = take(h * arch.n_in);
                u.push(DMatrix::from_row_slice(h, arch.n_in, raw).map(softplus));
                u_sig.push(DMatrix::from_row_slice(h, arch.n_in, raw).map(sigmoid));
            } else {
                u.push(DMatrix::zeros(0, 0));
                u_sig.push(DMatrix::zeros(0, 0));
            }
            b.push(DVector::from_row_slice(take(h)));
            prev = h;
        }
        let raw = take(prev);
        let w_out = DVector::from_row_slice(raw).map(softplus);
        let w_out_sig = DVector::from_row_slice(raw).map(sigmoid);
        let b_out = take(1)[0];
        debug_assert_eq!(pos, self.theta.len());
        IcnnNet {
            arch: arch.clone(),
            w,
            w_sig,
            u,
            u_sig,
            b,
            w_out,
            w_out_sig,
            b_out,
        }
    }

    /// Network output y(x). Convenience wrapper; hot loops should
    /// [`unpack`](Self::unpack) once.
    pub fn forward(&self, x: &[f64]) -> f64 {
        self.unpack().forward(x)
    }

    /// Input gradient dy/dx.
    pub fn grad_input(&self, x: &[f64]) -> Vec<f64> {
        self.unpack().grad_input(x)
    }

    /// Gradient of G = a y(x) + c . dy/dx(x) with respect to the raw
    /// parameters, in flat layout.
    pub fn backward_params(&self, x: &[f64], a: f64, c: &[f64]) -> Vec<f64> {
        let mut grad = vec![0.0; self.theta.len()];
        self.unpack().backward_params(x, a, c, &mut grad);
        grad
    }
}

/// Effective (softplus-mapped) weights of an [`IcnnParams`], plus the
/// sigmoid factors needed to chain gradients back to raw parameters.
#[derive(Debug, Clone)]
pub struct IcnnNet {
    arch: IcnnArch,
    w: Vec<DMatrix<f64>>,
    w_sig: Vec<DMatrix<f64>>,
    u: Vec<DMatrix<f64>>,
    u_sig: Vec<DMatrix<f64>>,
    b: Vec<DVector<f64>>,
    w_out: DVector<f64>,
    w_out_sig: DVector<f64>,
    b_out: f64,
}

/// Intermediate state of one forward + input-gradient evaluation.
struct Trace {
    /// zs[0] = x, zs[l] = z_l.
    zs: Vec<DVector<f64>>,
    /// ss[l-1] = s_l.
    ss: Vec<DVector<f64>>,
    /// vs[l-1] = v_l = dy/dz_l.
    vs: Vec<DVector<f64>>,
    /// ts[l-1] = t_l = dy/ds_l.
    ts: Vec<DVector<f64>>,
    /// dy/dx.
    g: DVector<f64>,
    y: f64,
}

impl IcnnNet {
    pub fn arch(&self) -> &IcnnArch {
        &self.arch
    }

    fn forward_pass(&self, x: &[f64]) -> (Vec<DVector<f64>>, Vec<DVector<f64>>, f64) {
        assert_eq!(x.len(), self.arch.n_in, "input width mismatch");
        let depth = self.arch.depth();
        let mut zs = Vec::with_capacity(depth + 1);
        let mut ss = Vec::with_capacity(depth);
        zs.push(DVector::from_row_slice(x));
        for idx in 0..depth {
            let mut s = &self.w[idx] * &zs[idx] + &self.b[idx];
            if self.arch.has_u(idx + 1) {
                s += &self.u[idx] * &zs[0];
            }
            zs.push(s.map(softplus));
            ss.push(s);
        }
        let y = self.w_out.dot(&zs[depth]) + self.b_out;
        (zs, ss, y)
    }

    /// Input-gradient pass on top of a forward pass. Backpropagates
    /// v_l = dy/dz_l and t_l = dy/ds_l, collecting the direct paths into x:
    ///
    /// ```text
    /// g = W_1^T t_1 + sum_{l>=2} U_l^T t_l
    /// ```
    fn gradient_pass(&self, zs: Vec<DVector<f64>>, ss: Vec<DVector<f64>>, y: f64) -> Trace {
        let depth = self.arch.depth();
        let mut vs = vec![DVector::zeros(0); depth];
        let mut ts = vec![DVector::zeros(0); depth];
        let mut g = DVector::zeros(self.arch.n_in);
        vs[depth - 1] = self.w_out.clone();
        for idx in (0..depth).rev() {
            let t = vs[idx].component_mul(&ss[idx].map(sigmoid));
            if idx >= 1 {
                if self.arch.has_u(idx + 1) {
                    g += self.u[idx].transpose() * &t;
                }
                vs[idx - 1] = self.w[idx].transpose() * &t;
            } else {
                g += self.w[0].transpose() * &t;
            }
            ts[idx] = t;
        }
        Trace {
            zs,
            ss,
            vs,
            ts,
            g,
            y,
        }
    }

    pub fn forward(&self, x: &[f64]) -> f64 {
        self.forward_pass(x).2
    }

    pub fn grad_input(&self, x: &[f64]) -> Vec<f64> {
        let (zs, ss, y) = self.forward_pass(x);
        self.gradient_pass(zs, ss, y).g.as_slice().to_vec()
    }

    /// Forward value and input gradient from one shared pass.
    pub fn forward_and_grad(&self, x: &[f64]) -> (f64, Vec<f64>) {
        let (zs, ss, y) = self.forward_pass(x);
        let trace = self.gradient_pass(zs, ss, y);
        (trace.y, trace.g.as_slice().to_vec())
    }

    /// Accumulate d/dtheta [ a y(x) + c . dy/dx(x) ] into `grad` (flat
    /// layout, added in place so quadrature loops can reuse one buffer).
    ///
    /// Reverse-mode pass over the forward and input-gradient computations.
    /// Seeding yb = a and gb = c, the input-gradient equations give
    ///
    /// ```text
    /// tb_1 = W_1 gb,  Wb_1 += t_1 gb^T,
    /// tb_l = U_l gb,  Ub_l += t_l gb^T          l >= 2 with passthrough,
    /// ```
    ///
    /// then ascending l = 1..L each t_l = v_l sp'(s_l) and v_{l-1} = W_l^T t_l
    /// unwind as
    ///
    /// ```text
    /// vb_l  = tb_l sp'(s_l)
    /// sb_l  = tb_l v_l sp''(s_l)
    /// l < L: tb_{l+1} += W_{l+1} vb_l,  Wb_{l+1} += t_{l+1} vb_l^T
    /// l = L: w_outb += vb_L
    /// ```
    ///
    /// and finally the plain forward pass unwinds descending l = L..1 with
    /// zb_L = a w_out, sb_l += zb_l sp'(s_l), accumulating Wb_l, Ub_l, bb_l
    /// and zb_{l-1} = W_l^T sb_l. Raw-parameter gradients follow by scaling
    /// each weight adjoint with sp'(theta); bias adjoints pass through.
    pub fn backward_params(&self, x: &[f64], a: f64, c: &[f64], grad: &mut [f64]) {
        assert_eq!(
            c.len(),
            self.arch.n_in,
            "input-gradient seed width mismatch"
        );
        let depth = self.arch.depth();
        let (zs, ss, y) = self.forward_pass(x);
        let trace = self.gradient_pass(zs, ss, y);
        let cb = DVector::from_row_slice(c);

        let mut wb: Vec<DMatrix<f64>> = self
            .w
            .iter()
            .map(|m| DMatrix::zeros(m.nrows(), m.ncols()))
            .collect();
        let mut ub: Vec<DMatrix<f64>> = self
            .u
            .iter()
            .map(|m| DMatrix::zeros(m.nrows(), m.ncols()))
            .collect();
        let mut bb: Vec<DVector<f64>> = self.b.iter().map(|v| DVector::zeros(v.len())).collect();
        let mut w_outb = DVector::zeros(self.w_out.len());
        let mut sb: Vec<DVector<f64>> = trace.ss.iter().map(|s| DVector::zeros(s.len())).collect();

        // Input-gradient equation: g = W_1^T t_1 + sum U_l^T t_l.
        let mut tb: Vec<DVector<f64>> = trace.ts.iter().map(|t| DVector::zeros(t.len())).collect();
        tb[0] = &self.w[0] * &cb;
        wb[0].ger(1.0, &trace.ts[0], &cb, 1.0);
        for idx in 1..depth {
            if self.arch.has_u(idx + 1) {
                tb[idx] = &self.u[idx] * &cb;
                ub[idx].ger(1.0, &trace.ts[idx], &cb, 1.0);
            }
        }

        // Unwind the v/t chain from layer 1 upward.
        for idx in 0..depth {
            let sig = trace.ss[idx].map(sigmoid);
            let vb = tb[idx].component_mul(&sig);
            let sig_prime = sig.map(|s| s * (1.0 - s));
            sb[idx] += tb[idx]
                .component_mul(&trace.vs[idx])
                .component_mul(&sig_prime);
            if idx + 1 < depth {
                tb[idx + 1] += &self.w[idx + 1] * &vb;
                wb[idx + 1].ger(1.0, &trace.ts[idx + 1], &vb, 1.0);
            } else {
                w_outb += vb;
            }
        }

        // Unwind the plain forward pass.
        w_outb.axpy(a, &trace.zs[depth], 1.0);
        let b_outb = a;
        let mut zb = self.w_out.scale(a);
        for idx in (0..depth).rev() {
            sb[idx] += zb.component_mul(&trace.ss[idx].map(sigmoid));
            wb[idx].ger(1.0, &sb[idx], &trace.zs[idx], 1.0);
            if self.arch.has_u(idx + 1) {
                ub[idx].ger(1.0, &sb[idx], &trace.zs[0], 1.0);
            }
            bb[idx] += &sb[idx];
            if idx > 0 {
                zb = self.w[idx].transpose() * &sb[idx];
            }
        }

        // Write out in flat layout, chaining weight adjoints through the
        // softplus reparameterization.
        let mut pos = 0;
        let mut push = |grad: &mut [f64], v: f64| {
            grad[pos] += v;
            pos += 1;
        };
        for idx in 0..depth {
            for r in 0..wb[idx].nrows() {
                for col in 0..wb[idx].ncols() {
                    push(grad, wb[idx][(r, col)] * self.w_sig[idx][(r, col)]);
                }
            }
            if self.arch.has_u(idx + 1) {
                for r in 0..ub[idx].nrows() {
                    for col in 0..ub[idx].ncols() {
                        push(grad, ub[idx][(r, col)] * self.u_sig[idx][(r, col)]);
                    }
                }
            }
            for &v in &bb[idx] {
                push(grad, v);
            }
        }
        for r in 0..w_outb.len() {
            push(grad, w_outb[r] * self.w_out_sig[r]);
        }
        push(grad, b_outb);
        debug_assert_eq!(pos, grad.len());
    }
}

/// The ten architectures of the default model sweep, smallest first. Input
/// width 4 (the invariant vector), passthrough enabled.
pub fn default_sweep() -> Vec<IcnnArch> {
    [
        vec![8],
        vec![16],
        vec![24],
        vec![8, 8],
        vec![16, 16],
        vec![32, 32],
        vec![64, 64],
        vec![64, 64, 64],
        vec![76, 76, 76, 76],
        vec![96, 96, 96],
    ]
    .into_iter()
    .map(|widths| IcnnArch {
        n_in: 4,
        widths,
        passthrough: true,
    })
    .collect()
}
