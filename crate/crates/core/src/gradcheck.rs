//! Central finite differences and a VJP checker over every op that has a
//! hand-written adjoint.

use alloc::string::ToString;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::normalize::{normalize_forward, normalize_vjp, NormOp, DEFAULT_EPS};
use crate::tensor::{tensor_forward, tensor_vjp, Shape4, Tensor4, TensorOp};

pub const FD_EPS: f64 = 1e-5;
pub const DEFAULT_TOL: f64 = 1e-4;
/// Floor on the relative-error denominator.
pub const REL_FLOOR: f64 = 1e-8;

/// `(f(x + eps·e_i) − f(x − eps·e_i)) / 2eps` for every coordinate `i`.
pub fn central_diff(
    mut f: impl FnMut(&Tensor4) -> Result<f64>,
    x: &Tensor4,
    eps: f64,
) -> Result<Tensor4> {
    let mut probe = x.clone();
    let mut grad = Tensor4::zeros(x.shape());
    for i in 0..x.data().len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + eps;
        let fp = f(&probe)?;
        probe.data_mut()[i] = orig - eps;
        let fm = f(&probe)?;
        probe.data_mut()[i] = orig;
        let d = (fp - fm) / (2.0 * eps);
        if !d.is_finite() {
            return Err(Error::OracleFailure { index: i });
        }
        grad.data_mut()[i] = d;
    }
    Ok(grad)
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Every op with a registered forward and adjoint.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OpId {
    Tensor(TensorOp),
    Norm(NormOp),
}

impl OpId {
    pub fn all() -> Vec<OpId> {
        TensorOp::ALL
            .iter()
            .map(|&o| OpId::Tensor(o))
            .chain(NormOp::ALL.iter().map(|&o| OpId::Norm(o)))
            .collect()
    }

    pub fn names() -> Vec<&'static str> {
        Self::all().iter().map(|o| o.name()).collect()
    }

    pub fn name(&self) -> &'static str {
        match self {
            OpId::Tensor(o) => o.name(),
            OpId::Norm(o) => o.name(),
        }
    }

    /// Base shape `(B, C, H, W)` used when none is given.
    pub fn default_base(&self) -> Shape4 {
        match self {
            OpId::Tensor(TensorOp::BilinearSample) => Shape4::new(1, 2, 5, 5),
            _ => Shape4::new(1, 2, 6, 6),
        }
    }

    fn inputs(&self, base: Shape4) -> Vec<InputSpec> {
        use InputKind::*;
        let full = base;
        let one = base.with_c(1);
        let flow = base.with_c(2);
        let vec = Shape4::new(base.b, base.c, 1, 1);
        let spec = |name, shape, kind| InputSpec { name, shape, kind };
        match self {
            OpId::Tensor(op) => match op {
                TensorOp::Add | TensorOp::Sub | TensorOp::Mul => {
                    alloc::vec![spec("a", full, Normal), spec("b", full, Normal)]
                }
                TensorOp::Scale(_) | TensorOp::UpsampleNearest2x | TensorOp::AvgPool2x => {
                    alloc::vec![spec("x", full, Normal)]
                }
                TensorOp::Relu => alloc::vec![spec("x", full, AwayFromZero)],
                TensorOp::Lerp => alloc::vec![
                    spec("a", full, Normal),
                    spec("b", full, Normal),
                    spec("m", one, Unit)
                ],
                TensorOp::Conv2d => alloc::vec![
                    spec("x", full, Normal),
                    spec("weight", Shape4::new(base.c + 1, base.c, 3, 3), Normal),
                    spec("bias", Shape4::new(1, base.c + 1, 1, 1), Normal),
                ],
                TensorOp::BilinearSample => {
                    alloc::vec![spec("src", full, Normal), spec("flow", flow, Flow)]
                }
            },
            OpId::Norm(op) => match op {
                NormOp::InstanceStats => alloc::vec![spec("h", full, Normal)],
                NormOp::AdaIn => alloc::vec![
                    spec("h", full, Normal),
                    spec("lambda", vec, Normal),
                    spec("beta", vec, Normal)
                ],
                NormOp::Sain => alloc::vec![
                    spec("h", full, Normal),
                    spec("lambda", full, Normal),
                    spec("beta", full, Normal)
                ],
                NormOp::WarpModulation => {
                    alloc::vec![
                        spec("lambda", full, Normal),
                        spec("beta", full, Normal),
                        spec("flow", flow, Flow)
                    ]
                }
                NormOp::Sawn(_) | NormOp::Msawn(_) => {
                    let mut v = alloc::vec![
                        spec("h", full, Normal),
                        spec("lambda", full, Normal),
                        spec("beta", full, Normal),
                        spec("flow", flow, Flow),
                        spec("m", one, Unit),
                    ];
                    if let NormOp::Msawn(_) = op {
                        v.push(spec("region", one, Binary));
                    }
                    v
                }
            },
        }
    }

    fn differentiable(&self) -> usize {
        match self {
            OpId::Tensor(o) => o.arity(),
            OpId::Norm(o) => o.differentiable(),
        }
    }

    pub fn forward(&self, inputs: &[&Tensor4]) -> Result<Tensor4> {
        match self {
            OpId::Tensor(o) => tensor_forward(*o, inputs),
            OpId::Norm(o) => normalize_forward(*o, inputs, DEFAULT_EPS),
        }
    }

    pub fn vjp(&self, inputs: &[&Tensor4], grad_out: &Tensor4) -> Result<Vec<Tensor4>> {
        match self {
            OpId::Tensor(o) => tensor_vjp(*o, inputs, grad_out),
            OpId::Norm(o) => normalize_vjp(*o, inputs, grad_out, DEFAULT_EPS),
        }
    }
}

impl FromStr for OpId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        OpId::all()
            .into_iter()
            .find(|o| o.name() == s)
            .ok_or_else(|| Error::UnknownOp(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy)]
enum InputKind {
    Normal,
    /// Normal, pushed at least 0.1 away from the ReLU kink.
    AwayFromZero,
    /// Uniform in (0.05, 0.95).
    Unit,
    /// Uniform in (−2, 2) pixels, kept off integer coordinates.
    Flow,
    Binary,
}

#[derive(Debug, Clone)]
struct InputSpec {
    name: &'static str,
    shape: Shape4,
    kind: InputKind,
}

fn sample_input<R: Rng>(spec: &InputSpec, rng: &mut R) -> Tensor4 {
    match spec.kind {
        InputKind::Normal => Tensor4::randn(spec.shape, 1.0, rng),
        InputKind::AwayFromZero => Tensor4::randn(spec.shape, 1.0, rng).map(|v| {
            if v.abs() < 0.1 {
                v + 0.25 * if v < 0.0 { -1.0 } else { 1.0 }
            } else {
                v
            }
        }),
        InputKind::Unit => Tensor4::uniform(spec.shape, 0.05, 0.95, rng),
        InputKind::Flow => Tensor4::uniform(spec.shape, -2.0, 2.0, rng).map(|v| {
            // Finite differences are invalid at the interpolation kinks.
            if (v - libm::round(v)).abs() < 0.05 {
                v + 0.25
            } else {
                v
            }
        }),
        InputKind::Binary => {
            Tensor4::from_fn(
                spec.shape,
                |_, _, _, _| if rng.random::<bool>() { 1.0 } else { 0.0 },
            )
        }
    }
}

/// Error summary for one differentiable input.
#[derive(Debug, Clone, PartialEq)]
pub struct InputError {
    pub name: &'static str,
    pub max_abs: f64,
    pub max_rel: f64,
    /// Flat index of the worst relative error.
    pub worst_index: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradReport {
    pub op: &'static str,
    pub seed: u64,
    pub tol: f64,
    pub inputs: Vec<InputError>,
    pub pass: bool,
}

impl GradReport {
    pub fn max_rel(&self) -> f64 {
        self.inputs.iter().fold(0.0, |m, e| m.max(e.max_rel))
    }

    pub fn max_abs(&self) -> f64 {
        self.inputs.iter().fold(0.0, |m, e| m.max(e.max_abs))
    }

    pub fn worst(&self) -> Option<&InputError> {
        self.inputs.iter().max_by(|a, b| {
            a.max_rel
                .partial_cmp(&b.max_rel)
                .unwrap_or(core::cmp::Ordering::Equal)
        })
    }
}

impl fmt::Display for GradReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let worst = self.worst();
        write!(
            f,
            "{:<20} seed {:>3}  max_abs {:9.2e}  max_rel {:9.2e}  tol {:7.1e}  {}",
            self.op,
            self.seed,
            self.max_abs(),
            self.max_rel(),
            self.tol,
            if self.pass { "PASS" } else { "FAIL" }
        )?;
        if let (false, Some(w)) = (self.pass, worst) {
            write!(f, "  worst: {}[{}]", w.name, w.worst_index)?;
        }
        Ok(())
    }
}

/// Compare the analytic VJP against central differences of
/// `⟨probe, op(inputs)⟩` for every seed, with random inputs drawn around
/// `base` (defaults to [`OpId::default_base`]).
pub fn check_vjp(
    op: OpId,
    base: Option<Shape4>,
    seeds: &[u64],
    tol: f64,
) -> Result<Vec<GradReport>> {
    let base = base.unwrap_or_else(|| op.default_base());
    let specs = op.inputs(base);
    seeds
        .iter()
        .map(|&seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let inputs: Vec<Tensor4> = specs.iter().map(|s| sample_input(s, &mut rng)).collect();
            let refs: Vec<&Tensor4> = inputs.iter().collect();
            let out = op.forward(&refs)?;
            let probe = Tensor4::randn(out.shape(), 1.0, &mut rng);
            let analytic = op.vjp(&refs, &probe)?;
            let mut errors = Vec::new();
            for (slot, grad) in analytic.iter().enumerate().take(op.differentiable()) {
                let numeric = central_diff(
                    |x| {
                        let mut trial = refs.clone();
                        trial[slot] = x;
                        op.forward(&trial)?.dot(&probe)
                    },
                    &inputs[slot],
                    FD_EPS,
                )?;
                let mut e = InputError {
                    name: specs[slot].name,
                    max_abs: 0.0,
                    max_rel: 0.0,
                    worst_index: 0,
                };
                for (i, (&a, &n)) in grad.data().iter().zip(numeric.data()).enumerate() {
                    e.max_abs = e.max_abs.max((a - n).abs());
                    let r = relative_error(a, n);
                    if r > e.max_rel {
                        e.max_rel = r;
                        e.worst_index = i;
                    }
                }
                errors.push(e);
            }
            let pass = errors.iter().all(|e| e.max_rel < tol);
            Ok(GradReport {
                op: op.name(),
                seed,
                tol,
                inputs: errors,
                pass,
            })
        })
        .collect()
}
