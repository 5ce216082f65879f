//! Orientation-preserving diffeomorphisms of `[0, 1]` represented as immutable
//! expression DAGs, closed under the zoom operator, composition and the
//! power-law primitive `q_s`.
//!
//! The renormalization recursion keeps composing and zooming earlier
//! diffeomorphisms, so nodes hold `Arc` children and values are cheap to
//! clone and safe to share across threads. Derivatives go through the exact
//! chain rule; inverses go through exact algebra on the leaves (with a
//! bracketed Newton fallback and a final residual polish).

use std::fmt;
use std::sync::Arc;

use rug::ops::Pow;
use rug::Float;
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::num::{fmt_full, parse_dec, PrecisionPolicy};

/// Extension hook for hand-written monotone primitives (used by test oracles).
/// Implementations must fix 0 and 1 and be strictly increasing with positive
/// derivative on `(0, 1)`.
pub trait PrimitiveCurve: Send + Sync {
    fn name(&self) -> &'static str;
    fn eval(&self, x: &Float) -> Float;
    fn deriv(&self, x: &Float) -> Float;
    fn deriv2(&self, x: &Float) -> Float;
}

enum Kind {
    Identity,
    /// `e_a(x) = (exp(a x) - 1) / (exp(a) - 1)`, the default nontrivial seed family.
    Exp { a: Float },
    /// `q_s(x) = (((1-s)x + s)^ell - s^ell) / (1 - s^ell)`; the diffeomorphic
    /// part of `x^ell`. `s = 0` is the pure power limit, `s = 1` the identity limit.
    Qs { s: Float, ell: Float },
    Custom(Arc<dyn PrimitiveCurve>),
    /// Affine pre/post normalization of `child` restricted to `[a, b]`,
    /// re-fixed to the endpoints. `fa`, `fb` cache `child(a)`, `child(b)`.
    Zoom {
        a: Float,
        b: Float,
        fa: Float,
        fb: Float,
        child: Diffeo,
    },
    Compose { outer: Diffeo, inner: Diffeo },
}

struct Node {
    kind: Kind,
    depth: u32,
    prec: u32,
}

/// An orientation-preserving diffeomorphism of `[0, 1]`.
#[derive(Clone)]
pub struct Diffeo {
    node: Arc<Node>,
}

impl fmt::Debug for Diffeo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.node.kind {
            Kind::Identity => write!(f, "Identity"),
            Kind::Exp { a } => write!(f, "Exp(a={})", a.to_f64()),
            Kind::Qs { s, ell } => write!(f, "Qs(s={}, ell={})", s.to_f64(), ell.to_f64()),
            Kind::Custom(c) => write!(f, "Custom({})", c.name()),
            Kind::Zoom { a, b, child, .. } => write!(
                f,
                "Zoom([{}, {}], {:?})",
                a.to_f64(),
                b.to_f64(),
                child
            ),
            Kind::Compose { outer, inner } => write!(f, "({:?} . {:?})", outer, inner),
        }
    }
}

/// Absolute slack allowed on arguments nominally inside `[0, 1]`; anything
/// farther out is a genuine domain violation, not accumulated rounding.
fn domain_slack(prec: u32) -> Float {
    Float::with_val(prec, Float::i_exp(1, -(prec.saturating_sub(32).max(32) as i32)))
}

fn clamp_unit(prec: u32, x: &Float) -> Result<Float> {
    if x.is_nan() {
        return Err(Error::Domain {
            value: "nan".to_string(),
        });
    }
    let slack = domain_slack(prec);
    if *x < 0 {
        let mut neg = Float::with_val(prec, x);
        neg.abs_mut();
        if neg > slack {
            return Err(Error::Domain {
                value: fmt_full(x),
            });
        }
        return Ok(Float::with_val(prec, 0));
    }
    if *x > 1 {
        let mut excess = Float::with_val(prec, x - 1u32);
        excess.abs_mut();
        if excess > slack {
            return Err(Error::Domain {
                value: fmt_full(x),
            });
        }
        return Ok(Float::with_val(prec, 1));
    }
    Ok(Float::with_val(prec, x))
}

fn clamp_into(lo: &Float, hi: &Float, x: Float) -> Float {
    if x < *lo {
        lo.clone()
    } else if x > *hi {
        hi.clone()
    } else {
        x
    }
}

/// `1 - s^ell` computed as `-expm1(ell ln s)`, stable for `s` near 1.
fn one_minus_pow(prec: u32, s: &Float, ell: &Float) -> Float {
    let ln_s = Float::with_val(prec, s.ln_ref());
    let mut t = Float::with_val(prec, ell * &ln_s);
    t.exp_m1_mut();
    -t
}

/// `q_s(x)` as a scalar. Splits into a cancellation-free branch when the
/// argument sits below `s`, where `u^ell - s^ell` would lose the low bits.
pub fn qs_value(prec: u32, s: &Float, ell: &Float, x: &Float) -> Result<Float> {
    let x = clamp_unit(prec, x)?;
    if s.is_zero() {
        return Ok(Float::with_val(prec, (&x).pow(ell)));
    }
    if *s == 1 {
        return Ok(x);
    }
    let one_minus_s = Float::with_val(prec, 1 - s);
    let u = Float::with_val(prec, &one_minus_s * &x) + s;
    let denom = one_minus_pow(prec, s, ell);
    let numer = if u < Float::with_val(prec, 2 * s.clone()) {
        // u^ell - s^ell = s^ell * expm1(ell * ln(u / s))
        let ratio = Float::with_val(prec, &u / s);
        let mut t = Float::with_val(prec, ell * ratio.ln());
        t.exp_m1_mut();
        Float::with_val(prec, s.pow(ell)) * t
    } else {
        Float::with_val(prec, (&u).pow(ell)) - Float::with_val(prec, s.pow(ell))
    };
    let mut out = numer / denom;
    out = clamp_into(&Float::with_val(prec, 0), &Float::with_val(prec, 1), out);
    Ok(out)
}

fn qs_deriv(prec: u32, s: &Float, ell: &Float, x: &Float) -> Result<Float> {
    if s.is_zero() {
        if *ell > 1 && x.is_zero() {
            return Err(Error::Singularity { x: fmt_full(x) });
        }
        let em1 = Float::with_val(prec, ell - 1u32);
        return Ok(Float::with_val(prec, x.pow(&em1)) * ell);
    }
    if *s == 1 {
        return Ok(Float::with_val(prec, 1));
    }
    let one_minus_s = Float::with_val(prec, 1 - s);
    let u = Float::with_val(prec, &one_minus_s * x) + s;
    let em1 = Float::with_val(prec, ell - 1u32);
    let denom = one_minus_pow(prec, s, ell);
    Ok(Float::with_val(prec, u.pow(&em1)) * ell * one_minus_s / denom)
}

fn qs_deriv2(prec: u32, s: &Float, ell: &Float, x: &Float) -> Result<Float> {
    if s.is_zero() {
        if *ell > 1 && *ell < 2 && x.is_zero() {
            return Err(Error::Singularity { x: fmt_full(x) });
        }
        let em2 = Float::with_val(prec, ell - 2u32);
        let coeff = Float::with_val(prec, ell * Float::with_val(prec, ell - 1u32));
        return Ok(Float::with_val(prec, x.pow(&em2)) * coeff);
    }
    if *s == 1 {
        return Ok(Float::with_val(prec, 0));
    }
    let one_minus_s = Float::with_val(prec, 1 - s);
    let u = Float::with_val(prec, &one_minus_s * x) + s;
    let em2 = Float::with_val(prec, ell - 2u32);
    let coeff = Float::with_val(prec, ell * Float::with_val(prec, ell - 1u32));
    let denom = one_minus_pow(prec, s, ell);
    let sq = Float::with_val(prec, (&one_minus_s).pow(2u32));
    Ok(Float::with_val(prec, u.pow(&em2)) * coeff * sq / denom)
}

/// `q_s^{-1}(y)` in closed form:
/// `x = s expm1(ln1p(w)/ell) / (1-s)` with `w = y (1 - s^ell) / s^ell`.
fn qs_invert(prec: u32, s: &Float, ell: &Float, y: &Float) -> Result<Float> {
    let y = clamp_unit(prec, y)?;
    if s.is_zero() {
        let inv_ell = Float::with_val(prec, 1 / ell.clone());
        return Ok(Float::with_val(prec, y.pow(&inv_ell)));
    }
    if *s == 1 {
        return Ok(y);
    }
    let denom = one_minus_pow(prec, s, ell);
    let s_ell = Float::with_val(prec, s.pow(ell));
    let w = Float::with_val(prec, &y * &denom) / &s_ell;
    let mut t = Float::with_val(prec, w.ln_1p_ref());
    t /= ell;
    t.exp_m1_mut();
    let one_minus_s = Float::with_val(prec, 1 - s);
    let x = Float::with_val(prec, s * &t) / one_minus_s;
    Ok(clamp_into(
        &Float::with_val(prec, 0),
        &Float::with_val(prec, 1),
        x,
    ))
}

impl Diffeo {
    fn from_kind(kind: Kind, depth: u32, prec: u32) -> Self {
        Diffeo {
            node: Arc::new(Node { kind, depth, prec }),
        }
    }

    pub fn identity(prec: u32) -> Self {
        Self::from_kind(Kind::Identity, 1, prec)
    }

    /// The one-parameter seed family `e_a(x) = expm1(a x) / expm1(a)`.
    /// `a = 0` collapses to the identity.
    pub fn exp_family(prec: u32, a: Float) -> Result<Self> {
        if !a.is_finite() {
            return Err(Error::Invalid(format!("exp-family parameter {a} not finite")));
        }
        if a.is_zero() {
            return Ok(Self::identity(prec));
        }
        Ok(Self::from_kind(Kind::Exp { a }, 1, prec))
    }

    /// The `q_s` primitive with parameter `s` in `[0, 1]` and exponent `ell >= 1`.
    pub fn qs(prec: u32, s: Float, ell: Float) -> Result<Self> {
        if !s.is_finite() || s < 0 || s > 1 {
            return Err(Error::Invalid(format!("qs parameter s = {s} outside [0, 1]")));
        }
        if !ell.is_finite() || ell < 1 {
            return Err(Error::Invalid(format!("qs exponent ell = {ell} below 1")));
        }
        Ok(Self::from_kind(Kind::Qs { s, ell }, 1, prec))
    }

    pub fn custom(prec: u32, curve: Arc<dyn PrimitiveCurve>) -> Self {
        Self::from_kind(Kind::Custom(curve), 1, prec)
    }

    /// `Z_[a,b] d` with `Z_[a,b]d(x) = (d((b-a)x + a) - d(a)) / (d(b) - d(a))`.
    pub fn zoom(&self, a: &Float, b: &Float) -> Result<Self> {
        let prec = self.prec();
        let a = clamp_unit(prec, a)?;
        let b = clamp_unit(prec, b)?;
        let width = Float::with_val(prec, &b - &a);
        let min_width = Float::with_val(prec, Float::i_exp(1, -(prec.saturating_sub(8) as i32)));
        if width <= min_width {
            return Err(Error::DegenerateInterval {
                a: fmt_full(&a),
                b: fmt_full(&b),
            });
        }
        let fa = self.eval(&a)?;
        let fb = self.eval(&b)?;
        if !(fb > fa) || !fa.is_finite() || !fb.is_finite() {
            return Err(Error::DegenerateInterval {
                a: fmt_full(&a),
                b: fmt_full(&b),
            });
        }
        let depth = self.depth() + 1;
        Ok(Self::from_kind(
            Kind::Zoom {
                a,
                b,
                fa,
                fb,
                child: self.clone(),
            },
            depth,
            prec,
        ))
    }

    /// `outer . inner` with `eval(compose(f, g), x) = f(g(x))`.
    pub fn compose(outer: &Diffeo, inner: &Diffeo) -> Self {
        let prec = outer.prec().max(inner.prec());
        let depth = 1 + outer.depth().max(inner.depth());
        Self::from_kind(
            Kind::Compose {
                outer: outer.clone(),
                inner: inner.clone(),
            },
            depth,
            prec,
        )
    }

    pub fn prec(&self) -> u32 {
        self.node.prec
    }

    /// Longest node chain in the DAG; grows linearly with renormalization depth.
    pub fn depth(&self) -> u32 {
        self.node.depth
    }

    pub fn eval(&self, x: &Float) -> Result<Float> {
        let prec = self.prec();
        let x = clamp_unit(prec, x)?;
        self.eval_in(&x)
    }

    fn eval_in(&self, x: &Float) -> Result<Float> {
        let prec = self.prec();
        match &self.node.kind {
            Kind::Identity => Ok(Float::with_val(prec, x)),
            Kind::Exp { a } => {
                let mut num = Float::with_val(prec, a * x);
                num.exp_m1_mut();
                let mut den = Float::with_val(prec, a);
                den.exp_m1_mut();
                let out = num / den;
                Ok(clamp_into(
                    &Float::with_val(prec, 0),
                    &Float::with_val(prec, 1),
                    out,
                ))
            }
            Kind::Qs { s, ell } => qs_value(prec, s, ell, x),
            Kind::Custom(c) => {
                let out = c.eval(x);
                Ok(clamp_into(
                    &Float::with_val(prec, 0),
                    &Float::with_val(prec, 1),
                    out,
                ))
            }
            Kind::Zoom {
                a, b, fa, fb, child
            } => {
                let width = Float::with_val(prec, b - a);
                let u = clamp_into(a, b, Float::with_val(prec, &width * x) + a);
                let v = child.eval_in(&u)?;
                let out = Float::with_val(prec, &v - fa) / Float::with_val(prec, fb - fa);
                Ok(clamp_into(
                    &Float::with_val(prec, 0),
                    &Float::with_val(prec, 1),
                    out,
                ))
            }
            Kind::Compose { outer, inner } => {
                let mid = inner.eval_in(x)?;
                outer.eval_in(&mid)
            }
        }
    }

    /// Value and first derivative in one traversal (exact chain rule).
    pub fn jet1(&self, x: &Float) -> Result<(Float, Float)> {
        let prec = self.prec();
        let x = clamp_unit(prec, x)?;
        self.jet1_in(&x)
    }

    fn jet1_in(&self, x: &Float) -> Result<(Float, Float)> {
        let prec = self.prec();
        match &self.node.kind {
            Kind::Identity => Ok((Float::with_val(prec, x), Float::with_val(prec, 1))),
            Kind::Exp { a } => {
                let mut den = Float::with_val(prec, a);
                den.exp_m1_mut();
                let mut num = Float::with_val(prec, a * x);
                let e_ax = Float::with_val(prec, num.exp_ref());
                num.exp_m1_mut();
                let v = Float::with_val(prec, &num / &den);
                let d = Float::with_val(prec, a * &e_ax) / den;
                Ok((v, d))
            }
            Kind::Qs { s, ell } => Ok((qs_value(prec, s, ell, x)?, qs_deriv(prec, s, ell, x)?)),
            Kind::Custom(c) => Ok((c.eval(x), c.deriv(x))),
            Kind::Zoom {
                a, b, fa, fb, child
            } => {
                let width = Float::with_val(prec, b - a);
                let u = clamp_into(a, b, Float::with_val(prec, &width * x) + a);
                let (v, d) = child.jet1_in(&u)?;
                let span = Float::with_val(prec, fb - fa);
                let val = Float::with_val(prec, &v - fa) / &span;
                let der = Float::with_val(prec, &d * &width) / span;
                Ok((val, der))
            }
            Kind::Compose { outer, inner } => {
                let (vi, di) = inner.jet1_in(x)?;
                let (vo, d_o) = outer.jet1_in(&vi)?;
                Ok((vo, Float::with_val(prec, &d_o * &di)))
            }
        }
    }

    /// Value, first and second derivative in one traversal.
    pub fn jet2(&self, x: &Float) -> Result<(Float, Float, Float)> {
        let prec = self.prec();
        let x = clamp_unit(prec, x)?;
        self.jet2_in(&x)
    }

    fn jet2_in(&self, x: &Float) -> Result<(Float, Float, Float)> {
        let prec = self.prec();
        match &self.node.kind {
            Kind::Identity => Ok((
                Float::with_val(prec, x),
                Float::with_val(prec, 1),
                Float::with_val(prec, 0),
            )),
            Kind::Exp { a } => {
                let mut den = Float::with_val(prec, a);
                den.exp_m1_mut();
                let mut num = Float::with_val(prec, a * x);
                let e_ax = Float::with_val(prec, num.exp_ref());
                num.exp_m1_mut();
                let v = Float::with_val(prec, &num / &den);
                let d1 = Float::with_val(prec, a * &e_ax) / &den;
                let a2 = Float::with_val(prec, a * a);
                let d2 = Float::with_val(prec, &a2 * &e_ax) / den;
                Ok((v, d1, d2))
            }
            Kind::Qs { s, ell } => Ok((
                qs_value(prec, s, ell, x)?,
                qs_deriv(prec, s, ell, x)?,
                qs_deriv2(prec, s, ell, x)?,
            )),
            Kind::Custom(c) => Ok((c.eval(x), c.deriv(x), c.deriv2(x))),
            Kind::Zoom {
                a, b, fa, fb, child
            } => {
                let width = Float::with_val(prec, b - a);
                let u = clamp_into(a, b, Float::with_val(prec, &width * x) + a);
                let (v, d1, d2) = child.jet2_in(&u)?;
                let span = Float::with_val(prec, fb - fa);
                let val = Float::with_val(prec, &v - fa) / &span;
                let der = Float::with_val(prec, &d1 * &width) / &span;
                let w2 = Float::with_val(prec, (&width).pow(2u32));
                let dd = Float::with_val(prec, &d2 * &w2) / span;
                Ok((val, der, dd))
            }
            Kind::Compose { outer, inner } => {
                let (vi, di, ddi) = inner.jet2_in(x)?;
                let (vo, d_o, ddo) = outer.jet2_in(&vi)?;
                let d1 = Float::with_val(prec, &d_o * &di);
                let di2 = Float::with_val(prec, (&di).pow(2u32));
                let d2 = Float::with_val(prec, &ddo * &di2) + Float::with_val(prec, &d_o * &ddi);
                Ok((vo, d1, d2))
            }
        }
    }

    pub fn deriv(&self, x: &Float) -> Result<Float> {
        Ok(self.jet1(x)?.1)
    }

    pub fn deriv2(&self, x: &Float) -> Result<Float> {
        Ok(self.jet2(x)?.2)
    }

    /// Solves `eval(x) = y`. Leaves invert by explicit algebra, zooms and
    /// compositions by structural recursion; a residual check at the top
    /// falls back to bracketed bisection/Newton when the algebraic route
    /// is not within `policy` tolerance.
    pub fn invert(&self, y: &Float, policy: &PrecisionPolicy) -> Result<Float> {
        let prec = self.prec();
        let y = clamp_unit(prec, y)?;
        if y.is_zero() {
            return Ok(Float::with_val(prec, 0));
        }
        if y == 1 {
            return Ok(Float::with_val(prec, 1));
        }
        let tol = self.residual_tol(policy);
        let x0 = self.invert_raw(&y, policy)?;
        let v = self.eval_in(&x0)?;
        let mut resid = Float::with_val(prec, &v - &y);
        resid.abs_mut();
        if resid <= tol {
            return Ok(x0);
        }
        let (lo, hi) = if v > y {
            (Float::with_val(prec, 0), x0.clone())
        } else {
            (x0.clone(), Float::with_val(prec, 1))
        };
        self.refine_root(&y, lo, hi, x0, &tol, policy.max_iter())
    }

    /// Residual target for inverse solves: the policy tolerance, widened by
    /// the rounding envelope of evaluating this DAG (one ulp-scale term per
    /// level of node depth). Demanding less than the forward evaluation can
    /// reproduce would spin Newton forever on noise.
    fn residual_tol(&self, policy: &PrecisionPolicy) -> Float {
        let prec = self.prec();
        let noise_exp = -(prec as i32) + self.depth() as i32 + 8;
        let noise = Float::with_val(prec, Float::i_exp(1, noise_exp));
        if noise > *policy.inv_tol() {
            noise
        } else {
            policy.inv_tol().clone()
        }
    }

    fn invert_raw(&self, y: &Float, policy: &PrecisionPolicy) -> Result<Float> {
        let prec = self.prec();
        match &self.node.kind {
            Kind::Identity => Ok(Float::with_val(prec, y)),
            Kind::Exp { a } => {
                let mut e = Float::with_val(prec, a);
                e.exp_m1_mut();
                let mut t = Float::with_val(prec, y * &e);
                t.ln_1p_mut();
                t /= a;
                Ok(clamp_into(
                    &Float::with_val(prec, 0),
                    &Float::with_val(prec, 1),
                    t,
                ))
            }
            Kind::Qs { s, ell } => qs_invert(prec, s, ell, y),
            Kind::Custom(_) => {
                let (lo, hi, start) = self.bisect_bracket(y)?;
                let tol = self.residual_tol(policy);
                self.refine_root(y, lo, hi, start, &tol, policy.max_iter())
            }
            Kind::Zoom {
                a, b, fa, fb, child
            } => {
                let span = Float::with_val(prec, fb - fa);
                let target = Float::with_val(prec, &span * y) + fa;
                let target = clamp_into(fa, fb, target);
                let u = child.invert_raw(&target, policy)?;
                let width = Float::with_val(prec, b - a);
                let x = Float::with_val(prec, &u - a) / width;
                Ok(clamp_into(
                    &Float::with_val(prec, 0),
                    &Float::with_val(prec, 1),
                    x,
                ))
            }
            Kind::Compose { outer, inner } => {
                let mid = outer.invert_raw(y, policy)?;
                inner.invert_raw(&mid, policy)
            }
        }
    }

    /// Monotone bisection of `[0, 1]` down to a bracket of width `2^-40`.
    fn bisect_bracket(&self, y: &Float) -> Result<(Float, Float, Float)> {
        let prec = self.prec();
        let mut lo = Float::with_val(prec, 0);
        let mut hi = Float::with_val(prec, 1);
        for _ in 0..40 {
            let mid = Float::with_val(prec, &lo + &hi) / 2u32;
            let v = self.eval_in(&mid)?;
            if v < *y {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let start = Float::with_val(prec, &lo + &hi) / 2u32;
        Ok((lo, hi, start))
    }

    /// Newton iteration kept inside a shrinking bracket. Converged when the
    /// residual meets `tol`, or when the proposed step falls below the
    /// relative resolution of the abscissa: for a strictly monotone C^1 map
    /// `|x - x*| <= |err| / min f'`, so a step at ulp scale means no
    /// representable point does better, regardless of how strongly deep
    /// zooms amplify the absolute residual.
    fn refine_root(
        &self,
        y: &Float,
        mut lo: Float,
        mut hi: Float,
        mut x: Float,
        tol: &Float,
        max_iter: usize,
    ) -> Result<Float> {
        let prec = self.prec();
        let rel_eps = Float::with_val(prec, Float::i_exp(1, -(prec.saturating_sub(16) as i32)));
        let mut last_resid = Float::with_val(prec, 1);
        for _ in 0..max_iter {
            let (v, d) = self.jet1_in(&x)?;
            let err = Float::with_val(prec, &v - y);
            let mut abs_err = err.clone();
            abs_err.abs_mut();
            if abs_err <= *tol {
                return Ok(x);
            }
            last_resid = abs_err.clone();
            if d > 0 && d.is_finite() {
                let mut step = Float::with_val(prec, &abs_err / &d);
                step.abs_mut();
                let mut x_scale = x.clone();
                x_scale.abs_mut();
                let x_eps = Float::with_val(prec, &x_scale * &rel_eps);
                if step <= x_eps {
                    return Ok(x);
                }
            }
            if err > 0 {
                hi = x.clone();
            } else {
                lo = x.clone();
            }
            let mut next = if d > 0 && d.is_finite() {
                Float::with_val(prec, &x - Float::with_val(prec, &err / &d))
            } else {
                Float::with_val(prec, &lo + &hi) / 2u32
            };
            if !(next > lo && next < hi) || !next.is_finite() {
                next = Float::with_val(prec, &lo + &hi) / 2u32;
            }
            if next == x {
                next = Float::with_val(prec, &lo + &hi) / 2u32;
                if next == x {
                    // Bracket collapsed to adjacent representables: x is the
                    // best preimage this mantissa can express. Accept unless
                    // the residual signals genuine precision exhaustion.
                    let cap =
                        Float::with_val(prec, Float::i_exp(1, -((prec / 4).max(24) as i32)));
                    if last_resid <= cap {
                        return Ok(x);
                    }
                    break;
                }
            }
            x = next;
        }
        Err(Error::NonConvergence {
            iters: max_iter,
            residual: fmt_full(&last_resid),
        })
    }

    /// Grid lower bound for `sup log(D(x)/D(y))` over `T = [t0, t1]`.
    pub fn distortion(&self, t0: &Float, t1: &Float, grid: usize) -> Result<Float> {
        if grid < 2 {
            return Err(Error::Invalid(format!("distortion grid {grid} below 2")));
        }
        let prec = self.prec();
        let t0 = clamp_unit(prec, t0)?;
        let t1 = clamp_unit(prec, t1)?;
        if !(t1 > t0) {
            return Err(Error::Invalid("distortion interval empty".to_string()));
        }
        let step = Float::with_val(prec, &t1 - &t0) / (grid as u32 - 1);
        let mut min_d: Option<Float> = None;
        let mut max_d: Option<Float> = None;
        for i in 0..grid {
            let x = Float::with_val(prec, &step * (i as u32)) + &t0;
            let (_, d) = self.jet1_in(&x)?;
            if !(d > 0) || !d.is_finite() {
                return Err(Error::Singularity { x: fmt_full(&x) });
            }
            if min_d.as_ref().map_or(true, |m| d < *m) {
                min_d = Some(d.clone());
            }
            if max_d.as_ref().map_or(true, |m| d > *m) {
                max_d = Some(d);
            }
        }
        let ratio = Float::with_val(prec, max_d.unwrap() / min_d.unwrap());
        Ok(Float::with_val(prec, ratio.ln_ref()))
    }

    /// Sampled `sup|d| + sup|d'| + sup|d''|` on the grid `i/m`. Interior
    /// blow-ups report as infinity rather than erroring.
    pub fn c2_norm_estimate(&self, grid: usize) -> Result<Float> {
        if grid < 3 {
            return Err(Error::Invalid(format!("c2 grid {grid} below 3")));
        }
        let prec = self.prec();
        let mut sup_v = Float::with_val(prec, 0);
        let mut sup_d1 = Float::with_val(prec, 0);
        let mut sup_d2 = Float::with_val(prec, 0);
        for i in 0..=grid {
            let x = Float::with_val(prec, i as u32) / (grid as u32);
            match self.jet2_in(&x) {
                Ok((v, d1, d2)) => {
                    let mut av = v;
                    av.abs_mut();
                    let mut a1 = d1;
                    a1.abs_mut();
                    let mut a2 = d2;
                    a2.abs_mut();
                    if av > sup_v {
                        sup_v = av;
                    }
                    if a1 > sup_d1 {
                        sup_d1 = a1;
                    }
                    if a2 > sup_d2 {
                        sup_d2 = a2;
                    }
                }
                Err(Error::Singularity { .. }) => {
                    return Ok(Float::with_val(prec, rug::float::Special::Infinity));
                }
                Err(e) => return Err(e),
            }
        }
        Ok(sup_v + sup_d1 + sup_d2)
    }

    /// Wire form: nested `{"kind": ...}` objects with decimal-string numbers.
    pub fn to_json(&self) -> Result<Value> {
        match &self.node.kind {
            Kind::Identity => Ok(json!({"kind": "identity"})),
            Kind::Exp { a } => Ok(json!({"kind": "exp", "a": fmt_full(a)})),
            Kind::Qs { s, ell } => {
                Ok(json!({"kind": "qs", "s": fmt_full(s), "ell": fmt_full(ell)}))
            }
            Kind::Custom(c) => Err(Error::Serialization(format!(
                "custom primitive {:?} has no wire form",
                c.name()
            ))),
            Kind::Zoom { a, b, child, .. } => Ok(json!({
                "kind": "zoom",
                "a": fmt_full(a),
                "b": fmt_full(b),
                "child": child.to_json()?,
            })),
            Kind::Compose { outer, inner } => Ok(json!({
                "kind": "compose",
                "outer": outer.to_json()?,
                "inner": inner.to_json()?,
            })),
        }
    }

    pub fn from_json(prec: u32, v: &Value) -> Result<Self> {
        let kind = v
            .get("kind")
            .and_then(Value::as_str)
            .ok_or_else(|| Error::Serialization("diffeo spec missing \"kind\"".to_string()))?;
        let num = |key: &str| -> Result<Float> {
            let field = v.get(key).ok_or_else(|| {
                Error::Serialization(format!("diffeo spec {kind:?} missing {key:?}"))
            })?;
            match field {
                Value::String(s) => parse_dec(prec, s),
                Value::Number(n) => parse_dec(prec, &n.to_string()),
                other => Err(Error::Serialization(format!(
                    "field {key:?} must be a decimal string, got {other}"
                ))),
            }
        };
        match kind {
            "identity" => Ok(Self::identity(prec)),
            "exp" => Self::exp_family(prec, num("a")?),
            "qs" => Self::qs(prec, num("s")?, num("ell")?),
            "zoom" => {
                let child = Self::from_json(
                    prec,
                    v.get("child").ok_or_else(|| {
                        Error::Serialization("zoom spec missing \"child\"".to_string())
                    })?,
                )?;
                child.zoom(&num("a")?, &num("b")?)
            }
            "compose" => {
                let outer = Self::from_json(
                    prec,
                    v.get("outer").ok_or_else(|| {
                        Error::Serialization("compose spec missing \"outer\"".to_string())
                    })?,
                )?;
                let inner = Self::from_json(
                    prec,
                    v.get("inner").ok_or_else(|| {
                        Error::Serialization("compose spec missing \"inner\"".to_string())
                    })?,
                )?;
                Ok(Self::compose(&outer, &inner))
            }
            other => Err(Error::Serialization(format!("unknown diffeo kind {other:?}"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::num::float;

    const P: u32 = 256;

    fn policy() -> PrecisionPolicy {
        PrecisionPolicy::new(P).unwrap()
    }

    /// Independent scalar route for q_s used to freeze expected values:
    /// plain textbook arithmetic, no shared code with `qs_value`.
    fn qs_oracle(s: f64, ell: f64, x: f64) -> f64 {
        if s == 0.0 {
            return x.powf(ell);
        }
        (((1.0 - s) * x + s).powf(ell) - s.powf(ell)) / (1.0 - s.powf(ell))
    }

    #[test]
    fn identity_eval() {
        let d = Diffeo::identity(P);
        let x = float(P, 0.37);
        assert_eq!(d.eval(&x).unwrap(), x);
    }

    #[test]
    fn qs_eval_matches_scalar_oracle() {
        // q_{1/2}(1/2) with ell = 2 is exactly 5/12 = 0.41666...
        let d = Diffeo::qs(P, float(P, 0.5), float(P, 2.0)).unwrap();
        let v = d.eval(&float(P, 0.5)).unwrap();
        let expect = Float::with_val(P, 5) / 12u32;
        let diff = Float::with_val(P, &v - &expect).abs();
        assert!(diff < float(P, 1e-70), "got {v}");
        assert!((qs_oracle(0.5, 2.0, 0.5) - 5.0 / 12.0).abs() < 1e-15);
    }

    #[test]
    fn qs_limit_s_zero_is_pure_power() {
        let d = Diffeo::qs(P, float(P, 0.0), float(P, 2.0)).unwrap();
        let x = Float::with_val(P, 3) / 10u32;
        let v = d.eval(&x).unwrap();
        let expect = Float::with_val(P, 9) / 100u32;
        let diff = Float::with_val(P, &v - &expect).abs();
        assert!(diff < float(P, 1e-70));
    }

    #[test]
    fn eval_domain_error_beyond_slack() {
        let d = Diffeo::identity(P);
        assert!(matches!(
            d.eval(&float(P, 1.5)),
            Err(Error::Domain { .. })
        ));
        // Rounding-level excursions clamp instead of erroring.
        let near = Float::with_val(P, 1) + Float::with_val(P, Float::i_exp(1, -250));
        assert_eq!(d.eval(&near).unwrap(), 1);
    }

    #[test]
    fn deriv_identity_and_qs_at_zero() {
        let d = Diffeo::identity(P);
        assert_eq!(d.deriv(&float(P, 0.7)).unwrap(), 1);
        // Dq_s(0) = ell (1-s) s^{ell-1} / (1 - s^ell) = 2/3 at s = 1/2, ell = 2.
        let q = Diffeo::qs(P, float(P, 0.5), float(P, 2.0)).unwrap();
        let v = q.deriv(&float(P, 0.0)).unwrap();
        let expect = Float::with_val(P, 2) / 3u32;
        let diff = Float::with_val(P, &v - &expect).abs();
        assert!(diff < float(P, 1e-70));
    }

    #[test]
    fn deriv_singularity_at_pure_power() {
        let q = Diffeo::qs(P, float(P, 0.0), float(P, 2.0)).unwrap();
        assert!(matches!(
            q.deriv(&float(P, 0.0)),
            Err(Error::Singularity { .. })
        ));
    }

    #[test]
    fn zoom_of_identity_is_identity() {
        let d = Diffeo::identity(P)
            .zoom(&float(P, 0.2), &float(P, 0.6))
            .unwrap();
        for i in 0..=16 {
            let x = float(P, i as f64 / 16.0);
            let diff = Float::with_val(P, d.eval(&x).unwrap() - &x).abs();
            assert!(diff < float(P, 1e-70));
        }
        assert_eq!(d.deriv(&float(P, 0.5)).unwrap(), 1);
    }

    #[test]
    fn zoom_full_interval_is_extensional_identity_transform() {
        let q = Diffeo::qs(P, float(P, 0.5), float(P, 2.0)).unwrap();
        let z = q.zoom(&float(P, 0.0), &float(P, 1.0)).unwrap();
        for i in 0..=16 {
            let x = float(P, i as f64 / 16.0);
            let a = q.eval(&x).unwrap();
            let b = z.eval(&x).unwrap();
            let diff = Float::with_val(P, a - b).abs();
            assert!(diff < float(P, 1e-70));
        }
    }

    #[test]
    fn zoom_fixes_endpoints() {
        let q = Diffeo::qs(P, float(P, 0.5), float(P, 2.0)).unwrap();
        let z = q.zoom(&float(P, 0.0), &float(P, 0.5)).unwrap();
        assert_eq!(z.eval(&float(P, 0.0)).unwrap(), 0);
        assert_eq!(z.eval(&float(P, 1.0)).unwrap(), 1);
    }

    #[test]
    fn zoom_degenerate_interval_rejected() {
        let d = Diffeo::identity(P);
        let a = float(P, 0.5);
        assert!(matches!(
            d.zoom(&a, &a),
            Err(Error::DegenerateInterval { .. })
        ));
    }

    #[test]
    fn compose_identity_neutral_and_double_qs() {
        let q = Diffeo::qs(P, float(P, 0.5), float(P, 2.0)).unwrap();
        let id = Diffeo::identity(P);
        let left = Diffeo::compose(&id, &q);
        let right = Diffeo::compose(&q, &id);
        let x = float(P, 0.3);
        let qx = q.eval(&x).unwrap();
        assert_eq!(left.eval(&x).unwrap(), qx);
        assert_eq!(right.eval(&x).unwrap(), qx);

        // Two applications of the scalar oracle freeze the expected value.
        let qq = Diffeo::compose(&q, &q);
        let got = qq.eval(&float(P, 0.5)).unwrap();
        let expect_oracle = qs_oracle(0.5, 2.0, qs_oracle(0.5, 2.0, 0.5));
        assert!((expect_oracle - 145.0 / 432.0).abs() < 1e-15);
        let expect = Float::with_val(P, 145) / 432u32;
        let diff = Float::with_val(P, &got - &expect).abs();
        assert!(diff < float(P, 1e-70), "got {got}");
        assert_eq!(qq.depth(), 2);
    }

    #[test]
    fn invert_round_trips() {
        let pol = policy();
        let d = Diffeo::identity(P);
        assert_eq!(d.invert(&float(P, 0.8), &pol).unwrap(), float(P, 0.8));

        let q = Diffeo::qs(P, float(P, 0.5), float(P, 2.0)).unwrap();
        let y = Float::with_val(P, 5) / 12u32;
        let x = q.invert(&y, &pol).unwrap();
        let diff = Float::with_val(P, &x - float(P, 0.5)).abs();
        assert!(diff < float(P, 1e-70));
        assert_eq!(q.invert(&float(P, 1.0), &pol).unwrap(), 1);

        let e = Diffeo::exp_family(P, float(P, 1.3)).unwrap();
        let z = e.zoom(&float(P, 0.1), &float(P, 0.8)).unwrap();
        let c = Diffeo::compose(&z, &q);
        for i in 1..20 {
            let x = float(P, i as f64 / 20.0);
            let y = c.eval(&x).unwrap();
            let back = c.invert(&y, &pol).unwrap();
            let diff = Float::with_val(P, &back - &x).abs();
            assert!(diff < float(P, 1e-60), "x={x} back={back}");
        }
    }

    #[test]
    fn distortion_values() {
        let id = Diffeo::identity(P);
        assert_eq!(
            id.distortion(&float(P, 0.0), &float(P, 1.0), 16).unwrap(),
            0
        );
        let affine = id.zoom(&float(P, 0.25), &float(P, 0.5)).unwrap();
        assert_eq!(
            affine
                .distortion(&float(P, 0.0), &float(P, 1.0), 16)
                .unwrap(),
            0
        );
        // Monotone derivative: the sup ratio is the endpoint ratio
        // Dq(1)/Dq(0) = (4/3)/(2/3) = 2.
        let q = Diffeo::qs(P, float(P, 0.5), float(P, 2.0)).unwrap();
        let dist = q.distortion(&float(P, 0.0), &float(P, 1.0), 64).unwrap();
        let expect = Float::with_val(P, 2u32).ln();
        let diff = Float::with_val(P, &dist - &expect).abs();
        assert!(diff < float(P, 1e-70));
    }

    #[test]
    fn c2_norm_behavior() {
        let id = Diffeo::identity(P);
        let base = id.c2_norm_estimate(8).unwrap();
        assert_eq!(base, id.c2_norm_estimate(64).unwrap());
        let q = Diffeo::qs(P, float(P, 0.9), float(P, 2.0)).unwrap();
        assert!(q.c2_norm_estimate(64).unwrap() > base);
        // ell in (1, 2): second derivative blows up as s -> 0 near x = 0.
        let lo = Diffeo::qs(P, float(P, 1e-30), float(P, 1.5)).unwrap();
        let hi = Diffeo::qs(P, float(P, 1e-10), float(P, 1.5)).unwrap();
        assert!(lo.c2_norm_estimate(64).unwrap() > hi.c2_norm_estimate(64).unwrap());
        let limit = Diffeo::qs(P, float(P, 0.0), float(P, 1.5)).unwrap();
        assert!(limit.c2_norm_estimate(64).unwrap().is_infinite());
    }

    #[test]
    fn json_round_trip() {
        let q = Diffeo::qs(P, float(P, 0.5), float(P, 2.0)).unwrap();
        let e = Diffeo::exp_family(P, float(P, -0.7)).unwrap();
        let z = Diffeo::compose(&e, &q)
            .zoom(&float(P, 0.125), &float(P, 0.875))
            .unwrap();
        let j = z.to_json().unwrap();
        let back = Diffeo::from_json(P, &j).unwrap();
        for i in 0..=10 {
            let x = float(P, i as f64 / 10.0);
            let a = z.eval(&x).unwrap();
            let b = back.eval(&x).unwrap();
            let diff = Float::with_val(P, a - b).abs();
            assert!(diff < float(P, 1e-70));
        }
    }

    #[test]
    fn deriv_matches_finite_differences() {
        let q = Diffeo::qs(P, float(P, 0.3), float(P, 2.5)).unwrap();
        let e = Diffeo::exp_family(P, float(P, 1.1)).unwrap();
        let c = Diffeo::compose(&q, &e);
        let h = Float::with_val(P, Float::i_exp(1, -(P as i32) / 2));
        let mut rng = crate::num::SplitMix64::new(42);
        for _ in 0..50 {
            let x = float(P, rng.range(0.05, 0.95));
            let d = c.deriv(&x).unwrap();
            let xp = Float::with_val(P, &x + &h);
            let xm = Float::with_val(P, &x - &h);
            let fd = Float::with_val(P, c.eval(&xp).unwrap() - c.eval(&xm).unwrap())
                / Float::with_val(P, 2 * h.clone());
            let rel = Float::with_val(P, Float::with_val(P, &d - &fd) / &d).abs();
            assert!(rel < float(P, 1e-6), "x={x} rel={rel}");
        }
    }
}
