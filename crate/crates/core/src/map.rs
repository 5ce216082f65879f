//! The family of circle maps with a flat interval in its three coordinate
//! charts (X, S, Y), with pointwise evaluation, chart transforms, validation
//! and the JSON wire format.
//!
//! X-coordinates are the source of truth; S and Y are derived views. The map
//! acts on `[x1, 1]` with `x1 ~ 1` identified, is increasing on each branch,
//! and collapses the flat interval `(x3, x4)` to 0.

use rug::ops::Pow;
use rug::Float;
use serde_json::{json, Value};

use crate::diffeo::{qs_value, Diffeo};
use crate::error::{Error, Result};
use crate::num::{fmt_full, parse_dec};

/// A map in X-coordinates: the four marked points, the `q_s` parameter, the
/// two critical exponents (`l1` on the left edge of the flat interval, `l2`
/// on the right edge and inside `q_s`), and the three diffeomorphic parts.
#[derive(Clone, Debug)]
pub struct MapX {
    pub x1: Float,
    pub x2: Float,
    pub x3: Float,
    pub x4: Float,
    pub s: Float,
    pub l1: Float,
    pub l2: Float,
    pub phi: Diffeo,
    pub phi_l: Diffeo,
    pub phi_r: Diffeo,
    pub(crate) prec: u32,
}

/// The same map in S-coordinates. `s_hint` keeps the raw `q_s` parameter so
/// the chart stays invertible when `l2 = 1` makes `S5` identically 1.
#[derive(Clone, Debug)]
pub struct MapS {
    pub s1: Float,
    pub s2: Float,
    pub s3: Float,
    pub s4: Float,
    pub s5: Float,
    pub s_hint: Option<Float>,
    pub l1: Float,
    pub l2: Float,
    pub phi: Diffeo,
    pub phi_l: Diffeo,
    pub phi_r: Diffeo,
    pub(crate) prec: u32,
}

/// Log view of the S-chart: `y1 = S1`, `y_i = log S_i` for `i = 2..5`.
#[derive(Clone, Debug)]
pub struct MapY {
    pub y1: Float,
    pub y2: Float,
    pub y3: Float,
    pub y4: Float,
    pub y5: Float,
    pub s_hint: Option<Float>,
    pub l1: Float,
    pub l2: Float,
    pub phi: Diffeo,
    pub phi_l: Diffeo,
    pub phi_r: Diffeo,
    pub(crate) prec: u32,
}

/// Non-throwing validation outcome: every violated simplex inequality plus
/// the measured circle-identification error `max(|f(x1)-x2|, |f(1)-x2|)`.
#[derive(Clone, Debug)]
pub struct ValidationReport {
    pub violations: Vec<String>,
    pub identification_error: Option<Float>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

/// `q_s` evaluation in map context (delegates to the diffeo-side scalar).
pub fn qs_eval(prec: u32, s: &Float, ell: &Float, x: &Float) -> Result<Float> {
    qs_value(prec, s, ell, x)
}

impl MapX {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        x1: Float,
        x2: Float,
        x3: Float,
        x4: Float,
        s: Float,
        l1: Float,
        l2: Float,
        phi: Diffeo,
        phi_l: Diffeo,
        phi_r: Diffeo,
    ) -> Result<Self> {
        let prec = phi.prec().max(phi_l.prec()).max(phi_r.prec());
        for (name, v) in [
            ("x1", &x1),
            ("x2", &x2),
            ("x3", &x3),
            ("x4", &x4),
            ("s", &s),
            ("l1", &l1),
            ("l2", &l2),
        ] {
            if !v.is_finite() {
                return Err(Error::Invalid(format!("{name} = {v} is not finite")));
            }
        }
        if l1 < 1 || l2 < 1 {
            return Err(Error::Invalid(format!(
                "critical exponents must be >= 1, got ({l1}, {l2})"
            )));
        }
        Ok(MapX {
            x1,
            x2,
            x3,
            x4,
            s,
            l1,
            l2,
            phi,
            phi_l,
            phi_r,
            prec,
        })
    }

    pub fn prec(&self) -> u32 {
        self.prec
    }

    /// `alpha = x3 / x4`, the flat-interval asymmetry ratio.
    pub fn alpha(&self) -> Float {
        Float::with_val(self.prec, &self.x3 / &self.x4)
    }

    /// Evaluates the map at `x` in `[x1, 1]`, branch by branch.
    pub fn eval(&self, x: &Float) -> Result<Float> {
        let prec = self.prec;
        if x.is_nan() {
            return Err(Error::Domain {
                value: "nan".to_string(),
            });
        }
        let slack = Float::with_val(prec, Float::i_exp(1, -(prec.saturating_sub(32) as i32)));
        let mut x = Float::with_val(prec, x);
        if x < self.x1 {
            let excess = Float::with_val(prec, &self.x1 - &x);
            if excess > slack {
                return Err(Error::Domain {
                    value: fmt_full(&x),
                });
            }
            x = self.x1.clone();
        }
        if x > 1 {
            let excess = Float::with_val(prec, &x - 1u32);
            if excess > slack {
                return Err(Error::Domain {
                    value: fmt_full(&x),
                });
            }
            x = Float::with_val(prec, 1);
        }

        if x < 0 {
            // (1 - x2) q_s(phi(1 - x/x1)) + x2
            let arg = Float::with_val(prec, 1 - Float::with_val(prec, &x / &self.x1));
            let v = self.phi.eval(&arg)?;
            let q = qs_value(prec, &self.s, &self.l2, &v)?;
            let one_minus_x2 = Float::with_val(prec, 1 - &self.x2);
            Ok(Float::with_val(prec, one_minus_x2 * q) + &self.x2)
        } else if x <= self.x3 {
            // x1 (phi_l((x3 - x)/x3))^{l1}
            let arg = Float::with_val(prec, &self.x3 - &x) / &self.x3;
            let v = self.phi_l.eval(&arg)?;
            let p = Float::with_val(prec, v.pow(&self.l1));
            Ok(Float::with_val(prec, &self.x1 * &p))
        } else if x < self.x4 {
            Ok(Float::with_val(prec, 0))
        } else {
            // x2 (phi_r((x - x4)/(1 - x4)))^{l2}
            let arg = Float::with_val(prec, &x - &self.x4)
                / Float::with_val(prec, 1 - &self.x4);
            let v = self.phi_r.eval(&arg)?;
            let p = Float::with_val(prec, v.pow(&self.l2));
            Ok(Float::with_val(prec, &self.x2 * &p))
        }
    }

    /// Lists every violated simplex inequality; never fails. Tuning probes
    /// the renormalizability boundary on purpose, so this only reports.
    pub fn validate(&self) -> ValidationReport {
        let mut violations = Vec::new();
        let mut check = |ok: bool, label: &str| {
            if !ok {
                violations.push(label.to_string());
            }
        };
        check(self.x1 < 0, "x1 < 0");
        check(self.x3 > 0, "0 < x3");
        check(self.x3 < self.x4, "x3 < x4");
        check(self.x4 < 1, "x4 < 1");
        check(self.x2 > 0, "0 < x2");
        check(self.x2 < 1, "x2 < 1");
        check(self.s > 0, "0 < s");
        check(self.s < 1, "s < 1");
        check(self.l1 >= 1, "l1 >= 1");
        check(self.l2 >= 1, "l2 >= 1");

        let identification_error = if violations.is_empty() {
            let prec = self.prec;
            let at_x1 = self.eval(&self.x1.clone());
            let at_one = self.eval(&Float::with_val(prec, 1));
            match (at_x1, at_one) {
                (Ok(a), Ok(b)) => {
                    let ea = Float::with_val(prec, &a - &self.x2).abs();
                    let eb = Float::with_val(prec, &b - &self.x2).abs();
                    let err = if ea > eb { ea } else { eb };
                    let tol =
                        Float::with_val(prec, Float::i_exp(1, -(prec.saturating_sub(24) as i32)));
                    if err > tol {
                        violations.push("f(x1) = f(1) = x2".to_string());
                    }
                    Some(err)
                }
                _ => {
                    violations.push("f evaluable at x1 and 1".to_string());
                    None
                }
            }
        } else {
            None
        };
        ValidationReport {
            violations,
            identification_error,
        }
    }

    /// X -> S chart transform. `S1 <= 0` passes through unmodified for
    /// non-renormalizable maps; validation is a separate concern.
    pub fn to_s(&self) -> MapS {
        let prec = self.prec;
        let s1 = Float::with_val(prec, &self.x3 - &self.x2) / &self.x3;
        let s2 = Float::with_val(prec, 1 - &self.x4) / Float::with_val(prec, 1 - &self.x2);
        let s3 = Float::with_val(prec, &self.x3 / Float::with_val(prec, 1 - &self.x4));
        let s4 = Float::with_val(prec, &self.x2 / Float::with_val(prec, -self.x1.clone()));
        let s5 = s5_from_s(prec, &self.s, &self.l2);
        MapS {
            s1,
            s2,
            s3,
            s4,
            s5,
            s_hint: Some(self.s.clone()),
            l1: self.l1.clone(),
            l2: self.l2.clone(),
            phi: self.phi.clone(),
            phi_l: self.phi_l.clone(),
            phi_r: self.phi_r.clone(),
            prec,
        }
    }

    /// Map JSON wire form with decimal-string numbers.
    pub fn to_json(&self) -> Result<Value> {
        Ok(json!({
            "l1": fmt_full(&self.l1),
            "l2": fmt_full(&self.l2),
            "x1": fmt_full(&self.x1),
            "x2": fmt_full(&self.x2),
            "x3": fmt_full(&self.x3),
            "x4": fmt_full(&self.x4),
            "s": fmt_full(&self.s),
            "phi": self.phi.to_json()?,
            "phil": self.phi_l.to_json()?,
            "phir": self.phi_r.to_json()?,
        }))
    }

    pub fn from_json(prec: u32, v: &Value) -> Result<Self> {
        let num = |key: &str| -> Result<Float> {
            let field = v
                .get(key)
                .ok_or_else(|| Error::Serialization(format!("map spec missing {key:?}")))?;
            match field {
                Value::String(s) => parse_dec(prec, s),
                Value::Number(n) => parse_dec(prec, &n.to_string()),
                other => Err(Error::Serialization(format!(
                    "field {key:?} must be a decimal string, got {other}"
                ))),
            }
        };
        let diffeo = |key: &str| -> Result<Diffeo> {
            match v.get(key) {
                Some(spec) => Diffeo::from_json(prec, spec),
                None => Ok(Diffeo::identity(prec)),
            }
        };
        MapX::new(
            num("x1")?,
            num("x2")?,
            num("x3")?,
            num("x4")?,
            num("s")?,
            num("l1")?,
            num("l2")?,
            diffeo("phi")?,
            diffeo("phil")?,
            diffeo("phir")?,
        )
    }
}

fn s5_from_s(prec: u32, s: &Float, l2: &Float) -> Float {
    let e = Float::with_val(prec, l2 - 1u32);
    if e.is_zero() {
        Float::with_val(prec, 1)
    } else {
        Float::with_val(prec, s.pow(&e))
    }
}

impl MapS {
    pub fn prec(&self) -> u32 {
        self.prec
    }

    /// Recovers the `q_s` parameter: inverts `S5 = s^{l2-1}` when `l2 > 1`,
    /// falls back to the stored hint in the chart-degenerate `l2 = 1` case.
    pub fn s_param(&self) -> Result<Float> {
        let prec = self.prec;
        let e = Float::with_val(prec, &self.l2 - 1u32);
        if e.is_zero() {
            return self.s_hint.clone().ok_or(Error::ExponentDegeneracy);
        }
        let inv = Float::with_val(prec, 1 / e);
        Ok(Float::with_val(prec, (&self.s5).pow(&inv)))
    }

    /// `alpha` computed purely in S-coordinates:
    /// `S2 S3 / (1 - S2 + (1 - S1) S2 S3)`.
    pub fn alpha(&self) -> Float {
        let prec = self.prec;
        let s2s3 = Float::with_val(prec, &self.s2 * &self.s3);
        let one_minus_s1 = Float::with_val(prec, 1 - &self.s1);
        let denom = Float::with_val(prec, 1 - &self.s2)
            + Float::with_val(prec, &one_minus_s1 * &s2s3);
        s2s3 / denom
    }

    /// S -> X chart transform (the explicit rational inverse).
    pub fn to_x(&self) -> Result<MapX> {
        let prec = self.prec;
        if self.s1 >= 1 {
            return Err(Error::Invalid(format!(
                "S1 = {} >= 1 leaves the chart's invertible range",
                self.s1
            )));
        }
        // g = S3 (1 - S1) S2; then
        // x1 = -g / ((1+g) S4), x2 = g/(1+g), x3 = S3 S2/(1+g), x4 = 1 - S2/(1+g).
        let one_minus_s1 = Float::with_val(prec, 1 - &self.s1);
        let g = Float::with_val(prec, &self.s3 * &one_minus_s1) * &self.s2;
        let one_plus_g = Float::with_val(prec, 1 + &g);
        let x2 = Float::with_val(prec, &g / &one_plus_g);
        let x1 = -Float::with_val(prec, &g / Float::with_val(prec, &one_plus_g * &self.s4));
        let x3 = Float::with_val(prec, &self.s3 * &self.s2) / &one_plus_g;
        let x4 = Float::with_val(prec, 1 - Float::with_val(prec, &self.s2 / &one_plus_g));
        let s = self.s_param()?;
        MapX::new(
            x1,
            x2,
            x3,
            x4,
            s,
            self.l1.clone(),
            self.l2.clone(),
            self.phi.clone(),
            self.phi_l.clone(),
            self.phi_r.clone(),
        )
    }

    /// Componentwise log view; errors if any of `S2..S5` is non-positive.
    pub fn to_y(&self) -> Result<MapY> {
        let prec = self.prec;
        for (name, v) in [
            ("S2", &self.s2),
            ("S3", &self.s3),
            ("S4", &self.s4),
            ("S5", &self.s5),
        ] {
            if !(*v > 0) {
                return Err(Error::Domain {
                    value: format!("{name} = {v} must be positive for the log chart"),
                });
            }
        }
        Ok(MapY {
            y1: self.s1.clone(),
            y2: Float::with_val(prec, self.s2.ln_ref()),
            y3: Float::with_val(prec, self.s3.ln_ref()),
            y4: Float::with_val(prec, self.s4.ln_ref()),
            y5: Float::with_val(prec, self.s5.ln_ref()),
            s_hint: self.s_hint.clone(),
            l1: self.l1.clone(),
            l2: self.l2.clone(),
            phi: self.phi.clone(),
            phi_l: self.phi_l.clone(),
            phi_r: self.phi_r.clone(),
            prec,
        })
    }
}

impl MapY {
    pub fn prec(&self) -> u32 {
        self.prec
    }

    /// Exact inverse of the log view.
    pub fn to_s(&self) -> MapS {
        let prec = self.prec;
        MapS {
            s1: self.y1.clone(),
            s2: Float::with_val(prec, self.y2.exp_ref()),
            s3: Float::with_val(prec, self.y3.exp_ref()),
            s4: Float::with_val(prec, self.y4.exp_ref()),
            s5: Float::with_val(prec, self.y5.exp_ref()),
            s_hint: self.s_hint.clone(),
            l1: self.l1.clone(),
            l2: self.l2.clone(),
            phi: self.phi.clone(),
            phi_l: self.phi_l.clone(),
            phi_r: self.phi_r.clone(),
            prec,
        }
    }
}
