//! The renormalization operator in both charts, the cascade driver that
//! produces a per-level trace, and the bisection tuner that locates maps
//! staying renormalizable to a target depth.
//!
//! Each application swaps the roles of the two critical exponents: the
//! exponent adjacent to each side of the flat interval alternates with the
//! level parity.

use std::io::{self, Write};

use rug::ops::Pow;
use rug::Float;

use crate::diffeo::Diffeo;
use crate::error::{Error, Result};
use crate::map::{MapS, MapX};
use crate::num::{fmt_sci, PrecisionPolicy};

/// A map is renormalizable exactly when `0 < x2 < x3`.
pub fn is_renormalizable(f: &MapX) -> bool {
    f.x2 > 0 && f.x2 < f.x3
}

/// Which side of `0 < x2 < x3` failed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FailureSide {
    /// `x2 <= 0`.
    Under,
    /// `x2 >= x3`.
    Over,
}

impl FailureSide {
    pub fn label(self) -> &'static str {
        match self {
            FailureSide::Under => "under (x2 <= 0)",
            FailureSide::Over => "over (x2 >= x3)",
        }
    }
}

fn failure_side(f: &MapX) -> FailureSide {
    if f.x2 <= 0 {
        FailureSide::Under
    } else {
        FailureSide::Over
    }
}

/// One application of the operator in X-coordinates.
pub fn renorm_x(f: &MapX, policy: &PrecisionPolicy) -> Result<MapX> {
    if !is_renormalizable(f) {
        return Err(Error::NotRenormalizable(format!(
            "x2 = {}, x3 = {}",
            f.x2, f.x3
        )));
    }
    let prec = f.prec();
    let s1 = Float::with_val(prec, &f.x3 - &f.x2) / &f.x3;
    let phil_s1 = f.phi_l.eval(&s1)?;
    let x2_new = Float::with_val(prec, (&phil_s1).pow(&f.l1));
    let s_new = phil_s1;

    let qs = Diffeo::qs(prec, f.s.clone(), f.l2.clone())?;
    let one_minus_x2 = Float::with_val(prec, 1 - &f.x2);
    let arg3 = Float::with_val(prec, &f.x4 - &f.x2) / &one_minus_x2;
    let arg4 = Float::with_val(prec, &f.x3 - &f.x2) / &one_minus_x2;
    // u = (phi^-1 . q_s^-1)(arg); the new x3, x4 are 1 - u.
    let u3 = f.phi.invert(&qs.invert(&arg3, policy)?, policy)?;
    let u4 = f.phi.invert(&qs.invert(&arg4, policy)?, policy)?;
    let x3_new = Float::with_val(prec, 1 - &u3);
    let x4_new = Float::with_val(prec, 1 - &u4);
    let x1_new = Float::with_val(prec, &f.x2 / &f.x1);

    let one = Float::with_val(prec, 1);
    let zero = Float::with_val(prec, 0);
    let phi_new = f.phi_l.zoom(&s1, &one)?;
    let qs_phi = Diffeo::compose(&qs, &f.phi);
    let phi_l_new = Diffeo::compose(&f.phi_r, &qs_phi.zoom(&u3, &one)?);
    let phi_r_new = Diffeo::compose(&f.phi_l.zoom(&zero, &s1)?, &qs_phi.zoom(&zero, &u4)?);

    // Exponent roles swap parity with each renormalization.
    MapX::new(
        x1_new,
        x2_new,
        x3_new,
        x4_new,
        s_new,
        f.l2.clone(),
        f.l1.clone(),
        phi_new,
        phi_l_new,
        phi_r_new,
    )
}

/// One application of the operator in S-coordinates. Mirrors `renorm_x`
/// through the chart transform; kept separate so the two routes can be
/// compared against each other.
pub fn renorm_s(g: &MapS, policy: &PrecisionPolicy) -> Result<MapS> {
    let prec = g.prec();
    if !(g.s1 > 0 && g.s1 < 1) {
        return Err(Error::NotRenormalizable(format!("S1 = {}", g.s1)));
    }
    let s = g.s_param()?;
    let qs = Diffeo::qs(prec, s, g.l2.clone())?;

    let phil_s1 = g.phi_l.eval(&g.s1)?;
    let x2_new = Float::with_val(prec, (&phil_s1).pow(&g.l1));

    let one_minus_s2 = Float::with_val(prec, 1 - &g.s2);
    let qb = qs.invert(&one_minus_s2, policy)?;
    let ub = g.phi.invert(&qb, policy)?;
    let prod = Float::with_val(prec, &g.s1 * &g.s2) * &g.s3;
    let qa = qs.invert(&prod, policy)?;
    let ua = g.phi.invert(&qa, policy)?;

    let one_minus_ub = Float::with_val(prec, 1 - &ub);
    let s1_new = Float::with_val(prec, 1 - Float::with_val(prec, &x2_new / &one_minus_ub));
    let s2_new = Float::with_val(prec, &ua / Float::with_val(prec, 1 - &x2_new));
    let s3_new = Float::with_val(prec, &one_minus_ub / &ua);
    let s4_new = Float::with_val(prec, &x2_new / &g.s4);
    let lm1 = Float::with_val(prec, &g.l1 - 1u32);
    let s5_new = if lm1.is_zero() {
        Float::with_val(prec, 1)
    } else {
        Float::with_val(prec, (&phil_s1).pow(&lm1))
    };

    let one = Float::with_val(prec, 1);
    let zero = Float::with_val(prec, 0);
    let phi_new = g.phi_l.zoom(&g.s1, &one)?;
    let phi_l_new = Diffeo::compose(
        &g.phi_r,
        &Diffeo::compose(&qs.zoom(&qb, &one)?, &g.phi.zoom(&ub, &one)?),
    );
    let phi_r_new = Diffeo::compose(
        &g.phi_l.zoom(&zero, &g.s1)?,
        &Diffeo::compose(&qs.zoom(&zero, &qa)?, &g.phi.zoom(&zero, &ua)?),
    );

    Ok(MapS {
        s1: s1_new,
        s2: s2_new,
        s3: s3_new,
        s4: s4_new,
        s5: s5_new,
        s_hint: Some(phil_s1),
        l1: g.l2.clone(),
        l2: g.l1.clone(),
        phi: phi_new,
        phi_l: phi_l_new,
        phi_r: phi_r_new,
        prec: g.prec(),
    })
}

/// Everything recorded about one renormalization level.
#[derive(Clone, Debug)]
pub struct LevelRecord {
    pub level: usize,
    pub map: MapX,
    /// `S1..S5` of this level's map.
    pub s_coords: [Float; 5],
    pub s_param: Float,
    /// `w = (log S2, log S3, log S4, log S5)`.
    pub w: [Float; 4],
    pub alpha: Float,
    pub dist_phi: Option<Float>,
    pub dist_phi_l: Option<Float>,
    pub dist_phi_r: Option<Float>,
    pub dag_depth: u32,
    pub renormalizable: bool,
}

/// Why the cascade stopped.
#[derive(Clone, Debug)]
pub enum StopReason {
    /// Recorded `n_max` renormalizable levels.
    ReachedMax,
    /// Renormalizability failed at this level (no row is recorded for it).
    NotRenormalizable { level: usize, side: FailureSide },
    /// A quantity underflowed the chart or an inverse solve stalled.
    PrecisionExhausted { level: usize, context: String },
}

#[derive(Clone, Debug)]
pub struct RenormTrace {
    pub levels: Vec<LevelRecord>,
    pub stop: StopReason,
    pub policy_bits: u32,
}

impl RenormTrace {
    /// Number of certified renormalizable levels.
    pub fn depth(&self) -> usize {
        self.levels.len()
    }

    /// Trace CSV with the fixed column schema; `digits` controls the
    /// scientific-notation width. Unmeasured distortions print empty.
    pub fn write_csv<W: Write>(&self, out: &mut W, digits: usize) -> io::Result<()> {
        writeln!(
            out,
            "n,S1,S2,S3,S4,S5,s,y2,y3,y4,y5,alpha,dist_phi,dist_phil,dist_phir,dag_depth,renormalizable"
        )?;
        for rec in &self.levels {
            let d = |v: &Option<Float>| v.as_ref().map(|x| fmt_sci(x, digits)).unwrap_or_default();
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                rec.level,
                fmt_sci(&rec.s_coords[0], digits),
                fmt_sci(&rec.s_coords[1], digits),
                fmt_sci(&rec.s_coords[2], digits),
                fmt_sci(&rec.s_coords[3], digits),
                fmt_sci(&rec.s_coords[4], digits),
                fmt_sci(&rec.s_param, digits),
                fmt_sci(&rec.w[0], digits),
                fmt_sci(&rec.w[1], digits),
                fmt_sci(&rec.w[2], digits),
                fmt_sci(&rec.w[3], digits),
                fmt_sci(&rec.alpha, digits),
                d(&rec.dist_phi),
                d(&rec.dist_phi_l),
                d(&rec.dist_phi_r),
                rec.dag_depth,
                rec.renormalizable,
            )?;
        }
        Ok(())
    }
}

/// Cascade options. Distortion measurement is optional because the tuner
/// re-runs the cascade hundreds of times and only needs the flags.
#[derive(Clone, Debug)]
pub struct IterateOptions {
    pub n_max: usize,
    pub measure_distortion: bool,
    pub distortion_grid: usize,
}

impl IterateOptions {
    pub fn new(n_max: usize) -> Self {
        IterateOptions {
            n_max,
            measure_distortion: true,
            distortion_grid: 64,
        }
    }

    pub fn fast(n_max: usize) -> Self {
        IterateOptions {
            n_max,
            measure_distortion: false,
            distortion_grid: 64,
        }
    }
}

/// Chart-breaking states that mean the mantissa ran out, as opposed to a
/// legitimate loss of renormalizability.
fn sanity_problem(f: &MapX) -> Option<String> {
    for (name, v) in [
        ("x1", &f.x1),
        ("x2", &f.x2),
        ("x3", &f.x3),
        ("x4", &f.x4),
        ("s", &f.s),
    ] {
        if !v.is_finite() {
            return Some(format!("{name} = {v} not finite"));
        }
    }
    if !(f.x1 < 0) {
        return Some(format!("x1 = {} not negative", f.x1));
    }
    if !(f.x3 > 0) {
        return Some(format!("x3 = {} underflowed", f.x3));
    }
    if !(f.x3 < f.x4) {
        return Some(format!("flat interval collapsed: x3 = {}, x4 = {}", f.x3, f.x4));
    }
    if !(f.x4 < 1) {
        return Some(format!("x4 = {} reached 1", f.x4));
    }
    if !(f.x2 < 1) {
        return Some(format!("x2 = {} reached 1", f.x2));
    }
    if !(f.s > 0 && f.s < 1) {
        return Some(format!("s = {} left (0, 1)", f.s));
    }
    None
}

/// Runs the cascade, recording one row per renormalizable level, up to
/// `n_max` rows. Failures are recorded in the stop reason, never thrown.
pub fn iterate(f: &MapX, opts: &IterateOptions, policy: &PrecisionPolicy) -> RenormTrace {
    let prec = f.prec();
    let mut levels: Vec<LevelRecord> = Vec::new();
    let mut current = f.clone();
    let stop = loop {
        let level = levels.len();
        if level >= opts.n_max {
            break StopReason::ReachedMax;
        }
        if let Some(context) = sanity_problem(&current) {
            break StopReason::PrecisionExhausted { level, context };
        }
        if !is_renormalizable(&current) {
            break StopReason::NotRenormalizable {
                level,
                side: failure_side(&current),
            };
        }

        let s_chart = current.to_s();
        let w = [
            Float::with_val(prec, s_chart.s2.ln_ref()),
            Float::with_val(prec, s_chart.s3.ln_ref()),
            Float::with_val(prec, s_chart.s4.ln_ref()),
            Float::with_val(prec, s_chart.s5.ln_ref()),
        ];
        if w.iter().any(|y| !y.is_finite()) {
            break StopReason::PrecisionExhausted {
                level,
                context: "log scaling ratios not finite".to_string(),
            };
        }
        let zero = Float::with_val(prec, 0);
        let one = Float::with_val(prec, 1);
        let measure = |d: &Diffeo| -> Option<Float> {
            if opts.measure_distortion {
                d.distortion(&zero, &one, opts.distortion_grid).ok()
            } else {
                None
            }
        };
        let dag_depth = current
            .phi
            .depth()
            .max(current.phi_l.depth())
            .max(current.phi_r.depth());
        levels.push(LevelRecord {
            level,
            s_coords: [
                s_chart.s1.clone(),
                s_chart.s2.clone(),
                s_chart.s3.clone(),
                s_chart.s4.clone(),
                s_chart.s5.clone(),
            ],
            s_param: current.s.clone(),
            w,
            alpha: current.alpha(),
            dist_phi: measure(&current.phi),
            dist_phi_l: measure(&current.phi_l),
            dist_phi_r: measure(&current.phi_r),
            dag_depth,
            renormalizable: true,
            map: current.clone(),
        });

        if levels.len() >= opts.n_max {
            break StopReason::ReachedMax;
        }
        match renorm_x(&current, policy) {
            Ok(next) => current = next,
            Err(e) => {
                break StopReason::PrecisionExhausted {
                    level,
                    context: e.to_string(),
                }
            }
        }
    };
    RenormTrace {
        levels,
        stop,
        policy_bits: policy.bits(),
    }
}

/// Which scalar field of the template the tuner moves.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TuneParameter {
    X1,
    X2,
    X3,
    X4,
    S,
}

impl TuneParameter {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "x1" => Ok(TuneParameter::X1),
            "x2" => Ok(TuneParameter::X2),
            "x3" => Ok(TuneParameter::X3),
            "x4" => Ok(TuneParameter::X4),
            "s" => Ok(TuneParameter::S),
            other => Err(Error::Invalid(format!("unknown tuning parameter {other:?}"))),
        }
    }

    fn apply(self, template: &MapX, t: &Float) -> MapX {
        let mut f = template.clone();
        match self {
            TuneParameter::X1 => f.x1 = t.clone(),
            TuneParameter::X2 => f.x2 = t.clone(),
            TuneParameter::X3 => f.x3 = t.clone(),
            TuneParameter::X4 => f.x4 = t.clone(),
            TuneParameter::S => f.s = t.clone(),
        }
        f
    }
}

#[derive(Clone, Debug)]
pub struct TuneReport {
    pub map: MapX,
    pub parameter: Float,
    pub bracket_width: Float,
    pub iterations: usize,
    pub achieved_depth: usize,
}

enum Outcome {
    Reached(MapX),
    Fail { level: usize, side: FailureSide },
    Dead { level: usize, context: String },
}

fn classify(
    template: &MapX,
    param: TuneParameter,
    t: &Float,
    target: usize,
    policy: &PrecisionPolicy,
) -> Outcome {
    let f = param.apply(template, t);
    let trace = iterate(&f, &IterateOptions::fast(target), policy);
    match trace.stop {
        StopReason::ReachedMax if trace.depth() >= target => Outcome::Reached(f),
        StopReason::NotRenormalizable { level, side } => Outcome::Fail { level, side },
        StopReason::PrecisionExhausted { level, context } => Outcome::Dead { level, context },
        StopReason::ReachedMax => Outcome::Dead {
            level: trace.depth(),
            context: "trace shorter than requested without failure record".to_string(),
        },
    }
}

/// A failed cascade tells which way to move the parameter: the critical
/// value's image through k levels flips orientation with each level, so the
/// failure side is read through the level parity.
fn overshoots(level: usize, side: FailureSide) -> bool {
    (side == FailureSide::Under) == (level % 2 == 1)
}

/// Bisection search for a parameter whose cascade stays renormalizable for
/// at least `target_depth` levels. The bracket endpoints must fail on
/// opposite effective sides; the returned parameter is the midpoint at the
/// step that first reaches the target.
pub fn tune_to_fibonacci(
    template: &MapX,
    param: TuneParameter,
    bracket: (Float, Float),
    target_depth: usize,
    policy: &PrecisionPolicy,
) -> Result<TuneReport> {
    let prec = policy.bits();
    if target_depth == 0 {
        if !template.validate().is_valid() || !is_renormalizable(template) {
            return Err(Error::Invalid(
                "template must be valid and renormalizable for target depth 0".to_string(),
            ));
        }
        return Ok(TuneReport {
            map: template.clone(),
            parameter: Float::with_val(prec, 0),
            bracket_width: Float::with_val(prec, 0),
            iterations: 0,
            achieved_depth: 0,
        });
    }
    let (mut lo, mut hi) = bracket;
    if !(hi > lo) {
        return Err(Error::BracketNotFound(format!(
            "bracket [{lo}, {hi}] is not ordered"
        )));
    }

    let side_of = |t: &Float| -> Result<Option<bool>> {
        match classify(template, param, t, target_depth, policy) {
            Outcome::Reached(_) => Ok(None),
            Outcome::Fail { level, side } => Ok(Some(overshoots(level, side))),
            Outcome::Dead { level, context } => Err(Error::PrecisionExhausted(format!(
                "cascade died at level {level} while probing t = {t}: {context}"
            ))),
        }
    };

    let report = |map: MapX, t: Float, width: Float, iterations: usize| TuneReport {
        achieved_depth: target_depth,
        map,
        parameter: t,
        bracket_width: width,
        iterations,
    };

    let lo_side = match side_of(&lo)? {
        None => {
            let f = param.apply(template, &lo);
            let width = Float::with_val(prec, &hi - &lo);
            return Ok(report(f, lo, width, 0));
        }
        Some(s) => s,
    };
    let hi_side = match side_of(&hi)? {
        None => {
            let f = param.apply(template, &hi);
            let width = Float::with_val(prec, &hi - &lo);
            return Ok(report(f, hi, width, 0));
        }
        Some(s) => s,
    };
    if lo_side == hi_side {
        return Err(Error::BracketNotFound(format!(
            "both endpoints fail on the same side (overshoot = {lo_side})"
        )));
    }

    let scale = {
        let mut m = Float::with_val(prec, 1);
        let mut abs_lo = lo.clone();
        abs_lo.abs_mut();
        let mut abs_hi = hi.clone();
        abs_hi.abs_mut();
        if abs_lo > m {
            m = abs_lo;
        }
        if abs_hi > m {
            m = abs_hi;
        }
        m
    };
    let min_width = Float::with_val(
        prec,
        Float::i_exp(1, -(prec.saturating_sub(24) as i32)),
    ) * scale;

    let max_steps = 8 * prec as usize;
    for it in 1..=max_steps {
        let width = Float::with_val(prec, &hi - &lo);
        if width <= min_width {
            return Err(Error::PrecisionExhausted(format!(
                "bracket width {width} at tolerance before reaching depth {target_depth}; \
                 more mantissa bits needed"
            )));
        }
        let mid = Float::with_val(prec, &lo + &hi) / 2u32;
        match classify(template, param, &mid, target_depth, policy) {
            Outcome::Reached(f) => {
                return Ok(report(f, mid, width, it));
            }
            Outcome::Fail { level, side } => {
                if overshoots(level, side) == lo_side {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            Outcome::Dead { level, context } => {
                return Err(Error::PrecisionExhausted(format!(
                    "cascade died at level {level} during bisection: {context}"
                )));
            }
        }
    }
    Err(Error::PrecisionExhausted(format!(
        "no depth-{target_depth} parameter after {max_steps} bisection steps"
    )))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::num::float;

    const P: u32 = 256;

    fn policy() -> PrecisionPolicy {
        PrecisionPolicy::new(P).unwrap()
    }

    fn template(l1: f64, l2: f64, x2: f64) -> MapX {
        MapX::new(
            float(P, -1.0),
            float(P, x2),
            float(P, 0.4),
            float(P, 0.6),
            float(P, 0.5),
            float(P, l1),
            float(P, l2),
            Diffeo::identity(P),
            Diffeo::identity(P),
            Diffeo::identity(P),
        )
        .unwrap()
    }

    fn assert_close(a: &Float, b: &Float, tol: f64) {
        let diff = Float::with_val(P, a - b).abs();
        assert!(diff < float(P, tol), "{a} vs {b}");
    }

    #[test]
    fn renormalizable_boundary_cases() {
        assert!(is_renormalizable(&template(2.0, 2.0, 0.3)));
        let mut at = template(2.0, 2.0, 0.3);
        at.x2 = at.x3.clone();
        assert!(!is_renormalizable(&at));
        at.x2 = float(P, -0.1);
        assert!(!is_renormalizable(&at));
    }

    #[test]
    fn renorm_x_sign_rules() {
        let f = template(2.0, 2.0, 0.25);
        let rf = renorm_x(&f, &policy()).unwrap();
        assert!(rf.x1 < 0);
        assert!(rf.x3 < rf.x4);
        assert!(rf.x4 < 1);
        // Exponent roles swapped.
        assert_eq!(rf.l1, f.l2);
        assert_eq!(rf.l2, f.l1);
        // s-tilde = phi_l(S1) and x2-tilde = s-tilde^{l1}.
        let expect_x2 = Float::with_val(P, (&rf.s).pow(&f.l1));
        assert_close(&rf.x2, &expect_x2, 1e-70);
    }

    #[test]
    fn chart_commutation_on_random_maps() {
        let pol = policy();
        let mut rng = crate::num::SplitMix64::new(99);
        let mut tested = 0;
        while tested < 25 {
            let x2 = rng.range(0.05, 0.5);
            let x3 = rng.range(x2 + 0.1, 0.75);
            let x4 = rng.range(x3 + 0.1, 0.95);
            let f = MapX::new(
                float(P, -rng.range(0.3, 1.5)),
                float(P, x2),
                float(P, x3),
                float(P, x4),
                float(P, rng.range(0.1, 0.9)),
                float(P, rng.range(1.0, 3.0)),
                float(P, rng.range(1.1, 3.0)),
                Diffeo::exp_family(P, float(P, rng.range(-1.5, 1.5))).unwrap(),
                Diffeo::exp_family(P, float(P, rng.range(-1.5, 1.5))).unwrap(),
                Diffeo::exp_family(P, float(P, rng.range(-1.5, 1.5))).unwrap(),
            )
            .unwrap();
            if !is_renormalizable(&f) {
                continue;
            }
            tested += 1;
            let via_x = renorm_x(&f, &pol).unwrap().to_s();
            let via_s = renorm_s(&f.to_s(), &pol).unwrap();
            assert_close(&via_x.s1, &via_s.s1, 1e-20);
            assert_close(&via_x.s2, &via_s.s2, 1e-20);
            assert_close(&via_x.s3, &via_s.s3, 1e-20);
            assert_close(&via_x.s4, &via_s.s4, 1e-20);
            assert_close(&via_x.s5, &via_s.s5, 1e-20);
            // The diffeos are built from different zoom/compose trees but
            // must agree extensionally.
            for i in 1..8 {
                let x = float(P, i as f64 / 8.0);
                assert_close(
                    &via_x.phi.eval(&x).unwrap(),
                    &via_s.phi.eval(&x).unwrap(),
                    1e-20,
                );
                assert_close(
                    &via_x.phi_l.eval(&x).unwrap(),
                    &via_s.phi_l.eval(&x).unwrap(),
                    1e-20,
                );
                assert_close(
                    &via_x.phi_r.eval(&x).unwrap(),
                    &via_s.phi_r.eval(&x).unwrap(),
                    1e-20,
                );
            }
            // S5-tilde is the post-swap power of s-tilde.
            let rf = renorm_x(&f, &pol).unwrap();
            let e = Float::with_val(P, &rf.l2 - 1u32);
            let expect = Float::with_val(P, (&rf.s).pow(&e));
            assert_close(&via_s.s5, &expect, 1e-20);
        }
    }

    #[test]
    fn iterate_records_failure_without_rows() {
        let mut f = template(2.0, 2.0, 0.3);
        f.x2 = float(P, 0.55); // above x3: not renormalizable at level 0
        let trace = iterate(&f, &IterateOptions::new(5), &policy());
        assert_eq!(trace.depth(), 0);
        match trace.stop {
            StopReason::NotRenormalizable { level: 0, side } => {
                assert_eq!(side, FailureSide::Over)
            }
            ref other => panic!("unexpected stop {other:?}"),
        }
    }

    #[test]
    fn iterate_alpha_stays_in_unit_interval() {
        let f = template(2.0, 2.0, 0.2);
        let trace = iterate(&f, &IterateOptions::new(3), &policy());
        for rec in &trace.levels {
            assert!(rec.alpha > 0 && rec.alpha < 1);
            assert!(rec.w.iter().all(|y| y.is_finite()));
        }
    }

    #[test]
    fn tune_depth_one_brackets_by_failure_mode() {
        let f = template(2.0, 2.0, 0.2);
        let pol = policy();
        // Near 0 the first renormalization overshoots (x2 >= x3); near x3 it
        // fails renormalizability immediately the other way around.
        let report = tune_to_fibonacci(
            &f,
            TuneParameter::X2,
            (float(P, 1e-3), float(P, 0.399)),
            1,
            &pol,
        )
        .unwrap();
        assert!(report.achieved_depth >= 1);
        let trace = iterate(&report.map, &IterateOptions::fast(1), &pol);
        assert_eq!(trace.depth(), 1);
    }

    #[test]
    fn tune_depth_zero_returns_template() {
        let f = template(2.0, 2.0, 0.2);
        let report =
            tune_to_fibonacci(&f, TuneParameter::X2, (float(P, 0.0), float(P, 0.1)), 0, &policy())
                .unwrap();
        assert_eq!(report.iterations, 0);
        assert_eq!(report.map.x2, f.x2);
    }

    #[test]
    fn tune_rejects_one_sided_bracket() {
        let f = template(2.0, 2.0, 0.2);
        let err = tune_to_fibonacci(
            &f,
            TuneParameter::X2,
            (float(P, 0.001), float(P, 0.002)),
            6,
            &policy(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::BracketNotFound(_)));
    }

    #[test]
    fn trace_csv_has_header_and_rows() {
        let f = template(2.0, 2.0, 0.2);
        let trace = iterate(&f, &IterateOptions::new(2), &policy());
        let mut buf = Vec::new();
        trace.write_csv(&mut buf, 12).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "n,S1,S2,S3,S4,S5,s,y2,y3,y4,y5,alpha,dist_phi,dist_phil,dist_phir,dag_depth,renormalizable"
        );
        assert_eq!(lines.count(), trace.depth());
    }
}
