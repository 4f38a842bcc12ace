//! Tube geometry: the scalar data (k, tau, alpha, h) on an interval, the
//! deformation-profile hypotheses, and the Jacobian of the map that
//! straightens the tube onto the fixed cylinder I x S.
//!
//! The spectral pipeline consumes the geometry solely through these scalar
//! functions; an embedded curve r(s) is optional validation input only
//! (see [`frenet_from_curve`]).

use std::fmt;
use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};

type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// A scalar function of arc length with a derivative evaluator.
///
/// Catalog constructors carry analytic derivatives; everything else falls
/// back to central differences with step `1e-6 * max(1, |s|)`.
#[derive(Clone)]
pub struct ScalarFunction {
    eval: ScalarFn,
    deriv: Option<ScalarFn>,
    descr: String,
}

impl fmt::Debug for ScalarFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ScalarFunction({})", self.descr)
    }
}

impl ScalarFunction {
    pub fn from_fn(descr: impl Into<String>, f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        Self {
            eval: Arc::new(f),
            deriv: None,
            descr: descr.into(),
        }
    }

    pub fn from_fn_with_deriv(
        descr: impl Into<String>,
        f: impl Fn(f64) -> f64 + Send + Sync + 'static,
        df: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            eval: Arc::new(f),
            deriv: Some(Arc::new(df)),
            descr: descr.into(),
        }
    }

    /// `const{v}`
    pub fn constant(v: f64) -> Self {
        Self::from_fn_with_deriv(format!("const{{{v}}}"), move |_| v, |_| 0.0)
    }

    /// `poly{c0,c1,...}`: c0 + c1 s + c2 s^2 + ...
    pub fn poly(coeffs: Vec<f64>) -> Self {
        let descr = format!(
            "poly{{{}}}",
            coeffs
                .iter()
                .map(|c| c.to_string())
                .collect::<Vec<_>>()
                .join(",")
        );
        let dcoeffs: Vec<f64> = coeffs
            .iter()
            .enumerate()
            .skip(1)
            .map(|(i, &c)| i as f64 * c)
            .collect();
        let c2 = coeffs.clone();
        Self::from_fn_with_deriv(
            descr,
            move |s| horner(&c2, s),
            move |s| horner(&dcoeffs, s),
        )
    }

    /// `parabola_cap{M}`: M - s^2
    pub fn parabola_cap(m: f64) -> Self {
        Self::from_fn_with_deriv(format!("parabola_cap{{{m}}}"), move |s| m - s * s, |s| -2.0 * s)
    }

    /// `rational_cap{M}`: M - s^2/(1+s^2); tends to M - 1 at infinity
    pub fn rational_cap(m: f64) -> Self {
        Self::from_fn_with_deriv(
            format!("rational_cap{{{m}}}"),
            move |s| m - s * s / (1.0 + s * s),
            |s| {
                let d = 1.0 + s * s;
                -2.0 * s / (d * d)
            },
        )
    }

    /// `gauss_bump{k0}`: k0 * exp(-s^2)
    pub fn gauss_bump(k0: f64) -> Self {
        Self::from_fn_with_deriv(
            format!("gauss_bump{{{k0}}}"),
            move |s| k0 * (-s * s).exp(),
            move |s| -2.0 * s * k0 * (-s * s).exp(),
        )
    }

    /// Parse a catalog identifier of the form `name{p1,p2,...}`.
    ///
    /// Returns `Ok(None)` when `text` does not look like catalog syntax, so
    /// callers can fall back to the expression grammar.
    pub fn parse_catalog(text: &str) -> Result<Option<Self>> {
        let text = text.trim();
        let Some(open) = text.find('{') else {
            return Ok(None);
        };
        if !text.ends_with('}') {
            return Ok(None);
        }
        let name = &text[..open];
        if !name.chars().all(|c| c.is_ascii_lowercase() || c == '_') {
            return Ok(None);
        }
        let body = &text[open + 1..text.len() - 1];
        let params: Vec<f64> = if body.trim().is_empty() {
            Vec::new()
        } else {
            body.split(',')
                .map(|p| {
                    p.trim()
                        .parse::<f64>()
                        .map_err(|_| Error::invalid(format!("bad catalog parameter `{p}` in `{text}`")))
                })
                .collect::<Result<_>>()?
        };
        let want = |k: usize| -> Result<()> {
            if params.len() == k {
                Ok(())
            } else {
                Err(Error::invalid(format!(
                    "catalog `{name}` takes {k} parameter(s), got {}",
                    params.len()
                )))
            }
        };
        match name {
            "const" => {
                want(1)?;
                Ok(Some(Self::constant(params[0])))
            }
            "poly" => {
                if params.is_empty() {
                    return Err(Error::invalid("poly{} needs at least one coefficient"));
                }
                Ok(Some(Self::poly(params)))
            }
            "parabola_cap" => {
                want(1)?;
                Ok(Some(Self::parabola_cap(params[0])))
            }
            "rational_cap" => {
                want(1)?;
                Ok(Some(Self::rational_cap(params[0])))
            }
            "gauss_bump" => {
                want(1)?;
                Ok(Some(Self::gauss_bump(params[0])))
            }
            _ => Err(Error::invalid(format!("unknown catalog function `{name}`"))),
        }
    }

    pub fn eval(&self, s: f64) -> f64 {
        (self.eval)(s)
    }

    pub fn deriv(&self, s: f64) -> f64 {
        match &self.deriv {
            Some(d) => d(s),
            None => {
                let step = 1e-6 * s.abs().max(1.0);
                ((self.eval)(s + step) - (self.eval)(s - step)) / (2.0 * step)
            }
        }
    }

    pub fn describe(&self) -> &str {
        &self.descr
    }
}

fn horner(coeffs: &[f64], s: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, &c| acc * s + c)
}

/// The arc-length interval carrying the tube.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Interval {
    /// `[lo, hi]` with `lo < 0 < hi` (the profile maximum sits at 0).
    Bounded { lo: f64, hi: f64 },
    RealLine,
}

impl Interval {
    pub fn bounded(lo: f64, hi: f64) -> Result<Self> {
        if !(lo < 0.0) || !(hi > 0.0) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::invalid(format!(
                "interval [{lo}, {hi}] must have lo < 0 < hi"
            )));
        }
        Ok(Interval::Bounded { lo, hi })
    }

    pub fn is_bounded(&self) -> bool {
        matches!(self, Interval::Bounded { .. })
    }

    /// Endpoints of the interval, or of a probe window for the real line.
    pub fn window_or(&self, half_width: f64) -> (f64, f64) {
        match *self {
            Interval::Bounded { lo, hi } => (lo, hi),
            Interval::RealLine => (-half_width, half_width),
        }
    }
}

/// Scalar data of a deformed tube.
#[derive(Debug, Clone)]
pub struct TubeGeometry {
    pub interval: Interval,
    pub k: ScalarFunction,
    pub tau: ScalarFunction,
    pub alpha: ScalarFunction,
    pub h: ScalarFunction,
    max_h: f64,
    declared_limsup: Option<f64>,
}

impl TubeGeometry {
    /// Bundle the scalar data. The profile maximum `M = h(0)` must be
    /// positive; the full hypotheses are checked by [`validate_deformation`].
    pub fn new(
        interval: Interval,
        k: ScalarFunction,
        tau: ScalarFunction,
        alpha: ScalarFunction,
        h: ScalarFunction,
        declared_limsup: Option<f64>,
    ) -> Result<Self> {
        let max_h = h.eval(0.0);
        if !(max_h > 0.0) || !max_h.is_finite() {
            return Err(Error::invalid(format!("h(0) = {max_h} must be positive")));
        }
        Ok(Self {
            interval,
            k,
            tau,
            alpha,
            h,
            max_h,
            declared_limsup,
        })
    }

    /// Global maximum of the profile, attained at s = 0.
    pub fn max_h(&self) -> f64 {
        self.max_h
    }

    pub fn declared_limsup(&self) -> Option<f64> {
        self.declared_limsup
    }

    /// Combined twisting tau(s) + alpha'(s).
    pub fn twist(&self, s: f64) -> f64 {
        self.tau.eval(s) + self.alpha.deriv(s)
    }

    /// h'(s)/h(s)
    pub fn log_deriv_h(&self, s: f64) -> f64 {
        self.h.deriv(s) / self.h.eval(s)
    }

    /// z_alpha = (cos alpha, -sin alpha)
    pub fn z_alpha(&self, s: f64) -> [f64; 2] {
        let a = self.alpha.eval(s);
        [a.cos(), -a.sin()]
    }

    /// Jacobian density beta = 1 - eps h k <z_alpha, y>.
    pub fn beta(&self, s: f64, y: [f64; 2], eps: f64) -> f64 {
        let z = self.z_alpha(s);
        1.0 - eps * self.h.eval(s) * self.k.eval(s) * (z[0] * y[0] + z[1] * y[1])
    }

    /// Largest eps guaranteeing beta > delta on I x S:
    /// `(1 - delta) / (sup|k h| * rho_S)`, infinite for a straight tube.
    pub fn epsilon_max(&self, delta: f64, rho_s: f64) -> Result<f64> {
        if !(delta > 0.0 && delta < 1.0) {
            return Err(Error::invalid(format!("delta = {delta} must lie in (0, 1)")));
        }
        if !(rho_s > 0.0) {
            return Err(Error::invalid("rho_S must be positive"));
        }
        let (lo, hi) = self.interval.window_or(50.0);
        let samples = 8192;
        let mut sup_kh = 0.0f64;
        for i in 0..=samples {
            let s = lo + (hi - lo) * i as f64 / samples as f64;
            sup_kh = sup_kh.max((self.k.eval(s) * self.h.eval(s)).abs());
        }
        if sup_kh < 1e-300 {
            return Ok(f64::INFINITY);
        }
        Ok((1.0 - delta) / (sup_kh * rho_s))
    }

    /// Jacobian of the straightening map at (s, y) in the Frenet frame.
    ///
    /// Fails when beta <= 0 there (the map stops being a local
    /// diffeomorphism).
    pub fn jacobian(&self, s: f64, y: [f64; 2], eps: f64) -> Result<[[f64; 3]; 3]> {
        let beta = self.beta(s, y, eps);
        if !(beta > 0.0) {
            return Err(Error::Singular(format!(
                "beta = {beta:.6e} at s = {s}, y = ({}, {}), eps = {eps}",
                y[0], y[1]
            )));
        }
        let a = self.alpha.eval(s);
        let (sin_a, cos_a) = a.sin_cos();
        let z = [cos_a, -sin_a];
        let zp = [sin_a, cos_a];
        let h = self.h.eval(s);
        let hp = self.h.deriv(s);
        let tw = self.twist(s);
        let zy = z[0] * y[0] + z[1] * y[1];
        let zpy = zp[0] * y[0] + zp[1] * y[1];
        Ok([
            [
                beta,
                -eps * h * tw * zpy + eps * hp * zy,
                eps * h * tw * zy + eps * hp * zpy,
            ],
            [0.0, eps * h * cos_a, eps * h * sin_a],
            [0.0, -eps * h * sin_a, eps * h * cos_a],
        ])
    }

    /// Closed-form inverse of [`Self::jacobian`].
    pub fn jacobian_inverse(&self, s: f64, y: [f64; 2], eps: f64) -> Result<[[f64; 3]; 3]> {
        let beta = self.beta(s, y, eps);
        if !(beta > 0.0) {
            return Err(Error::Singular(format!(
                "beta = {beta:.6e} at s = {s}, y = ({}, {}), eps = {eps}",
                y[0], y[1]
            )));
        }
        let a = self.alpha.eval(s);
        let (sin_a, cos_a) = a.sin_cos();
        let h = self.h.eval(s);
        let lg = self.h.deriv(s) / h;
        let tw = self.twist(s);
        Ok([
            [
                1.0 / beta,
                (tw * y[1] - lg * y[0]) / beta,
                (-tw * y[0] - lg * y[1]) / beta,
            ],
            [0.0, cos_a / (eps * h), -sin_a / (eps * h)],
            [0.0, sin_a / (eps * h), cos_a / (eps * h)],
        ])
    }
}

/// Outcome of one sampled hypothesis check.
#[derive(Debug, Clone, Serialize)]
pub struct Clause {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

/// Sampled validation of the deformation profile.
///
/// A sampled check can falsify the hypotheses but not prove them; a report
/// with `valid = true` means "consistent with the hypotheses on the grid".
#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    pub valid: bool,
    pub clauses: Vec<Clause>,
    pub max_value: f64,
    pub quadratic_coefficient: f64,
    pub sup_log_derivative: f64,
    pub limsup_estimate: Option<f64>,
}

impl ValidationReport {
    pub fn failing_clause(&self) -> Option<&Clause> {
        self.clauses.iter().find(|c| !c.passed)
    }
}

/// Check the deformation hypotheses on a sampling grid:
/// positivity, a single global maximum at s = 0, bounded h'/h, quadratic
/// contact `h = M - s^2 + O(|s|^3)` (unit coefficient), and for the real
/// line a limsup at infinity strictly below M.
pub fn validate_deformation(
    h: &ScalarFunction,
    interval: Interval,
    samples: usize,
) -> ValidationReport {
    let samples = samples.max(64);
    let m = h.eval(0.0);
    let (lo, hi) = interval.window_or(20.0);

    let mut grid: Vec<f64> = (0..=samples)
        .map(|i| lo + (hi - lo) * i as f64 / samples as f64)
        .collect();
    // Geometric refinement near the maximum. Floored at 1e-3: below that a
    // higher-order contact is indistinguishable from M in f64, and the
    // contact-order question belongs to the quadratic_contact clause.
    let mut r = 0.5f64.min(hi.min(-lo));
    while r > 1e-3 {
        grid.push(r);
        grid.push(-r);
        r *= 0.5;
    }

    let mut clauses = Vec::new();

    let mut min_h = f64::MAX;
    let mut argmin = 0.0;
    for &s in &grid {
        let v = h.eval(s);
        if v < min_h {
            min_h = v;
            argmin = s;
        }
    }
    let positive = min_h > 0.0;
    clauses.push(Clause {
        name: "positivity".into(),
        passed: positive,
        detail: format!("min h = {min_h:.6e} at s = {argmin:.4}"),
    });

    let mut max_off = f64::MIN;
    let mut argmax_off = 0.0;
    for &s in &grid {
        if s.abs() < 1e-9 {
            continue;
        }
        let v = h.eval(s);
        if v > max_off {
            max_off = v;
            argmax_off = s;
        }
    }
    let single_max = max_off < m;
    clauses.push(Clause {
        name: "single_global_max".into(),
        passed: single_max,
        detail: if single_max {
            format!("h(0) = {m:.6} strictly dominates the grid")
        } else {
            format!("h({argmax_off:.4}) = {max_off:.6} >= h(0) = {m:.6}")
        },
    });

    let mut sup_lg = 0.0f64;
    let mut lg_finite = true;
    for &s in &grid {
        let v = h.eval(s);
        if v <= 0.0 {
            continue; // positivity clause already failing
        }
        let lg = (h.deriv(s) / v).abs();
        if !lg.is_finite() {
            lg_finite = false;
        }
        sup_lg = sup_lg.max(lg);
    }
    clauses.push(Clause {
        name: "log_derivative_bounded".into(),
        passed: lg_finite,
        detail: format!("sup |h'/h| = {sup_lg:.6e} on the grid"),
    });

    // quadratic contact: (M - h(s))/s^2 -> 1 as s -> 0
    let mut coeffs = Vec::new();
    let mut s = 0.01f64;
    while s >= 0.001 {
        for sign in [-1.0, 1.0] {
            let x = sign * s;
            coeffs.push((m - h.eval(x)) / (x * x));
        }
        s *= 0.8;
    }
    let coeff = coeffs.iter().sum::<f64>() / coeffs.len() as f64;
    let quad_ok = (coeff - 1.0).abs() <= 0.02;
    clauses.push(Clause {
        name: "quadratic_contact".into(),
        passed: quad_ok,
        detail: format!("(M - h)/s^2 tends to {coeff:.6} (expected 1)"),
    });

    let mut limsup_estimate = None;
    if !interval.is_bounded() {
        let mut n_hat = f64::MIN;
        let mut t = 50.0f64;
        while t <= 5_000.0 {
            n_hat = n_hat.max(h.eval(t)).max(h.eval(-t));
            t *= 1.25;
        }
        limsup_estimate = Some(n_hat);
        // A finite probe can only estimate the limsup; demand a visible
        // margin below M so profiles creeping back to M get flagged.
        let tail_ok = n_hat < m - 1e-3 * m.abs().max(1.0);
        clauses.push(Clause {
            name: "limsup_below_max".into(),
            passed: tail_ok,
            detail: format!("limsup estimate {n_hat:.6} vs M = {m:.6}"),
        });
    }

    let valid = clauses.iter().all(|c| c.passed);
    ValidationReport {
        valid,
        clauses,
        max_value: m,
        quadratic_coefficient: coeff,
        sup_log_derivative: sup_lg,
        limsup_estimate,
    }
}

/// One Frenet frame extracted from curve samples.
///
/// Normal, binormal and torsion are `None` where the curvature falls below
/// `1e-10` (the frame is undefined there; the gap is reported, not guessed).
#[derive(Debug, Clone)]
pub struct FrameSample {
    pub s: f64,
    pub tangent: [f64; 3],
    pub normal: Option<[f64; 3]>,
    pub binormal: Option<[f64; 3]>,
    pub curvature: f64,
    pub torsion: Option<f64>,
}

/// Extract (T, N, B, k, tau) from samples of an arc-length parameterized
/// curve on a uniform grid, by central finite differences.
///
/// This is validation input only: it lets a user confirm that an embedded
/// curve matches the scalar functions fed to the operators.
pub fn frenet_from_curve(samples: &[(f64, [f64; 3])]) -> Result<Vec<FrameSample>> {
    if samples.len() < 5 {
        return Err(Error::invalid("need at least 5 curve samples"));
    }
    let step = samples[1].0 - samples[0].0;
    if !(step > 0.0) {
        return Err(Error::invalid("arc-length samples must be increasing"));
    }
    for w in samples.windows(2) {
        if ((w[1].0 - w[0].0) - step).abs() > 1e-9 * step.max(1.0) {
            return Err(Error::invalid("curve samples must sit on a uniform grid"));
        }
    }

    let pt = |i: usize| samples[i].1;
    let sub = |a: [f64; 3], b: [f64; 3]| [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
    let scale = |a: [f64; 3], f: f64| [a[0] * f, a[1] * f, a[2] * f];
    let dot3 = |a: [f64; 3], b: [f64; 3]| a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
    let cross = |a: [f64; 3], b: [f64; 3]| {
        [
            a[1] * b[2] - a[2] * b[1],
            a[2] * b[0] - a[0] * b[2],
            a[0] * b[1] - a[1] * b[0],
        ]
    };
    let norm3 = |a: [f64; 3]| dot3(a, a).sqrt();

    let mut frames = Vec::new();
    for i in 2..samples.len() - 2 {
        let rp = scale(sub(pt(i + 1), pt(i - 1)), 1.0 / (2.0 * step));
        let rpp = scale(
            [
                pt(i + 1)[0] - 2.0 * pt(i)[0] + pt(i - 1)[0],
                pt(i + 1)[1] - 2.0 * pt(i)[1] + pt(i - 1)[1],
                pt(i + 1)[2] - 2.0 * pt(i)[2] + pt(i - 1)[2],
            ],
            1.0 / (step * step),
        );
        let rppp = scale(
            [
                pt(i + 2)[0] - 2.0 * pt(i + 1)[0] + 2.0 * pt(i - 1)[0] - pt(i - 2)[0],
                pt(i + 2)[1] - 2.0 * pt(i + 1)[1] + 2.0 * pt(i - 1)[1] - pt(i - 2)[1],
                pt(i + 2)[2] - 2.0 * pt(i + 1)[2] + 2.0 * pt(i - 1)[2] - pt(i - 2)[2],
            ],
            1.0 / (2.0 * step * step * step),
        );

        let tangent = scale(rp, 1.0 / norm3(rp));
        let curvature = norm3(rpp);

        if curvature < 1e-10 {
            frames.push(FrameSample {
                s: samples[i].0,
                tangent,
                normal: None,
                binormal: None,
                curvature,
                torsion: None,
            });
            continue;
        }

        // Gram-Schmidt the normal against the tangent to keep the frame
        // orthonormal at discretization accuracy.
        let mut normal = sub(rpp, scale(tangent, dot3(rpp, tangent)));
        normal = scale(normal, 1.0 / norm3(normal));
        let binormal = cross(tangent, normal);

        let torsion = dot3(cross(rp, rpp), rppp) / (curvature * curvature);

        frames.push(FrameSample {
            s: samples[i].0,
            tangent,
            normal: Some(normal),
            binormal: Some(binormal),
            curvature,
            torsion: Some(torsion),
        });
    }
    Ok(frames)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn straight_geometry() -> TubeGeometry {
        TubeGeometry::new(
            Interval::bounded(-1.0, 1.0).unwrap(),
            ScalarFunction::constant(0.0),
            ScalarFunction::constant(0.0),
            ScalarFunction::constant(0.0),
            ScalarFunction::parabola_cap(2.0),
            None,
        )
        .unwrap()
    }

    fn curved_geometry() -> TubeGeometry {
        TubeGeometry::new(
            Interval::bounded(-1.0, 1.0).unwrap(),
            ScalarFunction::poly(vec![0.3, 0.0, -0.3]), // 0.3 (1 - s^2)
            ScalarFunction::constant(0.0),
            ScalarFunction::poly(vec![0.0, 0.5]), // alpha' = 0.5
            ScalarFunction::parabola_cap(2.0),
            None,
        )
        .unwrap()
    }

    #[test]
    fn catalog_parsing() {
        let h = ScalarFunction::parse_catalog("parabola_cap{2}").unwrap().unwrap();
        assert_eq!(h.eval(0.5), 2.0 - 0.25);
        let p = ScalarFunction::parse_catalog("poly{1, 2, 3}").unwrap().unwrap();
        assert_eq!(p.eval(2.0), 1.0 + 4.0 + 12.0);
        assert_eq!(p.deriv(2.0), 2.0 + 12.0);
        assert!(ScalarFunction::parse_catalog("2 - s^2").unwrap().is_none());
        assert!(ScalarFunction::parse_catalog("nope{1}").is_err());
        assert!(ScalarFunction::parse_catalog("const{1,2}").is_err());
    }

    #[test]
    fn finite_difference_derivative_matches_analytic() {
        let f = ScalarFunction::from_fn("tanh(s) * s", |s| s.tanh() * s);
        for &s in &[-2.0f64, -0.3, 0.0, 0.7, 3.0] {
            let exact = s.tanh() + s / s.cosh().powi(2);
            assert!(
                (f.deriv(s) - exact).abs() <= 1e-6 * exact.abs().max(1.0),
                "at s = {s}"
            );
        }
    }

    #[test]
    fn validate_accepts_parabola_cap() {
        let rep = validate_deformation(
            &ScalarFunction::parabola_cap(2.0),
            Interval::bounded(-1.0, 1.0).unwrap(),
            4096,
        );
        assert!(rep.valid, "{:?}", rep.failing_clause());
        assert!((rep.max_value - 2.0).abs() < 1e-12);
        assert!((rep.quadratic_coefficient - 1.0).abs() < 1e-10);
    }

    #[test]
    fn validate_accepts_rational_cap_on_real_line() {
        let rep = validate_deformation(
            &ScalarFunction::rational_cap(2.0),
            Interval::RealLine,
            4096,
        );
        assert!(rep.valid, "{:?}", rep.failing_clause());
        assert!((rep.quadratic_coefficient - 1.0).abs() < 0.001);
        let n = rep.limsup_estimate.unwrap();
        assert!((n - 1.0).abs() < 0.01, "limsup estimate {n}");
    }

    #[test]
    fn validate_rejects_quartic_contact() {
        let h = ScalarFunction::from_fn("2 - s^4", |s| 2.0 - s.powi(4));
        let rep = validate_deformation(&h, Interval::bounded(-1.0, 1.0).unwrap(), 4096);
        assert!(!rep.valid);
        assert_eq!(rep.failing_clause().unwrap().name, "quadratic_contact");
        assert!(rep.quadratic_coefficient.abs() < 0.01);
    }

    #[test]
    fn validate_rejects_each_clause_individually() {
        // (i) positivity
        let rep = validate_deformation(
            &ScalarFunction::from_fn("0.5 - s^2", |s| 0.5 - s * s),
            Interval::bounded(-1.0, 1.0).unwrap(),
            2048,
        );
        assert!(rep.clauses.iter().any(|c| c.name == "positivity" && !c.passed));

        // (ii) single global maximum at 0
        let rep = validate_deformation(
            &ScalarFunction::from_fn("max off origin", |s| 2.0 - (s - 0.3) * (s - 0.3)),
            Interval::bounded(-1.0, 1.0).unwrap(),
            2048,
        );
        assert!(rep
            .clauses
            .iter()
            .any(|c| c.name == "single_global_max" && !c.passed));

        // (iii) limsup at infinity must stay below M
        let rep = validate_deformation(
            &ScalarFunction::from_fn("returns to M", |s| 2.0 - s * s / (1.0 + s.powi(4))),
            Interval::RealLine,
            2048,
        );
        assert!(rep
            .clauses
            .iter()
            .any(|c| c.name == "limsup_below_max" && !c.passed));
    }

    #[test]
    fn beta_trivial_cases() {
        let g = straight_geometry();
        assert_eq!(g.beta(0.3, [0.5, -0.2], 0.1), 1.0); // k = 0

        let unit = TubeGeometry::new(
            Interval::bounded(-1.0, 1.0).unwrap(),
            ScalarFunction::constant(1.0),
            ScalarFunction::constant(0.0),
            ScalarFunction::constant(0.0),
            ScalarFunction::constant(1.0),
            None,
        )
        .unwrap();
        assert!((unit.beta(0.0, [1.0, 0.0], 0.3) - 0.7).abs() < 1e-15);
        assert_eq!(unit.beta(0.0, [1.0, 0.0], 0.0), 1.0); // eps = 0
    }

    #[test]
    fn epsilon_max_cases() {
        let unit = TubeGeometry::new(
            Interval::bounded(-1.0, 1.0).unwrap(),
            ScalarFunction::constant(1.0),
            ScalarFunction::constant(0.0),
            ScalarFunction::constant(0.0),
            ScalarFunction::constant(1.0),
            None,
        )
        .unwrap();
        assert!((unit.epsilon_max(0.5, 1.0).unwrap() - 0.5).abs() < 1e-12);

        let straight = straight_geometry();
        assert!(straight.epsilon_max(0.5, 1.0).unwrap().is_infinite());

        // k = 0.3 (1 - s^2), h = 2 - s^2: max |k h| on a fine grid
        let g = curved_geometry();
        let mut sup = 0.0f64;
        for i in 0..=100_000 {
            let s = -1.0 + 2.0 * i as f64 / 100_000.0;
            sup = sup.max((0.3 * (1.0 - s * s) * (2.0 - s * s)).abs());
        }
        let expected = 0.9 / (sup * 0.5);
        let got = g.epsilon_max(0.1, 0.5).unwrap();
        assert!((got - expected).abs() < 1e-6 * expected, "{got} vs {expected}");
        assert!(g.epsilon_max(1.5, 1.0).is_err());
    }

    #[test]
    fn jacobian_straight_untwisted() {
        let g = TubeGeometry::new(
            Interval::bounded(-1.0, 1.0).unwrap(),
            ScalarFunction::constant(0.0),
            ScalarFunction::constant(0.0),
            ScalarFunction::constant(0.0),
            ScalarFunction::constant(1.0),
            None,
        )
        .unwrap();
        let eps = 0.05;
        let j = g.jacobian(0.2, [0.3, -0.4], eps).unwrap();
        let expect = [[1.0, 0.0, 0.0], [0.0, eps, 0.0], [0.0, 0.0, eps]];
        for r in 0..3 {
            for c in 0..3 {
                assert!((j[r][c] - expect[r][c]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn jacobian_identities_at_random_points() {
        use crate::numerics::DeterministicRng;
        let g = TubeGeometry::new(
            Interval::bounded(-1.0, 1.0).unwrap(),
            ScalarFunction::poly(vec![0.3, 0.0, -0.3]),
            ScalarFunction::constant(0.2),
            ScalarFunction::poly(vec![0.0, 0.5]),
            ScalarFunction::parabola_cap(2.0),
            None,
        )
        .unwrap();
        let eps = 0.1;
        let mut rng = DeterministicRng::new(7);
        for _ in 0..10_000 {
            let s = -1.0 + 2.0 * rng.uniform();
            let y = [rng.uniform() - 0.5, rng.uniform() - 0.5];
            let j = g.jacobian(s, y, eps).unwrap();
            let jinv = g.jacobian_inverse(s, y, eps).unwrap();

            let det = j[0][0] * (j[1][1] * j[2][2] - j[1][2] * j[2][1])
                - j[0][1] * (j[1][0] * j[2][2] - j[1][2] * j[2][0])
                + j[0][2] * (j[1][0] * j[2][1] - j[1][1] * j[2][0]);
            let h = g.h.eval(s);
            let expect = eps * eps * h * h * g.beta(s, y, eps);
            assert!(
                (det - expect).abs() <= 1e-12 * expect.abs().max(1.0),
                "det {det} vs {expect}"
            );

            for r in 0..3 {
                for c in 0..3 {
                    let mut acc = 0.0;
                    for t in 0..3 {
                        acc += j[r][t] * jinv[t][c];
                    }
                    let want = if r == c { 1.0 } else { 0.0 };
                    assert!((acc - want).abs() < 1e-10, "JJ^-1[{r}][{c}] = {acc}");
                }
            }
        }
    }

    #[test]
    fn beta_uniform_bound_attained_on_adversarial_grid() {
        let g = curved_geometry();
        let eps = 0.1;
        let rho = 0.5;
        // sup |k h| for this catalog pair sits at s = 0
        let sup_kh = 0.6;
        let bound = eps * sup_kh * rho;
        let mut worst = 0.0f64;
        for i in 0..=400 {
            let s = -1.0 + 2.0 * i as f64 / 400.0;
            for t in 0..=256 {
                let phi = 2.0 * std::f64::consts::PI * t as f64 / 256.0;
                let y = [rho * phi.cos(), rho * phi.sin()];
                worst = worst.max((g.beta(s, y, eps) - 1.0).abs());
            }
        }
        assert!(worst <= bound * (1.0 + 1e-12));
        assert!(worst >= 0.99 * bound, "bound not attained: {worst} vs {bound}");
    }

    #[test]
    fn frenet_straight_line_degenerate() {
        let step = 1e-3;
        let samples: Vec<(f64, [f64; 3])> = (0..200)
            .map(|i| {
                let s = i as f64 * step;
                (s, [s, 0.0, 0.0])
            })
            .collect();
        let frames = frenet_from_curve(&samples).unwrap();
        for f in &frames {
            assert!(f.curvature < 1e-9);
            assert!(f.torsion.is_none());
            assert!(f.normal.is_none());
        }
    }

    #[test]
    fn frenet_circle_radius_two() {
        let r = 2.0;
        let step = 1e-3;
        let samples: Vec<(f64, [f64; 3])> = (0..4000)
            .map(|i| {
                let s = i as f64 * step;
                (s, [r * (s / r).cos(), r * (s / r).sin(), 0.0])
            })
            .collect();
        let frames = frenet_from_curve(&samples).unwrap();
        for f in frames.iter().step_by(100) {
            assert!((f.curvature - 0.5).abs() < 1e-4, "k = {}", f.curvature);
            assert!(f.torsion.unwrap().abs() < 1e-4);
        }
    }

    #[test]
    fn frenet_helix_curvature_torsion() {
        // unit-speed helix with a = b = 1: k = tau = 1/2
        let (a, b) = (1.0f64, 1.0f64);
        let c = (a * a + b * b).sqrt();
        let step = 1e-3;
        let samples: Vec<(f64, [f64; 3])> = (0..6000)
            .map(|i| {
                let s = i as f64 * step;
                (s, [a * (s / c).cos(), a * (s / c).sin(), b * s / c])
            })
            .collect();
        let frames = frenet_from_curve(&samples).unwrap();
        let k_ref = a / (a * a + b * b);
        let t_ref = b / (a * a + b * b);
        for f in frames.iter().step_by(250) {
            assert!((f.curvature - k_ref).abs() < 1e-4);
            assert!((f.torsion.unwrap() - t_ref).abs() < 1e-4);
            // orthonormal frame
            let t = f.tangent;
            let n = f.normal.unwrap();
            let bnm = f.binormal.unwrap();
            let d = |u: [f64; 3], v: [f64; 3]| u[0] * v[0] + u[1] * v[1] + u[2] * v[2];
            assert!((d(t, t) - 1.0).abs() < 1e-8);
            assert!((d(n, n) - 1.0).abs() < 1e-8);
            assert!((d(bnm, bnm) - 1.0).abs() < 1e-8);
            assert!(d(t, n).abs() < 1e-8);
            assert!(d(t, bnm).abs() < 1e-8);
            assert!(d(n, bnm).abs() < 1e-8);
        }
    }
}
