//! Roots of the depressed cubic `P_λ(μ) = μ³ + μ + λ`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type ComplexScalar = Complex64;

/// Two roots closer than this (times `max(1, |λ|)`) are merged.
pub const MULTIPLICITY_TOL: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Multiplicity {
    AllSimple,
    /// `roots[index]` and `roots[index + 1]` coincide.
    Double(usize),
    Triple,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CubicRoots {
    pub lambda: ComplexScalar,
    pub roots: [ComplexScalar; 3],
    pub multiplicity: Multiplicity,
    pub residual: f64,
}

impl CubicRoots {
    /// Value of the repeated root, if any.
    pub fn double_root(&self) -> Option<ComplexScalar> {
        match self.multiplicity {
            Multiplicity::Double(i) => Some(self.roots[i]),
            _ => None,
        }
    }

    /// Build from caller-supplied roots; multiplicity is detected, not trusted.
    pub fn from_roots(lambda: ComplexScalar, roots: [ComplexScalar; 3]) -> Self {
        let mut roots = roots;
        sort_canonical(&mut roots);
        let multiplicity = detect_multiplicity(lambda, &roots);
        let residual = roots.iter().map(|&m| poly(lambda, m).norm()).fold(0.0, f64::max);
        CubicRoots { lambda, roots, multiplicity, residual }
    }

    pub fn ensure_not_triple(&self) -> Result<()> {
        if self.multiplicity == Multiplicity::Triple {
            return Err(Error::Consistency(format!(
                "triple root reported for lambda = {}",
                self.lambda
            )));
        }
        Ok(())
    }
}

#[inline]
pub fn poly(lambda: ComplexScalar, mu: ComplexScalar) -> ComplexScalar {
    mu * mu * mu + mu + lambda
}

#[inline]
fn dpoly(mu: ComplexScalar) -> ComplexScalar {
    3.0 * mu * mu + 1.0
}

pub fn discriminant(lambda: ComplexScalar) -> ComplexScalar {
    -4.0 - 27.0 * lambda * lambda
}

pub fn girard_residuals(roots: &CubicRoots) -> (f64, f64, f64) {
    let [a, b, c] = roots.roots;
    (
        (a + b + c).norm(),
        (a * b + b * c + a * c - 1.0).norm(),
        (a * b * c + roots.lambda).norm(),
    )
}

fn sort_canonical(roots: &mut [ComplexScalar; 3]) {
    roots.sort_by(|x, y| x.re.total_cmp(&y.re).then(x.im.total_cmp(&y.im)));
}

fn detect_multiplicity(lambda: ComplexScalar, roots: &[ComplexScalar; 3]) -> Multiplicity {
    let tol = MULTIPLICITY_TOL * lambda.norm().max(1.0);
    let close = |i: usize, j: usize| (roots[i] - roots[j]).norm() < tol;
    match (close(0, 1), close(1, 2), close(0, 2)) {
        (true, true, _) | (true, _, true) | (_, true, true) => Multiplicity::Triple,
        (true, false, false) => Multiplicity::Double(0),
        (false, true, false) => Multiplicity::Double(1),
        // (0, 2) close but 1 sits between them in sort order: reorder below.
        (false, false, true) => Multiplicity::Double(0),
        _ => Multiplicity::AllSimple,
    }
}

/// Cardano with one Newton polish per root.
pub fn solve_depressed_cubic(lambda: ComplexScalar) -> CubicRoots {
    assert!(
        lambda.re.is_finite() && lambda.im.is_finite(),
        "lambda must be finite"
    );
    // u^3 = -q/2 ± sqrt(q^2/4 + p^3/27) with p = 1, q = lambda
    let s = (lambda * lambda / 4.0 + 1.0 / 27.0).sqrt();
    let w1 = -lambda / 2.0 + s;
    let w2 = -lambda / 2.0 - s;
    let w = if w1.norm() >= w2.norm() { w1 } else { w2 };
    let u = w.cbrt();
    let omega = Complex64::from_polar(1.0, 2.0 * std::f64::consts::PI / 3.0);
    let mut roots = [Complex64::new(0.0, 0.0); 3];
    let mut uk = u;
    for r in roots.iter_mut() {
        *r = uk - 1.0 / (3.0 * uk);
        uk *= omega;
    }
    for r in roots.iter_mut() {
        let d = dpoly(*r);
        if d.norm() > 1e-6 {
            let step = poly(lambda, *r) / d;
            let cand = *r - step;
            if poly(lambda, cand).norm() <= poly(lambda, *r).norm() {
                *r = cand;
            }
        }
        snap(r);
    }
    sort_canonical(&mut roots);
    let mut multiplicity = detect_multiplicity(lambda, &roots);
    if let Multiplicity::Double(_) = multiplicity {
        let gap = |k: usize| {
            let others = [(k + 1) % 3, (k + 2) % 3];
            others.iter().map(|&o| (roots[o] - roots[k]).norm()).fold(f64::INFINITY, f64::min)
        };
        let k = (0..3).max_by(|&x, &y| gap(x).total_cmp(&gap(y))).unwrap();
        // The simple root is well conditioned; the double one follows from Σμ = 0.
        let simple = roots[k];
        let mut sigma = -simple / 2.0;
        snap(&mut sigma);
        roots = [sigma, sigma, simple];
        sort_canonical(&mut roots);
        multiplicity = if roots[0] == roots[1] {
            Multiplicity::Double(0)
        } else {
            Multiplicity::Double(1)
        };
    }
    if multiplicity == Multiplicity::Triple {
        panic!("triple root for mu^3 + mu + lambda is impossible (lambda = {lambda})");
    }
    let residual = roots.iter().map(|&m| poly(lambda, m).norm()).fold(0.0, f64::max);
    CubicRoots { lambda, roots, multiplicity, residual }
}

fn snap(z: &mut ComplexScalar) {
    let scale = 8.0 * f64::EPSILON * z.norm().max(1.0);
    if z.re.abs() < scale {
        z.re = 0.0;
    }
    if z.im.abs() < scale {
        z.im = 0.0;
    }
}

/// Parse `a+bi`, `a`, `bi`, `-i`, `1e-3-2.5i`.
pub fn parse_complex(text: &str) -> Option<ComplexScalar> {
    let t: String = text.chars().filter(|c| !c.is_whitespace()).collect();
    if t.is_empty() {
        return None;
    }
    if let Some(body) = t.strip_suffix(['i', 'j']) {
        // find the split between real and imaginary parts: last +/- not after an exponent
        let bytes = body.as_bytes();
        let mut split = None;
        for idx in (1..bytes.len()).rev() {
            let ch = bytes[idx];
            if (ch == b'+' || ch == b'-') && !matches!(bytes[idx - 1], b'e' | b'E') {
                split = Some(idx);
                break;
            }
        }
        let (re_part, im_part) = match split {
            Some(idx) => (&body[..idx], &body[idx..]),
            None => ("", body),
        };
        let re = if re_part.is_empty() { 0.0 } else { re_part.parse().ok()? };
        let im = match im_part {
            "" | "+" => 1.0,
            "-" => -1.0,
            s => s.parse().ok()?,
        };
        Some(Complex64::new(re, im)).filter(|z| z.re.is_finite() && z.im.is_finite())
    } else {
        let re: f64 = t.parse().ok()?;
        re.is_finite().then(|| Complex64::new(re, 0.0))
    }
}

pub fn format_complex(z: ComplexScalar) -> String {
    if z.im < 0.0 || (z.im == 0.0 && z.im.is_sign_negative()) {
        format!("{}-{}i", z.re, -z.im)
    } else {
        format!("{}+{}i", z.re, z.im)
    }
}
