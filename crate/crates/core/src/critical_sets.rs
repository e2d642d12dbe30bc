//! Critical length sets: the lattice families and the two transcendental families.

use std::cmp::Ordering;
use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cubic::ComplexScalar;
use crate::error::{Error, Result};

pub const WITNESS_TOL: f64 = 1e-10;
pub const L2_IMAG_TOL: f64 = 1e-8;
pub const L2_MIN: f64 = 1e-6;
pub const DEFAULT_MAX_ITER: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "tag")]
pub enum CriticalSetId {
    NRosier,
    RBeta { beta: f64 },
    NStar,
    NDagger,
}

impl CriticalSetId {
    pub fn rank(&self) -> u8 {
        match self {
            CriticalSetId::NRosier => 0,
            CriticalSetId::RBeta { .. } => 1,
            CriticalSetId::NStar => 2,
            CriticalSetId::NDagger => 3,
        }
    }

    pub fn symbol(&self) -> &'static str {
        match self {
            CriticalSetId::NRosier => "N",
            CriticalSetId::RBeta { .. } => "R_beta",
            CriticalSetId::NStar => "N*",
            CriticalSetId::NDagger => "N†",
        }
    }

    fn exponent(&self) -> Option<i32> {
        match self {
            CriticalSetId::NStar => Some(1),
            CriticalSetId::NDagger => Some(2),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "branch", rename_all = "snake_case")]
pub enum Branch {
    /// `2π/√(3(1+β)) · √(k²+kl+l²)`
    Lattice { k: u32, l: u32 },
    /// `kπ/√(1+β)`
    Harmonic { k: u32 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WitnessData {
    Integer { branches: Vec<Branch> },
    Complex { a: ComplexScalar, b: ComplexScalar },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverProvenance {
    pub seed: [ComplexScalar; 2],
    pub iterations: usize,
    pub max_iter: usize,
    pub tol: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticalWitness {
    pub set: CriticalSetId,
    #[serde(rename = "L")]
    pub length: f64,
    pub witness: WitnessData,
    pub lambda: Option<ComplexScalar>,
    pub residual: f64,
    #[serde(rename = "L_squared_imag")]
    pub l_squared_imag: f64,
    #[serde(skip)]
    pub provenance: Option<SolverProvenance>,
}

impl CriticalWitness {
    /// `(a, b, c)` with `c = -(a + b)`.
    pub fn triple(&self) -> Option<[ComplexScalar; 3]> {
        match self.witness {
            WitnessData::Complex { a, b } => Some([a, b, -(a + b)]),
            WitnessData::Integer { .. } => None,
        }
    }

    /// Eigenvalue of the graph problem `λφ + φ' + φ''' = 0`. The stored `lambda` is the
    /// cubic parameter whose roots are `(a, b, c)/L`; the two differ by a sign.
    pub fn graph_eigenvalue(&self) -> Option<ComplexScalar> {
        self.lambda.map(|l| -l)
    }

    /// Recheck the defining relation; `tol` bounds the transcendental residual.
    pub fn validate(&self, tol: f64) -> std::result::Result<(), String> {
        if !(self.length.is_finite() && self.length > 0.0) {
            return Err(format!("length {} is not positive", self.length));
        }
        match (&self.witness, self.set) {
            (WitnessData::Integer { branches }, CriticalSetId::NRosier | CriticalSetId::RBeta { .. }) => {
                let beta = match self.set {
                    CriticalSetId::RBeta { beta } => beta,
                    _ => 0.0,
                };
                if branches.is_empty() {
                    return Err("no integer witness".into());
                }
                for br in branches {
                    if matches!(self.set, CriticalSetId::NRosier) && matches!(br, Branch::Harmonic { .. }) {
                        return Err("harmonic branch in the lattice set".into());
                    }
                    let expect = branch_length(*br, beta);
                    let rel = (expect - self.length).abs() / expect;
                    if rel > 1e-12 {
                        return Err(format!("length {} does not match {:?} (expected {expect})", self.length, br));
                    }
                }
                Ok(())
            }
            (WitnessData::Complex { a, b }, CriticalSetId::NStar | CriticalSetId::NDagger) => {
                let d = self.set.exponent().unwrap();
                let r = transcendental_residual(d, *a, *b);
                if !(r < tol) {
                    return Err(format!("residual {r:e} exceeds {tol:e}"));
                }
                let l2 = l_squared(*a, *b);
                if l2.im.abs() >= L2_IMAG_TOL || l2.re <= L2_MIN {
                    return Err(format!("L^2 = {l2} is not a positive real"));
                }
                let len2 = self.length * self.length;
                if (len2 - l2.re).abs() > 1e-8 * len2.max(1.0) {
                    return Err(format!("length {} inconsistent with L^2 = {}", self.length, l2.re));
                }
                Ok(())
            }
            _ => Err("witness kind does not match set".into()),
        }
    }
}

fn branch_length(br: Branch, beta: f64) -> f64 {
    match br {
        Branch::Lattice { k, l } => {
            let (k, l) = (k as f64, l as f64);
            2.0 * PI / (3.0 * (1.0 + beta)).sqrt() * (k * k + k * l + l * l).sqrt()
        }
        Branch::Harmonic { k } => k as f64 * PI / (1.0 + beta).sqrt(),
    }
}

pub fn rosier_length(k: u32, l: u32) -> f64 {
    branch_length(Branch::Lattice { k, l }, 0.0)
}

/// Cubic parameter whose roots are `(2πi/L)·(−(2k+l), k−l, k+2l)/3` at `L = rosier_length(k, l)`.
pub fn rosier_lambda(k: u32, l: u32) -> ComplexScalar {
    let w = 2.0 * PI / rosier_length(k, l);
    let (k, l) = (k as f64, l as f64);
    let p = (2.0 * k + l) * (k - l) * (k + 2.0 * l) / 27.0;
    Complex64::new(0.0, -w * w * w * p)
}

fn integer_witness(set: CriticalSetId, length: f64, branches: Vec<Branch>) -> CriticalWitness {
    let lambda = match (set, branches.first()) {
        (CriticalSetId::NRosier, Some(Branch::Lattice { k, l })) => Some(rosier_lambda(*k, *l)),
        _ => None,
    };
    CriticalWitness {
        set,
        length,
        witness: WitnessData::Integer { branches },
        lambda,
        residual: 0.0,
        l_squared_imag: 0.0,
        provenance: None,
    }
}

fn lattice_norms(max_norm: f64) -> Vec<(u64, u32, u32)> {
    let mut out = Vec::new();
    let mut k = 1u32;
    while (3 * k as u64 * k as u64) as f64 <= max_norm {
        let mut l = k;
        loop {
            let n = k as u64 * k as u64 + k as u64 * l as u64 + l as u64 * l as u64;
            if n as f64 > max_norm {
                break;
            }
            out.push((n, k, l));
            l += 1;
        }
        k += 1;
    }
    // ties in the norm keep the pair with the smallest k
    out.sort();
    out.dedup_by_key(|t| t.0);
    out
}

pub fn enumerate_rosier(l_max: f64) -> Vec<CriticalWitness> {
    if !(l_max > 0.0) {
        return Vec::new();
    }
    let max_norm = 3.0 * l_max * l_max / (4.0 * PI * PI) * (1.0 + 1e-12);
    lattice_norms(max_norm)
        .into_iter()
        .map(|(_, k, l)| (rosier_length(k, l), k, l))
        .filter(|&(len, _, _)| len <= l_max)
        .map(|(len, k, l)| integer_witness(CriticalSetId::NRosier, len, vec![Branch::Lattice { k, l }]))
        .collect()
}

pub fn enumerate_r_beta(beta: f64, l_max: f64) -> Result<Vec<CriticalWitness>> {
    if !(beta > -1.0) {
        return Err(Error::Domain(format!(
            "beta = {beta}: for beta = -1 the system is not exactly controllable in L2(0,L) for any L > 0, \
             and beta < -1 gives no real lengths"
        )));
    }
    let set = CriticalSetId::RBeta { beta };
    let mut entries: Vec<(f64, Branch)> = Vec::new();
    if l_max > 0.0 {
        let max_norm = 3.0 * (1.0 + beta) * l_max * l_max / (4.0 * PI * PI) * (1.0 + 1e-12);
        for (_, k, l) in lattice_norms(max_norm) {
            let br = Branch::Lattice { k, l };
            entries.push((branch_length(br, beta), br));
        }
        let mut k = 1u32;
        loop {
            let br = Branch::Harmonic { k };
            let len = branch_length(br, beta);
            if len > l_max * (1.0 + 1e-12) {
                break;
            }
            entries.push((len, br));
            k += 1;
        }
    }
    entries.retain(|e| e.0 <= l_max);
    entries.sort_by(|x, y| x.0.total_cmp(&y.0));
    let mut out: Vec<CriticalWitness> = Vec::new();
    for (len, br) in entries {
        match out.last_mut() {
            Some(w) if (w.length - len).abs() <= 1e-12 * len => {
                if let WitnessData::Integer { branches } = &mut w.witness {
                    branches.push(br);
                }
            }
            _ => out.push(integer_witness(set, len, vec![br])),
        }
    }
    Ok(out)
}

pub fn rosier_membership(length: f64, tol: f64) -> Option<(u32, u32)> {
    if !(length > 0.0) {
        return None;
    }
    let n = 3.0 * length * length / (4.0 * PI * PI);
    let bound = n.sqrt().ceil() as u32 + 1;
    let scale = n.max(1.0);
    for k in 1..=bound {
        for l in k..=bound {
            let q = (k * k + k * l + l * l) as f64;
            if (n - q).abs() <= tol * scale {
                return Some((k, l));
            }
        }
    }
    None
}

#[inline]
fn g(d: i32, z: ComplexScalar) -> ComplexScalar {
    z.powi(d) * z.exp()
}

#[inline]
fn dg(d: i32, z: ComplexScalar) -> ComplexScalar {
    if d == 1 {
        (1.0 + z) * z.exp()
    } else {
        (2.0 * z + z * z) * z.exp()
    }
}

fn residual_vec(d: i32, a: ComplexScalar, b: ComplexScalar) -> [ComplexScalar; 2] {
    let gc = g(d, -(a + b));
    [g(d, a) - gc, g(d, b) - gc]
}

/// `|g(a) − g(b)| + |g(b) − g(c)|` with `g(z) = z^d e^z`, `c = −(a+b)`.
pub fn transcendental_residual(d: i32, a: ComplexScalar, b: ComplexScalar) -> f64 {
    let c = -(a + b);
    (g(d, a) - g(d, b)).norm() + (g(d, b) - g(d, c)).norm()
}

pub fn l_squared(a: ComplexScalar, b: ComplexScalar) -> ComplexScalar {
    -(a * a + a * b + b * b)
}

fn norm2(v: [ComplexScalar; 2]) -> f64 {
    (v[0].norm_sqr() + v[1].norm_sqr()).sqrt()
}

/// Damped Newton for `g(a) = g(b) = g(−(a+b))`.
pub fn newton_transcendental(
    set: CriticalSetId,
    seed: (ComplexScalar, ComplexScalar),
    max_iter: usize,
    tol: f64,
) -> Option<CriticalWitness> {
    let d = set.exponent()?;
    let (mut a, mut b) = seed;
    if !(a.re.is_finite() && a.im.is_finite() && b.re.is_finite() && b.im.is_finite()) {
        return None;
    }
    let mut f = residual_vec(d, a, b);
    let mut fnorm = norm2(f);
    let mut iterations = 0;
    let mut converged_at = None;
    while iterations < max_iter {
        if !fnorm.is_finite() {
            return None;
        }
        if fnorm < tol && converged_at.is_none() {
            converged_at = Some(iterations);
        }
        // a few extra polishing steps once inside tolerance
        if converged_at.map_or(false, |k| iterations >= k + 2) {
            break;
        }
        let c = -(a + b);
        let gc = dg(d, c);
        let j11 = dg(d, a) + gc;
        let j22 = dg(d, b) + gc;
        let det = j11 * j22 - gc * gc;
        if !(det.norm() > 1e-300) || !det.re.is_finite() {
            break;
        }
        let da = -(j22 * f[0] - gc * f[1]) / det;
        let db = -(-gc * f[0] + j11 * f[1]) / det;
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..=20 {
            let (na, nb) = (a + t * da, b + t * db);
            let nf = residual_vec(d, na, nb);
            let nn = norm2(nf);
            if nn.is_finite() && nn < fnorm {
                a = na;
                b = nb;
                f = nf;
                fnorm = nn;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        iterations += 1;
        if !accepted {
            break;
        }
    }
    let residual = transcendental_residual(d, a, b);
    if !(residual < tol) {
        return None;
    }
    let c = -(a + b);
    if a.norm() + b.norm() < 1e-8 {
        return None;
    }
    if a.im.abs().max(b.im.abs()).max(c.im.abs()) < 1e-9 {
        return None;
    }
    let l2 = l_squared(a, b);
    if l2.im.abs() >= L2_IMAG_TOL || l2.re <= L2_MIN {
        return None;
    }
    let length = l2.re.sqrt();
    let lambda = -(a * b * c) / (length * length * length);
    Some(CriticalWitness {
        set,
        length,
        witness: WitnessData::Complex { a, b },
        lambda: Some(lambda),
        residual,
        l_squared_imag: l2.im.abs(),
        provenance: Some(SolverProvenance {
            seed: [seed.0, seed.1],
            iterations: converged_at.unwrap_or(iterations),
            max_iter,
            tol,
        }),
    })
}

/// Rectangle in ℂ applied to both `a` and `b`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchBox {
    pub re: (f64, f64),
    pub im: (f64, f64),
}

impl SearchBox {
    pub fn square(half: f64) -> Self {
        SearchBox { re: (-half, half), im: (-half, half) }
    }

    pub fn scaled(&self, factor: f64) -> Self {
        SearchBox {
            re: (self.re.0 * factor, self.re.1 * factor),
            im: (self.im.0 * factor, self.im.1 * factor),
        }
    }

    pub fn is_empty(&self) -> bool {
        !(self.re.0 < self.re.1 && self.im.0 < self.im.1)
    }

    fn contains(&self, z: ComplexScalar) -> bool {
        z.re >= self.re.0 && z.re <= self.re.1 && z.im >= self.im.0 && z.im <= self.im.1
    }
}

impl Default for SearchBox {
    fn default() -> Self {
        SearchBox::square(15.0)
    }
}

fn axis(lo: f64, hi: f64, density: f64) -> Vec<f64> {
    let n = ((hi - lo) * density).round().max(1.0) as usize;
    (0..=n).map(|i| lo + (hi - lo) * i as f64 / n as f64).collect()
}

fn seeds(search: &SearchBox, density: f64) -> Vec<(ComplexScalar, ComplexScalar)> {
    let xs = axis(search.re.0, search.re.1, density);
    let ys = axis(search.im.0, search.im.1, density);
    let mut out = Vec::new();
    // conjugate pairs: c = -2 Re a is real and L² = (Im a)² − 3 (Re a)²
    for &x in &xs {
        for &y in ys.iter().filter(|&&y| y > 0.0) {
            let a = Complex64::new(x, y);
            if search.contains(a.conj()) {
                out.push((a, a.conj()));
            }
        }
    }
    if search.re.0 <= 0.0 && search.re.1 >= 0.0 {
        for &y1 in &ys {
            for &y2 in &ys {
                out.push((Complex64::new(0.0, y1), Complex64::new(0.0, y2)));
            }
        }
    }
    out
}

fn canonical_triple(w: &CriticalWitness) -> [ComplexScalar; 3] {
    let mut t = w.triple().unwrap();
    t.sort_by(|x, y| x.re.total_cmp(&y.re).then(x.im.total_cmp(&y.im)));
    t
}

fn same_triple(x: &[ComplexScalar; 3], y: &[ComplexScalar; 3], tol: f64) -> bool {
    // permutation match, robust to ties in the sort key
    const PERMS: [[usize; 3]; 6] = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
    PERMS
        .iter()
        .any(|p| (0..3).all(|i| (x[i] - y[p[i]]).norm() < tol * x[i].norm().max(1.0)))
}

pub fn enumerate_transcendental(
    set: CriticalSetId,
    search: &SearchBox,
    grid_density: f64,
    l_max: f64,
) -> Result<Vec<CriticalWitness>> {
    if set.exponent().is_none() {
        return Err(Error::Precondition(format!("{} is not a transcendental set", set.symbol())));
    }
    if !(grid_density >= 4.0) {
        return Err(Error::Precondition(format!(
            "grid density {grid_density} is below 4 points per unit"
        )));
    }
    if search.is_empty() {
        return Ok(Vec::new());
    }
    let found: Vec<CriticalWitness> = seeds(search, grid_density)
        .into_par_iter()
        .filter_map(|s| newton_transcendental(set, s, DEFAULT_MAX_ITER, WITNESS_TOL))
        .filter(|w| w.length <= l_max)
        .collect();
    Ok(dedupe_witnesses(found))
}

/// Sort by L then canonical triple, drop permuted copies.
pub fn dedupe_witnesses(mut found: Vec<CriticalWitness>) -> Vec<CriticalWitness> {
    let key = |w: &CriticalWitness| canonical_triple(w);
    found.sort_by(|x, y| {
        x.length.total_cmp(&y.length).then_with(|| {
            let (kx, ky) = (key(x), key(y));
            kx.iter()
                .zip(ky.iter())
                .map(|(p, q)| p.re.total_cmp(&q.re).then(p.im.total_cmp(&q.im)))
                .find(|o| *o != Ordering::Equal)
                .unwrap_or(Ordering::Equal)
        })
    });
    let mut out: Vec<CriticalWitness> = Vec::new();
    for w in found {
        let t = key(&w);
        let dup = out
            .iter()
            .rev()
            .take_while(|o| (w.length - o.length).abs() < 1e-6)
            .any(|o| same_triple(&t, &key(o), 1e-6));
        if !dup {
            out.push(w);
        }
    }
    out
}

/// Witness of the dagger set obtained from `(2a, 2b)`.
pub fn double_witness(w: &CriticalWitness) -> Option<CriticalWitness> {
    let [a, b, _] = w.triple()?;
    let (a2, b2) = (2.0 * a, 2.0 * b);
    let l2 = l_squared(a2, b2);
    let length = 2.0 * w.length;
    let c2 = -(a2 + b2);
    Some(CriticalWitness {
        set: CriticalSetId::NDagger,
        length,
        witness: WitnessData::Complex { a: a2, b: b2 },
        lambda: Some(-(a2 * b2 * c2) / (length * length * length)),
        residual: transcendental_residual(2, a2, b2),
        l_squared_imag: l2.im.abs(),
        provenance: None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DaggerCase {
    /// `z₁e^{z₁} = z₂e^{z₂} = −(z₁+z₂)e^{−(z₁+z₂)}`
    SignsNegative,
    /// `z₁e^{z₁} = −z₂e^{z₂} = (z₁+z₂)e^{−(z₁+z₂)}` up to swapping the two
    MixedSigns,
    /// `z₁e^{z₁} = z₂e^{z₂} = (z₁+z₂)e^{−(z₁+z₂)}`
    AllPositive,
}

pub fn dagger_case_decomposition(w: &CriticalWitness) -> Result<DaggerCase> {
    let (wa, wb) = match (w.set, &w.witness) {
        (CriticalSetId::NDagger, WitnessData::Complex { a, b }) => (*a, *b),
        _ => return Err(Error::Precondition("expected a dagger-set witness".into())),
    };
    let (z1, z2) = (wa / 2.0, wb / 2.0);
    let g1 = z1 * z1.exp();
    let g2 = z2 * z2.exp();
    let s = z1 + z2;
    let h = s * (-s).exp();
    let scale = g1.norm().max(g2.norm()).max(h.norm()).max(1e-300);
    let tol = 1e-6 * scale;
    let sign = |gi: ComplexScalar| -> Option<i8> {
        if (gi - h).norm() < tol {
            Some(1)
        } else if (gi + h).norm() < tol {
            Some(-1)
        } else {
            None
        }
    };
    match (sign(g1), sign(g2)) {
        (Some(-1), Some(-1)) => Ok(DaggerCase::SignsNegative),
        (Some(1), Some(1)) => Ok(DaggerCase::AllPositive),
        (Some(_), Some(_)) => Ok(DaggerCase::MixedSigns),
        _ => Err(Error::Classification(format!(
            "no sign pattern fits z1 e^z1 = {g1}, z2 e^z2 = {g2}, (z1+z2) e^-(z1+z2) = {h}"
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rosier_small() {
        assert!(enumerate_rosier(1.0).is_empty());
        let w = enumerate_rosier(7.0);
        assert_eq!(w.len(), 1);
        assert!((w[0].length - 2.0 * PI).abs() < 1e-14);
        let w = enumerate_rosier(10.0);
        assert_eq!(w.len(), 2);
        assert!((w[1].length - 2.0 * PI * (7.0f64 / 3.0).sqrt()).abs() < 1e-12);
        assert_eq!(w[1].witness, WitnessData::Integer { branches: vec![Branch::Lattice { k: 1, l: 2 }] });
    }

    #[test]
    fn rosier_norm_ties_are_merged() {
        // 1 + 9 + 81 = 25 + 30 + 36 = 91
        let w = enumerate_rosier(rosier_length(1, 9) + 1e-9);
        let hits: Vec<_> = w.iter().filter(|x| (x.length - rosier_length(5, 6)).abs() < 1e-9).collect();
        assert_eq!(hits.len(), 1);
        assert_eq!(hits[0].witness, WitnessData::Integer { branches: vec![Branch::Lattice { k: 1, l: 9 }] });
    }

    #[test]
    fn membership() {
        assert_eq!(rosier_membership(2.0 * PI, 1e-9), Some((1, 1)));
        assert_eq!(rosier_membership(1.0, 1e-9), None);
        assert_eq!(rosier_membership(2.0 * PI * (7.0f64 / 3.0).sqrt(), 1e-9), Some((1, 2)));
    }

    #[test]
    fn r_beta_examples() {
        let w = enumerate_r_beta(0.0, 4.0).unwrap();
        assert_eq!(w.len(), 1);
        assert!((w[0].length - PI).abs() < 1e-14);
        assert_eq!(w[0].witness, WitnessData::Integer { branches: vec![Branch::Harmonic { k: 1 }] });

        let w = enumerate_r_beta(0.0, 7.0).unwrap();
        let two_pi = w.iter().find(|x| (x.length - 2.0 * PI).abs() < 1e-12).unwrap();
        match &two_pi.witness {
            WitnessData::Integer { branches } => {
                assert!(branches.contains(&Branch::Lattice { k: 1, l: 1 }));
                assert!(branches.contains(&Branch::Harmonic { k: 2 }));
            }
            _ => panic!(),
        }

        let w = enumerate_r_beta(3.0, 4.0).unwrap();
        let lens: Vec<f64> = w.iter().map(|x| x.length).collect();
        assert_eq!(lens.len(), 2);
        assert!((lens[0] - PI / 2.0).abs() < 1e-14 && (lens[1] - PI).abs() < 1e-14);
        for x in &w {
            x.validate(1e-10).unwrap();
        }
    }

    #[test]
    fn r_beta_domain() {
        assert!(matches!(enumerate_r_beta(-1.0, 5.0), Err(Error::Domain(_))));
        assert!(matches!(enumerate_r_beta(-2.0, 5.0), Err(Error::Domain(_))));
    }

    fn first_nstar() -> CriticalWitness {
        let seed = (Complex64::new(-0.5, 4.6), Complex64::new(-0.5, -4.6));
        newton_transcendental(CriticalSetId::NStar, seed, 100, 1e-10).expect("converges")
    }

    #[test]
    fn nstar_newton_and_lambda() {
        let w = first_nstar();
        assert!(w.residual < 1e-10);
        let [a, b, c] = w.triple().unwrap();
        let l2 = w.length * w.length;
        assert!((a * b + b * c + c * a - l2).norm() < 1e-8 * l2);
        let roots = crate::cubic::solve_depressed_cubic(w.lambda.unwrap());
        for z in [a, b, c] {
            let mu = z / w.length;
            assert!(roots.roots.iter().any(|r| (r - mu).norm() < 1e-8));
        }
        w.validate(1e-9).unwrap();
    }

    #[test]
    fn real_seed_is_rejected() {
        let one = Complex64::new(1.0, 0.0);
        assert!(newton_transcendental(CriticalSetId::NStar, (one, one), 100, 1e-10).is_none());
    }

    #[test]
    fn doubling_converges_fast() {
        let w = first_nstar();
        let [a, b, _] = w.triple().unwrap();
        let d = newton_transcendental(CriticalSetId::NDagger, (2.0 * a, 2.0 * b), 100, 1e-10).unwrap();
        assert!(d.provenance.as_ref().unwrap().iterations <= 2);
        assert!((d.length - 2.0 * w.length).abs() < 1e-9);
        assert_eq!(dagger_case_decomposition(&d).unwrap(), DaggerCase::SignsNegative);
        let dd = double_witness(&w).unwrap();
        assert!(dd.residual < 1e-9);
    }

    #[test]
    fn dagger_case_rejects_garbage() {
        let w = CriticalWitness {
            set: CriticalSetId::NDagger,
            length: 1.0,
            witness: WitnessData::Complex { a: Complex64::new(0.3, 1.7), b: Complex64::new(-1.1, 0.4) },
            lambda: None,
            residual: 0.0,
            l_squared_imag: 0.0,
            provenance: None,
        };
        assert!(matches!(dagger_case_decomposition(&w), Err(Error::Classification(_))));
    }

    #[test]
    fn empty_box() {
        let b = SearchBox { re: (1.0, 1.0), im: (0.0, 2.0) };
        assert!(enumerate_transcendental(CriticalSetId::NStar, &b, 4.0, 50.0).unwrap().is_empty());
    }
}
