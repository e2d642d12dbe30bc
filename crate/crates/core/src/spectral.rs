//! Boundary matrices of the spectral problem `λφ + φ' + φ''' = 0` on the star graph.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::GraphConfig;
use crate::critical_sets::{rosier_membership, CriticalSetId, CriticalWitness};
use crate::cubic::{solve_depressed_cubic, ComplexScalar, CubicRoots, Multiplicity};
use crate::error::{Error, Result};

/// `σ_min` below this (rows normalised) counts as a kernel.
pub const CRITICAL_SIGMA: f64 = 1e-6;
/// Root pairs closer than this use the divided-difference column.
pub const CONFLUENT_GAP: f64 = 0.05;

type C = Complex64;

fn c0() -> C {
    C::new(0.0, 0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BasisKind {
    /// `e^{μ₀x}, e^{μ₁x}, e^{μ₂x}`
    Exponential,
    /// `e^{−2σx}, e^{σx}, x e^{σx}`
    Degenerate,
    /// `e^{μ₀x}, e^{μ₁x}, (e^{μ₂x} − e^{μ₁x})/(μ₂ − μ₁)`
    Confluent,
}

/// Fundamental system on one edge. Columns may be rescaled by `e^{−μ·anchor}`.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeBasis {
    pub kind: BasisKind,
    pub mu: [C; 3],
    pub anchor: [f64; 3],
}

/// `(e^z − 1)/z`
fn phi1(z: C) -> C {
    if z.norm() < 0.1 {
        let mut term = C::new(1.0, 0.0);
        let mut sum = term;
        for k in 2..=10 {
            term = term * z / k as f64;
            sum += term;
        }
        sum
    } else {
        (z.exp() - 1.0) / z
    }
}

impl EdgeBasis {
    pub fn from_roots(roots: &CubicRoots) -> Result<Self> {
        roots.ensure_not_triple()?;
        Ok(match roots.multiplicity {
            Multiplicity::AllSimple => EdgeBasis { kind: BasisKind::Exponential, mu: roots.roots, anchor: [0.0; 3] },
            Multiplicity::Double(i) => {
                let sigma = roots.roots[i];
                EdgeBasis { kind: BasisKind::Degenerate, mu: [-2.0 * sigma, sigma, sigma], anchor: [0.0; 3] }
            }
            Multiplicity::Triple => unreachable!(),
        })
    }

    /// Basis used in matrix assembly on `[0, length]`: growing columns are anchored at
    /// the far end and nearly equal roots use the divided difference.
    pub fn for_matrix(lambda: ComplexScalar, length: f64) -> Result<Self> {
        let roots = solve_depressed_cubic(lambda);
        let mut basis = Self::from_roots(&roots)?;
        if basis.kind == BasisKind::Exponential {
            let r = roots.roots;
            let pairs = [(0, 1, 2), (1, 2, 0), (0, 2, 1)];
            let (i, j, k) = pairs
                .iter()
                .copied()
                .min_by(|p, q| (r[p.0] - r[p.1]).norm().total_cmp(&(r[q.0] - r[q.1]).norm()))
                .unwrap();
            if (r[i] - r[j]).norm() < CONFLUENT_GAP {
                basis = EdgeBasis { kind: BasisKind::Confluent, mu: [r[k], r[i], r[j]], anchor: [0.0; 3] };
            }
        }
        for s in 0..3 {
            let lead = if basis.kind == BasisKind::Exponential || s < 2 { basis.mu[s] } else { basis.mu[1] };
            basis.anchor[s] = if lead.re > 0.0 { length } else { 0.0 };
        }
        Ok(basis)
    }

    /// Values of the three columns (or their first/second derivative) at `x`.
    pub fn eval(&self, x: f64, deriv: usize) -> [C; 3] {
        assert!(deriv <= 2, "only up to second derivatives");
        let mut out = [c0(); 3];
        let ncols = if self.kind == BasisKind::Exponential { 3 } else { 2 };
        for s in 0..ncols {
            let mu = self.mu[s];
            out[s] = mu.powi(deriv as i32) * (mu * (x - self.anchor[s])).exp();
        }
        if self.kind != BasisKind::Exponential {
            let (m1, m2) = (self.mu[1], self.mu[2]);
            let e = (m1 * (x - self.anchor[2])).exp();
            let h = m2 - m1;
            let d0 = e * x * phi1(h * x);
            let d1 = m2 * d0 + e;
            out[2] = match deriv {
                0 => d0,
                1 => d1,
                _ => m2 * d1 + m1 * e,
            };
        }
        out
    }

    /// Coefficients with respect to the unanchored exponentials `e^{μₛx}`.
    pub fn plain_coefficients(&self, d: &[C]) -> Option<[C; 3]> {
        if self.kind != BasisKind::Exponential {
            return None;
        }
        let mut out = [c0(); 3];
        for s in 0..3 {
            out[s] = d[s] * (-self.mu[s] * self.anchor[s]).exp();
        }
        Some(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TwoEdgeWeights {
    pub sigma_ne: f64,
    pub sigma_di: f64,
}

impl TwoEdgeWeights {
    pub fn new(sigma_ne: f64, sigma_di: f64) -> Result<Self> {
        if !(sigma_ne > 0.0 && sigma_di > 0.0) {
            return Err(Error::Precondition("two-edge weights must be positive".into()));
        }
        Ok(TwoEdgeWeights { sigma_ne, sigma_di })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum MatrixKind {
    Graph,
    TwoEdge(TwoEdgeWeights),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectralMatrix {
    pub n: usize,
    pub m: usize,
    pub kind: MatrixKind,
    pub lambda: ComplexScalar,
    pub length: f64,
    pub basis: EdgeBasis,
    pub entries: DMatrix<C>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EdgeTraces {
    /// `φ_j(0)`, shared by all edges
    pub kappa: C,
    /// `φ_j''(0)`
    pub beta: C,
    /// `−φ_j''(L)`
    pub gamma: C,
    /// `−φ_j'(L)`
    pub delta: C,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectralSolution {
    pub lambda: ComplexScalar,
    pub coefficients: Vec<C>,
    pub sigma_min: f64,
    pub residual: f64,
    pub traces: Vec<EdgeTraces>,
}

fn assemble(n: usize, m: usize, flux: &[f64], lambda: C, length: f64) -> Result<(EdgeBasis, DMatrix<C>)> {
    let basis = EdgeBasis::for_matrix(lambda, length)?;
    let v0 = basis.eval(0.0, 0);
    let d0 = basis.eval(0.0, 1);
    let dd0 = basis.eval(0.0, 2);
    let vl = basis.eval(length, 0);
    let dl = basis.eval(length, 1);
    let ddl = basis.eval(length, 2);
    let mut a = DMatrix::<C>::zeros(4 * n, 3 * n);
    let mut put = |row: usize, edge: usize, vals: &[C; 3], scale: f64| {
        for s in 0..3 {
            a[(row, 3 * edge + s)] += vals[s] * scale;
        }
    };
    let mut row = 0;
    for j in 1..n {
        put(row, j, &v0, 1.0);
        put(row, 0, &v0, -1.0);
        row += 1;
    }
    for (j, w) in flux.iter().enumerate() {
        put(row, j, &dd0, *w);
    }
    row += 1;
    for j in 0..n {
        put(row, j, &vl, 1.0);
        row += 1;
    }
    for j in 0..n {
        put(row, j, &d0, 1.0);
        row += 1;
    }
    for j in 0..n {
        put(row, j, if j < m { &dl } else { &ddl }, 1.0);
        row += 1;
    }
    debug_assert_eq!(row, 4 * n);
    if a.iter().any(|z| !(z.re.is_finite() && z.im.is_finite())) {
        return Err(Error::Precondition(format!("non-finite matrix entries at lambda = {lambda}, L = {length}")));
    }
    Ok((basis, a))
}

pub fn build_boundary_matrix(config: &GraphConfig, lambda: ComplexScalar) -> Result<SpectralMatrix> {
    let length = config.spectral_length()?;
    let flux = vec![1.0; config.n];
    let (basis, entries) = assemble(config.n, config.m, &flux, lambda, length)?;
    Ok(SpectralMatrix { n: config.n, m: config.m, kind: MatrixKind::Graph, lambda, length, basis, entries })
}

/// Edge 1 Neumann-controlled, edge 2 Dirichlet-controlled, weighted flux at the node.
pub fn build_two_edge_weighted_matrix(weights: TwoEdgeWeights, lambda: ComplexScalar, length: f64) -> Result<SpectralMatrix> {
    TwoEdgeWeights::new(weights.sigma_ne, weights.sigma_di)?;
    if !(length > 0.0) {
        return Err(Error::Precondition("length must be positive".into()));
    }
    let (basis, entries) = assemble(2, 1, &[weights.sigma_ne, weights.sigma_di], lambda, length)?;
    Ok(SpectralMatrix { n: 2, m: 1, kind: MatrixKind::TwoEdge(weights), lambda, length, basis, entries })
}

pub fn normalize_rows(a: &DMatrix<C>) -> DMatrix<C> {
    let mut out = a.clone();
    for mut row in out.row_iter_mut() {
        let nrm = row.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if nrm > 0.0 {
            row.iter_mut().for_each(|z| *z /= nrm);
        }
    }
    out
}

/// Singular values of the row-normalised matrix, ascending.
pub fn singular_values(a: &DMatrix<C>) -> Vec<f64> {
    let mut sv: Vec<f64> = normalize_rows(a).singular_values().iter().copied().collect();
    sv.sort_by(f64::total_cmp);
    sv
}

/// Rank with relative threshold `rtol` on the row-normalised matrix.
pub fn numerical_rank(a: &DMatrix<C>, rtol: f64) -> usize {
    let sv = singular_values(a);
    let top = sv.last().copied().unwrap_or(0.0);
    sv.iter().filter(|&&s| s > rtol * top).count()
}

impl SpectralMatrix {
    pub fn shape(&self) -> (usize, usize) {
        self.entries.shape()
    }

    pub fn normalized(&self) -> DMatrix<C> {
        normalize_rows(&self.entries)
    }

    pub fn sigma_min(&self) -> f64 {
        singular_values(&self.entries)[0]
    }

    /// `‖M d‖ / ‖d‖` for the normalised matrix.
    pub fn relative_residual(&self, d: &[C]) -> f64 {
        let a = self.normalized();
        let v = nalgebra::DVector::from_column_slice(d);
        (a * &v).norm() / v.norm()
    }

    /// Right singular vector of the smallest singular value.
    pub fn solution(&self) -> SpectralSolution {
        let a = self.normalized();
        let svd = a.svd(false, true);
        let vt = svd.v_t.expect("requested V^H");
        let (imin, smin) = svd
            .singular_values
            .iter()
            .enumerate()
            .min_by(|x, y| x.1.total_cmp(y.1))
            .map(|(i, s)| (i, *s))
            .unwrap();
        let coefficients: Vec<C> = vt.row(imin).iter().map(|z| z.conj()).collect();
        let residual = self.relative_residual(&coefficients);
        let traces = (0..self.n)
            .map(|j| EdgeTraces {
                kappa: self.edge_value(&coefficients, 0, 0.0, 0),
                beta: self.edge_value(&coefficients, j, 0.0, 2),
                gamma: -self.edge_value(&coefficients, j, self.length, 2),
                delta: -self.edge_value(&coefficients, j, self.length, 1),
            })
            .collect();
        SpectralSolution { lambda: self.lambda, coefficients, sigma_min: smin, residual, traces }
    }

    /// `φ_j^{(deriv)}(x)` for a coefficient vector `d`.
    pub fn edge_value(&self, d: &[C], edge: usize, x: f64, deriv: usize) -> C {
        let b = self.basis.eval(x, deriv);
        (0..3).map(|s| d[3 * edge + s] * b[s]).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ThetaKind {
    FullNeumann,
    FullDirichlet,
}

pub fn build_reduced_theta_matrix(kind: ThetaKind, a: C, b: C, c: C) -> Result<DMatrix<C>> {
    if (a + b + c).norm() >= 1e-10 {
        return Err(Error::Precondition(format!("a + b + c = {} is not zero", a + b + c)));
    }
    let t = [a, b, c];
    let mut m = DMatrix::<C>::zeros(4, 3);
    for (s, z) in t.iter().enumerate() {
        let ez = z.exp();
        m[(0, s)] = C::new(1.0, 0.0);
        m[(1, s)] = z * ez;
        m[(2, s)] = match kind {
            ThetaKind::FullNeumann => *z,
            ThetaKind::FullDirichlet => z * z,
        };
        m[(3, s)] = z * z * ez;
    }
    Ok(m)
}

/// Last Gauss–Jordan pivot of the reduced system.
pub fn theta_pivot(kind: ThetaKind, a: C, b: C, c: C) -> C {
    match kind {
        ThetaKind::FullNeumann => (c - a) * (c * c.exp() - b * b.exp()),
        ThetaKind::FullDirichlet => (c - a) / c * (c * c * c.exp() - b * b * b.exp()),
    }
}

/// θ-problem on `[0, L]` in the physical variable, any root multiplicity:
/// Neumann `θ(0)=θ'(L)=θ'(0)=θ''(L)=0`, Dirichlet `θ(0)=θ'(L)=θ''(0)=θ''(L)=0`.
pub fn theta_system_matrix(kind: ThetaKind, lambda_tilde: ComplexScalar, length: f64) -> Result<DMatrix<C>> {
    let basis = EdgeBasis::from_roots(&solve_depressed_cubic(lambda_tilde))?;
    let rows = [
        basis.eval(0.0, 0),
        basis.eval(length, 1),
        match kind {
            ThetaKind::FullNeumann => basis.eval(0.0, 1),
            ThetaKind::FullDirichlet => basis.eval(0.0, 2),
        },
        basis.eval(length, 2),
    ];
    Ok(DMatrix::from_fn(4, 3, |i, j| rows[i][j]))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LambdaRegion {
    pub re: (f64, f64),
    pub im: (f64, f64),
}

impl LambdaRegion {
    pub fn square(half: f64) -> Self {
        LambdaRegion { re: (-half, half), im: (-half, half) }
    }

    /// `|Re λ|, |Im λ| ≤ 20·max(1, L⁻³)`
    pub fn default_for(length: f64) -> Self {
        Self::square(20.0 * (1.0f64).max(length.powi(-3)))
    }

    fn contains(&self, z: C) -> bool {
        z.re >= self.re.0 && z.re <= self.re.1 && z.im >= self.im.0 && z.im <= self.im.1
    }

    fn clamp(&self, z: C) -> C {
        C::new(z.re.clamp(self.re.0, self.re.1), z.im.clamp(self.im.0, self.im.1))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanSettings {
    /// Samples per unit along the real and imaginary axes.
    pub axis_density: f64,
    /// Samples per unit in each direction of the rectangle pass.
    pub grid_density: f64,
    /// Local minima refined per pass.
    pub refine: usize,
    pub tol: f64,
    /// Run the rectangle pass even when the axes already found a kernel.
    pub exhaustive: bool,
}

impl Default for ScanSettings {
    fn default() -> Self {
        ScanSettings { axis_density: 25.0, grid_density: 2.0, refine: 12, tol: CRITICAL_SIGMA, exhaustive: false }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScanOutcome {
    pub region: LambdaRegion,
    /// Minimiser of `σ_min` over everything evaluated.
    pub best_lambda: ComplexScalar,
    pub best_sigma: f64,
    pub evaluations: usize,
    /// Present when `best_sigma < tol`.
    pub solution: Option<SpectralSolution>,
}

impl ScanOutcome {
    pub fn is_critical(&self) -> bool {
        self.solution.is_some()
    }
}

fn sigma_at(config: &GraphConfig, kind: MatrixKind, lambda: C) -> f64 {
    let mat = match kind {
        MatrixKind::Graph => build_boundary_matrix(config, lambda),
        MatrixKind::TwoEdge(w) => build_two_edge_weighted_matrix(w, lambda, config.lengths[0]),
    };
    mat.map(|m| m.sigma_min()).unwrap_or(f64::INFINITY)
}

fn better(a: &(C, f64), b: &(C, f64)) -> std::cmp::Ordering {
    a.1.total_cmp(&b.1)
        .then(a.0.re.total_cmp(&b.0.re))
        .then(a.0.im.total_cmp(&b.0.im))
}

fn linspace(lo: f64, hi: f64, density: f64) -> Vec<f64> {
    let n = ((hi - lo) * density).ceil().max(1.0) as usize;
    (0..=n).map(|i| lo + (hi - lo) * i as f64 / n as f64).collect()
}

/// Nelder–Mead on `(Re λ, Im λ)`.
fn nelder_mead(f: &(dyn Fn(C) -> f64 + Sync), region: &LambdaRegion, start: C, step: f64, evals: &mut usize) -> (C, f64) {
    let mut simplex: Vec<(C, f64)> = [start, start + C::new(step, 0.0), start + C::new(0.0, step)]
        .into_iter()
        .map(|z| {
            let z = region.clamp(z);
            *evals += 1;
            (z, f(z))
        })
        .collect();
    for _ in 0..400 {
        simplex.sort_by(better);
        let (best, worst) = (simplex[0], simplex[2]);
        let size = (simplex[1].0 - best.0).norm().max((worst.0 - best.0).norm());
        if best.1 < 1e-15 || size < 1e-14 * best.0.norm().max(1.0) {
            break;
        }
        let centroid = (simplex[0].0 + simplex[1].0) / 2.0;
        let mut eval = |z: C| {
            let z = region.clamp(z);
            *evals += 1;
            (z, f(z))
        };
        let refl = eval(centroid + (centroid - worst.0));
        if refl.1 < best.1 {
            let exp = eval(centroid + 2.0 * (centroid - worst.0));
            simplex[2] = if exp.1 < refl.1 { exp } else { refl };
        } else if refl.1 < simplex[1].1 {
            simplex[2] = refl;
        } else {
            let contr = if refl.1 < worst.1 {
                eval(centroid + 0.5 * (refl.0 - centroid))
            } else {
                eval(centroid + 0.5 * (worst.0 - centroid))
            };
            if contr.1 < worst.1.min(refl.1) {
                simplex[2] = contr;
            } else {
                for k in 1..3 {
                    simplex[k] = eval(best.0 + 0.5 * (simplex[k].0 - best.0));
                }
            }
        }
    }
    simplex.sort_by(better);
    simplex[0]
}

fn local_minima_1d(vals: &[(C, f64)]) -> Vec<(C, f64)> {
    (0..vals.len())
        .filter(|&i| {
            let left = i == 0 || vals[i - 1].1 >= vals[i].1;
            let right = i + 1 == vals.len() || vals[i + 1].1 >= vals[i].1;
            left && right
        })
        .map(|i| vals[i])
        .collect()
}

fn local_minima_2d(vals: &[(C, f64)], nx: usize, ny: usize) -> Vec<(C, f64)> {
    let at = |i: usize, j: usize| vals[i * ny + j].1;
    let mut out = Vec::new();
    for i in 0..nx {
        for j in 0..ny {
            let v = at(i, j);
            let mut ok = true;
            for (di, dj) in [(-1i64, 0i64), (1, 0), (0, -1), (0, 1)] {
                let (p, q) = (i as i64 + di, j as i64 + dj);
                if p >= 0 && q >= 0 && (p as usize) < nx && (q as usize) < ny && at(p as usize, q as usize) < v {
                    ok = false;
                }
            }
            if ok {
                out.push(vals[i * ny + j]);
            }
        }
    }
    out
}

fn refine_candidates(
    f: &(dyn Fn(C) -> f64 + Sync),
    region: &LambdaRegion,
    mut cands: Vec<(C, f64)>,
    count: usize,
    step: f64,
) -> (Vec<(C, f64)>, usize) {
    cands.sort_by(better);
    cands.truncate(count);
    let results: Vec<((C, f64), usize)> = cands
        .par_iter()
        .map(|c| {
            let mut evals = 0;
            (nelder_mead(f, region, c.0, step, &mut evals), evals)
        })
        .collect();
    let evals = results.iter().map(|r| r.1).sum();
    (results.into_iter().map(|r| r.0).collect(), evals)
}

fn scan_kind(config: &GraphConfig, kind: MatrixKind, region: &LambdaRegion, settings: &ScanSettings) -> Result<ScanOutcome> {
    let length = config.spectral_length()?;
    let f = |z: C| sigma_at(config, kind, z);
    let mut evaluations = 0;
    let mut best: Vec<(C, f64)> = Vec::new();

    // pass 1: the two axes (when inside the region)
    let mut axis_pts = Vec::new();
    if region.re.0 <= 0.0 && region.re.1 >= 0.0 {
        axis_pts.push(linspace(region.im.0, region.im.1, settings.axis_density).into_iter().map(|y| C::new(0.0, y)).collect::<Vec<_>>());
    }
    if region.im.0 <= 0.0 && region.im.1 >= 0.0 {
        axis_pts.push(linspace(region.re.0, region.re.1, settings.axis_density).into_iter().map(|x| C::new(x, 0.0)).collect());
    }
    for pts in axis_pts {
        let vals: Vec<(C, f64)> = pts.par_iter().map(|&z| (z, f(z))).collect();
        evaluations += vals.len();
        let (refined, ev) = refine_candidates(&f, region, local_minima_1d(&vals), settings.refine, 1.0 / settings.axis_density);
        evaluations += ev;
        best.extend(refined);
        best.extend(vals.iter().copied().min_by(better));
    }
    best.sort_by(better);
    let found = best.first().map_or(false, |b| b.1 < settings.tol);

    if !found || settings.exhaustive {
        let xs = linspace(region.re.0, region.re.1, settings.grid_density);
        let ys = linspace(region.im.0, region.im.1, settings.grid_density);
        let pts: Vec<C> = xs.iter().flat_map(|&x| ys.iter().map(move |&y| C::new(x, y))).collect();
        let vals: Vec<(C, f64)> = pts.par_iter().map(|&z| (z, f(z))).collect();
        evaluations += vals.len();
        let (refined, ev) = refine_candidates(
            &f,
            region,
            local_minima_2d(&vals, xs.len(), ys.len()),
            settings.refine,
            1.0 / settings.grid_density,
        );
        evaluations += ev;
        best.extend(refined);
        best.extend(vals.iter().copied().min_by(better));
        best.sort_by(better);
    }
    let (best_lambda, best_sigma) = best.first().copied().unwrap_or((c0(), f64::INFINITY));
    let solution = if best_sigma < settings.tol && region.contains(best_lambda) {
        let mat = match kind {
            MatrixKind::Graph => build_boundary_matrix(config, best_lambda)?,
            MatrixKind::TwoEdge(w) => build_two_edge_weighted_matrix(w, best_lambda, length)?,
        };
        Some(mat.solution())
    } else {
        None
    };
    Ok(ScanOutcome { region: *region, best_lambda, best_sigma, evaluations, solution })
}

/// Minimise `σ_min(M(λ))` over `region`; a kernel is reported when it drops below `settings.tol`.
pub fn scan_criticality(config: &GraphConfig, region: &LambdaRegion, settings: &ScanSettings) -> Result<ScanOutcome> {
    scan_kind(config, MatrixKind::Graph, region, settings)
}

pub fn scan_two_edge(weights: TwoEdgeWeights, length: f64, region: &LambdaRegion, settings: &ScanSettings) -> Result<ScanOutcome> {
    let config = GraphConfig::uniform(2, 1, length)?;
    scan_kind(&config, MatrixKind::TwoEdge(weights), region, settings)
}

#[derive(Debug, Clone, PartialEq)]
pub enum Verdict {
    Critical { lambda: ComplexScalar, sigma_min: f64 },
    NonCritical { min_sigma: f64 },
    OutOfScope { reason: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SetMembership {
    pub set: CriticalSetId,
    pub length: f64,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Classification {
    pub verdict: Verdict,
    /// Sets that decide criticality for this placement of controls.
    pub expected_sets: Vec<CriticalSetId>,
    /// Memberships of `L` in the expected sets found independently of the scan.
    pub memberships: Vec<SetMembership>,
    pub region: Option<LambdaRegion>,
    pub solution: Option<SpectralSolution>,
}

impl Classification {
    pub fn predicted_critical(&self) -> bool {
        !self.memberships.is_empty()
    }

    pub fn is_critical(&self) -> bool {
        matches!(self.verdict, Verdict::Critical { .. })
    }

    /// Scan verdict and set membership agree.
    pub fn agrees(&self) -> bool {
        match self.verdict {
            Verdict::OutOfScope { .. } => true,
            _ => self.is_critical() == self.predicted_critical(),
        }
    }
}

/// Transcendental witnesses known to the caller, used for the membership prediction.
#[derive(Debug, Clone, Default)]
pub struct KnownWitnesses {
    pub witnesses: Vec<CriticalWitness>,
}

impl KnownWitnesses {
    pub fn lookup(&self, set: CriticalSetId, length: f64, rel_tol: f64) -> Option<&CriticalWitness> {
        self.witnesses
            .iter()
            .find(|w| w.set == set && (w.length - length).abs() <= rel_tol * length)
    }
}

pub fn predict_membership(config: &GraphConfig, length: f64, known: &KnownWitnesses, rel_tol: f64) -> Vec<SetMembership> {
    let mut out = Vec::new();
    for set in config.expected_sets() {
        match set {
            CriticalSetId::NRosier => {
                if let Some((k, l)) = rosier_membership(length, 2.0 * rel_tol) {
                    out.push(SetMembership { set, length, detail: format!("(k, l) = ({k}, {l})") });
                }
            }
            _ => {
                if let Some(w) = known.lookup(set, length, rel_tol) {
                    out.push(SetMembership { set, length: w.length, detail: format!("witness L = {}", w.length) });
                }
            }
        }
    }
    out
}

pub fn classify_length(
    config: &GraphConfig,
    known: &KnownWitnesses,
    settings: &ScanSettings,
    region: Option<LambdaRegion>,
) -> Classification {
    let expected_sets = config.expected_sets();
    let length = match config.spectral_length() {
        Ok(l) => l,
        Err(e) => {
            return Classification {
                verdict: Verdict::OutOfScope { reason: e.to_string() },
                expected_sets,
                memberships: Vec::new(),
                region: None,
                solution: None,
            }
        }
    };
    let memberships = predict_membership(config, length, known, 1e-6);
    let region = region.unwrap_or_else(|| LambdaRegion::default_for(length));
    match scan_criticality(config, &region, settings) {
        Ok(scan) => {
            let verdict = match &scan.solution {
                Some(_) => Verdict::Critical { lambda: scan.best_lambda, sigma_min: scan.best_sigma },
                None => Verdict::NonCritical { min_sigma: scan.best_sigma },
            };
            Classification { verdict, expected_sets, memberships, region: Some(region), solution: scan.solution }
        }
        Err(e) => Classification {
            verdict: Verdict::OutOfScope { reason: e.to_string() },
            expected_sets,
            memberships,
            region: Some(region),
            solution: None,
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn c(re: f64, im: f64) -> C {
        C::new(re, im)
    }

    #[test]
    fn basis_at_zero_lambda() {
        let b = EdgeBasis::from_roots(&solve_depressed_cubic(c0())).unwrap();
        assert_eq!(b.kind, BasisKind::Exponential);
        let dd = b.eval(0.0, 2);
        // roots sorted (-i, 0, i)
        assert!((dd[0] - c(-1.0, 0.0)).norm() < 1e-15);
        assert!(dd[1].norm() < 1e-15);
        assert!((dd[2] - c(-1.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn degenerate_basis_at_double_root() {
        let lam = c(0.0, -2.0 / (3.0 * 3f64.sqrt()));
        let b = EdgeBasis::from_roots(&solve_depressed_cubic(lam)).unwrap();
        assert_eq!(b.kind, BasisKind::Degenerate);
        assert!((b.mu[1] - c(0.0, 1.0 / 3f64.sqrt())).norm() < 1e-8);
        // every column solves λy + y' + y''' = 0: check via finite differences of the analytic derivatives
        let x = 0.7;
        let h = 1e-4;
        for s in 0..3 {
            let y = b.eval(x, 0)[s];
            let y1 = b.eval(x, 1)[s];
            let y3 = (b.eval(x + h, 2)[s] - b.eval(x - h, 2)[s]) / (2.0 * h);
            assert!((lam * y + y1 + y3).norm() < 1e-6, "column {s}");
        }
    }

    #[test]
    fn confluent_matches_exponential_span() {
        // near the double root both bases solve the ODE
        let lam = c(1e-4, -2.0 / (3.0 * 3f64.sqrt()));
        let b = EdgeBasis::for_matrix(lam, 3.0).unwrap();
        assert_eq!(b.kind, BasisKind::Confluent);
        let x = 1.3;
        let h = 1e-4;
        for s in 0..3 {
            let y = b.eval(x, 0)[s];
            let y1 = b.eval(x, 1)[s];
            let y3 = (b.eval(x + h, 2)[s] - b.eval(x - h, 2)[s]) / (2.0 * h);
            let y2 = (b.eval(x + h, 1)[s] - b.eval(x - h, 1)[s]) / (2.0 * h);
            assert!((lam * y + y1 + y3).norm() < 1e-6);
            assert!((y2 - b.eval(x, 2)[s]).norm() < 1e-6);
        }
    }

    #[test]
    fn shapes() {
        let cfg = GraphConfig::uniform(3, 1, 2.0).unwrap();
        assert_eq!(build_boundary_matrix(&cfg, c(0.3, 1.0)).unwrap().shape(), (12, 9));
        let w = TwoEdgeWeights::new(1.0, 2.0).unwrap();
        assert_eq!(build_two_edge_weighted_matrix(w, c(0.3, 1.0), 2.0).unwrap().shape(), (8, 6));
        let bad = GraphConfig::new(3, 1, 3.0, vec![1.0, 1.0, 2.0]).unwrap();
        assert!(build_boundary_matrix(&bad, c0()).is_err());
    }

    #[test]
    fn two_edge_unit_weights_match_graph() {
        let cfg = GraphConfig::uniform(2, 1, 2.3).unwrap();
        let lam = c(0.4, -1.7);
        let a = build_boundary_matrix(&cfg, lam).unwrap();
        let b = build_two_edge_weighted_matrix(TwoEdgeWeights::new(1.0, 1.0).unwrap(), lam, 2.3).unwrap();
        assert_eq!(a.entries, b.entries);
    }

    #[test]
    fn mixed_two_edge_at_pi_is_regular() {
        let cfg = GraphConfig::uniform(2, 1, PI).unwrap();
        assert!(build_boundary_matrix(&cfg, c0()).unwrap().sigma_min() > 1e-3);
    }

    #[test]
    fn one_minus_cos_kernel() {
        let cfg = GraphConfig::uniform(3, 2, 2.0 * PI).unwrap();
        let mat = build_boundary_matrix(&cfg, c0()).unwrap();
        let sol = mat.solution();
        assert!(sol.sigma_min < 1e-8, "{}", sol.sigma_min);
        for x in [0.3, 1.0, 2.5, 4.0] {
            let f1 = mat.edge_value(&sol.coefficients, 0, x, 0);
            let f2 = mat.edge_value(&sol.coefficients, 1, x, 0);
            let f3 = mat.edge_value(&sol.coefficients, 2, x, 0);
            let scale = mat.edge_value(&sol.coefficients, 0, PI, 0) / 2.0;
            assert!((f1 / scale - (1.0 - x.cos())).norm() < 1e-6);
            assert!((f2 / scale + (1.0 - x.cos())).norm() < 1e-6);
            assert!((f3 / scale).norm() < 1e-6);
        }
    }

    #[test]
    fn homogeneity_of_residual() {
        let cfg = GraphConfig::uniform(3, 2, 2.0 * PI).unwrap();
        let mat = build_boundary_matrix(&cfg, c(0.1, 0.2)).unwrap();
        let sol = mat.solution();
        let r0 = mat.relative_residual(&sol.coefficients);
        let scaled: Vec<C> = sol.coefficients.iter().map(|z| z * c(-3.0, 7.5)).collect();
        assert!((mat.relative_residual(&scaled) - r0).abs() < 1e-12);
    }

    #[test]
    fn rosier_lambda_is_kernel() {
        use crate::critical_sets::{rosier_lambda, rosier_length};
        for (k, l) in [(1, 1), (1, 2), (2, 3)] {
            let len = rosier_length(k, l);
            let cfg = GraphConfig::uniform(3, 2, len).unwrap();
            let lam = -rosier_lambda(k, l);
            assert!(build_boundary_matrix(&cfg, lam).unwrap().sigma_min() < 1e-8, "({k},{l})");
        }
    }

    #[test]
    fn reduced_theta_precondition() {
        assert!(build_reduced_theta_matrix(ThetaKind::FullNeumann, c(1.0, 0.0), c(1.0, 0.0), c(1.0, 0.0)).is_err());
        let m = build_reduced_theta_matrix(ThetaKind::FullDirichlet, c(1.0, 2.0), c(-0.5, 0.1), c(-0.5, -2.1)).unwrap();
        assert_eq!(m.shape(), (4, 3));
        assert_eq!(numerical_rank(&m, 1e-8), 3);
    }

    #[test]
    fn critical_scan_finds_zero_at_two_pi() {
        let cfg = GraphConfig::uniform(3, 2, 2.0 * PI).unwrap();
        let out = scan_criticality(&cfg, &LambdaRegion::square(2.0), &ScanSettings::default()).unwrap();
        assert!(out.is_critical());
        assert!(out.best_lambda.norm() < 1e-6, "{}", out.best_lambda);
    }
}
