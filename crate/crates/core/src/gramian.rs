//! Discrete observability Gramian, HUM control synthesis and length sweeps.

use std::f64::consts::PI;
use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::GraphConfig;
use crate::cubic::{format_complex, ComplexScalar};
use crate::error::{Error, Result};
use crate::simulator::{l2_inner, trapezoid, AdjointSolver, ControlSignal, ForwardSolver, GraphGrid, StateField, TraceRecord};
use crate::spectral::{classify_length, KnownWitnesses, ScanSettings, Verdict};

/// Relative jitter added to the mass matrix before its Cholesky factorisation.
pub const MASS_JITTER: f64 = 1e-14;
/// Gramian condition number above which HUM reports a criticality warning.
pub const HUM_CONDITION_LIMIT: f64 = 1e8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSummary {
    pub points_per_edge: usize,
    pub dt: f64,
    pub horizon: f64,
    pub steps: usize,
}

impl From<&GraphGrid> for GridSummary {
    fn from(g: &GraphGrid) -> Self {
        GridSummary { points_per_edge: g.points_per_edge, dt: g.dt, horizon: g.horizon, steps: g.steps }
    }
}

/// Norm used on the Dirichlet block of `X_m`; recorded in every result.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DirichletNorm {
    /// `∫ φ'²`
    Seminorm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GramianResult {
    pub config: GraphConfig,
    pub grid: GridSummary,
    pub basis_size: usize,
    pub entries: Vec<Vec<f64>>,
    pub mass: Vec<Vec<f64>>,
    /// Generalized eigenvalues of `(G, mass)`, ascending.
    pub eigenvalues: Vec<f64>,
    pub min_eigenvalue: f64,
    pub dirichlet_norm: DirichletNorm,
}

impl GramianResult {
    pub fn matrix(&self) -> DMatrix<f64> {
        to_dmatrix(&self.entries)
    }

    pub fn trace(&self) -> f64 {
        (0..self.basis_size).map(|i| self.entries[i][i]).sum()
    }
}

fn to_dmatrix(rows: &[Vec<f64>]) -> DMatrix<f64> {
    let n = rows.len();
    DMatrix::from_fn(n, n, |i, j| rows[i][j])
}

fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect()).collect()
}

/// `X_m` inner product: L² on Neumann edges, `∫ a' b'` on Dirichlet edges.
pub fn xm_inner(grid: &GraphGrid, a: &StateField, b: &StateField) -> f64 {
    let mut acc = 0.0;
    for j in 0..grid.config.n {
        let h = grid.dx(j);
        let (u, v) = (&a.values[j], &b.values[j]);
        if grid.config.is_neumann(j) {
            let prod: Vec<f64> = u.iter().zip(v).map(|(p, q)| p * q).collect();
            acc += trapezoid(&prod, h);
        } else {
            acc += u.windows(2).zip(v.windows(2)).map(|(p, q)| (p[1] - p[0]) * (q[1] - q[0])).sum::<f64>() / h;
        }
    }
    acc
}

/// `size` fields `sin(πx/l) sin(kπx/l)` placed round-robin on the edges, then
/// orthonormalised in `X_m`. Each is a cosine series vanishing at both ends of its
/// edge, so `φ(l) = 0`, `φ'(0) = 0` and continuity at the node hold.
pub fn sine_basis(grid: &GraphGrid, size: usize) -> Result<Vec<StateField>> {
    let n = grid.config.n;
    let raw: Vec<StateField> = (0..size)
        .map(|b| {
            let (edge, k) = (b % n, (b / n + 1) as f64);
            let l = grid.config.lengths[edge];
            StateField::from_fn(grid, grid.horizon, |j, x| {
                if j == edge {
                    (PI * x / l).sin() * (k * PI * x / l).sin()
                } else {
                    0.0
                }
            })
        })
        .collect();
    orthonormalize(grid, raw)
}

/// Modified Gram–Schmidt in `X_m` (two passes).
pub fn orthonormalize(grid: &GraphGrid, fields: Vec<StateField>) -> Result<Vec<StateField>> {
    let mut out: Vec<StateField> = Vec::with_capacity(fields.len());
    for (i, mut f) in fields.into_iter().enumerate() {
        let start = xm_inner(grid, &f, &f).sqrt();
        for _ in 0..2 {
            for q in &out {
                f = f.axpy(-xm_inner(grid, q, &f), q);
            }
        }
        let norm = xm_inner(grid, &f, &f).sqrt();
        if !(norm > 1e-10 * start.max(f64::MIN_POSITIVE)) {
            return Err(Error::Basis(format!("basis element {i} is dependent on the previous ones")));
        }
        out.push(f.scaled(1.0 / norm));
    }
    Ok(out)
}

pub fn mass_matrix(grid: &GraphGrid, basis: &[StateField]) -> DMatrix<f64> {
    let k = basis.len();
    let mut m = DMatrix::zeros(k, k);
    for i in 0..k {
        for j in i..k {
            let v = xm_inner(grid, &basis[i], &basis[j]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    m
}

/// `B(φ, ψ)` from two trace records.
pub fn bilinear(grid: &GraphGrid, a: &TraceRecord, b: &TraceRecord) -> f64 {
    let mut acc = 0.0;
    for j in 0..grid.config.n {
        let (x, y) = if grid.config.is_neumann(j) { (&a.dx_end[j], &b.dx_end[j]) } else { (&a.dxx_end[j], &b.dxx_end[j]) };
        let prod: Vec<f64> = x.iter().zip(y).map(|(p, q)| p * q).collect();
        acc += trapezoid(&prod, grid.dt);
    }
    acc
}

/// Adjoint traces of every basis element, solved in parallel on a shared factorisation.
pub fn basis_traces(grid: &GraphGrid, basis: &[StateField]) -> Result<Vec<TraceRecord>> {
    let solver = AdjointSolver::new(grid)?;
    basis.par_iter().map(|f| solver.solve(f, 0).map(|run| run.traces)).collect()
}

fn gramian_from_traces(grid: &GraphGrid, traces: &[TraceRecord]) -> DMatrix<f64> {
    let k = traces.len();
    let mut g = DMatrix::zeros(k, k);
    for i in 0..k {
        for j in i..k {
            let v = bilinear(grid, &traces[i], &traces[j]);
            g[(i, j)] = v;
            g[(j, i)] = v;
        }
    }
    g
}

/// Generalized eigenvalues of `(g, mass)`, ascending.
pub fn generalized_eigenvalues(g: &DMatrix<f64>, mass: &DMatrix<f64>) -> Result<Vec<f64>> {
    let k = g.nrows();
    if k == 0 {
        return Ok(Vec::new());
    }
    let jitter = MASS_JITTER * mass.trace().abs();
    let shifted = mass + DMatrix::identity(k, k) * jitter;
    let chol = shifted.cholesky().ok_or_else(|| Error::Basis("mass matrix is not positive definite".into()))?;
    let l = chol.l();
    let linv = l
        .clone()
        .solve_lower_triangular(&DMatrix::identity(k, k))
        .ok_or_else(|| Error::Basis("mass matrix factor is singular".into()))?;
    let c = &linv * g * linv.transpose();
    let c = (&c + c.transpose()) * 0.5;
    let mut ev: Vec<f64> = SymmetricEigen::new(c).eigenvalues.iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    Ok(ev)
}

fn finish(grid: &GraphGrid, basis: &[StateField], g: DMatrix<f64>) -> Result<GramianResult> {
    let g = (&g + g.transpose()) * 0.5;
    let mass = mass_matrix(grid, basis);
    let eigenvalues = generalized_eigenvalues(&g, &mass)?;
    let min_eigenvalue = eigenvalues.first().copied().unwrap_or(0.0).max(0.0);
    Ok(GramianResult {
        config: grid.config.clone(),
        grid: GridSummary::from(grid),
        basis_size: basis.len(),
        entries: to_rows(&g),
        mass: to_rows(&mass),
        eigenvalues,
        min_eigenvalue,
        dirichlet_norm: DirichletNorm::Seminorm,
    })
}

pub fn assemble_gramian(grid: &GraphGrid, basis: &[StateField]) -> Result<GramianResult> {
    let traces = basis_traces(grid, basis)?;
    finish(grid, basis, gramian_from_traces(grid, &traces))
}

/// Smallest generalized eigenvalue of `(G, mass)`.
pub fn min_observability_eigenvalue(result: &GramianResult) -> Result<f64> {
    let ev = generalized_eigenvalues(&result.matrix(), &to_dmatrix(&result.mass))?;
    Ok(ev.first().copied().unwrap_or(0.0).max(0.0))
}

/// Discretisation shared by Gramian experiments.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GramianSettings {
    pub points_per_edge: usize,
    /// `dt / dx`
    pub dt_ratio: f64,
    pub horizon: f64,
    pub basis_size: usize,
}

impl Default for GramianSettings {
    fn default() -> Self {
        GramianSettings { points_per_edge: 256, dt_ratio: 0.5, horizon: 2.0, basis_size: 24 }
    }
}

impl GramianSettings {
    pub fn grid(&self, config: &GraphConfig) -> Result<GraphGrid> {
        GraphGrid::with_ratio(config.clone(), self.points_per_edge, self.dt_ratio, self.horizon)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub length: f64,
    pub min_eigenvalue: f64,
    pub classification: Option<String>,
    pub witness_lambda: Option<ComplexScalar>,
}

/// Optional spectral annotation of sweep points.
pub struct SweepAnnotation<'a> {
    pub known: &'a KnownWitnesses,
    pub scan: &'a ScanSettings,
}

/// One Gramian per length, in input order.
pub fn sweep_lengths(
    config: &GraphConfig,
    lengths: &[f64],
    settings: &GramianSettings,
    annotate: Option<SweepAnnotation<'_>>,
) -> Result<Vec<SweepPoint>> {
    if lengths.iter().any(|l| !l.is_finite()) {
        return Err(Error::Precondition("sweep lengths must be finite".into()));
    }
    lengths
        .par_iter()
        .map(|&length| {
            let cfg = config.with_length(length)?;
            let grid = settings.grid(&cfg)?;
            let basis = sine_basis(&grid, settings.basis_size)?;
            let result = assemble_gramian(&grid, &basis)?;
            let (classification, witness_lambda) = match &annotate {
                Some(a) => {
                    let c = classify_length(&cfg, a.known, a.scan, None);
                    match c.verdict {
                        Verdict::Critical { lambda, .. } => (Some("Critical".to_string()), Some(lambda)),
                        Verdict::NonCritical { .. } => (Some("NonCritical".to_string()), None),
                        Verdict::OutOfScope { .. } => (Some("OutOfScope".to_string()), None),
                    }
                }
                None => (None, None),
            };
            Ok(SweepPoint { length, min_eigenvalue: result.min_eigenvalue, classification, witness_lambda })
        })
        .collect()
}

pub fn write_sweep_csv<W: Write>(out: W, points: &[SweepPoint]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    w.write_record(["L", "min_eigenvalue", "classification", "witness_lambda"])?;
    for p in points {
        w.write_record([
            p.length.to_string(),
            p.min_eigenvalue.to_string(),
            p.classification.clone().unwrap_or_default(),
            p.witness_lambda.map(format_complex).unwrap_or_default(),
        ])?;
    }
    w.flush().map_err(|e| Error::Format(e.to_string()))?;
    Ok(())
}

pub fn save_sweep_csv(path: &Path, points: &[SweepPoint]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
    write_sweep_csv(file, points)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HumControlResult {
    pub controls: ControlSignal,
    pub terminal_error: f64,
    /// Condition number of the observability Gramian `G`.
    pub condition_number: f64,
    /// `‖M − G‖_F / ‖G‖_F`, where `M` is the discrete control-to-state operator on the basis.
    pub consistency_gap: f64,
    pub coefficients: Vec<f64>,
    pub warning: Option<String>,
}

/// `g_j = ∂_xφ_j(·, l_j)`, `p_j = −∂²_xφ_j(·, l_j)` for `φ^T = Σ c_k ψ_k`, from the basis traces.
pub fn synthesize_controls(grid: &GraphGrid, traces: &[TraceRecord], coefficients: &[f64]) -> ControlSignal {
    let mut controls = ControlSignal::zeros(grid);
    for (c, tr) in coefficients.iter().zip(traces) {
        for j in 0..grid.config.n {
            let (src, sign) = if grid.config.is_neumann(j) { (&tr.dx_end[j], 1.0) } else { (&tr.dxx_end[j], -1.0) };
            controls.channels[j].iter_mut().zip(src).for_each(|(d, s)| *d += sign * c * s);
        }
    }
    controls
}

/// State reached from rest by the controls of `φ^T = Σ c_k ψ_k`; it lies in the
/// range of the control map restricted to the basis span.
pub fn reachable_target(grid: &GraphGrid, basis: &[StateField], coefficients: &[f64]) -> Result<StateField> {
    if coefficients.len() > basis.len() {
        return Err(Error::Precondition("more coefficients than basis elements".into()));
    }
    let traces = basis_traces(grid, &basis[..coefficients.len()])?;
    let controls = synthesize_controls(grid, &traces, coefficients);
    Ok(ForwardSolver::new(grid)?.solve(&StateField::zeros(grid, 0.0), &controls, 0)?.terminal)
}

/// Controls `g_j = ∂_xφ_j(·, l_j)`, `p_j = −∂²_xφ_j(·, l_j)` for the `φ^T = Σ c_k ψ_k`
/// that matches the target's moments, `⟨u(T), ψ_k⟩ = ⟨u^T, ψ_k⟩`.
///
/// The moment system uses `M_kl = ⟨u_l(T), ψ_k⟩` with `u_l` the simulated response to the
/// controls of `ψ_l`. In the continuum `M = G`; discretely `M` makes the moment equations
/// hold for the simulated state instead of only up to the duality defect.
pub fn hum_control(grid: &GraphGrid, target: &StateField, basis: &[StateField]) -> Result<HumControlResult> {
    hum_control_with(grid, target, basis, HumMoments::Simulated)
}

/// Matrix of the moment system solved by HUM.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum HumMoments {
    /// `M_kl = ⟨u_l(T), ψ_k⟩` from forward simulations.
    #[default]
    Simulated,
    /// The trace Gramian `G` itself.
    Gramian,
}

pub fn hum_control_with(grid: &GraphGrid, target: &StateField, basis: &[StateField], moments: HumMoments) -> Result<HumControlResult> {
    let k = basis.len();
    let traces = basis_traces(grid, basis)?;
    let g = gramian_from_traces(grid, &traces);
    let g = (&g + g.transpose()) * 0.5;
    let eig = SymmetricEigen::new(g.clone());
    let (lo, hi) = eig.eigenvalues.iter().fold((f64::INFINITY, 0.0f64), |(a, b), &v| (a.min(v), b.max(v.abs())));
    let condition_number = if lo > 0.0 { hi / lo } else { f64::INFINITY };
    let warning = (condition_number > HUM_CONDITION_LIMIT).then(|| {
        format!("Gramian is numerically singular (condition {condition_number:.3e}); the length is likely critical")
    });

    let forward = ForwardSolver::new(grid)?;
    let rest = StateField::zeros(grid, 0.0);
    let responses: Vec<StateField> = traces
        .par_iter()
        .map(|tr| {
            let unit = synthesize_controls(grid, std::slice::from_ref(tr), &[1.0]);
            forward.solve(&rest, &unit, 0).map(|run| run.terminal)
        })
        .collect::<Result<_>>()?;
    let m = DMatrix::from_fn(k, k, |r, c| l2_inner(grid, &responses[c], &basis[r]));
    let consistency_gap = if g.norm() > 0.0 { (&m - &g).norm() / g.norm() } else { 0.0 };

    let rhs = DVector::from_iterator(k, basis.iter().map(|b| l2_inner(grid, target, b)));
    let coefficients: Vec<f64> = if k == 0 || rhs.amax() == 0.0 {
        vec![0.0; k]
    } else {
        // pseudo-inverse keeps the synthesis finite when the warning fires
        let system = match moments {
            HumMoments::Simulated => m.clone(),
            HumMoments::Gramian => g.clone(),
        };
        let svd = system.svd(true, true);
        let tol = svd.singular_values.max() * 1e-14;
        let c = svd.solve(&rhs, tol).map_err(|e| Error::Criticality(e.to_string()))?;
        c.iter().copied().collect()
    };
    let controls = synthesize_controls(grid, &traces, &coefficients);
    let reached = forward.solve(&rest, &controls, 0)?.terminal;
    let diff = reached.axpy(-1.0, target);
    let target_norm = l2_inner(grid, target, target).sqrt();
    let terminal_error = if target_norm == 0.0 {
        l2_inner(grid, &diff, &diff).sqrt()
    } else {
        l2_inner(grid, &diff, &diff).sqrt() / target_norm
    };
    Ok(HumControlResult { controls, terminal_error, condition_number, consistency_gap, coefficients, warning })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(n: usize, m: usize, len: f64) -> GraphGrid {
        GraphGrid::with_ratio(GraphConfig::uniform(n, m, len).unwrap(), 48, 0.5, 0.5).unwrap()
    }

    #[test]
    fn basis_is_orthonormal() {
        let g = small(3, 1, 2.0);
        let b = sine_basis(&g, 9).unwrap();
        let m = mass_matrix(&g, &b);
        assert!((m - DMatrix::identity(9, 9)).amax() < 1e-12);
    }

    #[test]
    fn dependent_basis_is_rejected() {
        let g = small(2, 1, 2.0);
        let mut b = sine_basis(&g, 2).unwrap();
        b.push(b[0].scaled(3.0));
        assert!(matches!(orthonormalize(&g, b), Err(Error::Basis(_))));
    }

    #[test]
    fn single_element_is_trace_energy() {
        let g = small(2, 1, 2.0);
        let b = sine_basis(&g, 1).unwrap();
        let r = assemble_gramian(&g, &b).unwrap();
        let tr = &basis_traces(&g, &b).unwrap()[0];
        assert!((r.entries[0][0] - bilinear(&g, tr, tr)).abs() < 1e-15);
        assert!(r.entries[0][0] > 0.0);
    }

    #[test]
    fn permutation_and_pairwise() {
        let g = small(3, 2, 3.0);
        let b = sine_basis(&g, 4).unwrap();
        let r = assemble_gramian(&g, &b).unwrap();
        let perm = [2usize, 0, 3, 1];
        let pb: Vec<StateField> = perm.iter().map(|&i| b[i].clone()).collect();
        let rp = assemble_gramian(&g, &pb).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                assert!((rp.entries[i][j] - r.entries[perm[i]][perm[j]]).abs() < 1e-14 * r.trace());
            }
        }
        let pair = assemble_gramian(&g, &[b[1].clone(), b[3].clone()]).unwrap();
        assert!((pair.entries[0][1] - r.entries[1][3]).abs() < 1e-14 * r.trace());
        assert!(r.eigenvalues.iter().all(|&e| e >= -1e-10 * r.trace()));
    }

    #[test]
    fn zero_gramian_and_zero_target() {
        let m = DMatrix::identity(3, 3);
        let ev = generalized_eigenvalues(&DMatrix::zeros(3, 3), &m).unwrap();
        assert!(ev.iter().all(|&e| e == 0.0));
        let g = small(2, 1, 2.0);
        let b = sine_basis(&g, 4).unwrap();
        let hum = hum_control(&g, &StateField::zeros(&g, g.horizon), &b).unwrap();
        assert_eq!(hum.terminal_error, 0.0);
        assert!(hum.controls.channels.iter().flatten().all(|v| *v == 0.0));
    }

    #[test]
    fn singular_mass_is_a_basis_error() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]) * 0.0;
        assert!(matches!(generalized_eigenvalues(&DMatrix::identity(2, 2), &m), Err(Error::Basis(_))));
    }
}
