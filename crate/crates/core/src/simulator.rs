//! Finite differences for the forward control system and its adjoint on the star graph.
//!
//! Forward: `u_t = −u_x − u_xxx`, `u_j(0) = u_1(0)`, `Σ u_j''(0) = −α u_1(0)`,
//! `u_j(l) = 0, u_j'(l) = g_j` for `j ≤ m` and `u_j(l) = p_j, u_j'(l) = 0` otherwise.
//!
//! Adjoint: `φ_t + φ_x + φ_xxx = 0` solved backwards from `φ(T) = φ^T`, with
//! `φ_j(l) = 0`, `φ_j'(0) = 0`, `φ_j(0) = φ_1(0)`, `Σ φ_j''(0) = (α − N) φ_1(0)`.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::banded::{BandLu, BandMatrix};
use crate::config::GraphConfig;
use crate::error::{Error, Result};

pub const MIN_POINTS: usize = 16;
/// `dt ≤ DT_SAFEGUARD · min dx`
pub const DT_SAFEGUARD: f64 = 1.0;
const BAND: usize = 4;
/// Crank–Nicolson steps replaced by damped backward-Euler pairs at the start of a solve.
pub const STARTUP_STEPS: usize = 2;

/// Finite-difference weights for the `deriv`-th derivative at `z` (Fornberg).
pub fn fd_weights(nodes: &[f64], z: f64, deriv: usize) -> Vec<f64> {
    let n = nodes.len();
    assert!(n > deriv, "need more nodes than the derivative order");
    let mut c = vec![vec![0.0; deriv + 1]; n];
    let mut c1 = 1.0;
    let mut c4 = nodes[0] - z;
    c[0][0] = 1.0;
    for i in 1..n {
        let mn = i.min(deriv);
        let mut c2 = 1.0;
        let c5 = c4;
        c4 = nodes[i] - z;
        for j in 0..i {
            let c3 = nodes[i] - nodes[j];
            c2 *= c3;
            if j == i - 1 {
                for k in (1..=mn).rev() {
                    c[i][k] = c1 * (k as f64 * c[i - 1][k - 1] - c5 * c[i - 1][k]) / c2;
                }
                c[i][0] = -c1 * c5 * c[i - 1][0] / c2;
            }
            for k in (1..=mn).rev() {
                c[j][k] = (c4 * c[j][k] - k as f64 * c[j][k - 1]) / c3;
            }
            c[j][0] = c4 * c[j][0] / c3;
        }
        c1 = c2;
    }
    c.into_iter().map(|row| row[deriv]).collect()
}

fn int_weights(points: std::ops::RangeInclusive<i64>, at: i64, deriv: usize) -> Vec<(i64, f64)> {
    let pts: Vec<i64> = points.collect();
    let nodes: Vec<f64> = pts.iter().map(|&p| p as f64).collect();
    pts.into_iter().zip(fd_weights(&nodes, at as f64, deriv)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphGrid {
    pub config: GraphConfig,
    pub points_per_edge: usize,
    pub dt: f64,
    pub horizon: f64,
    pub steps: usize,
}

impl GraphGrid {
    /// `dt` is shrunk so that a whole number of steps fits in `[0, horizon]`.
    pub fn new(config: GraphConfig, points_per_edge: usize, dt: f64, horizon: f64) -> Result<Self> {
        if points_per_edge < MIN_POINTS {
            return Err(Error::Resolution(format!(
                "{points_per_edge} points per edge, need at least {MIN_POINTS}"
            )));
        }
        if !(horizon > 0.0 && dt > 0.0) {
            return Err(Error::Precondition("horizon and dt must be positive".into()));
        }
        let steps = (horizon / dt - 1e-9).ceil().max(1.0) as usize;
        let dt = horizon / steps as f64;
        let grid = GraphGrid { config, points_per_edge, dt, horizon, steps };
        let min_dx = (0..grid.config.n).map(|j| grid.dx(j)).fold(f64::INFINITY, f64::min);
        if dt > DT_SAFEGUARD * min_dx * (1.0 + 1e-12) {
            return Err(Error::Resolution(format!("dt = {dt} exceeds {DT_SAFEGUARD}·dx = {min_dx}")));
        }
        Ok(grid)
    }

    /// `dt = ratio · min dx`
    pub fn with_ratio(config: GraphConfig, points_per_edge: usize, ratio: f64, horizon: f64) -> Result<Self> {
        let intervals = points_per_edge.saturating_sub(1).max(1) as f64;
        let min_dx = config.lengths.iter().cloned().fold(f64::INFINITY, f64::min) / intervals;
        Self::new(config, points_per_edge, ratio * min_dx, horizon)
    }

    pub fn intervals(&self) -> usize {
        self.points_per_edge - 1
    }

    pub fn dx(&self, edge: usize) -> f64 {
        self.config.lengths[edge] / self.intervals() as f64
    }

    pub fn nodes(&self, edge: usize) -> Vec<f64> {
        let h = self.dx(edge);
        (0..self.points_per_edge).map(|i| i as f64 * h).collect()
    }

    pub fn times(&self) -> Vec<f64> {
        (0..=self.steps).map(|k| k as f64 * self.dt).collect()
    }

    fn free_per_edge(&self) -> usize {
        self.intervals() - 1
    }

    fn free_len(&self) -> usize {
        self.config.n * self.free_per_edge()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateField {
    pub values: Vec<Vec<f64>>,
    pub time: f64,
}

impl StateField {
    pub fn zeros(grid: &GraphGrid, time: f64) -> Self {
        StateField { values: vec![vec![0.0; grid.points_per_edge]; grid.config.n], time }
    }

    /// Sample `f(edge, x)` on the grid.
    pub fn from_fn(grid: &GraphGrid, time: f64, f: impl Fn(usize, f64) -> f64) -> Self {
        let values = (0..grid.config.n)
            .map(|j| grid.nodes(j).into_iter().map(|x| f(j, x)).collect())
            .collect();
        StateField { values, time }
    }

    pub fn scaled(&self, a: f64) -> Self {
        StateField { values: self.values.iter().map(|e| e.iter().map(|v| a * v).collect()).collect(), time: self.time }
    }

    /// `self + a·other`
    pub fn axpy(&self, a: f64, other: &StateField) -> Self {
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(x, y)| x.iter().zip(y).map(|(p, q)| p + a * q).collect())
            .collect();
        StateField { values, time: self.time }
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().flatten().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Trapezoid rule on samples with spacing `h`.
pub fn trapezoid(y: &[f64], h: f64) -> f64 {
    if y.len() < 2 {
        return 0.0;
    }
    h * (y.iter().sum::<f64>() - 0.5 * (y[0] + y[y.len() - 1]))
}

/// `Σ_j ∫ a_j b_j dx`
pub fn l2_inner(grid: &GraphGrid, a: &StateField, b: &StateField) -> f64 {
    (0..grid.config.n)
        .map(|j| {
            let prod: Vec<f64> = a.values[j].iter().zip(&b.values[j]).map(|(p, q)| p * q).collect();
            trapezoid(&prod, grid.dx(j))
        })
        .sum()
}

pub fn l2_norm(grid: &GraphGrid, a: &StateField) -> f64 {
    l2_inner(grid, a, a).max(0.0).sqrt()
}

/// Per-edge boundary data on the time grid: `g_j` on Neumann edges, `p_j` on the others.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlSignal {
    pub channels: Vec<Vec<f64>>,
}

impl ControlSignal {
    pub fn zeros(grid: &GraphGrid) -> Self {
        ControlSignal { channels: vec![vec![0.0; grid.steps + 1]; grid.config.n] }
    }

    pub fn from_fn(grid: &GraphGrid, f: impl Fn(usize, f64) -> f64) -> Self {
        let t = grid.times();
        ControlSignal { channels: (0..grid.config.n).map(|j| t.iter().map(|&s| f(j, s)).collect()).collect() }
    }

    fn check(&self, grid: &GraphGrid) -> Result<()> {
        if self.channels.len() != grid.config.n || self.channels.iter().any(|c| c.len() != grid.steps + 1) {
            return Err(Error::Precondition("control samples do not match the time grid".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub times: Vec<f64>,
    /// `∂_x φ_j(t, l_j)`
    pub dx_end: Vec<Vec<f64>>,
    /// `∂²_x φ_j(t, l_j)`
    pub dxx_end: Vec<Vec<f64>>,
    /// `φ_1(t, 0)`
    pub node: Vec<f64>,
}

impl TraceRecord {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(file);
        w.write_record(["t", "edge", "quantity", "value"])?;
        for (k, t) in self.times.iter().enumerate() {
            for j in 0..self.dx_end.len() {
                w.write_record([t.to_string(), (j + 1).to_string(), "dx_end".into(), self.dx_end[j][k].to_string()])?;
                w.write_record([t.to_string(), (j + 1).to_string(), "dxx_end".into(), self.dxx_end[j][k].to_string()])?;
            }
            w.write_record([t.to_string(), "1".into(), "node".into(), self.node[k].to_string()])?;
        }
        w.flush().map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SystemKind {
    Adjoint,
    Forward,
}

/// `v = f[free] + node·κ + control·c_j`
#[derive(Debug, Clone, Copy, Default)]
struct Dep {
    free: Option<usize>,
    node: f64,
    control: f64,
}

/// Reduced generator `A f + B c` on the free unknowns; `A = L + u wᵀ`, `κ = wᵀ f`.
#[derive(Debug, Clone)]
pub struct Generator {
    pub kind: SystemKind,
    grid: GraphGrid,
    local: BandMatrix,
    u: Vec<f64>,
    w: Vec<f64>,
    /// `(row, edge, coefficient)`
    control: Vec<(usize, usize, f64)>,
}

impl Generator {
    pub fn new(grid: &GraphGrid, kind: SystemKind) -> Result<Self> {
        if grid.points_per_edge < MIN_POINTS {
            return Err(Error::Resolution(format!("{} points per edge", grid.points_per_edge)));
        }
        let n = grid.intervals() as i64;
        let nf = grid.free_per_edge();
        let ne = grid.config.n;
        let size = grid.free_len();
        let idx = |j: usize, i: i64| j * nf + (i as usize - 1);
        let alpha = grid.config.alpha;

        let mut w = vec![0.0; size];
        match kind {
            SystemKind::Adjoint => {
                // ghost v_{-1} = v_1 from φ'(0) = 0, so φ''(0) ≈ 2(v_1 − κ)/dx²
                let denom: f64 = (0..ne).map(|j| 2.0 / grid.dx(j).powi(2)).sum::<f64>() + (alpha - ne as f64);
                for j in 0..ne {
                    w[idx(j, 1)] = 2.0 / grid.dx(j).powi(2) / denom;
                }
            }
            SystemKind::Forward => {
                let wxx = int_weights(0..=3, 0, 2);
                let denom: f64 = (0..ne).map(|j| wxx[0].1 / grid.dx(j).powi(2)).sum::<f64>() + alpha;
                for j in 0..ne {
                    for &(p, c) in &wxx[1..] {
                        w[idx(j, p)] = -c / grid.dx(j).powi(2) / denom;
                    }
                }
            }
        }

        let dep = |j: usize, i: i64| -> Dep {
            let h = grid.dx(j);
            if (1..n).contains(&i) {
                return Dep { free: Some(idx(j, i)), ..Dep::default() };
            }
            match (kind, i) {
                (_, 0) => Dep { node: 1.0, ..Dep::default() },
                (SystemKind::Adjoint, -1) => Dep { free: Some(idx(j, 1)), ..Dep::default() },
                (SystemKind::Adjoint, i) if i == n => Dep::default(),
                (SystemKind::Forward, i) if i == n => {
                    Dep { control: if grid.config.is_neumann(j) { 0.0 } else { 1.0 }, ..Dep::default() }
                }
                // centred u_x(l) = (v_{n+1} − v_{n−1})/(2dx)
                (SystemKind::Forward, i) if i == n + 1 => Dep {
                    free: Some(idx(j, n - 1)),
                    control: if grid.config.is_neumann(j) { 2.0 * h } else { 0.0 },
                    ..Dep::default()
                },
                _ => unreachable!("stencil reached point {i}"),
            }
        };

        let mut local = BandMatrix::zeros(size, BAND, BAND);
        let mut u = vec![0.0; size];
        let mut control = Vec::new();
        for j in 0..ne {
            let h = grid.dx(j);
            for i in 1..n {
                let row = idx(j, i);
                let third = match kind {
                    SystemKind::Adjoint if i + 2 > n => int_weights(n - 5..=n, i, 3),
                    SystemKind::Forward if i < 2 => int_weights(0..=5, i, 3),
                    _ => int_weights(i - 2..=i + 2, i, 3),
                };
                let first = int_weights(i - 1..=i + 1, i, 1);
                // adjoint in reversed time: ψ_s = ψ_x + ψ_xxx; forward: u_t = −u_x − u_xxx
                let sign = match kind {
                    SystemKind::Adjoint => 1.0,
                    SystemKind::Forward => -1.0,
                };
                let terms = third
                    .iter()
                    .map(|&(p, c)| (p, sign * c / h.powi(3)))
                    .chain(first.iter().map(|&(p, c)| (p, sign * c / h)));
                for (p, c) in terms {
                    let d = dep(j, p);
                    if let Some(col) = d.free {
                        local.add(row, col, c);
                    }
                    u[row] += c * d.node;
                    if d.control != 0.0 {
                        control.push((row, j, c * d.control));
                    }
                }
            }
        }
        Ok(Generator { kind, grid: grid.clone(), local, u, w, control })
    }

    pub fn dim(&self) -> usize {
        self.u.len()
    }

    pub fn node_value(&self, f: &[f64]) -> f64 {
        self.w.iter().zip(f).map(|(a, b)| a * b).sum()
    }

    /// `y = A f`
    pub fn apply(&self, f: &[f64], y: &mut [f64]) {
        self.local.mul_vec(f, y);
        let k = self.node_value(f);
        y.iter_mut().zip(&self.u).for_each(|(yi, ui)| *yi += ui * k);
    }

    /// `y += B c` for control values `c` (one per edge).
    fn add_control(&self, c: &[f64], scale: f64, y: &mut [f64]) {
        for &(row, j, coef) in &self.control {
            y[row] += scale * coef * c[j];
        }
    }

    /// Free unknowns of a field after checking the eliminated constraints.
    /// `end_values = None` skips the outer-end check (forward data, where the end value is a control).
    pub fn restrict(&self, field: &StateField, end_values: Option<&[f64]>) -> Result<Vec<f64>> {
        let g = &self.grid;
        let n = g.intervals();
        if field.values.len() != g.config.n || field.values.iter().any(|e| e.len() != g.points_per_edge) {
            return Err(Error::Precondition("field does not match the grid".into()));
        }
        let scale = field.max_abs().max(1.0);
        let node = field.values[0][0];
        for j in 0..g.config.n {
            if (field.values[j][0] - node).abs() > 1e-10 * scale {
                return Err(Error::Precondition(format!("edge {} breaks continuity at the node", j + 1)));
            }
            if let Some(ends) = end_values {
                if (field.values[j][n] - ends[j]).abs() > 1e-10 * scale {
                    return Err(Error::Precondition(format!(
                        "edge {} has value {} at its outer end, expected {}",
                        j + 1,
                        field.values[j][n],
                        ends[j]
                    )));
                }
            }
        }
        Ok(field.values.iter().flat_map(|e| e[1..n].iter().copied()).collect())
    }

    pub fn extend(&self, f: &[f64], end_values: &[f64], time: f64) -> StateField {
        let g = &self.grid;
        let n = g.intervals();
        let nf = g.free_per_edge();
        let k = self.node_value(f);
        let values = (0..g.config.n)
            .map(|j| {
                let mut v = Vec::with_capacity(n + 1);
                v.push(k);
                v.extend_from_slice(&f[j * nf..(j + 1) * nf]);
                v.push(end_values[j]);
                v
            })
            .collect();
        StateField { values, time }
    }
}

/// Crank–Nicolson factorisation of `I − (dt/2) A` (banded LU plus a rank-one update).
#[derive(Debug, Clone)]
pub struct CnStepper {
    pub generator: Generator,
    lu: BandLu,
    z: Vec<f64>,
    denom: f64,
    half: f64,
}

impl CnStepper {
    pub fn new(grid: &GraphGrid, kind: SystemKind) -> Result<Self> {
        let generator = Generator::new(grid, kind)?;
        let half = 0.5 * grid.dt;
        let mut b = generator.local.clone();
        b.scale_shift(-half, 1.0);
        let lu = b.factor()?;
        let mut z = generator.u.clone();
        lu.solve_in_place(&mut z);
        let denom = 1.0 - half * generator.w.iter().zip(&z).map(|(a, b)| a * b).sum::<f64>();
        if !(denom.abs() > 1e-12) {
            return Err(Error::Configuration("node coupling makes the implicit step singular".into()));
        }
        Ok(CnStepper { generator, lu, z, denom, half })
    }

    /// One step; `c_now`, `c_next` are control values at the two time levels.
    pub fn step(&self, f: &[f64], c_now: &[f64], c_next: &[f64]) -> Vec<f64> {
        let g = &self.generator;
        let mut rhs = vec![0.0; f.len()];
        g.apply(f, &mut rhs);
        rhs.iter_mut().zip(f).for_each(|(r, fi)| *r = fi + self.half * *r);
        g.add_control(c_now, self.half, &mut rhs);
        g.add_control(c_next, self.half, &mut rhs);
        self.solve_shifted(rhs)
    }

    fn solve_shifted(&self, mut rhs: Vec<f64>) -> Vec<f64> {
        self.lu.solve_in_place(&mut rhs);
        let s = self.half * self.generator.node_value(&rhs) / self.denom;
        rhs.iter_mut().zip(&self.z).for_each(|(y, zi)| *y += s * zi);
        rhs
    }

    /// Two backward-Euler half steps over the same interval; damps the modes
    /// Crank–Nicolson leaves undamped when the data are not smooth.
    pub fn damped_step(&self, f: &[f64], c_now: &[f64], c_next: &[f64]) -> Vec<f64> {
        let mid: Vec<f64> = c_now.iter().zip(c_next).map(|(a, b)| 0.5 * (a + b)).collect();
        let mut y = f.to_vec();
        for c in [&mid[..], c_next] {
            self.generator.add_control(c, self.half, &mut y);
            y = self.solve_shifted(y);
        }
        y
    }

    /// Damped start for the first `STARTUP_STEPS` steps, Crank–Nicolson afterwards.
    pub fn advance(&self, k: usize, f: &[f64], c_now: &[f64], c_next: &[f64]) -> Vec<f64> {
        if k <= STARTUP_STEPS {
            self.damped_step(f, c_now, c_next)
        } else {
            self.step(f, c_now, c_next)
        }
    }
}

fn end_traces(field: &StateField, grid: &GraphGrid, j: usize) -> (f64, f64) {
    let v = &field.values[j];
    let n = grid.intervals();
    let h = grid.dx(j);
    let dx = (3.0 * v[n] - 4.0 * v[n - 1] + v[n - 2]) / (2.0 * h);
    // third order; the four-point rule leaves a visible bias in the duality pairing
    let dxx = (35.0 * v[n] - 104.0 * v[n - 1] + 114.0 * v[n - 2] - 56.0 * v[n - 3] + 11.0 * v[n - 4]) / (12.0 * h * h);
    (dx, dxx)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdjointRun {
    /// `φ(0)`
    pub initial: StateField,
    /// `φ(T)`
    pub terminal: StateField,
    pub traces: TraceRecord,
    /// Stored frames in increasing time (empty unless requested).
    pub trajectory: Vec<StateField>,
}

pub struct AdjointSolver {
    pub grid: GraphGrid,
    stepper: CnStepper,
}

impl AdjointSolver {
    pub fn new(grid: &GraphGrid) -> Result<Self> {
        Ok(AdjointSolver { grid: grid.clone(), stepper: CnStepper::new(grid, SystemKind::Adjoint)? })
    }

    pub fn generator(&self) -> &Generator {
        &self.stepper.generator
    }

    /// One backward step from time `t` to `t − dt`.
    pub fn step(&self, state: &StateField) -> Result<StateField> {
        let zeros = vec![0.0; self.grid.config.n];
        let f = self.stepper.generator.restrict(state, Some(&zeros))?;
        let f = self.stepper.step(&f, &zeros, &zeros);
        Ok(self.stepper.generator.extend(&f, &zeros, state.time - self.grid.dt))
    }

    /// Backward solve from `φ(T) = phi_t`; `keep_every = k > 0` stores every k-th frame.
    pub fn solve(&self, phi_t: &StateField, keep_every: usize) -> Result<AdjointRun> {
        let g = &self.grid;
        let ne = g.config.n;
        let zeros = vec![0.0; ne];
        let gen = &self.stepper.generator;
        let mut f = gen.restrict(phi_t, Some(&zeros))?;
        let steps = g.steps;
        let mut traces = TraceRecord {
            times: g.times(),
            dx_end: vec![vec![0.0; steps + 1]; ne],
            dxx_end: vec![vec![0.0; steps + 1]; ne],
            node: vec![0.0; steps + 1],
        };
        let mut trajectory = Vec::new();
        let record = |field: &StateField, k: usize, traces: &mut TraceRecord| {
            for j in 0..ne {
                let (a, b) = end_traces(field, g, j);
                traces.dx_end[j][k] = a;
                traces.dxx_end[j][k] = b;
            }
            traces.node[k] = field.values[0][0];
        };
        let mut field = gen.extend(&f, &zeros, g.horizon);
        let terminal = field.clone();
        record(&field, steps, &mut traces);
        if keep_every > 0 {
            trajectory.push(field.clone());
        }
        for s in 1..=steps {
            f = self.stepper.advance(s, &f, &zeros, &zeros);
            let k = steps - s;
            field = gen.extend(&f, &zeros, k as f64 * g.dt);
            record(&field, k, &mut traces);
            if keep_every > 0 && (s % keep_every == 0 || k == 0) {
                trajectory.push(field.clone());
            }
        }
        trajectory.reverse();
        Ok(AdjointRun { initial: field, terminal, traces, trajectory })
    }
}

pub fn assemble_adjoint_generator(grid: &GraphGrid) -> Result<Generator> {
    Generator::new(grid, SystemKind::Adjoint)
}

pub fn solve_adjoint(phi_t: &StateField, grid: &GraphGrid) -> Result<AdjointRun> {
    AdjointSolver::new(grid)?.solve(phi_t, 0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForwardRun {
    pub terminal: StateField,
    pub trajectory: Vec<StateField>,
}

pub struct ForwardSolver {
    pub grid: GraphGrid,
    stepper: CnStepper,
}

impl ForwardSolver {
    pub fn new(grid: &GraphGrid) -> Result<Self> {
        Ok(ForwardSolver { grid: grid.clone(), stepper: CnStepper::new(grid, SystemKind::Forward)? })
    }

    fn end_values(&self, controls: &ControlSignal, k: usize) -> Vec<f64> {
        (0..self.grid.config.n)
            .map(|j| if self.grid.config.is_neumann(j) { 0.0 } else { controls.channels[j][k] })
            .collect()
    }

    fn at(&self, controls: &ControlSignal, k: usize) -> Vec<f64> {
        controls.channels.iter().map(|c| c[k]).collect()
    }

    pub fn solve(&self, u0: &StateField, controls: &ControlSignal, keep_every: usize) -> Result<ForwardRun> {
        controls.check(&self.grid)?;
        let gen = &self.stepper.generator;
        let mut f = gen.restrict(u0, None)?;
        let mut trajectory = Vec::new();
        if keep_every > 0 {
            trajectory.push(gen.extend(&f, &self.end_values(controls, 0), 0.0));
        }
        for k in 1..=self.grid.steps {
            f = self.stepper.advance(k, &f, &self.at(controls, k - 1), &self.at(controls, k));
            if keep_every > 0 && (k % keep_every == 0 || k == self.grid.steps) {
                trajectory.push(gen.extend(&f, &self.end_values(controls, k), k as f64 * self.grid.dt));
            }
        }
        let steps = self.grid.steps;
        let terminal = gen.extend(&f, &self.end_values(controls, steps), self.grid.horizon);
        Ok(ForwardRun { terminal, trajectory })
    }
}

pub fn solve_forward(u0: &StateField, controls: &ControlSignal, grid: &GraphGrid) -> Result<ForwardRun> {
    ForwardSolver::new(grid)?.solve(u0, controls, 0)
}

/// Relative defect of
/// `½‖φ(T)‖² = (α − N/2)∫φ_1(t,0)² + ½Σ∫φ_x(t,l_j)² + ½‖φ(0)‖²`.
pub fn energy_identity_residual(run: &AdjointRun, grid: &GraphGrid) -> f64 {
    let lhs = 0.5 * l2_inner(grid, &run.terminal, &run.terminal);
    let node: Vec<f64> = run.traces.node.iter().map(|v| v * v).collect();
    let n = grid.config.n as f64;
    let mut rhs = (grid.config.alpha - n / 2.0) * trapezoid(&node, grid.dt);
    for j in 0..grid.config.n {
        let sq: Vec<f64> = run.traces.dx_end[j].iter().map(|v| v * v).collect();
        rhs += 0.5 * trapezoid(&sq, grid.dt);
    }
    rhs += 0.5 * l2_inner(grid, &run.initial, &run.initial);
    relative_gap(lhs, rhs)
}

fn relative_gap(lhs: f64, rhs: f64) -> f64 {
    let scale = lhs.abs().max(rhs.abs());
    if scale == 0.0 {
        0.0
    } else {
        (lhs - rhs).abs() / scale
    }
}

/// Both sides of `Σ∫u_j(T)φ_j^T = Σ_{j≤m}∫∂_xφ_j(·,l_j) g_j − Σ_{j>m}∫∂²_xφ_j(·,l_j) p_j`.
pub fn duality_sides(terminal: &StateField, controls: &ControlSignal, phi_t: &StateField, traces: &TraceRecord, grid: &GraphGrid) -> (f64, f64) {
    let lhs = l2_inner(grid, terminal, phi_t);
    let mut rhs = 0.0;
    for j in 0..grid.config.n {
        let (tr, sign) = if grid.config.is_neumann(j) { (&traces.dx_end[j], 1.0) } else { (&traces.dxx_end[j], -1.0) };
        let prod: Vec<f64> = tr.iter().zip(&controls.channels[j]).map(|(a, b)| a * b).collect();
        rhs += sign * trapezoid(&prod, grid.dt);
    }
    (lhs, rhs)
}

/// Relative defect of the duality identity for `u(0) = 0`.
pub fn duality_residual(controls: &ControlSignal, phi_t: &StateField, grid: &GraphGrid) -> Result<f64> {
    let forward = solve_forward(&StateField::zeros(grid, 0.0), controls, grid)?;
    let adjoint = solve_adjoint(phi_t, grid)?;
    let (lhs, rhs) = duality_sides(&forward.terminal, controls, &adjoint.terminal, &adjoint.traces, grid);
    Ok(relative_gap(lhs, rhs))
}

/// Write several named trace records into one CSV stream.
pub fn write_trace_rows<W: Write>(out: W, traces: &TraceRecord) -> Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    w.write_record(["t", "edge", "quantity", "value"])?;
    for (k, t) in traces.times.iter().enumerate() {
        for j in 0..traces.dx_end.len() {
            w.write_record([t.to_string(), (j + 1).to_string(), "dx_end".into(), traces.dx_end[j][k].to_string()])?;
            w.write_record([t.to_string(), (j + 1).to_string(), "dxx_end".into(), traces.dxx_end[j][k].to_string()])?;
        }
        w.write_record([t.to_string(), "1".into(), "node".into(), traces.node[k].to_string()])?;
    }
    w.flush().map_err(|e| Error::Format(e.to_string()))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn grid(n: usize, m: usize, len: f64, points: usize, ratio: f64, t: f64) -> GraphGrid {
        GraphGrid::with_ratio(GraphConfig::uniform(n, m, len).unwrap(), points, ratio, t).unwrap()
    }

    #[test]
    fn fornberg_central_stencils() {
        let w = fd_weights(&[-2.0, -1.0, 0.0, 1.0, 2.0], 0.0, 3);
        let expect = [-0.5, 1.0, 0.0, -1.0, 0.5];
        for (a, b) in w.iter().zip(expect) {
            assert!((a - b).abs() < 1e-12);
        }
        let w = fd_weights(&[0.0, 1.0, 2.0, 3.0], 0.0, 2);
        for (a, b) in w.iter().zip([2.0, -5.0, 4.0, -1.0]) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn resolution_guard() {
        let cfg = GraphConfig::uniform(3, 1, 1.0).unwrap();
        assert!(matches!(GraphGrid::new(cfg.clone(), 15, 0.01, 1.0), Err(Error::Resolution(_))));
        assert!(matches!(GraphGrid::new(cfg, 64, 0.5, 1.0), Err(Error::Resolution(_))));
    }

    #[test]
    fn constant_state_is_rejected() {
        let g = grid(3, 1, 2.0, 33, 0.5, 0.1);
        let ones = StateField::from_fn(&g, g.horizon, |_, _| 1.0);
        assert!(solve_adjoint(&ones, &g).is_err());
    }

    #[test]
    fn zero_in_zero_out() {
        let g = grid(3, 1, 2.0, 33, 0.5, 0.1);
        let run = solve_adjoint(&StateField::zeros(&g, g.horizon), &g).unwrap();
        assert_eq!(run.initial.max_abs(), 0.0);
        assert!(run.traces.dx_end.iter().flatten().all(|v| *v == 0.0));
        let fwd = solve_forward(&StateField::zeros(&g, 0.0), &ControlSignal::zeros(&g), &g).unwrap();
        assert_eq!(fwd.terminal.max_abs(), 0.0);
        assert_eq!(energy_identity_residual(&run, &g), 0.0);
    }

    #[test]
    fn one_minus_cos_interior_consistency() {
        // φ = ±(1 − cos x) on two edges solves φ_x + φ_xxx = 0 exactly
        let mut prev = None;
        for points in [65, 129, 257] {
            let g = grid(3, 2, 2.0 * PI, points, 0.5, 0.1);
            let gen = assemble_adjoint_generator(&g).unwrap();
            let sign = [1.0, -1.0, 0.0];
            let field = StateField::from_fn(&g, 0.0, |j, x| sign[j] * (1.0 - x.cos()));
            let f = gen.restrict(&field, Some(&[0.0; 3])).unwrap();
            let mut y = vec![0.0; f.len()];
            gen.apply(&f, &mut y);
            let err = y.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            if let Some(p) = prev {
                let order = f64::log2(p / err);
                assert!(order > 1.7, "order {order}");
            }
            prev = Some(err);
        }
    }

    #[test]
    fn adjoint_step_is_linear_and_contractive() {
        let g = grid(3, 1, 2.0, 65, 0.5, 0.2);
        let solver = AdjointSolver::new(&g).unwrap();
        let a = StateField::from_fn(&g, g.horizon, |j, x| (j as f64 + 1.0) * (PI * x / 2.0).sin().powi(4));
        let b = StateField::from_fn(&g, g.horizon, |j, x| (x * (2.0 - x)).powi(3) * if j == 1 { -1.0 } else { 0.5 });
        let lhs = solver.step(&a.scaled(2.0).axpy(-3.0, &b)).unwrap();
        let rhs = solver.step(&a).unwrap().scaled(2.0).axpy(-3.0, &solver.step(&b).unwrap());
        let diff = lhs.axpy(-1.0, &rhs).max_abs();
        assert!(diff < 1e-12 * lhs.max_abs().max(1.0), "{diff}");
        let run = solver.solve(&a, 0).unwrap();
        assert!(l2_norm(&g, &run.initial) <= l2_norm(&g, &a) * (1.0 + 1e-6));
        let trace: f64 = run.traces.dx_end.iter().map(|t| trapezoid(&t.iter().map(|v| v * v).collect::<Vec<_>>(), g.dt)).sum();
        assert!(trace <= l2_inner(&g, &a, &a) * (1.0 + 1e-3));
    }

    #[test]
    fn forward_superposition() {
        let g = grid(3, 1, 2.0, 65, 0.5, 0.2);
        let solver = ForwardSolver::new(&g).unwrap();
        let u0 = StateField::from_fn(&g, 0.0, |j, x| (j as f64 - 1.0) * (PI * x / 2.0).sin().powi(4));
        let c1 = ControlSignal::from_fn(&g, |j, t| (t * (j as f64 + 1.0)).sin() * t);
        let zero = StateField::zeros(&g, 0.0);
        let both = solver.solve(&u0, &c1, 0).unwrap().terminal;
        let only_u0 = solver.solve(&u0, &ControlSignal::zeros(&g), 0).unwrap().terminal;
        let only_c = solver.solve(&zero, &c1, 0).unwrap().terminal;
        let diff = both.axpy(-1.0, &only_u0.axpy(1.0, &only_c)).max_abs();
        assert!(diff < 1e-12 * both.max_abs().max(1.0));
        for j in 0..3 {
            assert_eq!(both.values[j][0], both.values[0][0]);
        }
    }

    #[test]
    fn trace_csv_layout() {
        let g = grid(2, 1, 1.0, 17, 0.5, 0.02);
        let phi = StateField::from_fn(&g, g.horizon, |_, x| (PI * x).sin().powi(4));
        let run = solve_adjoint(&phi, &g).unwrap();
        let mut buf = Vec::new();
        write_trace_rows(&mut buf, &run.traces).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("t,edge,quantity,value"));
        assert_eq!(text.lines().count(), 1 + (g.steps + 1) * (2 * 2 + 1));
        assert!(!text.contains('\r'));
    }
}
