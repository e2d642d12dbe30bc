//! `kdvnet` command-line front end.

use std::ffi::OsString;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use kdvnet_core::catalog::{load_catalog, save_catalog, CatalogDocument};
use kdvnet_core::critical_sets::{
    dagger_case_decomposition, double_witness, enumerate_r_beta, enumerate_rosier, enumerate_transcendental,
    newton_transcendental, CriticalSetId, CriticalWitness, SearchBox, DEFAULT_MAX_ITER, WITNESS_TOL,
};
use kdvnet_core::cubic::{format_complex, girard_residuals, parse_complex, solve_depressed_cubic, ComplexScalar, Multiplicity};
use kdvnet_core::gramian::{
    assemble_gramian, hum_control, reachable_target, save_sweep_csv, sine_basis, sweep_lengths, GramianSettings, SweepAnnotation,
};
use kdvnet_core::simulator::{duality_residual, energy_identity_residual, solve_adjoint, ControlSignal, GraphGrid, StateField, TraceRecord};
use kdvnet_core::spectral::{classify_length, KnownWitnesses, LambdaRegion, ScanSettings, Verdict};
use kdvnet_core::{Error, GraphConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_INFEASIBLE: i32 = 2;
pub const OUT_DIR_ENV: &str = "KDVNET_OUT_DIR";

#[derive(Debug, Parser)]
#[command(name = "kdvnet", version, about = "Critical lengths and boundary controllability of linear KdV on star graphs")]
pub struct Cli {
    /// Worker threads (default: available parallelism).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Override the command's main tolerance.
    #[arg(long, global = true)]
    pub tol: Option<f64>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Text)]
    pub format: Format,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Text,
    Json,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Roots of μ³ + μ + λ.
    Roots {
        #[arg(long, allow_hyphen_values = true)]
        lambda: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Enumerate a critical set up to a length bound.
    Enumerate {
        #[arg(long, value_enum)]
        set: SetArg,
        #[arg(long)]
        lmax: f64,
        #[arg(long, allow_hyphen_values = true)]
        beta: Option<f64>,
        /// Half-width of the search box for the transcendental sets.
        #[arg(long, default_value_t = 15.0)]
        r#box: f64,
        #[arg(long, default_value_t = 4.0)]
        density: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Newton refinement of one transcendental witness.
    Witness {
        #[arg(long, value_enum)]
        set: SetArg,
        /// Seed pair "a,b" in a+bi syntax.
        #[arg(long, allow_hyphen_values = true)]
        seed: String,
        #[arg(long, default_value_t = DEFAULT_MAX_ITER)]
        max_iter: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Scan for an eigenfunction at one length and compare with set membership.
    Classify {
        #[command(flatten)]
        graph: GraphArgs,
        #[arg(long)]
        length: f64,
        /// Half-width of the λ scan region.
        #[arg(long)]
        region: Option<f64>,
        #[arg(long)]
        catalog: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare set membership with the spectral scan for one placement of controls.
    VerifyLemma {
        #[arg(long, value_enum)]
        id: LemmaId,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        m: Option<usize>,
        #[arg(long, value_delimiter = ',')]
        lengths: Vec<f64>,
        #[arg(long)]
        catalog: Option<PathBuf>,
        #[arg(long)]
        region: Option<f64>,
        /// JSON-lines report, appended.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Adjoint simulation with identity checks and trace export.
    Simulate {
        #[command(flatten)]
        graph: GraphArgs,
        #[arg(long)]
        length: f64,
        #[arg(long, default_value_t = 129)]
        points: usize,
        #[arg(long, default_value_t = 0.05)]
        dt_ratio: f64,
        #[arg(long, default_value_t = 0.5)]
        horizon: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Observability Gramian at one length, optionally with HUM synthesis.
    Gramian {
        #[command(flatten)]
        graph: GraphArgs,
        #[arg(long)]
        length: f64,
        #[command(flatten)]
        disc: DiscArgs,
        /// Drive the state from rest to a target.
        #[arg(long)]
        hum: bool,
        #[arg(long, value_enum, default_value_t = HumTarget::Reachable)]
        target: HumTarget,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Minimum Gramian eigenvalue across a length window.
    Sweep {
        #[command(flatten)]
        graph: GraphArgs,
        #[arg(long)]
        from: f64,
        #[arg(long)]
        to: f64,
        #[arg(long, default_value_t = 13)]
        steps: usize,
        #[command(flatten)]
        disc: DiscArgs,
        /// Annotate each length with the spectral verdict.
        #[arg(long)]
        classify: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Args)]
pub struct GraphArgs {
    #[arg(long)]
    pub n: usize,
    #[arg(long)]
    pub m: usize,
    /// Node coupling, default n.
    #[arg(long)]
    pub alpha: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct DiscArgs {
    #[arg(long, default_value_t = 256)]
    pub points: usize,
    #[arg(long, default_value_t = 24)]
    pub basis: usize,
    #[arg(long, default_value_t = 2.0)]
    pub horizon: f64,
    #[arg(long, default_value_t = 0.5)]
    pub dt_ratio: f64,
}

impl DiscArgs {
    fn settings(&self) -> GramianSettings {
        GramianSettings { points_per_edge: self.points, dt_ratio: self.dt_ratio, horizon: self.horizon, basis_size: self.basis }
    }
}

/// `reachable`: state produced by basis controls with weights 0.8^k.
/// `bump`: sin² on the first edge, generally outside the reachable span.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum HumTarget {
    Reachable,
    Bump,
}

#[derive(Debug, Clone, Copy, PartialEq, ValueEnum)]
pub enum SetArg {
    Rosier,
    Rbeta,
    Nstar,
    Ndagger,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LemmaId {
    /// n = 2, m = 1: no critical length
    #[value(name = "3.6")]
    L36,
    /// m = 1, n ≥ 3: critical iff L ∈ N*
    #[value(name = "3.6b")]
    L36b,
    /// m = n − 1: critical iff L ∈ N
    #[value(name = "3.7")]
    L37,
    /// 1 < m < n − 1: critical iff L ∈ N ∪ N*
    #[value(name = "3.8")]
    L38,
    /// m = n: critical iff L ∈ N ∪ N*
    #[value(name = "3.9")]
    L39,
    /// m = 0: critical iff L ∈ N* ∪ N†
    #[value(name = "3.10")]
    L310,
    /// (a, b) ↦ (2a, 2b) maps N* witnesses to N† witnesses
    #[value(name = "C-doubling")]
    CDoubling,
}

/// Failure carrying its exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Failure { code: EXIT_USAGE, message: message.into() }
    }

    fn infeasible(message: impl Into<String>) -> Self {
        Failure { code: EXIT_INFEASIBLE, message: message.into() }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Criticality(_) => EXIT_INFEASIBLE,
            _ => EXIT_USAGE,
        };
        Failure { code, message: e.to_string() }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::usage(e.to_string())
    }
}

type CmdResult = std::result::Result<(), Failure>;

pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    run_with(args, &mut std::io::stdout(), &mut std::io::stderr())
}

/// Parse and execute; data goes to `out`, diagnostics to `err`.
pub fn run_with<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
            let text = e.render().to_string();
            if code == EXIT_OK {
                let _ = write!(out, "{text}");
            } else {
                let _ = write!(err, "{text}");
            }
            return code;
        }
    };
    if let Some(t) = cli.tol {
        if !(t.is_finite() && t > 0.0) {
            let _ = writeln!(err, "error: --tol must be positive");
            return EXIT_USAGE;
        }
    }
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(j) = cli.jobs {
        if j == 0 {
            let _ = writeln!(err, "error: --jobs must be at least 1");
            return EXIT_USAGE;
        }
        pool = pool.num_threads(j);
    }
    let pool = match pool.build() {
        Ok(p) => p,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            return EXIT_USAGE;
        }
    };
    // the pool needs Send, so buffer and flush afterwards
    let (mut obuf, mut ebuf) = (Vec::new(), Vec::new());
    let result = pool.install(|| dispatch(&cli, &mut obuf, &mut ebuf));
    let _ = out.write_all(&obuf);
    let _ = err.write_all(&ebuf);
    match result {
        Ok(()) => EXIT_OK,
        Err(f) => {
            let _ = writeln!(err, "error: {}", f.message);
            f.code
        }
    }
}

fn output_path(p: &Path) -> PathBuf {
    match std::env::var_os(OUT_DIR_ENV) {
        Some(dir) if p.is_relative() => PathBuf::from(dir).join(p),
        _ => p.to_path_buf(),
    }
}

fn write_text(path: &Path, text: &str) -> CmdResult {
    let path = output_path(path);
    std::fs::write(&path, text).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))
}

fn graph_config(g: &GraphArgs, length: f64) -> std::result::Result<GraphConfig, Failure> {
    Ok(GraphConfig::new(g.n, g.m, g.alpha.unwrap_or(g.n as f64), vec![length; g.n])?)
}

fn set_id(set: SetArg, beta: Option<f64>) -> std::result::Result<CriticalSetId, Failure> {
    Ok(match set {
        SetArg::Rosier => CriticalSetId::NRosier,
        SetArg::Rbeta => CriticalSetId::RBeta { beta: beta.ok_or_else(|| Failure::usage("--set rbeta needs --beta"))? },
        SetArg::Nstar => CriticalSetId::NStar,
        SetArg::Ndagger => CriticalSetId::NDagger,
    })
}

fn scan_settings(cli: &Cli) -> ScanSettings {
    ScanSettings { tol: cli.tol.unwrap_or(ScanSettings::default().tol), ..ScanSettings::default() }
}

fn dispatch(cli: &Cli, out: &mut dyn Write, err: &mut dyn Write) -> CmdResult {
    match &cli.command {
        Command::Roots { lambda, out: file } => cmd_roots(cli, lambda, file.as_deref(), out),
        Command::Enumerate { set, lmax, beta, r#box, density, out: file } => {
            cmd_enumerate(cli, *set, *lmax, *beta, *r#box, *density, file.as_deref(), out)
        }
        Command::Witness { set, seed, max_iter, out: file } => cmd_witness(cli, *set, seed, *max_iter, file.as_deref(), out),
        Command::Classify { graph, length, region, catalog, out: file } => {
            cmd_classify(cli, graph, *length, *region, catalog.as_deref(), file.as_deref(), out)
        }
        Command::VerifyLemma { id, n, m, lengths, catalog, region, report } => {
            cmd_verify(cli, *id, *n, *m, lengths, catalog.as_deref(), *region, report.as_deref(), out)
        }
        Command::Simulate { graph, length, points, dt_ratio, horizon, out: file } => {
            cmd_simulate(graph, *length, *points, *dt_ratio, *horizon, file.as_deref(), out)
        }
        Command::Gramian { graph, length, disc, hum, target, out: file } => {
            cmd_gramian(cli, graph, *length, disc, hum.then_some(*target), file.as_deref(), out, err)
        }
        Command::Sweep { graph, from, to, steps, disc, classify, out: file } => {
            cmd_sweep(cli, graph, *from, *to, *steps, disc, *classify, file.as_deref(), out)
        }
    }
}

fn json_complex(z: ComplexScalar) -> serde_json::Value {
    serde_json::json!([z.re, z.im])
}

fn cmd_roots(cli: &Cli, lambda: &str, file: Option<&Path>, out: &mut dyn Write) -> CmdResult {
    let lam = parse_complex(lambda).ok_or_else(|| Failure::usage(format!("cannot parse complex number '{lambda}'")))?;
    let roots = solve_depressed_cubic(lam);
    if roots.multiplicity == Multiplicity::Triple {
        return Err(Failure::usage("triple root reported; μ³ + μ + λ has none"));
    }
    let (e1, e2, e3) = girard_residuals(&roots);
    let mult = match roots.multiplicity {
        Multiplicity::AllSimple => "simple".to_string(),
        Multiplicity::Double(i) => format!("double at {}", format_complex(roots.roots[i])),
        Multiplicity::Triple => unreachable!(),
    };
    let value = serde_json::json!({
        "lambda": json_complex(lam),
        "roots": roots.roots.iter().map(|&z| json_complex(z)).collect::<Vec<_>>(),
        "multiplicity": mult,
        "girard_residuals": [e1, e2, e3],
        "residual": roots.residual,
    });
    let text = match cli.format {
        Format::Json => format!("{}\n", serde_json::to_string_pretty(&value).unwrap()),
        Format::Text => {
            let mut s = format!("lambda = {}\n", format_complex(lam));
            for (i, z) in roots.roots.iter().enumerate() {
                s += &format!("mu{} = {}\n", i + 1, format_complex(*z));
            }
            s += &format!("multiplicity: {mult}\n");
            s += &format!("girard residuals: {e1:.3e} {e2:.3e} {e3:.3e}\n");
            s
        }
    };
    out.write_all(text.as_bytes())?;
    if let Some(p) = file {
        write_text(p, &format!("{}\n", serde_json::to_string_pretty(&value).unwrap()))?;
    }
    Ok(())
}

fn witness_row(w: &CriticalWitness) -> String {
    let lam = w.lambda.map(|z| format_complex(round_small(z))).unwrap_or_else(|| "-".into());
    format!("{:<8} L = {:<22} residual = {:.2e}  lambda = {}", w.set.symbol(), w.length, w.residual, lam)
}

fn emit_witnesses(cli: &Cli, records: Vec<CriticalWitness>, file: Option<&Path>, out: &mut dyn Write) -> CmdResult {
    let doc = CatalogDocument::new(records);
    match cli.format {
        Format::Json => out.write_all(doc.to_canonical_json()?.as_bytes())?,
        Format::Text => {
            for w in &doc.records {
                writeln!(out, "{}", witness_row(w))?;
            }
            writeln!(out, "{} record(s)", doc.records.len())?;
        }
    }
    if let Some(p) = file {
        let path = output_path(p);
        save_catalog(&doc, &path)?;
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_enumerate(
    cli: &Cli,
    set: SetArg,
    lmax: f64,
    beta: Option<f64>,
    half: f64,
    density: f64,
    file: Option<&Path>,
    out: &mut dyn Write,
) -> CmdResult {
    if !(lmax.is_finite() && lmax > 0.0) {
        return Err(Failure::usage("--lmax must be positive"));
    }
    let id = set_id(set, beta)?;
    let records = match id {
        CriticalSetId::NRosier => enumerate_rosier(lmax),
        CriticalSetId::RBeta { beta } => enumerate_r_beta(beta, lmax)?,
        _ => enumerate_transcendental(id, &SearchBox::square(half), density, lmax)?,
    };
    emit_witnesses(cli, records, file, out)
}

fn cmd_witness(cli: &Cli, set: SetArg, seed: &str, max_iter: usize, file: Option<&Path>, out: &mut dyn Write) -> CmdResult {
    let id = set_id(set, None)?;
    if !matches!(id, CriticalSetId::NStar | CriticalSetId::NDagger) {
        return Err(Failure::usage("witness refinement applies to nstar and ndagger"));
    }
    let parts: Vec<&str> = seed.split(',').collect();
    if parts.len() != 2 {
        return Err(Failure::usage("--seed expects two complex numbers 'a,b'"));
    }
    let a = parse_complex(parts[0]).ok_or_else(|| Failure::usage(format!("cannot parse '{}'", parts[0])))?;
    let b = parse_complex(parts[1]).ok_or_else(|| Failure::usage(format!("cannot parse '{}'", parts[1])))?;
    let tol = cli.tol.unwrap_or(WITNESS_TOL);
    match newton_transcendental(id, (a, b), max_iter, tol) {
        Some(w) => emit_witnesses(cli, vec![w], file, out),
        None => Err(Failure::infeasible(format!("Newton from ({a}, {b}) did not reach a valid witness"))),
    }
}

fn known_witnesses(catalog: Option<&Path>, config: &GraphConfig, l_max: f64) -> std::result::Result<KnownWitnesses, Failure> {
    if let Some(p) = catalog {
        return Ok(KnownWitnesses { witnesses: load_catalog(p)?.records });
    }
    let mut witnesses = Vec::new();
    for set in config.expected_sets() {
        if matches!(set, CriticalSetId::NStar | CriticalSetId::NDagger) {
            let box_ = SearchBox::default().scaled((l_max / 30.0).max(1.0));
            witnesses.extend(enumerate_transcendental(set, &box_, 4.0, l_max)?);
        }
    }
    Ok(KnownWitnesses { witnesses })
}

fn verdict_text(v: &Verdict) -> String {
    match v {
        Verdict::Critical { lambda, sigma_min } => {
            format!("Critical (lambda ≈ {}, sigma_min = {:.2e})", approx(*lambda), sigma_min)
        }
        Verdict::NonCritical { min_sigma } => format!("NonCritical (min sigma = {min_sigma:.3e})"),
        Verdict::OutOfScope { reason } => format!("OutOfScope ({reason})"),
    }
}

/// Short text for a scan minimiser: six decimals, parts below 1e-8 dropped.
fn approx(z: ComplexScalar) -> String {
    let part = |x: f64| {
        let t = format!("{:.6}", if x.abs() < 1e-8 { 0.0 } else { x });
        let t = t.trim_end_matches('0').trim_end_matches('.').to_string();
        if t == "-0" { "0".to_string() } else { t }
    };
    let (re, im) = (part(z.re), part(z.im));
    match (re.as_str(), im.as_str()) {
        (_, "0") => re,
        ("0", _) => format!("{im}i"),
        _ if im.starts_with('-') => format!("{re}{im}i"),
        _ => format!("{re}+{im}i"),
    }
}

fn round_small(z: ComplexScalar) -> ComplexScalar {
    let scale = z.norm().max(1e-300);
    let clip = |x: f64| if x.abs() < 1e-12 * scale || x.abs() < 1e-300 { 0.0 } else { x };
    ComplexScalar::new(clip(z.re), clip(z.im))
}

fn verdict_json(v: &Verdict) -> serde_json::Value {
    match v {
        Verdict::Critical { lambda, sigma_min } => {
            serde_json::json!({"verdict": "Critical", "lambda": json_complex(*lambda), "sigma_min": sigma_min})
        }
        Verdict::NonCritical { min_sigma } => serde_json::json!({"verdict": "NonCritical", "min_sigma": min_sigma}),
        Verdict::OutOfScope { reason } => serde_json::json!({"verdict": "OutOfScope", "reason": reason}),
    }
}

fn cmd_classify(
    cli: &Cli,
    graph: &GraphArgs,
    length: f64,
    region: Option<f64>,
    catalog: Option<&Path>,
    file: Option<&Path>,
    out: &mut dyn Write,
) -> CmdResult {
    let config = graph_config(graph, length)?;
    let known = known_witnesses(catalog, &config, length * 1.01)?;
    let settings = scan_settings(cli);
    let c = classify_length(&config, &known, &settings, region.map(LambdaRegion::square));
    let sets: Vec<&str> = c.memberships.iter().map(|m| m.set.symbol()).collect();
    let expected: Vec<&str> = c.expected_sets.iter().map(|s| s.symbol()).collect();
    let value = serde_json::json!({
        "n": config.n, "m": config.m, "alpha": config.alpha, "L": length,
        "scan": verdict_json(&c.verdict),
        "region": c.region.map(|r| serde_json::json!({"re": [r.re.0, r.re.1], "im": [r.im.0, r.im.1]})),
        "tol": settings.tol,
        "expected_sets": expected,
        "member_of": sets,
        "agree": c.agrees(),
    });
    match cli.format {
        Format::Json => writeln!(out, "{}", serde_json::to_string_pretty(&value).unwrap())?,
        Format::Text => {
            writeln!(out, "{}", verdict_text(&c.verdict))?;
            if let Some(r) = c.region {
                writeln!(out, "scanned Re λ ∈ [{}, {}], Im λ ∈ [{}, {}], tol = {:e}", r.re.0, r.re.1, r.im.0, r.im.1, settings.tol)?;
            }
            let member = if sets.is_empty() { "none".to_string() } else { sets.join(", ") };
            writeln!(out, "sets deciding this placement: {}; L belongs to: {member}", if expected.is_empty() { "none".into() } else { expected.join(", ") })?;
            writeln!(out, "{}", if c.agrees() { "agree" } else { "DISAGREE" })?;
        }
    }
    if let Some(p) = file {
        write_text(p, &format!("{}\n", serde_json::to_string_pretty(&value).unwrap()))?;
    }
    Ok(())
}

fn lemma_config(id: LemmaId, n: Option<usize>, m: Option<usize>) -> std::result::Result<(usize, usize), Failure> {
    let (n, m_expected) = match id {
        LemmaId::L36 => {
            let n = n.unwrap_or(2);
            if n != 2 {
                return Err(Failure::usage("id 3.6 concerns two edges"));
            }
            (2, 1)
        }
        LemmaId::L36b => {
            let n = n.unwrap_or(3);
            (n, 1)
        }
        LemmaId::L37 => {
            let n = n.unwrap_or(3);
            (n, n.saturating_sub(1))
        }
        LemmaId::L38 => {
            let n = n.unwrap_or(4);
            if n < 4 {
                return Err(Failure::usage("id 3.8 needs n ≥ 4 so that 1 < m < n − 1"));
            }
            let m = m.unwrap_or(2);
            if !(1 < m && m < n - 1) {
                return Err(Failure::usage(format!("id 3.8 needs 1 < m < n − 1, got m = {m}")));
            }
            (n, m)
        }
        LemmaId::L39 => {
            let n = n.unwrap_or(3);
            (n, n)
        }
        LemmaId::L310 => (n.unwrap_or(3), 0),
        LemmaId::CDoubling => unreachable!(),
    };
    if n < 2 || (id != LemmaId::L36 && n < 3) {
        return Err(Failure::usage(format!("n = {n} is outside the scope of this id")));
    }
    if let Some(m) = m {
        if m != m_expected {
            return Err(Failure::usage(format!("this id fixes m = {m_expected} for n = {n}, got m = {m}")));
        }
    }
    Ok((n, m_expected))
}

fn append_report(path: Option<&Path>, lines: &[serde_json::Value]) -> CmdResult {
    let path = match (path, std::env::var_os(OUT_DIR_ENV)) {
        (Some(p), _) => output_path(p),
        (None, Some(dir)) => PathBuf::from(dir).join("verify_report.jsonl"),
        (None, None) => return Ok(()),
    };
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(&path)
        .map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?;
    for l in lines {
        writeln!(f, "{l}").map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?;
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_verify(
    cli: &Cli,
    id: LemmaId,
    n: Option<usize>,
    m: Option<usize>,
    lengths: &[f64],
    catalog: Option<&Path>,
    region: Option<f64>,
    report: Option<&Path>,
    out: &mut dyn Write,
) -> CmdResult {
    if id == LemmaId::CDoubling {
        return verify_doubling(cli, catalog, report, out);
    }
    if lengths.is_empty() || lengths.iter().any(|l| !(l.is_finite() && *l > 0.0)) {
        return Err(Failure::usage("--lengths needs a comma list of positive lengths"));
    }
    let (n, m) = lemma_config(id, n, m)?;
    let probe = GraphConfig::uniform(n, m, 1.0)?;
    let l_max = lengths.iter().cloned().fold(0.0, f64::max) * 1.01;
    let known = known_witnesses(catalog, &probe, l_max)?;
    let settings = scan_settings(cli);
    let id_name = id.to_possible_value().unwrap().get_name().to_string();
    writeln!(out, "check {id_name}: n = {n}, m = {m}, sigma tol = {:e}", settings.tol)?;
    let expected: Vec<&str> = probe.expected_sets().iter().map(|s| s.symbol()).collect();
    writeln!(out, "predicted critical set: {}", if expected.is_empty() { "empty".into() } else { expected.join(" ∪ ") })?;
    let mut lines = Vec::new();
    let mut all_agree = true;
    for &l in lengths {
        let cfg = probe.with_length(l)?;
        let c = classify_length(&cfg, &known, &settings, region.map(LambdaRegion::square));
        let agree = c.agrees();
        all_agree &= agree;
        let member: Vec<&str> = c.memberships.iter().map(|s| s.set.symbol()).collect();
        let bounds = c
            .region
            .map(|r| format!("Re λ ∈ [{}, {}], Im λ ∈ [{}, {}]", r.re.0, r.re.1, r.im.0, r.im.1))
            .unwrap_or_default();
        writeln!(
            out,
            "L = {l}: {} | members: {} | {} | scanned {bounds}",
            verdict_text(&c.verdict),
            if member.is_empty() { "none".into() } else { member.join(", ") },
            if agree { "agree" } else { "DISAGREE" }
        )?;
        lines.push(serde_json::json!({
            "id": id_name, "n": n, "m": m, "L": l, "tol": settings.tol,
            "scan": verdict_json(&c.verdict), "member_of": member, "agree": agree,
            "region": c.region.map(|r| serde_json::json!({"re": [r.re.0, r.re.1], "im": [r.im.0, r.im.1]})),
        }));
    }
    writeln!(out, "{}", if all_agree { "all agree" } else { "disagreement found" })?;
    append_report(report, &lines)
}

fn verify_doubling(cli: &Cli, catalog: Option<&Path>, report: Option<&Path>, out: &mut dyn Write) -> CmdResult {
    let records = match catalog {
        Some(p) => load_catalog(p)?.records,
        None => enumerate_transcendental(CriticalSetId::NStar, &SearchBox::default(), 4.0, 30.0)?,
    };
    let stars: Vec<&CriticalWitness> = records.iter().filter(|w| w.set == CriticalSetId::NStar).collect();
    if stars.is_empty() {
        return Err(Failure::usage("no N* witnesses to double"));
    }
    let tol = cli.tol.unwrap_or(1e-9);
    writeln!(out, "doubling {} N* witness(es), residual tol = {tol:e}", stars.len())?;
    let mut lines = Vec::new();
    let mut ok_all = true;
    for w in stars {
        let d = double_witness(w).ok_or_else(|| Failure::usage("witness without a triple"))?;
        let case = dagger_case_decomposition(&d).map(|c| format!("{c:?}")).unwrap_or_else(|e| format!("none ({e})"));
        let ok = d.residual < tol && (d.length - 2.0 * w.length).abs() <= 1e-12 * d.length;
        ok_all &= ok;
        writeln!(out, "L = {} -> 2L = {}: residual {:.2e}, case {case}, {}", w.length, d.length, d.residual, if ok { "pass" } else { "FAIL" })?;
        lines.push(serde_json::json!({"id": "C-doubling", "L": w.length, "doubled_L": d.length, "residual": d.residual, "case": case, "pass": ok, "tol": tol}));
    }
    writeln!(out, "{}", if ok_all { "all doubled witnesses pass" } else { "some doubled witnesses fail" })?;
    append_report(report, &lines)
}

fn cmd_simulate(
    graph: &GraphArgs,
    length: f64,
    points: usize,
    dt_ratio: f64,
    horizon: f64,
    file: Option<&Path>,
    out: &mut dyn Write,
) -> CmdResult {
    let config = graph_config(graph, length)?;
    let grid = GraphGrid::with_ratio(config, points, dt_ratio, horizon)?;
    let phi = StateField::from_fn(&grid, horizon, |j, x| (1.0 + 0.5 * j as f64) * (std::f64::consts::PI * x / length).sin().powi(4));
    let run = solve_adjoint(&phi, &grid)?;
    let energy = energy_identity_residual(&run, &grid);
    let controls = ControlSignal::from_fn(&grid, |j, t| ((j + 1) as f64 * 3.0 * t).sin() * t * (horizon - t));
    let duality = duality_residual(&controls, &phi, &grid)?;
    writeln!(out, "grid: {} points/edge, dt = {:.3e}, steps = {}, T = {}", grid.points_per_edge, grid.dt, grid.steps, horizon)?;
    writeln!(out, "energy identity residual: {energy:.3e}")?;
    writeln!(out, "duality identity residual: {duality:.3e}")?;
    if let Some(p) = file {
        let path = output_path(p);
        trace_to_file(&run.traces, &path)?;
        writeln!(out, "traces written to {}", path.display())?;
    }
    Ok(())
}

fn trace_to_file(traces: &TraceRecord, path: &Path) -> CmdResult {
    Ok(traces.write_csv(path)?)
}

#[allow(clippy::too_many_arguments)]
fn cmd_gramian(
    cli: &Cli,
    graph: &GraphArgs,
    length: f64,
    disc: &DiscArgs,
    hum: Option<HumTarget>,
    file: Option<&Path>,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> CmdResult {
    let config = graph_config(graph, length)?;
    let settings = disc.settings();
    let grid = settings.grid(&config)?;
    let basis = sine_basis(&grid, settings.basis_size)?;
    let result = assemble_gramian(&grid, &basis)?;
    let mut value = serde_json::json!({
        "n": config.n, "m": config.m, "L": length,
        "points_per_edge": settings.points_per_edge, "basis_size": settings.basis_size,
        "horizon": settings.horizon, "dt": grid.dt,
        "min_eigenvalue": result.min_eigenvalue,
        "eigenvalues": result.eigenvalues,
        "dirichlet_norm": "seminorm",
    });
    let mut text = format!("min generalized eigenvalue: {:.6e}\n", result.min_eigenvalue);
    let mut infeasible = None;
    if let Some(kind) = hum {
        let target = match kind {
            HumTarget::Reachable => {
                let coefs: Vec<f64> = (0..basis.len()).map(|k| 0.8f64.powi(k as i32)).collect();
                reachable_target(&grid, &basis, &coefs)?
            }
            HumTarget::Bump => StateField::from_fn(&grid, grid.horizon, |j, x| {
                if j == 0 {
                    (std::f64::consts::PI * x / length).sin().powi(2)
                } else {
                    0.0
                }
            }),
        };
        let h = hum_control(&grid, &target, &basis)?;
        text += &format!("HUM terminal error: {:.3e} (Gramian condition {:.3e})\n", h.terminal_error, h.condition_number);
        value["hum"] = serde_json::json!({"terminal_error": h.terminal_error, "condition_number": h.condition_number, "warning": h.warning});
        let limit = cli.tol.map(|t| 1.0 / t).unwrap_or(kdvnet_core::gramian::HUM_CONDITION_LIMIT);
        if h.condition_number > limit {
            infeasible = Some(h.warning.unwrap_or_else(|| format!("Gramian condition {:.3e} exceeds {limit:.1e}", h.condition_number)));
        }
    }
    let json = format!("{}\n", serde_json::to_string_pretty(&value).unwrap());
    match cli.format {
        Format::Text => out.write_all(text.as_bytes())?,
        Format::Json => out.write_all(json.as_bytes())?,
    }
    if let Some(p) = file {
        write_text(p, &json)?;
    }
    if let Some(msg) = infeasible {
        let _ = writeln!(err, "warning: {msg}");
        return Err(Failure::infeasible("HUM synthesis is not meaningful at this length"));
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_sweep(
    cli: &Cli,
    graph: &GraphArgs,
    from: f64,
    to: f64,
    steps: usize,
    disc: &DiscArgs,
    classify: bool,
    file: Option<&Path>,
    out: &mut dyn Write,
) -> CmdResult {
    if !(from > 0.0 && to >= from && steps >= 1) {
        return Err(Failure::usage("need 0 < --from ≤ --to and --steps ≥ 1"));
    }
    let config = graph_config(graph, from)?;
    let lengths: Vec<f64> = if steps == 1 {
        vec![from]
    } else {
        (0..steps).map(|i| from + (to - from) * i as f64 / (steps - 1) as f64).collect()
    };
    let settings = disc.settings();
    let scan = scan_settings(cli);
    let known = if classify { Some(known_witnesses(None, &config, to * 1.01)?) } else { None };
    let annotate = known.as_ref().map(|k| SweepAnnotation { known: k, scan: &scan });
    let points = sweep_lengths(&config, &lengths, &settings, annotate)?;
    for p in &points {
        writeln!(
            out,
            "L = {:.6}  min eigenvalue = {:.4e}  {}{}",
            p.length,
            p.min_eigenvalue,
            p.classification.clone().unwrap_or_default(),
            p.witness_lambda.map(|l| format!(" lambda ≈ {}", approx(l))).unwrap_or_default()
        )?;
    }
    if let Some(f) = file {
        let path = output_path(f);
        save_sweep_csv(&path, &points)?;
    }
    Ok(())
}
