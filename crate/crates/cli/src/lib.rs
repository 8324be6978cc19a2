//! Command implementations behind the `lkstab` binary.
//!
//! Each command takes a loaded [`Scenario`], writes its artifacts into the
//! output directory and returns the human-readable report.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

use lkstab_core::dessim::{self, detect_instability, fluid_scaling_sweep, SimError, SimResult};
use lkstab_core::exec::{self, Execution};
use lkstab_core::fluid::{self, FluidError, FluidTrajectory, Terminal, Transition};
use lkstab_core::network::{
    derive, is_acyclic, utilization_check, validate, DerivedQuantities, NetworkError, NetworkSpec,
};
use lkstab_core::policies::{PolicyError, PolicyKind};
use lkstab_core::scenario::{preset, ScenarioDocument, PRESET_NAMES};
use lkstab_core::statespace::{self, EdgeKind, StateDiagram, StateSpaceError};

pub const DEFAULT_SAMPLES: usize = 500;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("cannot parse scenario: {0}")]
    Parse(String),
    #[error("invalid network ({invariant}): {source}", invariant = .source.invariant())]
    Network {
        #[from]
        source: NetworkError,
    },
    #[error("invalid policy: {0}")]
    Policy(#[from] PolicyError),
    #[error("invalid scenario: {0}")]
    Scenario(String),
    #[error("fluid model failed: {0}")]
    Fluid(#[from] FluidError),
    #[error("simulation failed: {0}")]
    Sim(SimError),
    #[error(transparent)]
    StateSpace(#[from] StateSpaceError),
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("cannot write csv {path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error("property violated: {0}")]
    Property(String),
}

impl CliError {
    /// 2 validation, 3 runtime numeric, 4 property violation.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_)
            | CliError::Parse(_)
            | CliError::Network { .. }
            | CliError::Policy(_)
            | CliError::Scenario(_) => 2,
            CliError::Sim(SimError::Config(_)) => 2,
            CliError::StateSpace(StateSpaceError::NotApplicable(_)) => 2,
            CliError::Fluid(_)
            | CliError::Sim(_)
            | CliError::StateSpace(_)
            | CliError::Io { .. }
            | CliError::Csv { .. } => 3,
            CliError::Property(_) => 4,
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        CliError::Sim(e)
    }
}

/// Command-line overrides applied on top of the document.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
    pub samples: Option<usize>,
}

/// Reads a document from a path or a preset name; exactly one is required.
pub fn load(scenario: Option<&Path>, preset_name: Option<&str>) -> Result<ScenarioDocument, CliError> {
    match (scenario, preset_name) {
        (Some(path), None) => {
            let text = fs::read_to_string(path)
                .map_err(|e| CliError::Parse(format!("{}: {e}", path.display())))?;
            parse(&text)
        }
        (None, Some(name)) => preset(name).ok_or_else(|| {
            CliError::Usage(format!(
                "unknown preset {name:?}; available: {}",
                PRESET_NAMES.join(", ")
            ))
        }),
        (Some(_), Some(_)) => Err(CliError::Usage("give --scenario or --preset, not both".into())),
        (None, None) => Err(CliError::Usage("one of --scenario or --preset is required".into())),
    }
}

pub fn parse(text: &str) -> Result<ScenarioDocument, CliError> {
    serde_json::from_str(text).map_err(|e| CliError::Parse(e.to_string()))
}

/// SHA-256 of the document serialized with sorted keys.
pub fn config_hash(doc: &ScenarioDocument) -> String {
    let value = serde_json::to_value(doc).expect("scenario serializes");
    let text = serde_json::to_string(&value).expect("json value serializes");
    Sha256::digest(text.as_bytes())
        .iter()
        .fold(String::with_capacity(64), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
}

/// A validated document with its network and overrides applied.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub doc: ScenarioDocument,
    pub net: NetworkSpec,
    pub dq: DerivedQuantities,
    pub out_dir: PathBuf,
    pub jobs: Option<usize>,
    pub samples: usize,
}

impl Scenario {
    pub fn new(mut doc: ScenarioDocument, ov: &Overrides) -> Result<Self, CliError> {
        if let Some(seed) = ov.seed {
            doc.sim.seed = seed;
        }
        let net = validate(&doc.network)?;
        let dq = derive(&net)?;
        doc.policy.validate(&net)?;
        doc.sim.config().validate(&net)?;
        let k = net.num_queues();
        if doc.fluid.x0.len() != k {
            return Err(CliError::Scenario(format!(
                "fluid.x0 has {} entries, network has {k} queues",
                doc.fluid.x0.len()
            )));
        }
        if doc.fluid.x0.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(CliError::Scenario("fluid.x0 must be finite and non-negative".into()));
        }
        if !(doc.fluid.horizon.is_finite() && doc.fluid.horizon >= 0.0) {
            return Err(CliError::Scenario("fluid.horizon must be finite and non-negative".into()));
        }
        if doc.sim_x0().len() != k {
            return Err(CliError::Scenario(format!("sim.x0 must have {k} entries")));
        }
        if doc.sim.replications == 0 {
            return Err(CliError::Scenario("sim.replications must be at least 1".into()));
        }
        if doc.sim.r_list.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
            return Err(CliError::Scenario("sim.r_list entries must be positive".into()));
        }
        let out_dir = ov
            .out
            .clone()
            .unwrap_or_else(|| PathBuf::from(&doc.outputs.dir));
        Ok(Scenario {
            doc,
            net,
            dq,
            out_dir,
            jobs: ov.jobs,
            samples: ov.samples.unwrap_or(DEFAULT_SAMPLES),
        })
    }

    fn execution(&self) -> Execution {
        if self.jobs == Some(1) {
            Execution::Sequential
        } else {
            Execution::Parallel
        }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }

    fn prepare_dir(&self) -> Result<(), CliError> {
        fs::create_dir_all(&self.out_dir).map_err(|source| CliError::Io {
            path: self.out_dir.clone(),
            source,
        })
    }
}

fn fmt_vec(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.4}")).collect();
    format!("[{}]", parts.join(", "))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).expect("report serializes");
    text.push('\n');
    write_text(path, &text)
}

fn write_csv(path: &Path, header: &[String], rows: &[Vec<String>]) -> Result<(), CliError> {
    let err = |source| CliError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut w = csv::Writer::from_path(path).map_err(err)?;
    w.write_record(header).map_err(err)?;
    for r in rows {
        w.write_record(r).map_err(err)?;
    }
    w.flush().map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn numbered(prefix: &str, n: usize) -> impl Iterator<Item = String> + '_ {
    (1..=n).map(move |i| format!("{prefix}{i}"))
}

#[derive(Debug, Serialize)]
struct Metadata<'a> {
    command: &'a str,
    scenario: Option<&'a str>,
    config_hash: String,
    seed: u64,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    seeds: Vec<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    rng_layout: Option<&'a str>,
    version: &'a str,
    files: Vec<String>,
}

fn write_metadata(
    sc: &Scenario,
    command: &str,
    seeds: Vec<u64>,
    rng: bool,
    files: &[PathBuf],
) -> Result<PathBuf, CliError> {
    let meta = Metadata {
        command,
        scenario: sc.doc.name.as_deref(),
        config_hash: config_hash(&sc.doc),
        seed: sc.doc.sim.seed,
        seeds,
        rng_layout: rng.then_some(dessim::RNG_LAYOUT),
        version: env!("CARGO_PKG_VERSION"),
        files: files
            .iter()
            .filter_map(|p| p.file_name().map(|n| n.to_string_lossy().into_owned()))
            .collect(),
    };
    let path = sc.path("metadata.json");
    write_json(&path, &meta)?;
    Ok(path)
}

/// Report text plus the files a command wrote.
#[derive(Debug, Clone, Default)]
pub struct Outcome {
    pub report: String,
    pub files: Vec<PathBuf>,
}

#[derive(Debug, Serialize)]
struct Analysis {
    queues: usize,
    groups: usize,
    nu: Vec<f64>,
    d: Vec<Vec<f64>>,
    rho: Vec<f64>,
    slack: Vec<f64>,
    stable: bool,
    acyclic: bool,
    two_by_two: bool,
    note: String,
}

fn applicability(sc: &Scenario, stable: bool, acyclic: bool) -> String {
    let kind = sc.doc.policy.kind;
    if !stable {
        return "utilization violated: no policy can stabilize this network".into();
    }
    match kind {
        PolicyKind::Lq if sc.net.is_two_by_two() => {
            "LQ stability result applies (two groups of two queues, utilization satisfied)".into()
        }
        PolicyKind::Lq => "LQ stability result does not apply: needs two groups of two queues".into(),
        PolicyKind::Ldq if acyclic => {
            "LDQ stability result applies (acyclic routing, utilization satisfied)".into()
        }
        PolicyKind::Ldq => "LDQ stability result does not apply: routing has a cycle".into(),
        PolicyKind::StaticPriority => {
            "static priority: no stability result; utilization alone does not suffice".into()
        }
    }
}

/// Static quantities, utilization and the applicability note.
pub fn cmd_analyze(sc: &Scenario) -> Result<Outcome, CliError> {
    let util = utilization_check(&sc.dq, &sc.net)?;
    let acyclic = is_acyclic(&sc.net);
    let k = sc.net.num_queues();
    let d: Vec<Vec<f64>> = (0..k)
        .map(|i| (0..k).map(|j| sc.dq.d[(i, j)]).collect())
        .collect();
    let analysis = Analysis {
        queues: k,
        groups: sc.net.num_groups(),
        nu: sc.dq.nu.iter().copied().collect(),
        d,
        rho: util.rho(),
        slack: util.groups.iter().map(|g| g.slack).collect(),
        stable: util.stable,
        acyclic,
        two_by_two: sc.net.is_two_by_two(),
        note: applicability(sc, util.stable, acyclic),
    };
    let mut r = String::new();
    let _ = writeln!(r, "K = {}, J = {}", analysis.queues, analysis.groups);
    let _ = writeln!(r, "nu = {}", fmt_vec(&analysis.nu));
    let _ = writeln!(r, "D =");
    for row in &analysis.d {
        let _ = writeln!(r, "  {}", fmt_vec(row));
    }
    for g in &util.groups {
        let _ = writeln!(
            r,
            "group {}: rho = {:.4}, slack = {:.4}, {}",
            g.group + 1,
            g.rho,
            g.slack,
            if g.stable { "ok" } else { "overloaded" }
        );
    }
    let _ = writeln!(r, "utilization: {}", if util.stable { "stable" } else { "unstable" });
    let _ = writeln!(r, "topology: {}", if acyclic { "acyclic" } else { "cyclic" });
    let _ = writeln!(r, "note: {}", analysis.note);
    sc.prepare_dir()?;
    let path = sc.path("analysis.json");
    write_json(&path, &analysis)?;
    let meta = write_metadata(sc, "analyze", Vec::new(), false, std::slice::from_ref(&path))?;
    Ok(Outcome {
        report: r,
        files: vec![path, meta],
    })
}

fn describe(t: &Transition) -> String {
    let list = |v: &[usize]| {
        v.iter()
            .map(|i| (i + 1).to_string())
            .collect::<Vec<_>>()
            .join(",")
    };
    match t {
        Transition::Initial => "initial".into(),
        Transition::Increase { entering } => format!("increase +{}", list(entering)),
        Transition::Jump {
            entering,
            via,
            removed,
        } => format!("jump +{} via {} drop {}", list(entering), via, list(removed)),
        Transition::Empty { groups } => format!("empty group {}", list(groups)),
        Transition::Reorder => "reorder".into(),
    }
}

/// Header and rows of the trajectory CSV: one row per segment start plus
/// the final endpoint.
pub fn trajectory_rows(traj: &FluidTrajectory, k: usize, j: usize) -> (Vec<String>, Vec<Vec<String>>) {
    let mut header = vec!["t".to_string()];
    header.extend(numbered("X", k));
    header.push("state".into());
    header.extend(numbered("alpha", j));
    let row = |t: f64, x: &[f64], seg: &fluid::Segment| {
        let mut r = vec![t.to_string()];
        r.extend(x.iter().map(|v| v.to_string()));
        r.push(seg.state.label());
        r.extend(seg.phase.alpha.iter().map(|v| v.to_string()));
        r
    };
    let mut rows: Vec<Vec<String>> = traj
        .segments
        .iter()
        .map(|s| row(s.t_start, &s.x_start, s))
        .collect();
    if let Some(last) = traj.segments.last() {
        if last.duration() > 0.0 {
            rows.push(row(last.t_end, &last.x_end, last));
        }
    }
    (header, rows)
}

/// Integrates the fluid model and writes `trajectory.csv`.
pub fn cmd_fluid(sc: &Scenario) -> Result<Outcome, CliError> {
    let policy = sc.doc.fluid_policy().ok_or_else(|| {
        CliError::Scenario("the fluid model supports LQ and LDQ only, not static priority".into())
    })?;
    let traj = fluid::integrate(&sc.net, &sc.dq, &sc.doc.fluid.x0, policy, sc.doc.fluid.horizon)?;
    let mut r = String::new();
    let _ = writeln!(r, "{} segments", traj.segments.len());
    let _ = writeln!(r, "state path:");
    let mut prev: Option<String> = None;
    for s in &traj.segments {
        let label = s.state.label();
        if prev.as_deref() == Some(label.as_str()) && s.duration() == 0.0 {
            continue;
        }
        let _ = writeln!(
            r,
            "  t = {:>10.4}  {:<14} alpha = {}  ({})",
            s.t_start,
            label,
            fmt_vec(&s.phase.alpha),
            describe(&s.entered_by)
        );
        prev = Some(label);
    }
    sc.prepare_dir()?;
    let mut files = Vec::new();
    if sc.doc.outputs.csv {
        let (header, rows) = trajectory_rows(&traj, sc.net.num_queues(), sc.net.num_groups());
        let path = sc.path("trajectory.csv");
        write_csv(&path, &header, &rows)?;
        files.push(path);
    }
    files.push(write_metadata(sc, "fluid", Vec::new(), false, &files)?);
    let _ = writeln!(r, "terminal: {}", terminal_line(&traj.terminal));
    Ok(Outcome { report: r, files })
}

fn terminal_line(t: &Terminal) -> String {
    match t {
        Terminal::Drained { t } => format!("Drained t* = {t:.6}"),
        Terminal::Stalled { t, x } => format!("Stalled t = {t:.6} x = {}", fmt_vec(x)),
        Terminal::HorizonReached { t } => format!("HorizonReached t = {t:.6}"),
    }
}

/// Header and rows of the snapshot CSV, replications stacked in seed order.
pub fn snapshot_rows(runs: &[(u64, SimResult)], k: usize) -> (Vec<String>, Vec<Vec<String>>) {
    let mut header = vec!["seed".to_string(), "t".to_string()];
    header.extend(numbered("X", k));
    header.extend(["arrivals", "departures", "in_system"].map(String::from));
    let mut rows = Vec::new();
    for (seed, res) in runs {
        for s in &res.snapshots {
            let mut r = vec![seed.to_string(), s.t.to_string()];
            r.extend(s.x.iter().map(|v| v.to_string()));
            r.push(s.arrivals.to_string());
            r.push(s.departures.to_string());
            r.push(s.in_system().to_string());
            rows.push(r);
        }
    }
    (header, rows)
}

/// Runs the replications, the instability test, and the fluid-scaling
/// check when `sim.r_list` is set.
pub fn cmd_simulate(sc: &Scenario) -> Result<Outcome, CliError> {
    let cfg = sc.doc.sim.config();
    let x0 = sc.doc.sim_x0();
    let seeds: Vec<u64> = (0..sc.doc.sim.replications as u64)
        .map(|i| cfg.seed.wrapping_add(i))
        .collect();
    let ex = sc.execution();
    let results = exec::with_threads(sc.jobs, || {
        exec::map(ex, &seeds, |&seed| {
            let c = dessim::SimConfig { seed, ..cfg.clone() };
            dessim::run(&sc.net, &sc.doc.policy, &c, &x0)
        })
    });
    let mut runs = Vec::with_capacity(seeds.len());
    for (seed, res) in seeds.iter().zip(results) {
        runs.push((*seed, res?));
    }
    let k = sc.net.num_queues();
    let mut r = String::new();
    let mut summary = Vec::new();
    for (seed, res) in &runs {
        let verdict = detect_instability(res);
        let (slope, se, text) = match &verdict {
            Ok(v) => (
                v.slope.to_string(),
                v.std_error.to_string(),
                if v.unstable { "unstable" } else { "stable" }.to_string(),
            ),
            Err(SimError::InsufficientData { have, need }) => (
                res.growth_slope.to_string(),
                String::new(),
                format!("insufficient data ({have} of {need} points)"),
            ),
            Err(e) => return Err(CliError::Sim(e.clone())),
        };
        let _ = writeln!(
            r,
            "seed {seed}: in system {} at t = {}, slope = {}, se = {}, verdict: {text}",
            res.in_system,
            cfg.horizon,
            slope,
            if se.is_empty() { "-" } else { &se },
        );
        if let Some(a) = &res.audit {
            let _ = writeln!(
                r,
                "  audit: {} epochs, fifo {}, truncated {}, work conservation {}",
                a.decision_epochs, a.fifo_violations, a.truncated_services, a.work_conservation_violations
            );
        }
        let mut row = vec![
            seed.to_string(),
            res.arrivals.to_string(),
            res.departures.to_string(),
            res.in_system.to_string(),
            slope,
            se,
            text,
        ];
        row.extend(res.busy_fraction.iter().map(|b| b.to_string()));
        summary.push(row);
    }
    sc.prepare_dir()?;
    let mut files = Vec::new();
    if sc.doc.outputs.csv {
        let (header, rows) = snapshot_rows(&runs, k);
        let path = sc.path("snapshots.csv");
        write_csv(&path, &header, &rows)?;
        files.push(path);
        let mut header: Vec<String> = [
            "seed",
            "arrivals",
            "departures",
            "in_system",
            "slope",
            "std_error",
            "verdict",
        ]
        .map(String::from)
        .to_vec();
        header.extend(numbered("busy", k));
        let path = sc.path("summary.csv");
        write_csv(&path, &header, &summary)?;
        files.push(path);
    }
    if !sc.doc.sim.r_list.is_empty() {
        let policy = sc.doc.fluid_policy().ok_or_else(|| {
            CliError::Scenario("sim.r_list needs an LQ or LDQ policy for the fluid path".into())
        })?;
        let traj = fluid::integrate(&sc.net, &sc.dq, &sc.doc.fluid.x0, policy, sc.doc.fluid.horizon)?;
        let points = exec::with_threads(sc.jobs, || {
            fluid_scaling_sweep(
                &sc.net,
                &sc.doc.policy,
                &sc.doc.fluid.x0,
                &sc.doc.sim.r_list,
                &cfg,
                &traj,
                &seeds,
                ex,
            )
        })?;
        let mut rows = Vec::new();
        for p in &points {
            let _ = writeln!(r, "scaling r = {}: mean sup error {:.4}", p.r, p.mean_error);
            for (seed, e) in seeds.iter().zip(&p.errors) {
                rows.push(vec![p.r.to_string(), seed.to_string(), e.to_string()]);
            }
        }
        if sc.doc.outputs.csv {
            let path = sc.path("scaling.csv");
            write_csv(&path, &["r", "seed", "sup_error"].map(String::from), &rows)?;
            files.push(path);
        }
    }
    files.push(write_metadata(sc, "simulate", seeds, true, &files)?);
    Ok(Outcome { report: r, files })
}

fn join_queues(v: &[usize]) -> String {
    v.iter()
        .map(|i| (i + 1).to_string())
        .collect::<Vec<_>>()
        .join(" ")
}

/// A CSV header and its rows.
pub type Table = (Vec<String>, Vec<Vec<String>>);

/// Header and rows of the node and edge CSVs. Queue numbers are 1-based.
pub fn diagram_rows(d: &StateDiagram, j: usize) -> (Table, Table) {
    let mut nh: Vec<String> = ["id", "state", "feasible", "absorbing"].map(String::from).to_vec();
    nh.extend(numbered("alpha", j));
    nh.push("signs".into());
    let nodes = d
        .nodes
        .iter()
        .map(|n| {
            let mut r = vec![
                n.id.to_string(),
                n.state.label(),
                n.feasible.to_string(),
                n.absorbing.to_string(),
            ];
            match &n.alpha {
                Some(a) => r.extend(a.iter().map(|v| v.to_string())),
                None => r.extend((0..j).map(|_| String::new())),
            }
            r.push(n.drift_signs.iter().map(|s| s.symbol()).collect());
            r
        })
        .collect();
    let eh = [
        "from",
        "to",
        "from_state",
        "to_state",
        "kind",
        "entering",
        "via",
        "removed",
        "guard_rate",
        "guard_holds",
        "shrunk_groups_grow",
    ]
    .map(String::from)
    .to_vec();
    let label = |id: usize| d.nodes.get(id).map(|n| n.state.label()).unwrap_or_default();
    let edges = d
        .edges
        .iter()
        .map(|e| {
            vec![
                e.from.to_string(),
                e.to.to_string(),
                label(e.from),
                label(e.to),
                format!("{:?}", e.kind),
                e.entering.map(|q| (q + 1).to_string()).unwrap_or_default(),
                e.via.map(label).unwrap_or_default(),
                join_queues(&e.removed),
                e.guard_rate.to_string(),
                e.guard_holds.to_string(),
                e.shrunk_groups_grow.to_string(),
            ]
        })
        .collect();
    ((nh, nodes), (eh, edges))
}

/// Enumerates the maxima diagram and, for two groups of two queues, runs
/// the no-loop check and the four-cycle certificate.
pub fn cmd_statediagram(sc: &Scenario) -> Result<Outcome, CliError> {
    let ex = sc.execution();
    let d = exec::with_threads(sc.jobs, || statespace::diagram(&sc.net, &sc.dq, ex))?;
    sc.prepare_dir()?;
    let mut files = Vec::new();
    if sc.doc.outputs.csv {
        let ((nh, nodes), (eh, edges)) = diagram_rows(&d, sc.net.num_groups());
        let path = sc.path("nodes.csv");
        write_csv(&path, &nh, &nodes)?;
        files.push(path);
        let path = sc.path("edges.csv");
        write_csv(&path, &eh, &edges)?;
        files.push(path);
    }
    if sc.doc.outputs.dot {
        let path = sc.path("diagram.dot");
        write_text(&path, &d.to_dot())?;
        files.push(path);
    }
    let feasible = d.nodes.iter().filter(|n| n.feasible).count();
    let jumps = d.edges.iter().filter(|e| e.kind == EdgeKind::Jump).count();
    let mut r = String::new();
    let _ = writeln!(
        r,
        "{} nodes ({feasible} feasible), {} edges ({jumps} jumps)",
        d.nodes.len(),
        d.edges.len()
    );
    let mut violations = Vec::new();
    let bad_jumps: Vec<String> = d
        .edges
        .iter()
        .filter(|e| e.kind == EdgeKind::Jump && !e.shrunk_groups_grow)
        .map(|e| format!("{} -> {}", d.nodes[e.from].state, d.nodes[e.to].state))
        .collect();
    if !bad_jumps.is_empty() {
        violations.push(format!("jumps where a reduced group does not grow: {}", bad_jumps.join(", ")));
    }
    let stable = utilization_check(&sc.dq, &sc.net)?.stable;
    if sc.net.is_two_by_two() && stable {
        let rep = exec::with_threads(sc.jobs, || {
            statespace::verify_no_loop(&sc.net, &sc.dq, sc.samples, sc.doc.sim.seed, ex)
        })?;
        let cert = statespace::four_cycle_certificate(&sc.net)?;
        let _ = writeln!(
            r,
            "no-loop check: {} samples, {} drained, {} loops, longest path {}",
            rep.samples, rep.drained, rep.loops, rep.longest_path
        );
        let _ = writeln!(
            r,
            "four-cycle certificate: sum = {:.6}, impossible = {}",
            cert.sum, cert.impossible
        );
        let path = sc.path("no_loop.json");
        write_json(&path, &serde_json::json!({ "report": rep, "certificate": cert }))?;
        files.push(path);
        if rep.loops > 0 {
            let w = rep
                .witness
                .as_ref()
                .map(|w| format!(" (x0 = {:?} repeats {})", w.x0, w.repeated))
                .unwrap_or_default();
            violations.push(format!("{} loops found{w}", rep.loops));
        }
        if !cert.impossible {
            violations.push("the four-cycle jump conditions can hold together".into());
        }
    } else {
        let why = if stable {
            "needs two groups of two queues"
        } else {
            "utilization violated"
        };
        let _ = writeln!(r, "no-loop check: not applicable ({why})");
    }
    files.push(write_metadata(sc, "statediagram", Vec::new(), false, &files)?);
    if !violations.is_empty() {
        let _ = writeln!(r, "violations: {}", violations.join("; "));
        return Err(CliError::Property(r));
    }
    Ok(Outcome { report: r, files })
}
