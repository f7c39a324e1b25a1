//! Jobs as run by the command line, and their JSON, CSV and text renderings.

use std::f64::consts::LN_2;
use std::fmt::Write as _;
use std::time::Instant;

use serde_json::{json, Map, Value};

use crate::capacity::{blahut_arimoto, optimize_capacity, OptimizerSettings};
use crate::definite::{decompose, definite_set, extract_partition, KERNEL_TOL};
use crate::error::{Error, Result};
use crate::parse::{parse_map, parse_shape};
use crate::reduction::{
    additivity_experiment, entropy_inequality_run, reduce_capacity, restriction_equality, tensor_with_identity,
};
use crate::map::PtpuMap;

pub const MAX_RESTARTS: usize = 1024;
pub const MAX_TOL: f64 = 1e-2;
pub const DEFAULT_SEED: u64 = 42;
pub const DEFAULT_SAMPLES: usize = 1000;
const ENTROPY_INEQUALITY_TOL: f64 = 1e-9;
const SIGNIFICANT_DIGITS: usize = 12;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Capacity,
    Decompose,
    Reduce,
    VerifyEntropy,
    Restriction,
    Additivity,
    TensorId,
}

impl Command {
    pub fn as_str(self) -> &'static str {
        match self {
            Command::Capacity => "capacity",
            Command::Decompose => "decompose",
            Command::Reduce => "reduce",
            Command::VerifyEntropy => "verify-lemma1",
            Command::Restriction => "restriction",
            Command::Additivity => "additivity",
            Command::TensorId => "tensor-id",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        [
            Command::Capacity,
            Command::Decompose,
            Command::Reduce,
            Command::VerifyEntropy,
            Command::Restriction,
            Command::Additivity,
            Command::TensorId,
        ]
        .into_iter()
        .find(|c| c.as_str() == name)
    }

    fn map_count(self) -> usize {
        match self {
            Command::VerifyEntropy => 0,
            Command::Additivity => 2,
            _ => 1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OutputFormat {
    Json,
    Csv,
    Human,
}

impl OutputFormat {
    pub fn as_str(self) -> &'static str {
        match self {
            OutputFormat::Json => "json",
            OutputFormat::Csv => "csv",
            OutputFormat::Human => "human",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LogBase {
    Nat,
    Bits,
}

impl LogBase {
    pub fn as_str(self) -> &'static str {
        match self {
            LogBase::Nat => "nat",
            LogBase::Bits => "bits",
        }
    }

    /// Factor applied to capacity-valued fields at display time.
    pub fn unit(self) -> f64 {
        match self {
            LogBase::Nat => 1.0,
            LogBase::Bits => 1.0 / LN_2,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct JobSettings {
    pub restarts: usize,
    pub max_iter: usize,
    pub tol: f64,
    pub seed: u64,
    pub output: OutputFormat,
    pub log_base: LogBase,
}

impl Default for JobSettings {
    fn default() -> Self {
        let o = OptimizerSettings::default();
        JobSettings {
            restarts: o.restarts,
            max_iter: o.max_iter,
            tol: o.tol,
            seed: DEFAULT_SEED,
            output: OutputFormat::Json,
            log_base: LogBase::Nat,
        }
    }
}

impl JobSettings {
    pub fn optimizer(&self) -> OptimizerSettings {
        OptimizerSettings { restarts: self.restarts, max_iter: self.max_iter, tol: self.tol, seed: self.seed }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct JobSpec {
    pub command: Command,
    pub map_sources: Vec<String>,
    pub settings: JobSettings,
    /// Algebra shape for `verify-lemma1` and `tensor-id`.
    pub shape: Option<String>,
    pub samples: usize,
    /// Include wall-clock timings; off by default so reruns are byte-identical.
    pub timings: bool,
}

impl JobSpec {
    pub fn new(command: Command, map_sources: Vec<String>) -> Self {
        JobSpec {
            command,
            map_sources,
            settings: JobSettings::default(),
            shape: None,
            samples: DEFAULT_SAMPLES,
            timings: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let s = &self.settings;
        if !(1..=MAX_RESTARTS).contains(&s.restarts) {
            return Err(Error::Domain(format!("restarts must lie in [1, {MAX_RESTARTS}], got {}", s.restarts)));
        }
        if !(s.tol > 0.0 && s.tol <= MAX_TOL) {
            return Err(Error::Domain(format!("tol must lie in (0, {MAX_TOL}], got {}", s.tol)));
        }
        if s.max_iter == 0 {
            return Err(Error::Domain("max-iter must be positive".into()));
        }
        let want = self.command.map_count();
        if self.map_sources.len() != want {
            return Err(Error::Domain(format!(
                "{} takes {want} map argument(s), got {}",
                self.command.as_str(),
                self.map_sources.len()
            )));
        }
        if matches!(self.command, Command::VerifyEntropy | Command::TensorId) && self.shape.is_none() {
            return Err(Error::Domain(format!("{} needs --shape", self.command.as_str())));
        }
        if self.command == Command::VerifyEntropy && self.samples == 0 {
            return Err(Error::Domain("samples must be positive".into()));
        }
        Ok(())
    }

    fn to_json(&self) -> Value {
        let mut job = Map::new();
        job.insert("command".into(), json!(self.command.as_str()));
        job.insert("maps".into(), json!(self.map_sources));
        if let Some(shape) = &self.shape {
            job.insert("shape".into(), json!(shape));
        }
        if self.command == Command::VerifyEntropy {
            job.insert("samples".into(), json!(self.samples));
        }
        Value::Object(job)
    }
}

/// A rendered job: process exit status and the text for each stream.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct JobOutcome {
    pub exit_code: i32,
    pub stdout: String,
    pub stderr: String,
}

/// Tabular view of a result for CSV and text output.
struct Table {
    headers: Vec<&'static str>,
    rows: Vec<Vec<String>>,
}

struct Rendered {
    result: Value,
    table: Table,
    summary: Vec<(String, String)>,
    warnings: Vec<String>,
    /// Set when a verified property fails; reported with exit status 3.
    failure: Option<String>,
}

/// Round to 12 significant digits.
pub fn round_sig(x: f64) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return x;
    }
    format!("{:.*e}", SIGNIFICANT_DIGITS - 1, x).parse().unwrap_or(x)
}

/// Apply [`round_sig`] to every number in a JSON value.
pub fn round_json(v: &mut Value) {
    match v {
        Value::Number(n) => {
            if !(n.is_i64() || n.is_u64()) {
                if let Some(x) = n.as_f64() {
                    if let Some(r) = serde_json::Number::from_f64(round_sig(x)) {
                        *n = r;
                    }
                }
            }
        }
        Value::Array(a) => a.iter_mut().for_each(round_json),
        Value::Object(o) => o.values_mut().for_each(round_json),
        _ => {}
    }
}

fn num(x: f64) -> String {
    let r = round_sig(x);
    let s = format!("{r}");
    if r.fract() == 0.0 && !s.contains('e') && !s.contains('.') {
        format!("{s}.0")
    } else {
        s
    }
}

fn positivity_warnings(maps: &[PtpuMap]) -> Vec<String> {
    maps.iter()
        .filter(|m| !m.positivity_verified())
        .map(|m| format!("positivity unverified for map '{}' (certificate UserAsserted)", m.name()))
        .collect()
}

fn run(spec: &JobSpec) -> Result<Rendered> {
    spec.validate()?;
    let maps = spec.map_sources.iter().map(|s| parse_map(s)).collect::<Result<Vec<_>>>()?;
    let warnings = positivity_warnings(&maps);
    let settings = spec.settings.optimizer();
    let unit = spec.settings.log_base.unit();
    let shape = spec.shape.as_deref().map(parse_shape).transpose()?;
    let mut summary = Vec::new();
    let mut failure = None;
    let (result, table) = match spec.command {
        Command::Capacity => {
            let map = &maps[0];
            let r = if map.source().is_abelian() && map.target().is_abelian() {
                blahut_arimoto(map.matrix(), 1e-10)?
            } else {
                optimize_capacity(map, &settings)?
            };
            summary.push(("method".into(), r.method.as_str().into()));
            let table = Table {
                headers: vec!["value", "lowerBound", "upperBound", "method", "iterations", "converged"],
                rows: vec![vec![
                    num(r.value * unit),
                    num(r.lower_bound * unit),
                    num(r.upper_bound * unit),
                    r.method.as_str().into(),
                    r.iterations.to_string(),
                    r.converged.to_string(),
                ]],
            };
            (r.to_json(unit), table)
        }
        Command::Decompose => {
            let d = decompose(&maps[0], spec.settings.seed)?;
            summary.push(("definiteDim".into(), d.definite_dim.to_string()));
            summary.push(("ergodic".into(), d.ergodic.to_string()));
            let rows = (0..d.ranks.len())
                .map(|i| {
                    vec![
                        i.to_string(),
                        d.ranks[i].to_string(),
                        d.corner_source_shapes[i].to_string(),
                        d.corner_target_shapes[i].to_string(),
                    ]
                })
                .collect();
            let table = Table { headers: vec!["corner", "rank", "cornerSourceShape", "cornerTargetShape"], rows };
            (d.to_json(), table)
        }
        Command::Reduce => {
            let t = reduce_capacity(&maps[0], &settings)?;
            summary.push(("value".into(), num(t.combined_value * unit)));
            summary.push(("assembledEnsembleChi".into(), num(t.assembled_chi * unit)));
            let rows = t
                .children
                .iter()
                .zip(&t.optimal_weights)
                .enumerate()
                .map(|(i, ((c, r), w))| {
                    vec![
                        i.to_string(),
                        c.map.source().total_rank().to_string(),
                        num(r.value * unit),
                        r.method.as_str().into(),
                        num(*w),
                    ]
                })
                .collect();
            let table = Table { headers: vec!["corner", "cornerRank", "capacity", "method", "weight"], rows };
            (t.to_json(unit), table)
        }
        Command::VerifyEntropy => {
            let shape = shape.expect("validated");
            let (s, records) = entropy_inequality_run(&shape, spec.samples, spec.settings.seed)?;
            let passed = s.max_equality_error <= ENTROPY_INEQUALITY_TOL && s.min_slack >= -ENTROPY_INEQUALITY_TOL;
            if !passed {
                failure = Some(format!(
                    "entropy inequality check failed: max equality error {:e}, min slack {:e}",
                    s.max_equality_error, s.min_slack
                ));
            }
            let mut v = s.to_json();
            v["passed"] = json!(passed);
            summary.push(("minSlack".into(), num(s.min_slack)));
            summary.push(("maxEqualityError".into(), num(s.max_equality_error)));
            let rows = records
                .iter()
                .enumerate()
                .map(|(i, r)| vec![i.to_string(), num(r.conditional_entropy), num(r.equality_error), num(r.slack)])
                .collect();
            let table = Table { headers: vec!["sample", "conditionalEntropy", "equalityError", "slack"], rows };
            (v, table)
        }
        Command::Restriction => {
            let map = &maps[0];
            let set = definite_set(map, KERNEL_TOL)?;
            let partition = extract_partition(&set, spec.settings.seed)?;
            let r = restriction_equality(map, &partition, &settings)?;
            let mut v = r.to_json(unit);
            v["partitionRanks"] = json!(partition.ranks());
            summary.push(("gap".into(), num(r.gap * unit)));
            let rows = [("full", &r.full), ("restricted", &r.restricted)]
                .iter()
                .map(|(side, c)| vec![side.to_string(), num(c.value * unit), c.method.as_str().into()])
                .collect();
            (v, Table { headers: vec!["side", "value", "method"], rows })
        }
        Command::Additivity => {
            let r = additivity_experiment(&maps[0], &maps[1], &settings)?;
            let rows = vec![
                vec!["factor1".into(), num(r.factors[0].combined_value * unit)],
                vec!["factor2".into(), num(r.factors[1].combined_value * unit)],
                vec!["sum".into(), num(r.sum * unit)],
                vec!["tensor".into(), num(r.tensor_value * unit)],
                vec!["productEnsembleChi".into(), num(r.product_chi * unit)],
                vec!["deficit".into(), num(r.deficit * unit)],
            ];
            (r.to_json(unit), Table { headers: vec!["quantity", "value"], rows })
        }
        Command::TensorId => {
            let n = shape.expect("validated");
            let r = tensor_with_identity(&maps[0], &n, &settings)?;
            let rows = vec![
                vec!["capacity".into(), num(r.additivity.factors[0].combined_value * unit)],
                vec!["expected".into(), num(r.expected * unit)],
                vec!["reduced".into(), num(r.additivity.tensor.combined_value * unit)],
                vec!["optimizer".into(), num(r.optimizer.value * unit)],
                vec!["deficit".into(), num(r.additivity.deficit * unit)],
            ];
            (r.to_json(unit), Table { headers: vec!["quantity", "value"], rows })
        }
    };
    Ok(Rendered { result, table, summary, warnings, failure })
}

fn settings_json(s: &JobSettings) -> Value {
    json!({
        "restarts": s.restarts,
        "maxIter": s.max_iter,
        "tol": s.tol,
        "seed": s.seed,
        "output": s.output.as_str(),
        "logBase": s.log_base.as_str(),
    })
}

fn render_csv(table: &Table) -> String {
    let mut out = table.headers.join(",");
    out.push('\n');
    for row in &table.rows {
        let cells: Vec<String> = row
            .iter()
            .map(|c| if c.contains(',') || c.contains('"') { format!("\"{}\"", c.replace('"', "\"\"")) } else { c.clone() })
            .collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

fn render_human(spec: &JobSpec, r: &Rendered) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{} [{}]", spec.command.as_str(), spec.map_sources.join(", "));
    let _ = writeln!(out, "units: {}", spec.settings.log_base.as_str());
    for (k, v) in &r.summary {
        let _ = writeln!(out, "{k}: {v}");
    }
    for w in &r.warnings {
        let _ = writeln!(out, "warning: {w}");
    }
    let widths: Vec<usize> = (0..r.table.headers.len())
        .map(|j| {
            r.table
                .rows
                .iter()
                .map(|row| row[j].chars().count())
                .chain(std::iter::once(r.table.headers[j].len()))
                .max()
                .unwrap_or(0)
        })
        .collect();
    let line = |cells: Vec<&str>| -> String {
        cells
            .iter()
            .zip(&widths)
            .map(|(c, w)| format!("{c:<w$}"))
            .collect::<Vec<_>>()
            .join("  ")
            .trim_end()
            .to_string()
    };
    out.push_str(&line(r.table.headers.clone()));
    out.push('\n');
    out.push_str(&line(widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().iter().map(|s| s.as_str()).collect()));
    out.push('\n');
    for row in &r.table.rows {
        out.push_str(&line(row.iter().map(|s| s.as_str()).collect()));
        out.push('\n');
    }
    out
}

/// Exit status for a library error: 3 for numerical breakdowns, 2 otherwise.
pub fn exit_code_for(err: &Error) -> i32 {
    if err.is_numerical() {
        3
    } else {
        2
    }
}

/// Run a job and render its report in the requested format.
pub fn run_job(spec: &JobSpec) -> JobOutcome {
    let start = Instant::now();
    let rendered = match run(spec) {
        Ok(r) => r,
        Err(e) => {
            return JobOutcome { exit_code: exit_code_for(&e), stdout: String::new(), stderr: format!("error: {e}\n") };
        }
    };
    let elapsed = start.elapsed().as_secs_f64() * 1e3;
    let (exit_code, stderr) = match &rendered.failure {
        Some(msg) => (3, format!("error: {msg}\n")),
        None => (0, String::new()),
    };
    let stdout = match spec.settings.output {
        OutputFormat::Json => {
            let mut wrapper = Map::new();
            wrapper.insert("job".into(), spec.to_json());
            wrapper.insert("settings".into(), settings_json(&spec.settings));
            wrapper.insert("result".into(), rendered.result.clone());
            wrapper.insert("timings_ms".into(), if spec.timings { json!({ "total": elapsed }) } else { Value::Null });
            if !rendered.warnings.is_empty() {
                wrapper.insert("warnings".into(), json!(rendered.warnings));
            }
            let mut v = Value::Object(wrapper);
            round_json(&mut v);
            let mut s = serde_json::to_string_pretty(&v).expect("serializable");
            s.push('\n');
            s
        }
        OutputFormat::Csv => render_csv(&rendered.table),
        OutputFormat::Human => render_human(spec, &rendered),
    };
    JobOutcome { exit_code, stdout, stderr }
}
