//! File formats: event CSVs, parameter and configuration JSON, trace CSVs,
//! and adapters for order-book message logs and grouped posting logs.
//!
//! Data errors carry the 1-based line number of the offending row (the
//! header is line 1).

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::likelihood::LikelihoodProblem;
use crate::model::{BoxDomain, KernelFamily, ModelSpec, ParamVector};
use crate::optim::{Algorithm, FitResult, HyperParams, StepKind, TraceRecord};
use crate::simulate::EventSequence;

pub const EVENT_HEADER: &str = "time,type";
pub const TRACE_HEADER: &str = "iter,objective,residual,step_kind,lyapunov,seconds";

// ---------------------------------------------------------------- events

/// Writes `time,type` rows. Times use the shortest representation that
/// parses back to the same `f64`.
pub fn write_events<W: Write>(events: &EventSequence, out: W) -> Result<()> {
    let mut w = BufWriter::new(out);
    writeln!(w, "{EVENT_HEADER}")?;
    for (t, k) in events.iter() {
        writeln!(w, "{t},{k}")?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_events_file(events: &EventSequence, path: &Path) -> Result<()> {
    write_events(events, File::create(path)?)
}

/// Rows of an event file without horizon or dimension checks.
pub fn read_event_rows<R: Read>(input: R) -> Result<(Vec<f64>, Vec<usize>)> {
    let reader = BufReader::new(input);
    let mut lines = reader.lines();
    match lines.next() {
        Some(line) => {
            let line = line?;
            if line.trim_end_matches('\r') != EVENT_HEADER {
                return Err(Error::Data {
                    row: 1,
                    message: format!("expected header '{EVENT_HEADER}', found '{line}'"),
                });
            }
        }
        None => {
            return Err(Error::Data {
                row: 1,
                message: format!("missing header '{EVENT_HEADER}'"),
            })
        }
    }
    let mut times = Vec::new();
    let mut types = Vec::new();
    for (idx, line) in lines.enumerate() {
        let row = idx + 2;
        let line = line?;
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split(',');
        let (Some(t), Some(k), None) = (fields.next(), fields.next(), fields.next()) else {
            return Err(Error::Data {
                row,
                message: format!("expected two fields, found '{line}'"),
            });
        };
        let t: f64 = t.trim().parse().map_err(|_| Error::Data {
            row,
            message: format!("invalid time '{t}'"),
        })?;
        if !(t >= 0.0 && t.is_finite()) {
            return Err(Error::Data {
                row,
                message: format!("time must be finite and nonnegative, got {t}"),
            });
        }
        let k: usize = k.trim().parse().map_err(|_| Error::Data {
            row,
            message: format!("invalid type '{k}'"),
        })?;
        if let Some(&prev) = times.last() {
            if t < prev {
                return Err(Error::Data {
                    row,
                    message: format!("time {t} is earlier than the previous row ({prev})"),
                });
            }
        }
        times.push(t);
        types.push(k);
    }
    Ok((times, types))
}

/// Reads an event file observed on `[0, horizon]`; types must lie in
/// `[0, dim)` when `dim` is given.
pub fn read_events<R: Read>(input: R, horizon: f64, dim: Option<usize>) -> Result<EventSequence> {
    let (times, types) = read_event_rows(input)?;
    for (idx, (&t, &k)) in times.iter().zip(&types).enumerate() {
        let row = idx + 2;
        if t > horizon {
            return Err(Error::Data {
                row,
                message: format!("time {t} exceeds the horizon {horizon}"),
            });
        }
        if let Some(d) = dim {
            if k >= d {
                return Err(Error::Data {
                    row,
                    message: format!("type {k} is out of range for dimension {d}"),
                });
            }
        }
    }
    EventSequence::new(times, types, horizon)
}

pub fn read_events_file(path: &Path, horizon: f64, dim: Option<usize>) -> Result<EventSequence> {
    read_events(File::open(path)?, horizon, dim)
}

// ---------------------------------------------------------------- traces

pub fn write_trace<W: Write>(trace: &[TraceRecord], out: W) -> Result<()> {
    let mut w = BufWriter::new(out);
    writeln!(w, "{TRACE_HEADER}")?;
    for r in trace {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            r.iter, r.objective, r.residual, r.step_kind, r.lyapunov, r.seconds
        )?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_trace_file(trace: &[TraceRecord], path: &Path) -> Result<()> {
    write_trace(trace, File::create(path)?)
}

pub fn read_trace<R: Read>(input: R) -> Result<Vec<TraceRecord>> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let header: Vec<String> = reader.headers()?.iter().map(str::to_owned).collect();
    if header.join(",") != TRACE_HEADER {
        return Err(Error::Data {
            row: 1,
            message: format!("expected header '{TRACE_HEADER}'"),
        });
    }
    let mut out = Vec::new();
    for (idx, rec) in reader.records().enumerate() {
        let row = idx + 2;
        let rec = rec?;
        let field = |i: usize| rec.get(i).unwrap_or("");
        let num = |i: usize| -> Result<f64> {
            field(i).parse().map_err(|_| Error::Data {
                row,
                message: format!("invalid number '{}'", field(i)),
            })
        };
        out.push(TraceRecord {
            iter: field(0).parse().map_err(|_| Error::Data {
                row,
                message: format!("invalid iteration '{}'", field(0)),
            })?,
            objective: num(1)?,
            residual: num(2)?,
            step_kind: field(3).parse::<StepKind>().map_err(|e| Error::Data {
                row,
                message: e.to_string(),
            })?,
            lyapunov: num(4)?,
            seconds: num(5)?,
        });
    }
    Ok(out)
}

// ---------------------------------------------------------------- params

/// Fitted or user-supplied parameters with their kernels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsFile {
    pub mu: Vec<f64>,
    pub alpha: Vec<Vec<Vec<f64>>>,
    pub beta: Vec<f64>,
    pub kernels: Vec<KernelFamily>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub objective: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub meta: Option<Value>,
}

impl ParamsFile {
    pub fn new(spec: &ModelSpec, params: &ParamVector) -> Self {
        Self {
            mu: params.mu().to_vec(),
            alpha: params.alpha_nested(),
            beta: params.beta().to_vec(),
            kernels: spec.kernels().to_vec(),
            objective: None,
            meta: None,
        }
    }

    /// Parameters plus final objective, iteration count and AA counters.
    /// Wall-clock times are left out so reruns produce identical files.
    pub fn from_fit(spec: &ModelSpec, fit: &FitResult) -> Self {
        let mut file = Self::new(spec, &fit.params);
        file.objective = Some(fit.objective);
        file.meta = Some(serde_json::json!({
            "algorithm": fit.algorithm.name(),
            "iterations": fit.stats.iterations,
            "aa_accepted": fit.stats.aa_accepted,
            "aa_rejected": fit.stats.aa_rejected,
            "restarts": fit.stats.restarts,
            "final_residual": fit.trace.last().map(|r| r.residual),
        }));
        file
    }

    pub fn spec(&self) -> Result<ModelSpec> {
        ModelSpec::new(self.mu.len(), self.kernels.clone())
    }

    pub fn params(&self) -> Result<ParamVector> {
        ParamVector::from_nested(self.mu.clone(), self.alpha.clone(), self.beta.clone())
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
    }
}

// ---------------------------------------------------------------- config

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelName {
    Exponential,
    PowerLaw,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    #[serde(rename = "K")]
    pub dim: usize,
    #[serde(rename = "M")]
    pub num_kernels: usize,
    pub kernels: Vec<KernelName>,
    /// Power-law cutoff `c`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cutoff: Option<f64>,
}

impl ModelSection {
    pub fn spec(&self) -> Result<ModelSpec> {
        if self.kernels.len() != self.num_kernels {
            return Err(Error::Config(format!(
                "model.M = {} but {} kernels are listed",
                self.num_kernels,
                self.kernels.len()
            )));
        }
        let kernels = self
            .kernels
            .iter()
            .map(|k| match k {
                KernelName::Exponential => Ok(KernelFamily::Exponential),
                KernelName::PowerLaw => {
                    let c = self.cutoff.ok_or_else(|| {
                        Error::Config("model.cutoff is required for power_law kernels".into())
                    })?;
                    KernelFamily::power_law(c).map_err(|e| Error::Config(e.to_string()))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        ModelSpec::new(self.dim, kernels)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainSection {
    pub lower: ParamVector,
    pub upper: ParamVector,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegularizationSection {
    #[serde(rename = "C")]
    pub c: f64,
}

/// `{"algorithm": ..., <every HyperParams field>}`; fields other than
/// `algorithm` default as in [`HyperParams::default`].
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerSection {
    pub algorithm: Algorithm,
    pub hyper: HyperParams,
}

impl Serialize for OptimizerSection {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let mut value = serde_json::to_value(&self.hyper).map_err(serde::ser::Error::custom)?;
        if let Value::Object(map) = &mut value {
            map.insert("algorithm".into(), Value::String(self.algorithm.name().into()));
        }
        value.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for OptimizerSection {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let mut map = serde_json::Map::<String, Value>::deserialize(deserializer)?;
        let algorithm = match map.remove("algorithm") {
            Some(v) => serde_json::from_value(v).map_err(D::Error::custom)?,
            None => return Err(D::Error::missing_field("algorithm")),
        };
        let hyper = serde_json::from_value(Value::Object(map)).map_err(D::Error::custom)?;
        Ok(Self { algorithm, hyper })
    }
}

/// Run configuration shared by `simulate` and `fit`.
///
/// `params` (optional) are the parameters to simulate from; when absent the
/// simulator uses `init`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelSection,
    pub domain: DomainSection,
    pub init: ParamVector,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params: Option<ParamVector>,
    pub regularization: RegularizationSection,
    pub optimizer: OptimizerSection,
    pub horizon: f64,
}

/// Validated pieces of a [`RunConfig`].
#[derive(Debug, Clone)]
pub struct ResolvedConfig {
    pub spec: ModelSpec,
    pub domain: BoxDomain,
    pub init: ParamVector,
    pub sim_params: ParamVector,
    pub reg_c: f64,
    pub algorithm: Algorithm,
    pub hyper: HyperParams,
    pub horizon: f64,
    /// Hyperparameter conditions that do not hold (see
    /// [`HyperParams::compliance`]).
    pub warnings: Vec<String>,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Checks every section against the model invariants. Noncompliant
    /// hyperparameters are an error unless `allow_noncompliant` is set, in
    /// which case they are returned as warnings.
    pub fn resolve(&self, allow_noncompliant: bool) -> Result<ResolvedConfig> {
        let spec = self.model.spec()?;
        let as_config = |e: Error| match e {
            Error::Config(m) => Error::Config(m),
            other => Error::Config(other.to_string()),
        };
        let domain = BoxDomain::new(&spec, self.domain.lower.clone(), self.domain.upper.clone()).map_err(as_config)?;
        self.init.validate(&spec).map_err(as_config)?;
        let sim_params = self.params.clone().unwrap_or_else(|| self.init.clone());
        sim_params.validate(&spec).map_err(as_config)?;
        if !(self.regularization.c >= 0.0 && self.regularization.c.is_finite()) {
            return Err(Error::Config(format!(
                "regularization.C must be finite and >= 0, got {}",
                self.regularization.c
            )));
        }
        if !(self.horizon >= 0.0 && self.horizon.is_finite()) {
            return Err(Error::Config(format!(
                "horizon must be finite and >= 0, got {}",
                self.horizon
            )));
        }
        self.optimizer.hyper.validate()?;
        let warnings = self.optimizer.hyper.compliance();
        if !warnings.is_empty() && !allow_noncompliant {
            return Err(Error::Config(format!(
                "noncompliant hyperparameters (pass --allow-noncompliant-hp to run anyway): {}",
                warnings.join("; ")
            )));
        }
        Ok(ResolvedConfig {
            spec,
            domain,
            init: self.init.clone(),
            sim_params,
            reg_c: self.regularization.c,
            algorithm: self.optimizer.algorithm,
            hyper: self.optimizer.hyper.clone(),
            horizon: self.horizon,
            warnings,
        })
    }
}

impl ResolvedConfig {
    pub fn problem(&self, events: EventSequence) -> Result<LikelihoodProblem> {
        LikelihoodProblem::new(self.spec.clone(), events, self.domain.clone(), self.reg_c)
    }
}

// ---------------------------------------------------------------- ingestion

/// Counts reported by the ingesters.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct IngestSummary {
    pub rows: usize,
    pub kept: usize,
    pub unmapped: usize,
    pub malformed: usize,
}

/// One output type of an order-book mapping: the message codes it collects
/// and, optionally, the side (`1` buy/bid, `-1` sell/ask).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LobsterType {
    pub name: String,
    pub codes: Vec<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub direction: Option<i64>,
}

/// Mapping from `(event code, direction)` to type index (the position in
/// `types`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LobsterMapping {
    pub types: Vec<LobsterType>,
    /// Largest tolerated fraction of unparseable rows.
    #[serde(default)]
    pub max_malformed_fraction: f64,
}

impl LobsterMapping {
    /// Six types `L^b, L^a, M^b, M^a, C^b, C^a`: code 1 is a limit order,
    /// codes 4 and 5 executions, codes 2 and 3 cancellations and deletions.
    pub fn six_type() -> Self {
        let ty = |name: &str, codes: &[i64], direction: i64| LobsterType {
            name: name.into(),
            codes: codes.to_vec(),
            direction: Some(direction),
        };
        Self {
            types: vec![
                ty("L^b", &[1], 1),
                ty("L^a", &[1], -1),
                ty("M^b", &[4, 5], 1),
                ty("M^a", &[4, 5], -1),
                ty("C^b", &[2, 3], 1),
                ty("C^a", &[2, 3], -1),
            ],
            max_malformed_fraction: 0.0,
        }
    }

    pub fn read(path: &Path) -> Result<Self> {
        serde_json::from_str(&std::fs::read_to_string(path)?).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn lookup(&self, code: i64, direction: i64) -> Option<usize> {
        self.types
            .iter()
            .position(|t| t.codes.contains(&code) && t.direction.is_none_or(|d| d == direction))
    }
}

/// Rebases kept events to start at 0 and sorts them stably by time. The
/// horizon is the last event time.
fn rebase(mut rows: Vec<(f64, usize)>) -> Result<EventSequence> {
    rows.sort_by(|a, b| a.0.total_cmp(&b.0));
    let origin = rows.first().map_or(0.0, |r| r.0);
    let times: Vec<f64> = rows.iter().map(|r| r.0 - origin).collect();
    let types: Vec<usize> = rows.iter().map(|r| r.1).collect();
    let horizon = times.last().copied().unwrap_or(0.0);
    EventSequence::new(times, types, horizon)
}

fn check_malformed(summary: &IngestSummary, threshold: f64, first_bad: Option<(usize, String)>) -> Result<()> {
    if summary.malformed == 0 {
        return Ok(());
    }
    let fraction = summary.malformed as f64 / summary.rows.max(1) as f64;
    if fraction > threshold {
        let (row, message) = first_bad.unwrap_or((0, String::new()));
        return Err(Error::Data {
            row,
            message: format!(
                "{} of {} rows are malformed (fraction {fraction:.4} > {threshold}); first: {message}",
                summary.malformed, summary.rows
            ),
        });
    }
    Ok(())
}

/// Headerless order-book messages: `time, code, order id, size, price,
/// direction`. Rows whose `(code, direction)` is unmapped are dropped.
pub fn ingest_lobster<R: Read>(input: R, mapping: &LobsterMapping) -> Result<(EventSequence, IngestSummary)> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(input);
    let mut summary = IngestSummary::default();
    let mut first_bad = None;
    let mut rows = Vec::new();
    for (idx, rec) in reader.records().enumerate() {
        let row = idx + 1;
        summary.rows += 1;
        let parsed = rec.map_err(|e| e.to_string()).and_then(|rec| {
            if rec.len() < 6 {
                return Err(format!("expected 6 columns, found {}", rec.len()));
            }
            let t: f64 = rec[0].parse().map_err(|_| format!("invalid time '{}'", &rec[0]))?;
            let code: i64 = rec[1].parse().map_err(|_| format!("invalid event code '{}'", &rec[1]))?;
            let dir: i64 = rec[5].parse().map_err(|_| format!("invalid direction '{}'", &rec[5]))?;
            if !t.is_finite() {
                return Err(format!("invalid time '{}'", &rec[0]));
            }
            Ok((t, code, dir))
        });
        match parsed {
            Ok((t, code, dir)) => match mapping.lookup(code, dir) {
                Some(k) => {
                    summary.kept += 1;
                    rows.push((t, k));
                }
                None => summary.unmapped += 1,
            },
            Err(message) => {
                summary.malformed += 1;
                first_bad.get_or_insert((row, message));
            }
        }
    }
    check_malformed(&summary, mapping.max_malformed_fraction, first_bad)?;
    Ok((rebase(rows)?, summary))
}

/// Group names in type-index order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupMapping {
    pub groups: Vec<String>,
    #[serde(default)]
    pub max_malformed_fraction: f64,
}

impl GroupMapping {
    pub fn read(path: &Path) -> Result<Self> {
        serde_json::from_str(&std::fs::read_to_string(path)?).map_err(|e| Error::Config(e.to_string()))
    }
}

/// Posting log with header `time,group`; each group listed in `mapping`
/// becomes a type, other groups are dropped.
pub fn ingest_grouped_posts<R: Read>(input: R, mapping: &GroupMapping) -> Result<(EventSequence, IngestSummary)> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(input);
    let header: Vec<String> = reader.headers()?.iter().map(str::to_owned).collect();
    if header != ["time", "group"] {
        return Err(Error::Data {
            row: 1,
            message: "expected header 'time,group'".into(),
        });
    }
    let mut summary = IngestSummary::default();
    let mut first_bad = None;
    let mut rows = Vec::new();
    for (idx, rec) in reader.records().enumerate() {
        let row = idx + 2;
        summary.rows += 1;
        let parsed = rec.map_err(|e| e.to_string()).and_then(|rec| {
            if rec.len() != 2 {
                return Err(format!("expected 2 columns, found {}", rec.len()));
            }
            let t: f64 = rec[0].parse().map_err(|_| format!("invalid time '{}'", &rec[0]))?;
            if !t.is_finite() {
                return Err(format!("invalid time '{}'", &rec[0]));
            }
            Ok((t, rec[1].to_owned()))
        });
        match parsed {
            Ok((t, group)) => match mapping.groups.iter().position(|g| *g == group) {
                Some(k) => {
                    summary.kept += 1;
                    rows.push((t, k));
                }
                None => summary.unmapped += 1,
            },
            Err(message) => {
                summary.malformed += 1;
                first_bad.get_or_insert((row, message));
            }
        }
    }
    check_malformed(&summary, mapping.max_malformed_fraction, first_bad)?;
    Ok((rebase(rows)?, summary))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn events_round_trip_exactly() {
        let times = vec![0.0, 0.1, 1.0 / 3.0, 1.0 / 3.0, std::f64::consts::E, 99.99999999999999];
        let ev = EventSequence::new(times.clone(), vec![0, 1, 0, 1, 1, 0], 100.0).unwrap();
        let mut buf = Vec::new();
        write_events(&ev, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("time,type\n"));
        assert!(text.ends_with('\n'));
        let back = read_events(&buf[..], 100.0, Some(2)).unwrap();
        assert_eq!(back.times(), &times[..]);
        assert_eq!(back.types(), ev.types());
    }

    #[test]
    fn empty_event_file_is_header_only() {
        let mut buf = Vec::new();
        write_events(&EventSequence::empty(0.0), &mut buf).unwrap();
        assert_eq!(buf, b"time,type\n");
        assert!(read_events(&buf[..], 0.0, None).unwrap().is_empty());
    }

    #[test]
    fn malformed_rows_report_line() {
        let cases = [
            ("time,type\n0.5,0\nabc,1\n", 3),
            ("time,type\n0.5,0\n0.7,x\n", 3),
            ("time,type\n0.5,0\n0.4,0\n", 3),
            ("time,type\n0.5,0,1\n", 2),
            ("time,type\n-1,0\n", 2),
            ("t,k\n", 1),
        ];
        for (text, line) in cases {
            match read_events(text.as_bytes(), 10.0, None) {
                Err(Error::Data { row, .. }) => assert_eq!(row, line, "{text}"),
                other => panic!("{text}: {other:?}"),
            }
        }
        assert!(matches!(
            read_events("time,type\n11,0\n".as_bytes(), 10.0, None),
            Err(Error::Data { row: 2, .. })
        ));
        assert!(matches!(
            read_events("time,type\n1,3\n".as_bytes(), 10.0, Some(2)),
            Err(Error::Data { row: 2, .. })
        ));
    }

    #[test]
    fn trace_round_trip() {
        let trace = vec![
            TraceRecord {
                iter: 0,
                objective: -12.345678901234567,
                residual: 1e-300,
                step_kind: StepKind::Initial,
                lyapunov: 12.345678901234567,
                seconds: 0.001,
            },
            TraceRecord {
                iter: 1,
                objective: -1.0,
                residual: 0.5,
                step_kind: StepKind::AaAccepted,
                lyapunov: 1.25,
                seconds: 0.002,
            },
        ];
        let mut buf = Vec::new();
        write_trace(&trace, &mut buf).unwrap();
        assert!(String::from_utf8_lossy(&buf).starts_with(TRACE_HEADER));
        assert_eq!(read_trace(&buf[..]).unwrap(), trace);
    }

    fn sample_config() -> String {
        r#"{
          "model": {"K": 1, "M": 1, "kernels": ["exponential"]},
          "domain": {"lower": {"mu": [0.01], "alpha": [[[0.0]]], "beta": [0.1]},
                     "upper": {"mu": [10.0], "alpha": [[[5.0]]], "beta": [10.0]}},
          "init": {"mu": [1.0], "alpha": [[[0.5]]], "beta": [1.0]},
          "regularization": {"C": 0.0},
          "optimizer": {"algorithm": "ipalm", "gamma1": 0.0, "gamma2": 0.0, "tau1": null, "tau2": null,
                        "lbar1": 100.0, "lbar2": 100.0, "delta": 1.0},
          "horizon": 50.0
        }"#
        .to_string()
    }

    #[test]
    fn config_parses_and_resolves() {
        let cfg = RunConfig::from_json(&sample_config()).unwrap();
        let resolved = cfg.resolve(false).unwrap();
        assert_eq!(resolved.algorithm, Algorithm::Ipalm);
        assert_eq!(resolved.hyper.gamma1, 0.0);
        assert_eq!(resolved.sim_params, resolved.init);
        assert!(resolved.warnings.is_empty());
        let again = RunConfig::from_json(&serde_json::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(again, cfg);
    }

    #[test]
    fn config_rejects_unknown_keys_and_noncompliance() {
        let bad = sample_config().replace("\"horizon\"", "\"extra\": 1, \"horizon\"");
        assert!(matches!(RunConfig::from_json(&bad), Err(Error::Config(_))));
        let bad = sample_config().replace("\"delta\": 1.0", "\"delta\": 1.0, \"speed\": 2");
        assert!(RunConfig::from_json(&bad).is_err());

        let defaults = sample_config().replace(
            r#""gamma1": 0.0, "gamma2": 0.0, "tau1": null, "tau2": null,
                        "lbar1": 100.0, "lbar2": 100.0, "delta": 1.0"#,
            "",
        );
        let defaults = defaults.replace("\"ipalm\",", "\"ipalm\"");
        let cfg = RunConfig::from_json(&defaults).unwrap();
        assert!(matches!(cfg.resolve(false), Err(Error::Config(_))));
        assert!(!cfg.resolve(true).unwrap().warnings.is_empty());
    }

    #[test]
    fn lobster_six_types() {
        let msgs = "\
34200.5,1,11,100,1000,1
34200.6,1,12,100,1010,-1
34200.7,4,11,50,1000,1
34200.8,5,0,20,1010,-1
34200.9,2,12,10,1010,1
34201.0,3,12,90,1010,-1
34201.1,7,0,0,0,1
34201.2,4,11,50,1000,-1
34201.3,3,11,50,1000,1
34201.4,1,13,10,990,1
";
        let (ev, summary) = ingest_lobster(msgs.as_bytes(), &LobsterMapping::six_type()).unwrap();
        assert_eq!(ev.types(), &[0, 1, 2, 3, 4, 5, 3, 4, 0]);
        assert_eq!(summary.rows, 10);
        assert_eq!(summary.kept, 9);
        assert_eq!(summary.unmapped, 1);
        assert_eq!(ev.times()[0], 0.0);
        assert!(ev.times().windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn lobster_empty_and_malformed() {
        let (ev, summary) = ingest_lobster("".as_bytes(), &LobsterMapping::six_type()).unwrap();
        assert!(ev.is_empty());
        assert_eq!(summary.rows, 0);

        let msgs = "1.0,1,1,1,1,1\nbad,1,1,1,1,1\n";
        assert!(matches!(
            ingest_lobster(msgs.as_bytes(), &LobsterMapping::six_type()),
            Err(Error::Data { row: 2, .. })
        ));
        let mut lenient = LobsterMapping::six_type();
        lenient.max_malformed_fraction = 0.5;
        let (_, summary) = ingest_lobster(msgs.as_bytes(), &lenient).unwrap();
        assert_eq!(summary.malformed, 1);
    }

    #[test]
    fn grouped_posts() {
        let csv = "time,group\n100,b\n101.5,a\n102,zzz\n103,b\n";
        let mapping = GroupMapping {
            groups: vec!["a".into(), "b".into()],
            max_malformed_fraction: 0.0,
        };
        let (ev, summary) = ingest_grouped_posts(csv.as_bytes(), &mapping).unwrap();
        assert_eq!(ev.times(), &[0.0, 1.5, 3.0]);
        assert_eq!(ev.types(), &[1, 0, 1]);
        assert_eq!(summary.unmapped, 1);
    }
}
