//! Functional survival samples: each subject carries a step-function
//! covariate path over the intervals where it is at risk, plus an event
//! indicator.
//!
//! Times are normalized to the unit window. A segment covers the
//! left-open right-closed interval `(t_start, t_end]`; outside the union of
//! a subject's segments the subject is not at risk and has no covariate.

use std::collections::HashMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const REQUIRED_COLUMNS: [&str; 4] = ["subject_id", "t_start", "t_end", "event"];

/// A covariate-constant stretch of at-risk time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub t_start: f64,
    pub t_end: f64,
    pub x: Vec<f64>,
}

impl Segment {
    pub fn new(t_start: f64, t_end: f64, x: Vec<f64>) -> Self {
        Segment { t_start, t_end, x }
    }

    pub fn len(&self) -> f64 {
        self.t_end - self.t_start
    }

    /// True when `t` lies in `(t_start, t_end]`.
    pub fn contains(&self, t: f64) -> bool {
        self.t_start < t && t <= self.t_end
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Subject {
    pub id: String,
    segments: Vec<Segment>,
    event: bool,
    event_time: Option<f64>,
}

impl Subject {
    /// Validates ordering and the event convention. The event time, if any,
    /// is the right end of the final segment.
    pub fn new(id: impl Into<String>, segments: Vec<Segment>, event: bool) -> Result<Self> {
        let id = id.into();
        let fail = |msg: String| Error::InvalidSubject {
            subject: id.clone(),
            msg,
        };
        if segments.is_empty() {
            return Err(fail("no segments".into()));
        }
        let p = segments[0].x.len();
        for (k, seg) in segments.iter().enumerate() {
            if !(seg.t_start.is_finite() && seg.t_end.is_finite()) {
                return Err(fail(format!("segment {k} has non-finite times")));
            }
            if seg.t_start >= seg.t_end {
                return Err(fail(format!(
                    "segment {k} has t_start {} >= t_end {}",
                    seg.t_start, seg.t_end
                )));
            }
            if seg.t_start < 0.0 || seg.t_end > 1.0 {
                return Err(fail(format!("segment {k} leaves the window [0, 1]")));
            }
            if seg.x.len() != p {
                return Err(fail(format!(
                    "segment {k} has {} covariates, expected {p}",
                    seg.x.len()
                )));
            }
            if seg.x.iter().any(|v| !v.is_finite()) {
                return Err(fail(format!("segment {k} has a non-finite covariate")));
            }
            if k > 0 && segments[k - 1].t_end > seg.t_start {
                return Err(fail(format!("segment {k} overlaps segment {}", k - 1)));
            }
        }
        let event_time = event.then(|| segments[segments.len() - 1].t_end);
        Ok(Subject {
            id,
            segments,
            event,
            event_time,
        })
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn event(&self) -> bool {
        self.event
    }

    pub fn event_time(&self) -> Option<f64> {
        self.event_time
    }

    pub fn p(&self) -> usize {
        self.segments[0].x.len()
    }

    pub fn at_risk_time(&self) -> f64 {
        self.segments.iter().map(Segment::len).sum()
    }

    /// Covariate at `t` from the segment whose `(t_start, t_end]` contains it;
    /// `None` when the subject is not at risk at `t`.
    pub fn covariate_at(&self, t: f64) -> Option<&[f64]> {
        let k = self.segments.partition_point(|s| s.t_end < t);
        self.segments
            .get(k)
            .filter(|s| s.contains(t))
            .map(|s| s.x.as_slice())
    }

    /// The failure point `(T, X(T))` for subjects with an event.
    pub fn failure_point(&self) -> Option<(f64, &[f64])> {
        let t = self.event_time?;
        let last = self.segments.last()?;
        Some((t, last.x.as_slice()))
    }
}

/// Free function form of [`Subject::covariate_at`].
pub fn covariate_at(subject: &Subject, t: f64) -> Option<&[f64]> {
    subject.covariate_at(t)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub subjects: Vec<Subject>,
    pub p: usize,
    /// Raw time units per normalized unit.
    pub horizon: f64,
    pub covariate_names: Vec<String>,
}

impl Dataset {
    pub fn new(subjects: Vec<Subject>, p: usize, horizon: f64) -> Result<Self> {
        let names = (1..=p).map(|k| format!("x{k}")).collect();
        Self::with_names(subjects, names, horizon)
    }

    pub fn with_names(
        subjects: Vec<Subject>,
        covariate_names: Vec<String>,
        horizon: f64,
    ) -> Result<Self> {
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::InvalidDataset(format!(
                "horizon must be positive, got {horizon}"
            )));
        }
        let p = covariate_names.len();
        if let Some(s) = subjects.iter().find(|s| s.p() != p) {
            return Err(Error::InvalidSubject {
                subject: s.id.clone(),
                msg: format!("has {} covariates, dataset has {p}", s.p()),
            });
        }
        Ok(Dataset {
            subjects,
            p,
            horizon,
            covariate_names,
        })
    }

    pub fn n(&self) -> usize {
        self.subjects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subjects.is_empty()
    }

    pub fn failures(&self) -> usize {
        self.subjects.iter().filter(|s| s.event()).count()
    }

    /// (1/n) Σᵢ total at-risk time.
    pub fn mean_at_risk_time(&self) -> f64 {
        if self.subjects.is_empty() {
            return 0.0;
        }
        self.subjects.iter().map(Subject::at_risk_time).sum::<f64>() / self.n() as f64
    }

    /// Dataset restricted to the given subject indices, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            subjects: indices.iter().map(|&i| self.subjects[i].clone()).collect(),
            p: self.p,
            horizon: self.horizon,
            covariate_names: self.covariate_names.clone(),
        }
    }

    /// Long-format CSV with raw (de-normalized) times.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let mut header = REQUIRED_COLUMNS.join(",");
        for name in &self.covariate_names {
            header.push(',');
            header.push_str(name);
        }
        writeln!(out, "{header}")?;
        for s in &self.subjects {
            let last = s.segments.len() - 1;
            for (k, seg) in s.segments.iter().enumerate() {
                let flag = u8::from(s.event && k == last);
                write!(
                    out,
                    "{},{},{},{}",
                    s.id,
                    seg.t_start * self.horizon,
                    seg.t_end * self.horizon,
                    flag
                )?;
                for v in &seg.x {
                    write!(out, ",{v}")?;
                }
                writeln!(out)?;
            }
        }
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)
            .expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("CSV output is UTF-8")
    }
}

struct Row {
    line: u64,
    t_start: f64,
    t_end: f64,
    event: bool,
    x: Vec<f64>,
}

/// Reads the long-format subjects CSV, dividing raw times by `horizon`.
pub fn read_csv<R: Read>(input: R, horizon: f64) -> Result<Dataset> {
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::InvalidDataset(format!(
            "horizon must be positive, got {horizon}"
        )));
    }
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(input);
    let headers = reader.headers()?.clone();
    if headers.is_empty() || (headers.len() == 1 && headers[0].is_empty()) {
        return Dataset::with_names(Vec::new(), Vec::new(), horizon);
    }
    if headers.len() < REQUIRED_COLUMNS.len()
        || headers
            .iter()
            .zip(REQUIRED_COLUMNS)
            .any(|(h, want)| h != want)
    {
        return Err(Error::Parse {
            line: 1,
            msg: format!("header must start with {}", REQUIRED_COLUMNS.join(",")),
        });
    }
    let names: Vec<String> = headers.iter().skip(4).map(str::to_string).collect();
    let p = names.len();

    let mut order: Vec<String> = Vec::new();
    let mut rows: HashMap<String, Vec<Row>> = HashMap::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |pos| pos.line());
        if record.len() != p + 4 {
            return Err(Error::Parse {
                line,
                msg: format!("expected {} fields, found {}", p + 4, record.len()),
            });
        }
        let num = |k: usize| -> Result<f64> {
            record[k].parse::<f64>().map_err(|_| Error::Parse {
                line,
                msg: format!("column `{}` is not a number: `{}`", &headers[k], &record[k]),
            })
        };
        let id = record[0].to_string();
        let (raw_start, raw_end) = (num(1)?, num(2)?);
        let event = match &record[3] {
            "0" => false,
            "1" => true,
            other => {
                return Err(Error::Parse {
                    line,
                    msg: format!("event must be 0 or 1, found `{other}`"),
                })
            }
        };
        if raw_start < 0.0 || raw_end > horizon {
            return Err(Error::InvalidSubject {
                subject: id,
                msg: format!(
                    "segment ({raw_start}, {raw_end}] at line {line} exceeds [0, {horizon}]"
                ),
            });
        }
        let x = (4..p + 4).map(num).collect::<Result<Vec<_>>>()?;
        let row = Row {
            line,
            t_start: raw_start / horizon,
            t_end: raw_end / horizon,
            event,
            x,
        };
        rows.entry(id.clone())
            .or_insert_with(|| {
                order.push(id);
                Vec::new()
            })
            .push(row);
    }

    let mut subjects = Vec::with_capacity(order.len());
    for id in order {
        let mut subject_rows = rows.remove(&id).unwrap_or_default();
        subject_rows.sort_by(|a, b| a.t_start.total_cmp(&b.t_start));
        let last = subject_rows.len() - 1;
        if let Some(r) = subject_rows[..last].iter().find(|r| r.event) {
            return Err(Error::InvalidSubject {
                subject: id,
                msg: format!("event=1 on non-final row (line {})", r.line),
            });
        }
        let event = subject_rows[last].event;
        let segments = subject_rows
            .into_iter()
            .map(|r| Segment::new(r.t_start, r.t_end, r.x))
            .collect();
        subjects.push(Subject::new(id, segments, event)?);
    }
    Dataset::with_names(subjects, names, horizon)
}

pub fn ingest_csv(path: impl AsRef<Path>, horizon: f64) -> Result<Dataset> {
    read_csv(File::open(path)?, horizon)
}
