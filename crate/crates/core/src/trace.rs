//! Per-step training records shared by every simulator.

use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// One logged step.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TraceRecord {
    pub step: u64,
    pub loss: f64,
    /// Top NTK eigenvalue, when measured at this step.
    pub lambda: Option<f64>,
    /// Values aligned with [`TrainTrace::aux_names`].
    pub aux: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TraceMeta {
    pub eta: f64,
    pub seed: u64,
    /// Short human-readable description of the model that produced the trace.
    pub model: String,
    pub lambda0: f64,
}

/// Time series of a single training run.
///
/// Steps are strictly increasing. Losses are finite except possibly in the
/// last record, and only when `diverged` is set.
#[derive(Debug, Clone, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrainTrace {
    pub meta: TraceMeta,
    pub aux_names: Vec<String>,
    pub records: Vec<TraceRecord>,
    pub diverged: bool,
}

/// Values read off a trace at a given physical time `t * eta`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceSample {
    pub step: u64,
    pub loss: f64,
    pub lambda: Option<f64>,
    /// The request lies past the last record; values are from the last record.
    pub truncated: bool,
}

impl TrainTrace {
    pub fn new(meta: TraceMeta, aux_names: &[&str]) -> Self {
        Self {
            meta,
            aux_names: aux_names.iter().map(|s| String::from(*s)).collect(),
            records: Vec::new(),
            diverged: false,
        }
    }

    /// Appends a record. Panics if `step` does not increase or the aux arity is off;
    /// both are programming errors in the simulator.
    pub fn push(&mut self, step: u64, loss: f64, lambda: Option<f64>, aux: Vec<f64>) {
        assert_eq!(aux.len(), self.aux_names.len(), "aux arity");
        if let Some(last) = self.records.last() {
            assert!(step > last.step, "trace steps must increase");
        }
        self.records.push(TraceRecord {
            step,
            loss,
            lambda,
            aux,
        });
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn first(&self) -> Option<&TraceRecord> {
        self.records.first()
    }

    pub fn last(&self) -> Option<&TraceRecord> {
        self.records.last()
    }

    pub fn aux_index(&self, name: &str) -> Option<usize> {
        self.aux_names.iter().position(|n| n == name)
    }

    pub fn aux_series<'a>(&'a self, name: &str) -> Option<impl Iterator<Item = f64> + 'a> {
        let idx = self.aux_index(name)?;
        Some(self.records.iter().map(move |r| r.aux[idx]))
    }

    pub fn losses(&self) -> impl Iterator<Item = f64> + '_ {
        self.records.iter().map(|r| r.loss)
    }

    /// Last measured eigenvalue at or before the final record.
    pub fn last_lambda(&self) -> Option<f64> {
        self.records.iter().rev().find_map(|r| r.lambda)
    }

    /// Ratio of the largest loss to the initial loss (1 when the initial loss is 0).
    pub fn peak_loss_ratio(&self) -> f64 {
        let Some(first) = self.records.first() else {
            return 1.0;
        };
        let peak = self
            .records
            .iter()
            .map(|r| if r.loss.is_nan() { f64::INFINITY } else { r.loss })
            .fold(first.loss, f64::max);
        if first.loss > 0.0 {
            peak / first.loss
        } else if peak > 0.0 {
            f64::INFINITY
        } else {
            1.0
        }
    }
}

/// Reads the trace at physical time `at_physical_time = t * eta`, taking the
/// last record with `step * eta <= at_physical_time`.
///
/// The most recent eigenvalue measured at or before that record is reported.
pub fn trace_reduce(trace: &TrainTrace, at_physical_time: f64) -> Result<TraceSample> {
    let eta = trace.meta.eta;
    let first = trace.records.first().ok_or(Error::BeforeFirstRecord)?;
    let phys = |step: u64| step as f64 * eta;
    // Small slack so that e.g. 25/eta steps at eta count as t*eta = 25.
    let slack = 1e-9 * at_physical_time.abs().max(1.0);
    if phys(first.step) > at_physical_time + slack {
        return Err(Error::BeforeFirstRecord);
    }
    let idx = trace
        .records
        .partition_point(|r| phys(r.step) <= at_physical_time + slack)
        - 1;
    let rec = &trace.records[idx];
    let lambda = trace.records[..=idx].iter().rev().find_map(|r| r.lambda);
    let truncated = idx + 1 == trace.records.len()
        && (eta <= 0.0 && at_physical_time > phys(rec.step)
            || eta > 0.0 && (rec.step as f64 + 1.0) * eta <= at_physical_time + slack);
    Ok(TraceSample {
        step: rec.step,
        loss: rec.loss,
        lambda,
        truncated,
    })
}

/// Encodes an `f64` as a C99 hex-float literal (`0x1.8p+1`), exactly.
pub fn to_hex_float(x: f64) -> String {
    use core::fmt::Write;
    let mut s = String::new();
    if x.is_nan() {
        return String::from("nan");
    }
    if x.is_sign_negative() {
        s.push('-');
    }
    let a = libm::fabs(x);
    if a.is_infinite() {
        s.push_str("inf");
        return s;
    }
    if a == 0.0 {
        s.push_str("0x0p+0");
        return s;
    }
    let bits = a.to_bits();
    let exp_bits = (bits >> 52) as i64;
    let mut mantissa = bits & ((1u64 << 52) - 1);
    let (lead, exp) = if exp_bits == 0 { (0, -1022) } else { (1, exp_bits - 1023) };
    let _ = write!(s, "0x{lead}");
    if mantissa != 0 {
        let mut digits = 13;
        while mantissa & 0xf == 0 {
            mantissa >>= 4;
            digits -= 1;
        }
        let _ = write!(s, ".{mantissa:0digits$x}");
    }
    let _ = write!(s, "p{exp:+}");
    s
}

/// Parses the output of [`to_hex_float`] (and any normalized hex-float literal).
pub fn from_hex_float(s: &str) -> Result<f64> {
    let s = s.trim();
    let (neg, body) = match s.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, s.strip_prefix('+').unwrap_or(s)),
    };
    let sign = if neg { -1.0 } else { 1.0 };
    match body {
        "nan" => return Ok(f64::NAN),
        "inf" => return Ok(sign * f64::INFINITY),
        _ => {}
    }
    let body = body
        .strip_prefix("0x")
        .or_else(|| body.strip_prefix("0X"))
        .ok_or(Error::BadHexFloat)?;
    let (mant, exp) = body.split_once(['p', 'P']).ok_or(Error::BadHexFloat)?;
    let exp: i32 = exp.parse().map_err(|_| Error::BadHexFloat)?;
    let (int_part, frac_part) = mant.split_once('.').unwrap_or((mant, ""));
    if int_part.is_empty() || frac_part.len() > 13 {
        return Err(Error::BadHexFloat);
    }
    let lead = u64::from_str_radix(int_part, 16).map_err(|_| Error::BadHexFloat)?;
    let frac = if frac_part.is_empty() {
        0
    } else {
        u64::from_str_radix(frac_part, 16).map_err(|_| Error::BadHexFloat)? << (4 * (13 - frac_part.len()))
    };
    let value = match (lead, exp) {
        (0, _) if frac == 0 => 0.0,
        (0, -1022) => f64::from_bits(frac),
        (1, -1022..=1023) => f64::from_bits((((exp + 1023) as u64) << 52) | frac),
        _ => return Err(Error::BadHexFloat),
    };
    Ok(sign * value)
}
