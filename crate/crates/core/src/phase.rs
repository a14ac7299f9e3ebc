//! Phase labels and the per-run verdicts built from a trace.

use alloc::string::String;

use crate::trace::TrainTrace;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum PhaseLabel {
    Lazy,
    Catapult,
    Divergent,
}

impl PhaseLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            PhaseLabel::Lazy => "Lazy",
            PhaseLabel::Catapult => "Catapult",
            PhaseLabel::Divergent => "Divergent",
        }
    }
}

impl core::fmt::Display for PhaseLabel {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Thresholds separating the phases.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PhaseCriteria {
    /// Loss below which a run counts as converged.
    pub conv_tol: f64,
    /// Loss above which a run counts as diverged.
    pub div_threshold: f64,
    /// Allowed relative drift of lambda for a Lazy label.
    pub lazy_band: f64,
    /// A loss above `rise_margin * initial` counts as a rise.
    pub rise_margin: f64,
}

impl Default for PhaseCriteria {
    fn default() -> Self {
        Self {
            conv_tol: 1e-10,
            div_threshold: 1e10,
            lazy_band: 0.05,
            rise_margin: 1.01,
        }
    }
}

/// Verdict for one `(eta, seed)` run.
///
/// `phase == None` means the run met none of the criteria within its budget
/// (reported as `Unclassified`).
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PhaseReport {
    pub eta: f64,
    pub seed: u64,
    pub phase: Option<PhaseLabel>,
    pub lambda0: f64,
    /// Top eigenvalue at the end of the run.
    pub lambda_final: f64,
    /// Eigenvalue at the measurement point of a sweep's stop rule, if any.
    pub lambda_at_stop: Option<f64>,
    /// First step with loss below the convergence tolerance.
    pub t_star: Option<u64>,
    pub diverged: bool,
    pub loss_final: f64,
    pub peak_loss_ratio: f64,
    pub steps: u64,
    /// Failure message for runs that errored inside a sweep.
    pub note: Option<String>,
}

impl PhaseReport {
    pub fn eta_lambda0(&self) -> f64 {
        self.eta * self.lambda0
    }

    pub fn phase_name(&self) -> &'static str {
        self.phase.map_or("Unclassified", PhaseLabel::as_str)
    }

    /// A report for a run that could not be carried out.
    pub fn failed(eta: f64, seed: u64, lambda0: f64, note: String) -> Self {
        Self {
            eta,
            seed,
            phase: None,
            lambda0,
            lambda_final: f64::NAN,
            lambda_at_stop: None,
            t_star: None,
            diverged: false,
            loss_final: f64::NAN,
            peak_loss_ratio: f64::NAN,
            steps: 0,
            note: Some(note),
        }
    }

    /// The catapult endpoint bound `lambda_final <= 2/eta + slack`.
    pub fn satisfies_catapult_bound(&self, slack: f64) -> bool {
        self.phase != Some(PhaseLabel::Catapult) || self.lambda_final <= 2.0 / self.eta + slack
    }
}

fn base_report(trace: &TrainTrace, lambda0: f64, criteria: &PhaseCriteria) -> PhaseReport {
    let last = trace.last();
    let loss_final = last.map_or(f64::NAN, |r| r.loss);
    let diverged = trace.diverged || !loss_final.is_finite() || loss_final > criteria.div_threshold;
    PhaseReport {
        eta: trace.meta.eta,
        seed: trace.meta.seed,
        phase: None,
        lambda0,
        lambda_final: trace.last_lambda().unwrap_or(f64::NAN),
        lambda_at_stop: None,
        t_star: trace
            .records
            .iter()
            .find(|r| r.loss < criteria.conv_tol)
            .map(|r| r.step),
        diverged,
        loss_final,
        peak_loss_ratio: trace.peak_loss_ratio(),
        steps: last.map_or(0, |r| r.step),
        note: None,
    }
}

/// Classification for models trained to convergence (warmup and linear models).
///
/// * Divergent: loss above `div_threshold`, non-finite, or overflow guard hit.
/// * Catapult: loss rose above `rise_margin * initial`, then fell below
///   `conv_tol` with `lambda_final < 2 / eta`.
/// * Lazy: no rise, converged, and `|lambda_final - lambda0| < lazy_band * lambda0`.
pub fn classify_converging(trace: &TrainTrace, lambda0: f64, criteria: &PhaseCriteria) -> PhaseReport {
    let mut report = base_report(trace, lambda0, criteria);
    let eta = trace.meta.eta;
    let converged = report.loss_final < criteria.conv_tol;
    let rose = report.peak_loss_ratio > criteria.rise_margin;
    report.phase = if report.diverged {
        Some(PhaseLabel::Divergent)
    } else if converged && rose && report.lambda_final < 2.0 / eta {
        Some(PhaseLabel::Catapult)
    } else if converged
        && !rose
        && libm::fabs(report.lambda_final - lambda0) < criteria.lazy_band * lambda0
    {
        Some(PhaseLabel::Lazy)
    } else {
        None
    };
    report
}

/// Classification for fixed-length training (MLPs), where convergence to a
/// loss tolerance is not expected: Divergent if diverged, Catapult if the loss
/// rose, Lazy otherwise.
pub fn classify_training(trace: &TrainTrace, lambda0: f64, criteria: &PhaseCriteria) -> PhaseReport {
    let mut report = base_report(trace, lambda0, criteria);
    report.phase = Some(if report.diverged {
        PhaseLabel::Divergent
    } else if report.peak_loss_ratio > criteria.rise_margin {
        PhaseLabel::Catapult
    } else {
        PhaseLabel::Lazy
    });
    report
}
