//! Analysis reports: a JSON document, a flat per-k CSV table and plain-text
//! renderings of the verdict table and the confidence curve.
//!
//! Reports carry no wall-clock data, so the same input always produces the
//! same bytes.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::stats::{
    check_alpha, confidence_curve_with, detect_bias_with, AnalysisOptions, Cohorts, ConfidencePoint, StatsError,
    TestMethod, TestResult,
};
use crate::store::SessionLog;
use crate::tasks::{BiasKind, Condition};
use crate::SCHEMA_VERSION;

#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisRequest {
    pub biases: Vec<BiasKind>,
    pub alpha: f64,
    pub curve: bool,
    pub options: AnalysisOptions,
}

impl AnalysisRequest {
    pub fn new(biases: Vec<BiasKind>, alpha: f64) -> Self {
        AnalysisRequest {
            biases,
            alpha,
            curve: false,
            options: AnalysisOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortSummary {
    pub n_experimental: usize,
    pub n_control: usize,
    pub excluded_partial: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisConfig {
    pub method: String,
    pub exact_cap: usize,
    pub continuity_correction: bool,
    pub include_partial: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasReport {
    pub bias: BiasKind,
    pub bias_found: bool,
    pub result: TestResult,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub curve: Option<Vec<ConfidencePoint>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub schema_version: u32,
    pub alpha: f64,
    pub config: AnalysisConfig,
    pub catalog_version: String,
    pub cohorts: CohortSummary,
    pub seeds_experimental: Vec<u64>,
    pub seeds_control: Vec<u64>,
    pub biases: Vec<BiasReport>,
    pub notes: Vec<String>,
}

/// Splits `logs` by condition and tests every requested bias.
pub fn analyze(logs: &[SessionLog], request: &AnalysisRequest) -> Result<AnalysisReport, StatsError> {
    check_alpha(request.alpha)?;
    let opts = &request.options;
    let cohorts = Cohorts::split(logs, opts.include_partial);
    cohorts.check()?;
    let mut biases = Vec::new();
    for &bias in &request.biases {
        let detection = detect_bias_with(&cohorts.experimental, &cohorts.control, bias, request.alpha, opts)?;
        let curve = if request.curve {
            Some(confidence_curve_with(
                &cohorts.experimental,
                &cohorts.control,
                bias,
                opts,
            )?)
        } else {
            None
        };
        biases.push(BiasReport {
            bias,
            bias_found: detection.bias_found,
            result: detection.result,
            curve,
        });
    }
    let mut notes = Vec::new();
    if biases.len() > 1 {
        notes.push(format!(
            "{} biases tested at alpha {} each; p-values are not corrected for multiple comparisons",
            biases.len(),
            request.alpha
        ));
    }
    if cohorts.excluded_partial > 0 {
        notes.push(format!("{} partial sessions excluded", cohorts.excluded_partial));
    }
    let seeds = |c: Condition| -> Vec<u64> {
        match c {
            Condition::Experimental => cohorts.experimental.iter().map(|l| l.seed).collect(),
            Condition::Control => cohorts.control.iter().map(|l| l.seed).collect(),
        }
    };
    Ok(AnalysisReport {
        schema_version: SCHEMA_VERSION,
        alpha: request.alpha,
        config: AnalysisConfig {
            method: format!("{:?}", opts.method).to_lowercase(),
            exact_cap: opts.config.exact_cap,
            continuity_correction: opts.config.continuity_correction,
            include_partial: opts.include_partial,
        },
        catalog_version: cohorts.experimental[0].catalog_version.clone(),
        cohorts: CohortSummary {
            n_experimental: cohorts.experimental.len(),
            n_control: cohorts.control.len(),
            excluded_partial: cohorts.excluded_partial,
        },
        seeds_experimental: seeds(Condition::Experimental),
        seeds_control: seeds(Condition::Control),
        biases,
        notes,
    })
}

fn method_name(m: TestMethod) -> &'static str {
    match m {
        TestMethod::ExactEnumeration => "exact",
        TestMethod::NormalApproximation => "normal",
    }
}

fn bias_label(b: BiasKind) -> &'static str {
    match b {
        BiasKind::Framing => "Framing",
        BiasKind::LossAversion => "Loss aversion",
    }
}

pub fn format_p(p: f64) -> String {
    if p >= 0.001 {
        format!("{p:.4}")
    } else {
        format!("{p:.3e}")
    }
}

fn opt(v: Option<f64>, digits: usize) -> String {
    v.map_or_else(|| "-".to_string(), |v| format!("{v:.digits$}"))
}

/// One row per bias: verdict, p-value, effect sizes and U.
pub fn render_table(report: &AnalysisReport) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<14} {:<12} {:>11} {:>7} {:>7} {:>9} {:>9} method",
        "Bias", "Bias Found?", "p-value", "r", "r_z", "U", "n1/n2"
    );
    for b in &report.biases {
        let r = &b.result;
        let _ = writeln!(
            out,
            "{:<14} {:<12} {:>11} {:>7.3} {:>7} {:>9.1} {:>9} {}",
            bias_label(b.bias),
            if b.bias_found { "yes" } else { "no" },
            format_p(r.p_two_sided),
            r.effect_size_r,
            opt(r.effect_size_rz, 3),
            r.u,
            format!("{}/{}", r.n1, r.n2),
            method_name(r.method),
        );
    }
    let _ = writeln!(out, "alpha = {}", report.alpha);
    for note in &report.notes {
        let _ = writeln!(out, "note: {note}");
    }
    out
}

/// The confidence curve of every bias that has one.
pub fn render_curve(report: &AnalysisReport) -> String {
    let mut out = String::new();
    for b in &report.biases {
        let Some(curve) = &b.curve else { continue };
        let _ = writeln!(out, "{} confidence by probes answered", bias_label(b.bias));
        let _ = writeln!(out, "{:>3} {:>11} {:>7} {:>7} {:>9}", "k", "p-value", "r", "r_z", "z");
        for point in curve {
            let r = &point.result;
            let _ = writeln!(
                out,
                "{:>3} {:>11} {:>7.3} {:>7} {:>9}",
                point.k,
                format_p(r.p_two_sided),
                r.effect_size_r,
                opt(r.effect_size_rz, 3),
                opt(r.z, 3),
            );
        }
    }
    out
}

pub const CURVE_COLUMNS: [&str; 10] = [
    "bias",
    "k",
    "n_experimental",
    "n_control",
    "u",
    "z",
    "p_two_sided",
    "effect_size_r",
    "effect_size_rz",
    "method",
];

/// One CSV row per `k` per bias. Biases analysed without a curve contribute
/// their single full-score row.
pub fn curve_csv(report: &AnalysisReport) -> String {
    let mut out = CURVE_COLUMNS.join(",");
    out.push('\n');
    for b in &report.biases {
        let full = [ConfidencePoint {
            k: crate::tasks::PROBES_PER_BIAS,
            result: b.result.clone(),
        }];
        let points = b.curve.as_deref().unwrap_or(&full);
        for point in points {
            let r = &point.result;
            let field = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{}",
                b.bias.as_str(),
                point.k,
                r.n1,
                r.n2,
                r.u,
                field(r.z),
                r.p_two_sided,
                r.effect_size_r,
                field(r.effect_size_rz),
                method_name(r.method),
            );
        }
    }
    out
}
