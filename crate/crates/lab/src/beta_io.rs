//! JSONL records of the staged β construction and their parsing for resume.

use floquet_core::betasearch::{delta, BetaStage, SampleCheck, Verification, VerificationStatus};
use floquet_core::evolution::LogFifthRoot;
use floquet_core::Dyadic;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::{LabError, RunConfig, TOOL, VERSION};

pub const FILE: &str = "beta_stages.jsonl";

/// Digest of every setting that shapes a stage; `beta.stages` is left out
/// so a longer run can resume a shorter one.
pub fn construction_digest(cfg: &RunConfig) -> String {
    let mut beta = cfg.beta.clone();
    beta.stages = 0;
    let text = format!(
        "{VERSION}\nt={:e}\nalpha={:e}\n{}",
        cfg.model.t,
        cfg.model.alpha,
        toml::to_string(&beta).expect("config serializes")
    );
    hex::encode(Sha256::digest(text.as_bytes()))
}

pub fn header(cfg: &RunConfig) -> Value {
    json!({
        "record": "header",
        "tool": TOOL,
        "version": VERSION,
        "construction_digest": construction_digest(cfg),
    })
}

pub fn dyadic_json(d: &Dyadic) -> Value {
    let (p_hex, q) = d.to_hex_parts();
    json!({ "p_hex": p_hex, "q": q })
}

fn status_json(s: &VerificationStatus) -> Value {
    match s {
        VerificationStatus::Verified => json!("verified"),
        VerificationStatus::Failed => json!("failed"),
        VerificationStatus::Partial(m) => json!({ "partial": m }),
    }
}

pub fn stage_json(s: &BetaStage) -> Value {
    json!({
        "record": "stage",
        "m": s.m,
        "beta": dyadic_json(&s.beta),
        "t": s.t,
        "delta": {
            "sum_hex": s.delta.sum.to_str_radix(16),
            "log2": s.delta.log2,
            "lower_exponent": s.delta.lower_exponent,
        },
        "kappa": s.kappa,
        "next_beta": dyadic_json(&s.next_beta),
        "c1": s.c1,
        "c2": s.c2,
        "verification": {
            "status": status_json(&s.verification.status),
            "checks": s.verification.checks.iter().map(|c| json!({
                "theta": c.theta,
                "lambda": c.lambda,
                "lhs": c.lhs,
                "threshold": c.threshold,
                "pass": c.pass,
            })).collect::<Vec<_>>(),
        },
    })
}

fn bad(reason: impl Into<String>) -> LabError {
    LabError::Artifact {
        file: FILE.into(),
        reason: reason.into(),
    }
}

fn field<'a>(v: &'a Value, key: &str) -> Result<&'a Value, LabError> {
    v.get(key).ok_or_else(|| bad(format!("missing `{key}`")))
}

fn as_u64(v: &Value, key: &str) -> Result<u64, LabError> {
    field(v, key)?.as_u64().ok_or_else(|| bad(format!("`{key}` is not an unsigned integer")))
}

fn as_f64(v: &Value, key: &str) -> Result<f64, LabError> {
    field(v, key)?.as_f64().ok_or_else(|| bad(format!("`{key}` is not a number")))
}

fn parse_dyadic(v: &Value) -> Result<Dyadic, LabError> {
    let p = field(v, "p_hex")?.as_str().ok_or_else(|| bad("`p_hex` is not a string"))?;
    Ok(Dyadic::from_hex_parts(p, as_u64(v, "q")?)?)
}

/// Rebuilds a stage, recomputing Δ from `T` and rejecting a stored Δ that disagrees.
pub fn parse_stage(v: &Value) -> Result<BetaStage, LabError> {
    let t = as_u64(v, "t")?;
    let d = delta(t, &LogFifthRoot)?;
    let stored = field(v, "delta")?;
    let sum_hex = field(stored, "sum_hex")?.as_str().unwrap_or_default();
    if sum_hex != d.sum.to_str_radix(16) || field(stored, "lower_exponent")?.as_i64() != Some(d.lower_exponent) {
        return Err(bad(format!("stored Δ does not match T = {t}")));
    }
    let ver = field(v, "verification")?;
    let status = match field(ver, "status")? {
        Value::String(s) if s == "verified" => VerificationStatus::Verified,
        Value::String(s) if s == "failed" => VerificationStatus::Failed,
        Value::Object(o) => VerificationStatus::Partial(
            o.get("partial").and_then(Value::as_str).ok_or_else(|| bad("bad partial status"))?.to_string(),
        ),
        _ => return Err(bad("unknown verification status")),
    };
    let checks = field(ver, "checks")?
        .as_array()
        .ok_or_else(|| bad("`checks` is not an array"))?
        .iter()
        .map(|c| {
            Ok(SampleCheck {
                theta: as_f64(c, "theta")?,
                lambda: as_f64(c, "lambda")?,
                lhs: as_f64(c, "lhs")?,
                threshold: as_f64(c, "threshold")?,
                pass: field(c, "pass")?.as_bool().ok_or_else(|| bad("`pass` is not a bool"))?,
            })
        })
        .collect::<Result<Vec<_>, LabError>>()?;
    Ok(BetaStage {
        m: as_u64(v, "m")? as u32,
        beta: parse_dyadic(field(v, "beta")?)?,
        t,
        delta: d,
        kappa: as_u64(v, "kappa")? as u32,
        next_beta: parse_dyadic(field(v, "next_beta")?)?,
        c1: field(v, "c1")?.as_f64(),
        c2: field(v, "c2")?.as_f64(),
        verification: Verification { checks, status },
    })
}

/// Completed stages from an earlier file written under the same construction
/// digest; empty when the file is absent or belongs to other settings.
pub fn resume_history(text: &str, cfg: &RunConfig) -> Result<Vec<BetaStage>, LabError> {
    let mut lines = text.lines();
    let Some(first) = lines.next() else {
        return Ok(Vec::new());
    };
    let head: Value = serde_json::from_str(first).map_err(|e| bad(e.to_string()))?;
    if head.get("construction_digest").and_then(Value::as_str) != Some(construction_digest(cfg).as_str()) {
        return Ok(Vec::new());
    }
    let mut stages = Vec::new();
    for line in lines {
        // A torn final line from an interrupted write ends the history.
        let Ok(v) = serde_json::from_str::<Value>(line) else { break };
        if v.get("record").and_then(Value::as_str) != Some("stage") {
            break;
        }
        stages.push(parse_stage(&v)?);
    }
    stages.truncate(cfg.beta.stages as usize);
    Ok(stages)
}
