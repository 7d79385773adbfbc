//! Artifact containers and the provenance headers every file carries.

use std::fmt::Write as _;

use serde_json::{json, Value};

use crate::{RunConfig, TOOL, VERSION};

/// One output file, fully rendered in memory.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Artifact {
    pub name: String,
    pub bytes: Vec<u8>,
}

impl Artifact {
    pub fn new(name: impl Into<String>, bytes: impl Into<Vec<u8>>) -> Self {
        Self {
            name: name.into(),
            bytes: bytes.into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Status {
    Ok,
    /// Budget exhausted before the run finished; artifacts hold what was done.
    Partial(String),
    /// A checked tolerance was missed.
    Failed(String),
}

impl Status {
    pub fn exit_code(&self) -> i32 {
        match self {
            Status::Ok => 0,
            Status::Partial(_) => 3,
            Status::Failed(_) => 4,
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Status::Ok => "ok",
            Status::Partial(_) => "partial",
            Status::Failed(_) => "failed",
        }
    }

    pub fn message(&self) -> Option<&str> {
        match self {
            Status::Ok => None,
            Status::Partial(m) | Status::Failed(m) => Some(m),
        }
    }

    /// `Failed` listing every message, or `Ok` when there is none.
    pub fn from_failures(failures: Vec<String>) -> Self {
        if failures.is_empty() {
            Status::Ok
        } else {
            Status::Failed(failures.join("; "))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Outcome {
    pub status: Status,
    pub artifacts: Vec<Artifact>,
}

/// Provenance object shared by JSON and JSONL outputs.
pub fn meta(command: &str, cfg: &RunConfig) -> Value {
    json!({
        "tool": TOOL,
        "version": VERSION,
        "command": command,
        "config_digest": cfg.digest(),
        "seed": cfg.run.seed,
    })
}

/// Pretty JSON document with a leading `meta` field.
pub fn json_document(command: &str, cfg: &RunConfig, body: Value) -> Vec<u8> {
    let mut doc = serde_json::Map::new();
    doc.insert("meta".into(), meta(command, cfg));
    if let Value::Object(m) = body {
        doc.extend(m);
    } else {
        doc.insert("body".into(), body);
    }
    let mut s = serde_json::to_string_pretty(&Value::Object(doc)).expect("json serializes");
    s.push('\n');
    s.into_bytes()
}

/// One compact JSON value per line.
pub fn jsonl_line(out: &mut String, v: &Value) {
    out.push_str(&serde_json::to_string(v).expect("json serializes"));
    out.push('\n');
}

/// CSV text: a `#` provenance line, optional `#` notes, then the header row.
pub struct Csv {
    text: String,
}

impl Csv {
    pub fn new(command: &str, cfg: &RunConfig, notes: &[String], columns: &[&str]) -> Self {
        let mut text = format!(
            "# {TOOL} {VERSION} command={command} config_digest={} seed={}\n",
            cfg.digest(),
            cfg.run.seed
        );
        for n in notes {
            let _ = writeln!(text, "# {n}");
        }
        text.push_str(&columns.join(","));
        text.push('\n');
        Self { text }
    }

    pub fn row(&mut self, cells: &[Cell]) {
        for (i, c) in cells.iter().enumerate() {
            if i > 0 {
                self.text.push(',');
            }
            match c {
                Cell::F(x) => {
                    let _ = write!(self.text, "{x:e}");
                }
                Cell::I(x) => {
                    let _ = write!(self.text, "{x}");
                }
                Cell::S(x) => self.text.push_str(x),
            }
        }
        self.text.push('\n');
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.text.into_bytes()
    }
}

/// CSV cell; floats use the shortest round-trip exponent form.
pub enum Cell {
    F(f64),
    I(i64),
    S(String),
}
