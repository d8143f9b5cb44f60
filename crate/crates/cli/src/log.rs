//! JSON-lines event log, echoed to stdout and appended to `<out>/<name>.jsonl`.

use crate::error::{input, CliError};
use serde_json::{json, Value};
use std::fs::File;
use std::io::Write;
use std::path::Path;

pub struct Log {
    file: Option<File>,
    quiet: bool,
}

impl Log {
    pub fn create(out: &Path, name: &str, quiet: bool) -> Result<Self, CliError> {
        let path = out.join(format!("{name}.jsonl"));
        let file = File::create(&path).map_err(|e| input(format!("{}: {e}", path.display())))?;
        Ok(Self { file: Some(file), quiet })
    }

    pub fn stdout_only(quiet: bool) -> Self {
        Self { file: None, quiet }
    }

    pub fn event(&mut self, event: &str, mut fields: Value) {
        if let Value::Object(m) = &mut fields {
            m.insert("event".into(), json!(event));
        }
        let line = fields.to_string();
        if !self.quiet {
            println!("{line}");
        }
        if let Some(f) = &mut self.file {
            let _ = writeln!(f, "{line}");
        }
    }
}
