//! Line-delimited JSON event log. Events carry no timestamps so reruns
//! produce identical files.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use serde_json::{Map, Value};

use crate::error::Result;

pub struct JsonLog {
    file: Option<BufWriter<File>>,
    echo: bool,
}

impl JsonLog {
    /// Truncates `path`; every event becomes one line.
    pub fn create(path: &Path, echo: bool) -> Result<Self> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        Ok(Self { file: Some(BufWriter::new(File::create(path)?)), echo })
    }

    /// Discards every event.
    pub fn sink() -> Self {
        Self { file: None, echo: false }
    }

    /// Writes `{"event": event, ..fields}`; `fields` must be a JSON object.
    pub fn event(&mut self, event: &str, fields: Value) -> Result<()> {
        let mut obj = Map::new();
        obj.insert("event".into(), Value::String(event.into()));
        if let Value::Object(m) = fields {
            obj.extend(m);
        }
        let line = serde_json::to_string(&Value::Object(obj))?;
        if let Some(f) = &mut self.file {
            writeln!(f, "{line}")?;
            f.flush()?;
        }
        if self.echo {
            println!("{line}");
        }
        Ok(())
    }
}
