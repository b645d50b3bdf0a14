//! Output directory helpers and the run manifest.

use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Value};
use wtopics_core::Error;

pub struct OutDir {
    root: PathBuf,
    artifacts: Vec<String>,
}

impl OutDir {
    pub fn create(root: &Path) -> Result<Self, Error> {
        fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
        Ok(Self {
            root: root.to_path_buf(),
            artifacts: Vec::new(),
        })
    }

    fn path(&mut self, name: &str) -> Result<PathBuf, Error> {
        let p = self.root.join(name);
        if let Some(parent) = p.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        self.artifacts.push(name.to_owned());
        Ok(p)
    }

    /// Streams into `name` through `write`.
    pub fn write_with(&mut self, name: &str, write: impl FnOnce(&mut BufWriter<fs::File>) -> std::io::Result<()>) -> Result<(), Error> {
        let p = self.path(name)?;
        let f = fs::File::create(&p).map_err(|e| Error::io(&p, e))?;
        let mut w = BufWriter::new(f);
        write(&mut w).map_err(|e| Error::io(&p, e))?;
        std::io::Write::flush(&mut w).map_err(|e| Error::io(&p, e))
    }

    pub fn write_json<T: Serialize + ?Sized>(&mut self, name: &str, value: &T) -> Result<(), Error> {
        let text = serde_json::to_string_pretty(value).map_err(|e| Error::Json {
            context: name.to_owned(),
            source: e,
        })?;
        self.write_with(name, |w| {
            std::io::Write::write_all(w, text.as_bytes())?;
            std::io::Write::write_all(w, b"\n")
        })
    }

    /// Writes `manifest.json` listing every artifact written so far.
    pub fn finish(mut self, command: &str, config: &impl Serialize, results: Value) -> Result<(), Error> {
        let config = serde_json::to_value(config).map_err(|e| Error::Json {
            context: "manifest".into(),
            source: e,
        })?;
        let mut artifacts = std::mem::take(&mut self.artifacts);
        artifacts.sort();
        let manifest = json!({
            "tool": "wtopics",
            "version": env!("CARGO_PKG_VERSION"),
            "command": command,
            "config": config,
            "artifacts": artifacts,
            "results": results,
        });
        self.write_json("manifest.json", &manifest)
    }
}
