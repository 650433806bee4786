//! Output directory whose files all carry the config hash and seed.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::Value;

use crate::config::ExperimentConfig;
use crate::error::CliError;

pub struct OutputDir {
    dir: PathBuf,
    hash: String,
    seed: u64,
}

impl OutputDir {
    /// Creates the directory and records the resolved config in `config.toml`.
    pub fn create(cfg: &ExperimentConfig) -> Result<Self, CliError> {
        std::fs::create_dir_all(&cfg.out)
            .map_err(|e| CliError::Output(format!("{}: {e}", cfg.out.display())))?;
        let out = Self {
            dir: cfg.out.clone(),
            hash: cfg.hash()?,
            seed: cfg.seed,
        };
        out.write_text("config.toml", '#', &cfg.to_toml()?)?;
        Ok(out)
    }

    pub fn hash(&self) -> &str {
        &self.hash
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn create_file(&self, name: &str) -> Result<BufWriter<File>, CliError> {
        let path = self.path(name);
        File::create(&path)
            .map(BufWriter::new)
            .map_err(|e| CliError::Output(format!("{}: {e}", path.display())))
    }

    fn header(&self, comment: char) -> String {
        format!(
            "{comment} config_hash = \"{}\"\n{comment} seed = {}\n",
            self.hash, self.seed
        )
    }

    /// Text document preceded by the hash and seed as comment lines.
    pub fn write_text(&self, name: &str, comment: char, body: &str) -> Result<(), CliError> {
        let mut f = self.create_file(name)?;
        f.write_all(self.header(comment).as_bytes())?;
        f.write_all(body.as_bytes())?;
        f.flush()?;
        Ok(())
    }

    /// Pretty JSON object with `config_hash` and `seed` fields added.
    pub fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<(), CliError> {
        let mut v = serde_json::to_value(value).map_err(|e| CliError::Output(e.to_string()))?;
        let Value::Object(map) = &mut v else {
            return Err(CliError::Output(format!("{name}: expected a JSON object")));
        };
        map.insert("config_hash".into(), self.hash.clone().into());
        map.insert("seed".into(), self.seed.into());
        let mut f = self.create_file(name)?;
        serde_json::to_writer_pretty(&mut f, &v).map_err(|e| CliError::Output(e.to_string()))?;
        writeln!(f)?;
        f.flush()?;
        Ok(())
    }

    /// Tab-separated table after a commented hash/seed header.
    pub fn write_tsv(
        &self,
        name: &str,
        columns: &[&str],
        rows: &[Vec<String>],
    ) -> Result<(), CliError> {
        let mut body = columns.join("\t");
        body.push('\n');
        for row in rows {
            body.push_str(&row.join("\t"));
            body.push('\n');
        }
        self.write_text(name, '#', &body)
    }
}

/// Shortest round-trip rendering, in exponent form for very small or large magnitudes.
pub fn num(x: f64) -> String {
    if x != 0.0 && x.is_finite() && !(1e-4..1e9).contains(&x.abs()) {
        format!("{x:e}")
    } else {
        x.to_string()
    }
}

/// [`num`], or `NA` for a missing value.
pub fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".into(), num)
}
