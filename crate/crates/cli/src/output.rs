//! Artifact files. Every file opens with a `#` header carrying the tool
//! version, the config hash and the seed list.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::config::Config;
use crate::error::{CliError, CliResult};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub struct Artifacts {
    dir: PathBuf,
    header: String,
}

impl Artifacts {
    pub fn new(dir: &Path, command: &str, cfg: &Config, seeds: &[u64]) -> CliResult<Self> {
        std::fs::create_dir_all(dir).map_err(|source| CliError::Output {
            path: dir.to_path_buf(),
            source,
        })?;
        let seed_list: Vec<String> = seeds.iter().map(u64::to_string).collect();
        let mut header = format!(
            "# manifold-sgd {VERSION}\n# command: {command}\n# config_sha256: {}\n# seeds: {}\n",
            cfg.hash(),
            seed_list.join(",")
        );
        for line in cfg.canonical().lines() {
            header.push_str(&format!("# config: {line}\n"));
        }
        Ok(Self {
            dir: dir.to_path_buf(),
            header,
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    /// Write `name` as the header followed by whatever `body` emits.
    pub fn write<F>(&self, name: &str, body: F) -> CliResult<PathBuf>
    where
        F: FnOnce(&mut dyn Write) -> std::io::Result<()>,
    {
        let path = self.path(name);
        let wrap = |source| CliError::Output {
            path: path.clone(),
            source,
        };
        let mut out = BufWriter::new(File::create(&path).map_err(wrap)?);
        out.write_all(self.header.as_bytes()).map_err(wrap)?;
        body(&mut out).map_err(wrap)?;
        out.flush().map_err(wrap)?;
        Ok(path)
    }

    /// `key = value` report.
    pub fn report(&self, name: &str, entries: &[(&str, String)]) -> CliResult<PathBuf> {
        self.write(name, |out| {
            for (k, v) in entries {
                writeln!(out, "{k} = {v}")?;
            }
            Ok(())
        })
    }

    /// Gnuplot script rendering `name.png`. It is written, never run.
    pub fn plot(&self, name: &str, commands: &str) -> CliResult<PathBuf> {
        self.write(&format!("{name}.gp"), |out| {
            writeln!(out, "set terminal pngcairo size 900,600")?;
            writeln!(out, "set output '{name}.png'")?;
            writeln!(out, "set datafile separator ','")?;
            writeln!(out, "set key autotitle columnhead")?;
            out.write_all(commands.as_bytes())
        })
    }
}

/// Adapts a core writer, which reports through the core error type, to the
/// plain I/O closure expected by [`Artifacts::write`].
pub fn core_io(r: manifold_sgd::Result<()>) -> std::io::Result<()> {
    r.map_err(|e| match e {
        manifold_sgd::Error::Io(io) => io,
        other => std::io::Error::other(other.to_string()),
    })
}
