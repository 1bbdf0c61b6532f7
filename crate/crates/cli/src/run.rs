//! Run configuration, manifests and cleanup of partial outputs.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use covct::config::Config;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad or missing flags; exit code 2.
    #[error("{0}")]
    Usage(String),
    /// Anything that goes wrong while doing the work; exit code 1.
    #[error(transparent)]
    Run(#[from] covct::Error),
    #[error("{0}")]
    Failed(String),
}

pub type CliResult<T> = std::result::Result<T, CliError>;

pub fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |e| CliError::Failed(format!("{}: {e}", path.display()))
}

/// Defaults, then the `--config` file, then explicit flags.
#[derive(Debug, Clone)]
pub struct RunConfig {
    cfg: Config,
}

impl RunConfig {
    pub fn resolve(
        command: &str,
        defaults: Config,
        file: Option<&Path>,
        flags: Vec<(&str, Option<String>)>,
    ) -> CliResult<Self> {
        let mut cfg = defaults;
        if let Some(path) = file {
            let loaded =
                Config::load(path).map_err(|e| CliError::Usage(format!("--config: {e}")))?;
            if let Some(other) = loaded.get("command").filter(|c| *c != command) {
                return Err(CliError::Usage(format!(
                    "--config {} was written by `{other}`, not `{command}`",
                    path.display()
                )));
            }
            cfg.merge(&loaded);
        }
        for (k, v) in flags {
            if let Some(v) = v {
                cfg.set(k, v);
            }
        }
        cfg.set("command", command);
        Ok(Self { cfg })
    }

    pub fn config(&self) -> &Config {
        &self.cfg
    }

    pub fn has(&self, key: &str) -> bool {
        self.cfg.get(key).is_some_and(|v| !v.is_empty())
    }

    pub fn required(&self, key: &str) -> CliResult<&str> {
        self.cfg
            .get(key)
            .filter(|v| !v.is_empty())
            .ok_or_else(|| CliError::Usage(format!("missing required --{}", key.replace('_', "-"))))
    }

    pub fn value<T: FromStr>(&self, key: &str) -> CliResult<T>
    where
        T::Err: fmt::Display,
    {
        let raw = self.required(key)?;
        raw.parse()
            .map_err(|e| CliError::Usage(format!("--{} {raw:?}: {e}", key.replace('_', "-"))))
    }

    pub fn list<T: FromStr>(&self, key: &str) -> CliResult<Vec<T>>
    where
        T::Err: fmt::Display,
    {
        covct::config::parse_list(self.cfg.get(key).unwrap_or(""))
            .map_err(|e| CliError::Usage(format!("--{}: {e}", key.replace('_', "-"))))
    }

    pub fn path(&self, key: &str) -> CliResult<PathBuf> {
        self.required(key).map(PathBuf::from)
    }

    pub fn opt_path(&self, key: &str) -> Option<PathBuf> {
        self.has(key)
            .then(|| PathBuf::from(self.cfg.get(key).unwrap_or_default()))
    }

    /// An input directory that must already exist.
    pub fn input_dir(&self, key: &str) -> CliResult<PathBuf> {
        let p = self.path(key)?;
        if !p.is_dir() {
            return Err(CliError::Failed(format!(
                "--{} {}: not a directory",
                key.replace('_', "-"),
                p.display()
            )));
        }
        Ok(p)
    }

    /// An input file that must already exist.
    pub fn input_file(&self, key: &str) -> CliResult<PathBuf> {
        let p = self.path(key)?;
        if !p.is_file() {
            return Err(CliError::Failed(format!(
                "--{} {}: no such file",
                key.replace('_', "-"),
                p.display()
            )));
        }
        Ok(p)
    }

    pub fn write_manifest(&self, path: &Path) -> CliResult<()> {
        self.cfg.save(path)?;
        Ok(())
    }
}

/// `<file>.manifest.cfg` next to an output file.
pub fn manifest_for_file(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".manifest.cfg");
    PathBuf::from(s)
}

pub const DIR_MANIFEST: &str = "run_manifest.cfg";

/// Remembers outputs this run created so a failed run can remove them.
#[derive(Debug, Default)]
pub struct Outputs {
    created: Vec<PathBuf>,
    /// Output directories that existed (empty) before the run.
    reused: Vec<PathBuf>,
}

fn remove_path(p: &Path) {
    let _ = if p.is_dir() {
        fs::remove_dir_all(p)
    } else {
        fs::remove_file(p)
    };
}

impl Outputs {
    /// Registers an output file; call before writing it.
    pub fn file(&mut self, path: &Path) -> PathBuf {
        if !path.exists() {
            self.created.push(path.to_path_buf());
        }
        path.to_path_buf()
    }

    /// Creates an output directory. An existing directory must be empty.
    pub fn dir(&mut self, path: &Path) -> CliResult<PathBuf> {
        if path.exists() {
            let mut entries = fs::read_dir(path).map_err(io_err(path))?;
            if entries.next().is_some() {
                return Err(CliError::Failed(format!(
                    "output directory {} is not empty",
                    path.display()
                )));
            }
            self.reused.push(path.to_path_buf());
        } else {
            let top = path
                .ancestors()
                .take_while(|a| !a.as_os_str().is_empty() && !a.exists())
                .last()
                .unwrap_or(path)
                .to_path_buf();
            fs::create_dir_all(path).map_err(io_err(path))?;
            self.created.push(top);
        }
        Ok(path.to_path_buf())
    }

    /// Deletes everything the run produced.
    pub fn remove_all(&mut self) {
        for p in self.created.drain(..).rev() {
            remove_path(&p);
        }
        for d in self.reused.drain(..) {
            if let Ok(entries) = fs::read_dir(&d) {
                for e in entries.flatten() {
                    remove_path(&e.path());
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn defaults() -> Config {
        let mut c = Config::new();
        c.set("jobs", 1);
        c.set("method", "otsu");
        c
    }

    #[test]
    fn flags_override_file_override_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("a.cfg");
        fs::write(&file, "command=segment\nmethod=kmeans\njobs=3\n").unwrap();
        let rc = RunConfig::resolve(
            "segment",
            defaults(),
            Some(&file),
            vec![("jobs", Some("2".into())), ("out", None)],
        )
        .unwrap();
        assert_eq!(rc.value::<usize>("jobs").unwrap(), 2);
        assert_eq!(rc.required("method").unwrap(), "kmeans");
        assert!(!rc.has("out"));
        assert!(matches!(rc.required("out"), Err(CliError::Usage(_))));
        assert!(matches!(
            RunConfig::resolve("predict", defaults(), Some(&file), vec![]),
            Err(CliError::Usage(_))
        ));
    }

    #[test]
    fn bad_values_are_usage_errors() {
        let rc =
            RunConfig::resolve("x", defaults(), None, vec![("jobs", Some("two".into()))]).unwrap();
        assert!(matches!(rc.value::<usize>("jobs"), Err(CliError::Usage(_))));
    }

    #[test]
    fn remove_all_undoes_created_and_empties_reused() {
        let dir = tempfile::tempdir().unwrap();
        let reused = dir.path().join("r");
        fs::create_dir(&reused).unwrap();
        let mut o = Outputs::default();
        o.dir(&reused).unwrap();
        let fresh = o.dir(&dir.path().join("n/m")).unwrap();
        fs::write(reused.join("f"), "x").unwrap();
        fs::write(fresh.join("f"), "x").unwrap();
        let file = o.file(&dir.path().join("out.csv"));
        fs::write(&file, "x").unwrap();
        assert!(o.dir(&reused).is_err());
        o.remove_all();
        assert!(reused.is_dir() && fs::read_dir(&reused).unwrap().count() == 0);
        assert!(!dir.path().join("n").exists() && !file.exists());
    }

    #[test]
    fn manifest_name_appends_suffix() {
        assert_eq!(
            manifest_for_file(Path::new("a/p.csv")),
            PathBuf::from("a/p.csv.manifest.cfg")
        );
    }
}
