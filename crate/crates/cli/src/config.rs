//! Config files supply defaults for flags. A file is TOML: top-level keys
//! are global flags, and the `[<subcommand>]` table holds that
//! subcommand's flags, keyed by flag name. Entries are spliced into argv
//! right after the subcommand, ahead of anything the user typed, and every
//! argument overrides earlier occurrences of itself, so explicit flags win.

use std::ffi::OsString;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};

/// Flags that take a value and may precede the subcommand.
const VALUED_GLOBALS: [&str; 2] = ["--config", "--threads"];

fn config_path(argv: &[OsString]) -> Option<PathBuf> {
    let mut it = argv.iter().skip(1);
    while let Some(tok) = it.next() {
        let tok = tok.to_string_lossy();
        if tok == "--config" {
            return it.next().map(PathBuf::from);
        }
        if let Some(p) = tok.strip_prefix("--config=") {
            return Some(PathBuf::from(p));
        }
        if tok == "--" {
            break;
        }
    }
    None
}

fn subcommand_index(argv: &[OsString], names: &[String]) -> Option<usize> {
    let mut i = 1;
    while i < argv.len() {
        let tok = argv[i].to_string_lossy();
        if VALUED_GLOBALS.contains(&tok.as_ref()) {
            i += 2;
            continue;
        }
        if names.iter().any(|n| *n == tok) {
            return Some(i);
        }
        i += 1;
    }
    None
}

fn to_flags(key: &str, value: &toml::Value) -> Result<Vec<OsString>> {
    let flag = format!("--{}", key.replace('_', "-"));
    let scalar = |v: &toml::Value| -> Result<String> {
        Ok(match v {
            toml::Value::String(s) => s.clone(),
            toml::Value::Integer(i) => i.to_string(),
            toml::Value::Float(f) => f.to_string(),
            other => bail!("config key {key:?}: unsupported value {other}"),
        })
    };
    Ok(match value {
        toml::Value::Boolean(true) => vec![flag.into()],
        toml::Value::Boolean(false) => vec![],
        toml::Value::Array(items) => {
            let parts = items.iter().map(scalar).collect::<Result<Vec<_>>>()?;
            vec![format!("{flag}={}", parts.join(",")).into()]
        }
        v => vec![format!("{flag}={}", scalar(v)?).into()],
    })
}

/// Returns `argv` with the config file's entries for the chosen subcommand
/// spliced in. Without `--config` the arguments are returned unchanged.
pub fn expand(argv: Vec<OsString>, subcommands: &[String]) -> Result<Vec<OsString>> {
    let Some(path) = config_path(&argv) else {
        return Ok(argv);
    };
    let Some(at) = subcommand_index(&argv, subcommands) else {
        return Ok(argv);
    };
    let text = std::fs::read_to_string(&path).with_context(|| format!("reading config {}", path.display()))?;
    let table: toml::Table = text.parse().with_context(|| format!("parsing config {}", path.display()))?;
    let chosen = argv[at].to_string_lossy().into_owned();

    let mut injected = Vec::new();
    for (key, value) in &table {
        match value {
            toml::Value::Table(section) if *key == chosen => {
                for (k, v) in section {
                    injected.extend(to_flags(k, v)?);
                }
            }
            toml::Value::Table(_) => {}
            _ if key == "config" => {}
            v => injected.extend(to_flags(key, v)?),
        }
    }
    let mut out = argv;
    out.splice(at + 1..at + 1, injected);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn os(xs: &[&str]) -> Vec<OsString> {
        xs.iter().map(OsString::from).collect()
    }

    #[test]
    fn splices_section_after_subcommand() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(&path, "threads = 2\n[train]\nalpha = 50.0\nshared_inner = true\nsnr = [-5, 0]\n[eval]\noracle = true\n")
            .unwrap();
        let names = vec!["train".to_string(), "eval".to_string()];
        let argv = os(&["bin", "--config", path.to_str().unwrap(), "train", "--beta", "0"]);
        let out = expand(argv, &names).unwrap();
        let out: Vec<String> = out.iter().map(|s| s.to_string_lossy().into_owned()).collect();
        assert_eq!(&out[4..], ["--threads=2", "--alpha=50", "--shared-inner", "--snr=-5,0", "--beta", "0"]);
    }

    #[test]
    fn no_config_is_identity() {
        let argv = os(&["bin", "eval", "--oracle"]);
        assert_eq!(expand(argv.clone(), &["eval".into()]).unwrap(), argv);
    }
}
