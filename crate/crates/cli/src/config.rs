//! `--config` files.
//!
//! One `key = value` per line. Keys are long flag names of the subcommand,
//! with `-` or `_` as separator. Blank lines and lines starting with `#` are
//! skipped; a value may be wrapped in double quotes. Switches take `true` or
//! `false`. A flag given on the command line wins over the file.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::Path;

use clap::CommandFactory;

use crate::{invalid, Cli};

/// Parses a config file body into key/value pairs.
pub fn parse(text: &str, file: &str) -> anyhow::Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(invalid(format!("{file}:{}: expected `key = value`", i + 1)));
        };
        let key = k.trim().replace('_', "-");
        if key.is_empty() {
            return Err(invalid(format!("{file}:{}: empty key", i + 1)));
        }
        let mut value = v.trim();
        if value.len() >= 2 && value.starts_with('"') && value.ends_with('"') {
            value = &value[1..value.len() - 1];
        }
        if out.insert(key.clone(), value.to_string()).is_some() {
            return Err(invalid(format!("{file}:{}: `{key}` set twice", i + 1)));
        }
    }
    Ok(out)
}

fn config_path(args: &[OsString]) -> anyhow::Result<Option<OsString>> {
    let mut it = args.iter();
    while let Some(a) = it.next() {
        if a == "--config" {
            return it
                .next()
                .cloned()
                .map(Some)
                .ok_or_else(|| invalid("--config needs a file"));
        }
        if let Some(v) = a.to_str().and_then(|s| s.strip_prefix("--config=")) {
            return Ok(Some(v.into()));
        }
    }
    Ok(None)
}

fn given(args: &[OsString], long: &str) -> bool {
    let flag = format!("--{long}");
    let prefix = format!("--{long}=");
    args.iter()
        .filter_map(|a| a.to_str())
        .any(|a| a == flag || a.starts_with(&prefix))
}

/// Appends flags from the `--config` file, if any, that the command line does not set.
pub fn expand(mut args: Vec<OsString>) -> anyhow::Result<Vec<OsString>> {
    let Some(path) = config_path(&args)? else {
        return Ok(args);
    };
    let Some(sub) = args.iter().skip(1).find_map(|a| a.to_str().filter(|s| !s.starts_with('-'))) else {
        return Ok(args);
    };
    let cmd = Cli::command();
    let Some(sub) = cmd.find_subcommand(sub) else {
        // Let clap report the unknown subcommand.
        return Ok(args);
    };
    let path = Path::new(&path);
    let text = std::fs::read_to_string(path).map_err(|e| invalid(format!("reading config {}: {e}", path.display())))?;
    for (key, value) in parse(&text, &path.display().to_string())? {
        if key == "config" {
            return Err(invalid("a config file cannot name another config file"));
        }
        let arg = sub
            .get_arguments()
            .find(|a| a.get_long() == Some(key.as_str()))
            .ok_or_else(|| invalid(format!("{}: unknown key `{key}` for `{}`", path.display(), sub.get_name())))?;
        if given(&args, &key) {
            continue;
        }
        if arg.get_action().takes_values() {
            args.push(format!("--{key}").into());
            args.push(value.into());
        } else {
            match value.as_str() {
                "true" => args.push(format!("--{key}").into()),
                "false" => {}
                other => {
                    return Err(invalid(format!("{}: `{key}` must be true or false, got `{other}`", path.display())))
                }
            }
        }
    }
    Ok(args)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn os(v: &[&str]) -> Vec<OsString> {
        v.iter().map(OsString::from).collect()
    }

    #[test]
    fn grammar() {
        let m = parse("# comment\n\nfloor = 0.6\nblock_size=\"128\"\n", "c").unwrap();
        assert_eq!(m["floor"], "0.6");
        assert_eq!(m["block-size"], "128");
        assert!(parse("floor 0.6\n", "c").is_err());
        assert!(parse("a=1\na=2\n", "c").is_err());
    }

    #[test]
    fn explicit_flags_win() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("run.conf");
        std::fs::write(&cfg, "floor = 0.6\nworkers = 3\n").unwrap();
        let args = os(&["hhlink", "pairs", "--floor", "0.7", "--config", cfg.to_str().unwrap()]);
        let out = expand(args).unwrap();
        let s: Vec<String> = out.iter().map(|a| a.to_string_lossy().into_owned()).collect();
        assert_eq!(s.iter().filter(|a| *a == "--floor").count(), 1);
        assert!(s.windows(2).any(|w| w[0] == "--workers" && w[1] == "3"));
    }

    #[test]
    fn unknown_key_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("run.conf");
        std::fs::write(&cfg, "nonsense = 1\n").unwrap();
        let args = os(&["hhlink", "pairs", "--config", cfg.to_str().unwrap()]);
        let e = expand(args).unwrap_err();
        assert_eq!(crate::exit_code(&e), crate::EXIT_VALIDATION);
    }
}
