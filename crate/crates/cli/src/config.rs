//! `--config FILE` support: flat `key = value` lines become flags placed
//! before the user's own arguments, so anything on the command line wins.

use std::ffi::OsString;
use std::fs;

use anyhow::{bail, Context, Result};

/// Parses `key = value` lines. Blank lines and `#` comments are skipped.
pub fn parse(text: &str) -> Result<Vec<(String, String)>> {
    let mut pairs = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            bail!("config line {}: expected key = value", n + 1);
        };
        let key = k.trim().trim_start_matches("--");
        if key.is_empty() {
            bail!("config line {}: empty key", n + 1);
        }
        pairs.push((key.to_owned(), v.trim().to_owned()));
    }
    Ok(pairs)
}

/// Flags for config pairs. `true` switches a boolean flag on, `false`
/// leaves it off.
pub fn to_flags(pairs: &[(String, String)]) -> Vec<OsString> {
    let mut out = Vec::new();
    for (k, v) in pairs {
        match v.as_str() {
            "true" => out.push(format!("--{k}").into()),
            "false" => {}
            _ => {
                out.push(format!("--{k}").into());
                out.push(v.into());
            }
        }
    }
    out
}

/// Removes `--config FILE` (or `--config=FILE`) from `args` and splices the
/// file's flags in right after the subcommand name.
pub fn expand(args: Vec<OsString>) -> Result<Vec<OsString>> {
    let mut rest = Vec::with_capacity(args.len());
    let mut path: Option<OsString> = None;
    let mut it = args.into_iter();
    while let Some(a) = it.next() {
        let s = a.to_string_lossy();
        if s == "--config" {
            path = Some(it.next().context("--config needs a file path")?);
        } else if let Some(p) = s.strip_prefix("--config=") {
            path = Some(p.into());
        } else {
            rest.push(a);
        }
    }
    let Some(path) = path else {
        return Ok(rest);
    };
    let text = fs::read_to_string(&path).with_context(|| format!("reading config {}", path.to_string_lossy()))?;
    let flags = to_flags(&parse(&text)?);
    // rest[0] is the program name; the subcommand is the first bare word.
    let sub = rest
        .iter()
        .skip(1)
        .position(|a| !a.to_string_lossy().starts_with('-'))
        .map(|i| i + 1)
        .context("--config given without a subcommand")?;
    let mut out: Vec<OsString> = rest[..=sub].to_vec();
    out.extend(flags);
    out.extend_from_slice(&rest[sub + 1..]);
    Ok(out)
}
