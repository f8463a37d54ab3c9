//! Flat `key = value` config files merged under command-line flags.

use std::ffi::OsString;
use std::path::Path;

use clap::parser::ValueSource;
use clap::ArgMatches;

/// Parse `key = value` lines. Blank lines and `#` comments are skipped;
/// keys may be written with `-` or `_`.
pub fn parse(text: &str, path: &Path) -> Result<Vec<(String, String)>, String> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| format!("{}:{}: expected `key = value`", path.display(), i + 1))?;
        let key = k.trim().replace('_', "-");
        if key.is_empty() {
            return Err(format!("{}:{}: empty key", path.display(), i + 1));
        }
        out.push((key, v.trim().trim_matches('"').to_string()));
    }
    Ok(out)
}

/// Flags for every file entry the command line did not set itself.
pub fn file_args(entries: &[(String, String)], matches: &ArgMatches) -> Vec<OsString> {
    let mut args = Vec::new();
    for (key, value) in entries {
        let id = key.replace('-', "_");
        let on_cli = matches
            .try_get_raw(&id)
            .ok()
            .and_then(|_| matches.value_source(&id))
            == Some(ValueSource::CommandLine);
        if on_cli {
            continue;
        }
        args.push(OsString::from(format!("--{key}")));
        args.push(OsString::from(value));
    }
    args
}
