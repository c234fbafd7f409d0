//! `key = value` config files, expanded into flags ahead of the user's own.

use std::ffi::OsString;
use std::fs;

use clap::{ArgAction, ArgMatches, Command};

use crate::output::CliError;

/// One parsed `key = value` line.
#[derive(Debug, PartialEq, Eq)]
pub struct Entry {
    pub key: String,
    pub value: String,
    pub line: usize,
}

pub fn parse(text: &str) -> Result<Vec<Entry>, CliError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| CliError::usage(format!("config line {}: expected 'key = value'", i + 1)))?;
        let key = key.trim().replace('_', "-");
        if key.is_empty() {
            return Err(CliError::usage(format!("config line {}: empty key", i + 1)));
        }
        out.push(Entry {
            key,
            value: value.trim().to_string(),
            line: i + 1,
        });
    }
    Ok(out)
}

/// Position and value of `--config` in the arguments after the subcommand.
fn find_config(args: &[OsString]) -> Option<OsString> {
    let mut it = args.iter();
    while let Some(a) = it.next() {
        let s = a.to_string_lossy();
        if s == "--config" {
            return it.next().cloned();
        }
        if let Some(v) = s.strip_prefix("--config=") {
            return Some(v.into());
        }
    }
    None
}

/// Inserts the flags of the `--config` file (if any) right after the
/// subcommand name, so command-line flags override them.
pub fn expand(argv: Vec<OsString>, cmd: &Command) -> Result<Vec<OsString>, CliError> {
    if argv.len() < 2 {
        return Ok(argv);
    }
    let sub_name = argv[1].to_string_lossy().into_owned();
    let Some(sub) = cmd.find_subcommand(&sub_name) else {
        return Ok(argv);
    };
    let Some(path) = find_config(&argv[2..]) else {
        return Ok(argv);
    };
    let text = fs::read_to_string(&path)
        .map_err(|e| CliError::io(format!("cannot read config {}: {e}", path.to_string_lossy())))?;
    let mut injected: Vec<OsString> = Vec::new();
    for entry in parse(&text)? {
        let arg = sub
            .get_arguments()
            .find(|a| a.get_long() == Some(entry.key.as_str()))
            .filter(|a| a.get_long() != Some("config"))
            .ok_or_else(|| {
                CliError::usage(format!(
                    "config line {}: unknown key '{}' for {sub_name}",
                    entry.line, entry.key
                ))
            })?;
        let flag = format!("--{}", entry.key);
        match arg.get_action() {
            ArgAction::SetTrue => match entry.value.as_str() {
                "true" => injected.push(flag.into()),
                "false" => {}
                other => {
                    return Err(CliError::usage(format!(
                        "config line {}: '{}' expects true or false, got '{other}'",
                        entry.line, entry.key
                    )))
                }
            },
            _ => {
                injected.push(flag.into());
                injected.push(entry.value.into());
            }
        }
    }
    let mut out = Vec::with_capacity(argv.len() + injected.len());
    out.extend_from_slice(&argv[..2]);
    out.extend(injected);
    out.extend_from_slice(&argv[2..]);
    Ok(out)
}

/// Effective settings as a config file body, in declaration order.
pub fn echo(cmd: &Command, matches: &ArgMatches) -> String {
    let mut s = String::from("# effective configuration\n");
    for arg in cmd.get_arguments() {
        let id = arg.get_id().as_str();
        let Some(long) = arg.get_long() else { continue };
        if long == "config" || long == "help" || long == "version" {
            continue;
        }
        let Some(raw) = matches.get_raw(id) else {
            continue;
        };
        let values: Vec<String> = raw.map(|v| v.to_string_lossy().into_owned()).collect();
        if matches!(arg.get_action(), ArgAction::SetTrue) {
            let on = values.first().is_some_and(|v| v == "true");
            s.push_str(&format!("{long} = {on}\n"));
        } else {
            s.push_str(&format!("{long} = {}\n", values.join(",")));
        }
    }
    s
}
