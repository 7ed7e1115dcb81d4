//! `key=value` run configuration. Keys are long flag names; values fill in
//! any flag not given on the command line.

use std::collections::BTreeSet;
use std::path::Path;

use anyhow::{bail, Context, Result};
use clap::parser::ValueSource;
use clap::{ArgAction, ArgMatches, Command};

pub fn parse_file(path: &Path) -> Result<Vec<(String, String)>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    let mut pairs = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            bail!("{}:{}: expected key=value, got {line:?}", path.display(), n + 1);
        };
        pairs.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(pairs)
}

/// The same command tree with every argument optional.
pub fn relaxed(cmd: Command) -> Command {
    let names: Vec<String> = cmd.get_subcommands().map(|s| s.get_name().to_string()).collect();
    let mut cmd = cmd.mut_args(|a| a.required(false));
    for name in names {
        cmd = cmd.mut_subcommand(name, relaxed);
    }
    cmd
}

fn collect_keys(cmd: &Command, keys: &mut BTreeSet<String>) {
    for arg in cmd.get_arguments() {
        if let Some(long) = arg.get_long() {
            if long != "help" && long != "config" {
                keys.insert(long.to_string());
            }
        }
    }
    for sub in cmd.get_subcommands() {
        collect_keys(sub, keys);
    }
}

/// Every long flag anywhere in the command tree.
pub fn valid_keys(cmd: &Command) -> BTreeSet<String> {
    let mut keys = BTreeSet::new();
    collect_keys(cmd, &mut keys);
    keys
}

/// Extra arguments that apply config values to the selected leaf subcommand,
/// skipping flags already present on the command line.
pub fn overrides(cmd: &Command, matches: &ArgMatches, pairs: &[(String, String)]) -> Result<Vec<String>> {
    let keys = valid_keys(cmd);
    let unknown: Vec<&str> = pairs.iter().map(|(k, _)| k.as_str()).filter(|k| !keys.contains(*k)).collect();
    if !unknown.is_empty() {
        let valid: Vec<&str> = keys.iter().map(String::as_str).collect();
        bail!("unknown config key(s): {}; valid keys: {}", unknown.join(", "), valid.join(", "));
    }
    let (mut leaf_cmd, mut leaf) = (cmd, matches);
    while let Some((name, sub)) = leaf.subcommand() {
        leaf_cmd = leaf_cmd.find_subcommand(name).expect("matched subcommand exists");
        leaf = sub;
    }
    let mut extra = Vec::new();
    for (key, value) in pairs {
        let Some(arg) = leaf_cmd.get_arguments().find(|a| a.get_long() == Some(key.as_str())) else {
            continue;
        };
        if leaf.value_source(arg.get_id().as_str()) == Some(ValueSource::CommandLine) {
            continue;
        }
        match arg.get_action() {
            ArgAction::SetTrue => match value.as_str() {
                "true" | "1" | "yes" => extra.push(format!("--{key}")),
                "false" | "0" | "no" => {}
                other => bail!("config key {key} expects true or false, got {other:?}"),
            },
            _ => {
                extra.push(format!("--{key}"));
                extra.push(value.clone());
            }
        }
    }
    Ok(extra)
}
