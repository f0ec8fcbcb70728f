//! Flat `key = value` config files merged beneath command-line flags.

use std::path::Path;

/// Parses `key = value` lines; `#` starts a comment. Keys are flag names
/// without the leading dashes.
pub fn parse(text: &str) -> Result<Vec<(String, String)>, String> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| format!("config line {}: expected 'key = value'", i + 1))?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() || k.starts_with('-') || k.contains(char::is_whitespace) {
            return Err(format!("config line {}: bad key '{k}'", i + 1));
        }
        out.push((k.to_string(), v.to_string()));
    }
    Ok(out)
}

/// Finds `--config <path>` or `--config=<path>` in `args`.
fn config_path(args: &[String]) -> Option<String> {
    let mut it = args.iter();
    while let Some(a) = it.next() {
        if a == "--config" {
            return it.next().cloned();
        }
        if let Some(p) = a.strip_prefix("--config=") {
            return Some(p.to_string());
        }
    }
    None
}

/// Rewrites `argv` so config entries come right after the subcommand and
/// before the user's flags; with self-overriding arguments the later,
/// user-supplied occurrence wins. Boolean entries use `true`/`false`.
pub fn merge(argv: Vec<String>) -> Result<Vec<String>, String> {
    let Some(path) = config_path(&argv) else {
        return Ok(argv);
    };
    let text = std::fs::read_to_string(Path::new(&path)).map_err(|e| format!("cannot read config '{path}': {e}"))?;
    let entries = parse(&text)?;
    // the subcommand is the first argument that is not a flag
    let Some(sub) = argv.iter().skip(1).position(|a| !a.starts_with('-')).map(|p| p + 1) else {
        return Ok(argv);
    };
    let mut injected = Vec::new();
    for (k, v) in entries {
        match v.as_str() {
            "true" => injected.push(format!("--{k}")),
            "false" => {}
            _ => {
                injected.push(format!("--{k}"));
                injected.push(v);
            }
        }
    }
    let mut out = argv[..=sub].to_vec();
    out.extend(injected);
    out.extend_from_slice(&argv[sub + 1..]);
    Ok(out)
}
