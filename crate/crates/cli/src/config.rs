//! `--config` files: each `key = value` line becomes `--key value` unless the
//! command line already sets that flag.

use std::ffi::OsString;
use std::path::Path;

use reldp::kv::KvDoc;
use reldp::Result;

fn config_path(args: &[OsString]) -> Option<OsString> {
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

fn has_flag(args: &[OsString], flag: &str) -> bool {
    args.iter().any(|a| {
        let s = a.to_string_lossy();
        s == flag || s.strip_prefix(flag).is_some_and(|r| r.starts_with('='))
    })
}

/// Appends config-file entries to `args`. `true`/`false` values toggle switches.
pub fn merged_args(mut args: Vec<OsString>) -> Result<Vec<OsString>> {
    let Some(path) = config_path(&args) else {
        return Ok(args);
    };
    let doc = KvDoc::read(Path::new(&path))?;
    let mut extra = Vec::new();
    for (key, value) in doc.entries() {
        let flag = format!("--{}", key.replace('_', "-"));
        if has_flag(&args, &flag) || has_flag(&extra, &flag) {
            continue;
        }
        match value.as_str() {
            "true" => extra.push(OsString::from(flag)),
            "false" => {}
            v => {
                extra.push(OsString::from(format!("{flag}={v}")));
            }
        }
    }
    args.extend(extra);
    Ok(args)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn os(v: &[&str]) -> Vec<OsString> {
        v.iter().map(OsString::from).collect()
    }

    #[test]
    fn command_line_wins_and_switches_expand() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("run.conf");
        std::fs::write(&file, "sigma = 2\nnaive_loose = true\nmode = naive\nquiet = false\n").unwrap();
        let cfg = file.to_string_lossy().to_string();
        let got = merged_args(os(&["reldp", "bounds", "--config", &cfg, "--sigma=0.5"])).unwrap();
        let tail: Vec<String> = got[5..].iter().map(|s| s.to_string_lossy().into_owned()).collect();
        assert_eq!(tail, ["--naive-loose", "--mode=naive"]);
    }

    #[test]
    fn missing_file_is_an_error() {
        assert!(merged_args(os(&["reldp", "bounds", "--config", "/nonexistent/x.conf"])).is_err());
        let plain = os(&["reldp", "bounds"]);
        assert_eq!(merged_args(plain.clone()).unwrap(), plain);
    }
}
