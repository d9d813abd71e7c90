use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::ValueEnum;
use serde::Serialize;
use serde_json::Value;

use ionlink::config::RunConfig;
use ionlink::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
    Table,
}

#[derive(Serialize)]
struct Report<'a> {
    command: &'a str,
    seed: u64,
    results: &'a Value,
    config: &'a RunConfig,
}

/// Output directory plus the list of files written so far.
pub struct Output {
    pub dir: PathBuf,
    pub written: Vec<PathBuf>,
    started: Instant,
}

impl Output {
    pub fn new(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Output {
            dir: dir.to_path_buf(),
            written: Vec::new(),
            started: Instant::now(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    /// Writes `name` through `f`, buffered.
    pub fn file(&mut self, name: &str, f: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
        let path = self.path(name);
        let mut out = std::io::BufWriter::new(fs::File::create(&path)?);
        f(&mut out)?;
        out.flush()?;
        self.written.push(path);
        Ok(())
    }
}

/// Writes `<command>.json` and prints the results in `format`. Wall-clock
/// details go to the `<command>.log` sidecar so reports stay reproducible.
pub fn emit(out: &mut Output, command: &str, config: &RunConfig, results: Value, format: Format) -> Result<()> {
    let report = Report {
        command,
        seed: config.seed,
        results: &results,
        config,
    };
    let json = serde_json::to_string_pretty(&report).map_err(|e| Error::Format(e.to_string()))?;
    out.file(&format!("{command}.json"), |w| {
        writeln!(w, "{json}")?;
        Ok(())
    })?;

    let unix = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    let elapsed = out.started.elapsed().as_secs_f64();
    fs::write(out.path(&format!("{command}.log")), format!("finished_unix_s = {unix}\nelapsed_s = {elapsed:.3}\n"))?;

    let stdout = std::io::stdout();
    let mut w = stdout.lock();
    match format {
        Format::Json => writeln!(w, "{json}")?,
        Format::Csv => {
            writeln!(w, "key,value")?;
            for (k, v) in flatten(&results) {
                writeln!(w, "{k},{}", csv_field(&v))?;
            }
        }
        Format::Table => {
            let rows = flatten(&results);
            let width = rows.iter().map(|r| r.0.chars().count()).max().unwrap_or(0);
            for (k, v) in rows {
                writeln!(w, "{k:<width$}  {v}")?;
            }
            for p in &out.written {
                writeln!(w, "wrote {}", p.display())?;
            }
        }
    }
    Ok(())
}

fn csv_field(v: &str) -> String {
    if v.contains([',', '"', '\n']) {
        format!("\"{}\"", v.replace('"', "\"\""))
    } else {
        v.to_string()
    }
}

/// Dotted key paths to scalar leaves. Long arrays are summarized.
pub fn flatten(v: &Value) -> Vec<(String, String)> {
    fn walk(prefix: &str, v: &Value, out: &mut Vec<(String, String)>) {
        let key = |k: &str| {
            if prefix.is_empty() {
                k.to_string()
            } else {
                format!("{prefix}.{k}")
            }
        };
        match v {
            Value::Object(m) => m.iter().for_each(|(k, v)| walk(&key(k), v, out)),
            Value::Array(a) if a.len() > 12 => out.push((prefix.to_string(), format!("[{} items]", a.len()))),
            Value::Array(a) => a.iter().enumerate().for_each(|(i, v)| walk(&format!("{prefix}[{i}]"), v, out)),
            Value::Null => out.push((prefix.to_string(), "-".into())),
            Value::String(s) => out.push((prefix.to_string(), s.clone())),
            Value::Number(n) => out.push((prefix.to_string(), fmt_number(n))),
            Value::Bool(b) => out.push((prefix.to_string(), b.to_string())),
        }
    }
    let mut out = Vec::new();
    walk("", v, &mut out);
    out
}

fn fmt_number(n: &serde_json::Number) -> String {
    match n.as_f64() {
        Some(x) if n.is_f64() => {
            if x != 0.0 && (x.abs() < 1e-3 || x.abs() >= 1e6) {
                format!("{x:.4e}")
            } else {
                format!("{:.6}", x).trim_end_matches('0').trim_end_matches('.').to_string()
            }
        }
        _ => n.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn flattens_nested_values() {
        let v = json!({"a": {"b": 0.17416, "c": [1, 2]}, "d": null, "e": (0..20).collect::<Vec<_>>()});
        let rows = flatten(&v);
        assert_eq!(
            rows,
            vec![
                ("a.b".into(), "0.17416".into()),
                ("a.c[0]".into(), "1".into()),
                ("a.c[1]".into(), "2".into()),
                ("d".into(), "-".into()),
                ("e".into(), "[20 items]".into()),
            ]
        );
    }

    #[test]
    fn quotes_csv_fields() {
        assert_eq!(csv_field("a,b"), "\"a,b\"");
        assert_eq!(csv_field("plain"), "plain");
    }
}
