//! `key = value` configuration files and `--key value` flags.

use std::collections::BTreeMap;
use std::path::Path;

use crate::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Kind {
    Float,
    Int,
    Bool,
    Text,
    FloatList,
    Choice(&'static [&'static str]),
    /// A float that may be left empty.
    OptFloat,
    /// A path or name that may be left empty.
    OptText,
}

#[derive(Clone, Debug)]
pub struct Key {
    pub name: &'static str,
    pub default: String,
    pub kind: Kind,
    pub help: &'static str,
}

impl Key {
    pub fn new(name: &'static str, default: impl ToString, kind: Kind, help: &'static str) -> Self {
        Self {
            name,
            default: default.to_string(),
            kind,
            help,
        }
    }
}

/// Keys every subcommand accepts.
pub fn common_keys() -> Vec<Key> {
    vec![
        Key::new("seed", 20240611, Kind::Int, "root seed"),
        Key::new("threads", 0, Kind::Int, "worker threads (0 = one per core)"),
        Key::new("out", "", Kind::OptText, "output directory"),
        Key::new("assert", false, Kind::Bool, "exit 3 when the acceptance verdict fails"),
    ]
}

/// Fully resolved configuration: every key of the schema has a value.
#[derive(Clone, Debug)]
pub struct Resolved {
    values: BTreeMap<&'static str, String>,
    order: Vec<&'static str>,
    kinds: BTreeMap<&'static str, Kind>,
    pub warnings: Vec<String>,
}

fn parse_bool(s: &str) -> Option<bool> {
    match s {
        "true" | "yes" | "1" | "on" => Some(true),
        "false" | "no" | "0" | "off" => Some(false),
        _ => None,
    }
}

fn parse_float(s: &str) -> Option<f64> {
    s.parse::<f64>().ok().filter(|v| !v.is_nan())
}

fn parse_list(s: &str) -> Option<Vec<f64>> {
    s.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|t| !t.is_empty())
        .map(parse_float)
        .collect()
}

fn check(key: &str, kind: Kind, value: &str) -> Result<(), CliError> {
    let ok = match kind {
        Kind::Float => parse_float(value).is_some(),
        Kind::Int => value.parse::<u64>().is_ok(),
        Kind::Bool => parse_bool(value).is_some(),
        Kind::Text | Kind::OptText => true,
        Kind::FloatList => parse_list(value).is_some_and(|v| !v.is_empty()),
        Kind::Choice(opts) => opts.contains(&value),
        Kind::OptFloat => value.is_empty() || parse_float(value).is_some(),
    };
    if ok {
        return Ok(());
    }
    let expected = match kind {
        Kind::Float | Kind::OptFloat => "a number".to_owned(),
        Kind::Int => "a non-negative integer".to_owned(),
        Kind::Bool => "true or false".to_owned(),
        Kind::FloatList => "a list of numbers".to_owned(),
        Kind::Choice(opts) => format!("one of {}", opts.join(", ")),
        Kind::Text | Kind::OptText => unreachable!(),
    };
    Err(CliError::Config(format!(
        "key `{key}`: expected {expected}, got `{value}`"
    )))
}

impl Resolved {
    /// Applies file entries, then flags, over the schema defaults.
    pub fn build(schema: &[Key], file: Option<&Path>, flags: &[(String, String)]) -> Result<Self, CliError> {
        let mut values: BTreeMap<&'static str, String> = schema.iter().map(|k| (k.name, k.default.clone())).collect();
        let kinds = schema.iter().map(|k| (k.name, k.kind)).collect();
        let lookup = |name: &str| schema.iter().find(|k| k.name == name).map(|k| k.name);
        let mut warnings = Vec::new();
        if let Some(path) = file {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Config(format!("cannot read config file {}: {e}", path.display())))?;
            let mut seen = BTreeMap::new();
            for (lineno, raw) in text.lines().enumerate() {
                let line = raw.split('#').next().unwrap_or("").trim();
                if line.is_empty() {
                    continue;
                }
                let (k, v) = line.split_once('=').ok_or_else(|| {
                    CliError::Config(format!("{}:{}: expected `key = value`", path.display(), lineno + 1))
                })?;
                let (k, v) = (k.trim(), v.trim());
                let name = lookup(k).ok_or_else(|| {
                    CliError::Config(format!("unknown key `{k}` ({}:{})", path.display(), lineno + 1))
                })?;
                if let Some(prev) = seen.insert(name, lineno + 1) {
                    warnings.push(format!(
                        "warning: key `{name}` set on lines {prev} and {} of {}; the last value wins",
                        lineno + 1,
                        path.display()
                    ));
                }
                values.insert(name, v.to_owned());
            }
        }
        for (k, v) in flags {
            let name = lookup(k).ok_or_else(|| CliError::Config(format!("unknown key `{k}` (flag --{k})")))?;
            values.insert(name, v.clone());
        }
        for k in schema {
            check(k.name, k.kind, &values[k.name])?;
        }
        Ok(Self {
            values,
            order: schema.iter().map(|k| k.name).collect(),
            kinds,
            warnings,
        })
    }

    pub fn raw(&self, key: &str) -> &str {
        self.values
            .get(key)
            .unwrap_or_else(|| panic!("key `{key}` is not in the schema"))
    }

    pub fn float(&self, key: &str) -> f64 {
        parse_float(self.raw(key)).expect("validated")
    }

    pub fn opt_float(&self, key: &str) -> Option<f64> {
        let v = self.raw(key);
        (!v.is_empty()).then(|| parse_float(v).expect("validated"))
    }

    pub fn int(&self, key: &str) -> u64 {
        self.raw(key).parse().expect("validated")
    }

    pub fn usize(&self, key: &str) -> usize {
        self.int(key) as usize
    }

    pub fn flag(&self, key: &str) -> bool {
        parse_bool(self.raw(key)).expect("validated")
    }

    pub fn list(&self, key: &str) -> Vec<f64> {
        parse_list(self.raw(key)).expect("validated")
    }

    pub fn opt_text(&self, key: &str) -> Option<&str> {
        Some(self.raw(key)).filter(|v| !v.is_empty())
    }

    /// All keys in schema order with their resolved values.
    pub fn entries(&self) -> impl Iterator<Item = (&'static str, &str)> + '_ {
        self.order.iter().map(|k| (*k, self.values[k].as_str()))
    }

    pub fn kind(&self, key: &str) -> Option<Kind> {
        self.kinds.get(key).copied()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn schema() -> Vec<Key> {
        let mut s = common_keys();
        s.push(Key::new("alpha", 0.4, Kind::Float, ""));
        s.push(Key::new("R", "1 2 4", Kind::FloatList, ""));
        s.push(Key::new("mode", "event", Kind::Choice(&["event", "grid"]), ""));
        s
    }

    #[test]
    fn defaults_file_and_flags() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "# comment\nalpha = 0.3\n\nalpha = 0.2  # again\nR = 1, 3").unwrap();
        let r = Resolved::build(&schema(), Some(f.path()), &[("seed".into(), "9".into())]).unwrap();
        assert_eq!(r.float("alpha"), 0.2);
        assert_eq!(r.list("R"), vec![1.0, 3.0]);
        assert_eq!(r.int("seed"), 9);
        assert_eq!(r.raw("mode"), "event");
        assert_eq!(r.warnings.len(), 1);
        let r = Resolved::build(&schema(), Some(f.path()), &[("alpha".into(), "0.1".into())]).unwrap();
        assert_eq!(r.float("alpha"), 0.1);
    }

    #[test]
    fn errors_name_the_key() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "bogus = 1").unwrap();
        let e = Resolved::build(&schema(), Some(f.path()), &[]).unwrap_err();
        assert!(e.to_string().contains("`bogus`"));
        let e = Resolved::build(&schema(), None, &[("alpha".into(), "x".into())]).unwrap_err();
        assert!(e.to_string().contains("`alpha`"));
        let e = Resolved::build(&schema(), None, &[("mode".into(), "fast".into())]).unwrap_err();
        assert!(e.to_string().contains("event, grid"));
        let e = Resolved::build(&schema(), None, &[("nope".into(), "1".into())]).unwrap_err();
        assert!(e.to_string().contains("`nope`"));
    }
}
