//! Merging of configuration files under command-line flags, and run metadata.

use std::path::Path;

use marrr::{io, MarrrError, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

/// Loads the settings for `command` from a TOML file, or from a JSON run
/// metadata file written by a previous invocation.
///
/// A TOML file may hold a `[command]` table; otherwise its top-level keys are
/// used.
pub fn load_file(path: &Path, command: &str) -> Result<Map<String, Value>> {
    let text = io::read_text(path)?;
    let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
    let root: Value = if is_json {
        serde_json::from_str(&text).map_err(|e| MarrrError::Config(format!("{}: {e}", path.display())))?
    } else {
        let table: toml::Table =
            toml::from_str(&text).map_err(|e| MarrrError::Config(format!("{}: {e}", path.display())))?;
        serde_json::to_value(table).map_err(|e| MarrrError::Config(format!("{}: {e}", path.display())))?
    };
    let Value::Object(mut root) = root else {
        return Err(MarrrError::Config(format!("{}: expected a table of settings", path.display())));
    };
    if is_json {
        if let Some(found) = root.get("command").and_then(Value::as_str) {
            if found != command {
                return Err(MarrrError::Config(format!(
                    "{}: metadata is for `{found}`, not `{command}`",
                    path.display()
                )));
            }
        }
        return match root.remove("config") {
            Some(Value::Object(m)) => Ok(m),
            _ => Err(MarrrError::Config(format!("{}: no `config` object", path.display()))),
        };
    }
    if let Some(section) = root.remove(command) {
        return match section {
            Value::Object(m) => Ok(m),
            _ => Err(MarrrError::Config(format!("{}: [{command}] must be a table", path.display()))),
        };
    }
    root.retain(|_, v| !v.is_object());
    Ok(root)
}

/// Overlays explicitly given flags on top of file settings. Flags left unset
/// (`None`, `false`, empty lists) do not override the file.
pub fn merge<T>(flags: &T, file: Option<Map<String, Value>>) -> Result<T>
where
    T: Serialize + DeserializeOwned + Default,
{
    let known = match serde_json::to_value(T::default()) {
        Ok(Value::Object(m)) => m,
        _ => unreachable!("argument structs serialize to objects"),
    };
    let mut merged = file.unwrap_or_default();
    if let Some(key) = merged.keys().find(|k| !known.contains_key(*k)) {
        return Err(MarrrError::Config(format!("unknown setting {key:?}")));
    }
    let Ok(Value::Object(given)) = serde_json::to_value(flags) else {
        unreachable!("argument structs serialize to objects")
    };
    for (k, v) in given {
        let unset = match &v {
            Value::Null => true,
            Value::Bool(b) => !b,
            Value::Array(a) => a.is_empty(),
            _ => false,
        };
        if !unset {
            merged.insert(k, v);
        }
    }
    merged.retain(|_, v| !v.is_null());
    serde_json::from_value(Value::Object(merged)).map_err(|e| MarrrError::Config(format!("invalid setting: {e}")))
}

#[derive(Serialize)]
struct Metadata<'a, C: Serialize, R: Serialize> {
    command: &'a str,
    version: &'a str,
    config: &'a C,
    results: &'a R,
}

/// Writes `run.json` with the fully resolved settings of a command and a
/// summary of what it produced. Feeding the file back through `--config`
/// repeats the run.
pub fn write_metadata<C: Serialize, R: Serialize>(out: &Path, command: &str, config: &C, results: &R) -> Result<()> {
    let meta = Metadata {
        command,
        version: env!("CARGO_PKG_VERSION"),
        config,
        results,
    };
    let json = serde_json::to_string_pretty(&meta).expect("metadata serializes");
    io::write_text(&out.join("run.json"), &json)
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde::Deserialize;

    #[derive(Debug, Default, PartialEq, Serialize, Deserialize)]
    #[serde(default, rename_all = "kebab-case")]
    struct Demo {
        max_epochs: Option<usize>,
        strict: bool,
        name: Option<String>,
    }

    #[test]
    fn flags_override_file() {
        let mut file = Map::new();
        file.insert("max-epochs".into(), Value::from(5));
        file.insert("strict".into(), Value::from(true));
        file.insert("name".into(), Value::from("a"));
        let flags = Demo {
            name: Some("b".into()),
            ..Demo::default()
        };
        let m = merge(&flags, Some(file)).unwrap();
        assert_eq!(
            m,
            Demo {
                max_epochs: Some(5),
                strict: true,
                name: Some("b".into())
            }
        );
    }

    #[test]
    fn unknown_keys_rejected() {
        let mut file = Map::new();
        file.insert("nope".into(), Value::from(1));
        assert!(matches!(merge(&Demo::default(), Some(file)), Err(MarrrError::Config(_))));
    }

    #[test]
    fn toml_sections() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(&path, "max-epochs = 3\n[fit]\nmax-epochs = 7\n").unwrap();
        assert_eq!(load_file(&path, "fit").unwrap()["max-epochs"], Value::from(7));
        assert_eq!(load_file(&path, "impute").unwrap()["max-epochs"], Value::from(3));
    }
}
