use std::fs;

use serde_json::{Map, Value};

use lrcl_core::regimes::ExperimentConfig;

use crate::output::MANIFEST_TAG;
use crate::{Failure, Outcome, RunArgs};

pub const SEED_OFFSET_VAR: &str = "LRCL_SEED_OFFSET";

/// The effective config of a run, with the seeds it will actually use.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub config: ExperimentConfig,
    pub seed_offset: u64,
    pub from_manifest: bool,
}

/// `KEY=VALUE` with VALUE read as JSON when it parses, a comma list when it
/// has commas, and a plain string otherwise.
pub fn parse_override(item: &str) -> Outcome<(String, Value)> {
    let (key, raw) = item
        .split_once('=')
        .ok_or_else(|| Failure::Usage(format!("--set expects KEY=VALUE, got `{item}`")))?;
    let key = key.trim();
    if key.is_empty() {
        return Err(Failure::Usage(format!("--set has an empty key in `{item}`")));
    }
    let raw = raw.trim();
    let value = match serde_json::from_str::<Value>(raw) {
        Ok(v) => v,
        Err(_) if raw.contains(',') => Value::Array(
            raw.split(',')
                .map(|p| serde_json::from_str(p.trim()).unwrap_or_else(|_| Value::String(p.trim().to_string())))
                .collect(),
        ),
        Err(_) => Value::String(raw.to_string()),
    };
    Ok((key.to_string(), value))
}

/// `LRCL_SEED_OFFSET`, zero when unset.
pub fn seed_offset() -> Outcome<u64> {
    match std::env::var(SEED_OFFSET_VAR) {
        Err(_) => Ok(0),
        Ok(s) if s.trim().is_empty() => Ok(0),
        Ok(s) => s
            .trim()
            .parse()
            .map_err(|_| Failure::Usage(format!("{SEED_OFFSET_VAR} must be a nonnegative integer, got `{s}`"))),
    }
}

/// Config file (or manifest), then `--set` overrides, then `--seeds`, then
/// the seed offset. A manifest already holds shifted seeds, so the offset is
/// not applied again.
pub fn resolve(args: &RunArgs) -> Outcome<Resolved> {
    let (mut object, from_manifest) = match &args.config {
        None => (Map::new(), false),
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| Failure::Usage(format!("cannot read config {}: {e}", path.display())))?;
            let value: Value = serde_json::from_str(&text)
                .map_err(|e| Failure::Usage(format!("config {} is not valid JSON: {e}", path.display())))?;
            match value {
                Value::Object(mut m) if m.contains_key(MANIFEST_TAG) => match m.remove("config") {
                    Some(Value::Object(c)) => (c, true),
                    _ => return Err(Failure::Usage(format!("manifest {} has no config object", path.display()))),
                },
                Value::Object(m) => (m, false),
                _ => return Err(Failure::Usage(format!("config {} must be a JSON object", path.display()))),
            }
        }
    };
    for item in &args.set {
        let (key, value) = parse_override(item)?;
        object.insert(key, value);
    }
    let mut config: ExperimentConfig =
        serde_json::from_value(Value::Object(object)).map_err(|e| Failure::Usage(format!("invalid config: {e}")))?;
    if let Some(seeds) = &args.seeds {
        config.seeds = seeds.clone();
    }
    let offset = if from_manifest {
        let requested = seed_offset()?;
        if requested != 0 {
            eprintln!("lrcl: {SEED_OFFSET_VAR} ignored; the manifest fixes its seeds");
        }
        0
    } else {
        seed_offset()?
    };
    config.seeds = config
        .seeds
        .iter()
        .map(|s| s.checked_add(offset).ok_or_else(|| Failure::Usage("seed offset overflows".into())))
        .collect::<Outcome<_>>()?;
    if let Some(v) = config.variant {
        config = config.for_variant(v);
    }
    config.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    Ok(Resolved {
        config,
        seed_offset: offset,
        from_manifest,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn override_values() {
        assert_eq!(parse_override("rank=4").unwrap(), ("rank".into(), json!(4)));
        assert_eq!(parse_override("regime=static").unwrap(), ("regime".into(), json!("static")));
        assert_eq!(parse_override("seeds=[1,2]").unwrap(), ("seeds".into(), json!([1, 2])));
        assert_eq!(parse_override("seeds=1,2").unwrap(), ("seeds".into(), json!([1, 2])));
        assert_eq!(parse_override("regimes=static,td").unwrap(), ("regimes".into(), json!(["static", "td"])));
        assert_eq!(parse_override("alpha=null").unwrap(), ("alpha".into(), Value::Null));
        assert_eq!(parse_override(" lr = 0.01 ").unwrap(), ("lr".into(), json!(0.01)));
        assert!(parse_override("rank").is_err());
        assert!(parse_override("=3").is_err());
    }
}
