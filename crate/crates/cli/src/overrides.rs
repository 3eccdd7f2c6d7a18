//! `--section.key value` overrides applied to a scenario file's JSON.
//!
//! Key segments may use dashes (`--ces.r-l 0.5` sets `ces.r_l`). Values are
//! parsed as JSON when possible (`3`, `true`, `[1,2]`), else taken as
//! strings. Missing objects along the path are created.

use serde_json::{Map, Value};

#[derive(Debug, Clone, PartialEq)]
pub struct Override {
    pub path: Vec<String>,
    pub value: Value,
}

/// Splits `args` into dotted overrides and everything else. Accepts both
/// `--a.b value` and `--a.b=value`.
pub fn extract(args: Vec<String>) -> Result<(Vec<String>, Vec<Override>), String> {
    let mut rest = Vec::with_capacity(args.len());
    let mut found = Vec::new();
    let mut it = args.into_iter();
    while let Some(arg) = it.next() {
        let Some(body) = arg.strip_prefix("--").filter(|b| b.split('=').next().is_some_and(|k| k.contains('.'))) else {
            rest.push(arg);
            continue;
        };
        let (key, raw) = match body.split_once('=') {
            Some((k, v)) => (k.to_string(), v.to_string()),
            None => {
                let v = it.next().ok_or_else(|| format!("override --{body} needs a value"))?;
                (body.to_string(), v)
            }
        };
        let path: Vec<String> = key.split('.').map(|s| s.replace('-', "_")).collect();
        if path.iter().any(|s| s.is_empty()) {
            return Err(format!("malformed override key --{key}"));
        }
        let value = serde_json::from_str(&raw).unwrap_or(Value::String(raw));
        found.push(Override { path, value });
    }
    Ok((rest, found))
}

pub fn apply(doc: &mut Value, ov: &Override) -> Result<(), String> {
    let mut cur = doc;
    let (last, parents) = ov.path.split_last().expect("non-empty path");
    for seg in parents {
        if cur.is_null() {
            *cur = Value::Object(Map::new());
        }
        let obj = cur.as_object_mut().ok_or_else(|| format!("cannot override inside non-object at '{seg}'"))?;
        cur = obj.entry(seg.clone()).or_insert(Value::Null);
    }
    if cur.is_null() {
        *cur = Value::Object(Map::new());
    }
    let obj = cur.as_object_mut().ok_or_else(|| format!("cannot set '{last}' on a non-object"))?;
    obj.insert(last.clone(), ov.value.clone());
    Ok(())
}

pub fn apply_all(doc: &mut Value, ovs: &[Override]) -> Result<(), String> {
    ovs.iter().try_for_each(|o| apply(doc, o))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn args(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn separates_overrides_from_flags() {
        let (rest, ov) = extract(args(&["run", "f.json", "--ces.r-l", "0.5", "--out", "x", "--vehicle.mu=0.9"])).unwrap();
        assert_eq!(rest, args(&["run", "f.json", "--out", "x"]));
        assert_eq!(ov[0].path, vec!["ces", "r_l"]);
        assert_eq!(ov[0].value, json!(0.5));
        assert_eq!(ov[1].path, vec!["vehicle", "mu"]);
        assert_eq!(ov[1].value, json!(0.9));
    }

    #[test]
    fn missing_value_is_an_error() {
        assert!(extract(args(&["--ces.r-u"])).is_err());
    }

    #[test]
    fn creates_intermediate_objects() {
        let mut doc = json!({"vehicle": {"mu": 0.5}});
        let (_, ov) = extract(args(&["--ces.constant-speed", "true", "--reference.generator.seed", "4", "--id", "x"])).unwrap();
        apply_all(&mut doc, &ov).unwrap();
        assert_eq!(doc, json!({"vehicle": {"mu": 0.5}, "ces": {"constant_speed": true}, "reference": {"generator": {"seed": 4}}}));
    }

    #[test]
    fn strings_fall_back_verbatim() {
        let (_, ov) = extract(args(&["--reference.generator.kind", "maze"])).unwrap();
        assert_eq!(ov[0].value, json!("maze"));
    }

    #[test]
    fn refuses_to_descend_into_scalars() {
        let mut doc = json!({"ces": 3});
        let (_, ov) = extract(args(&["--ces.r-l", "1"])).unwrap();
        assert!(apply_all(&mut doc, &ov).is_err());
    }
}
