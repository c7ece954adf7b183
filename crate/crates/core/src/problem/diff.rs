use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{deserialize_with_path, ProblemSpec, SpecError};

/// One changed field between two spec versions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldChange {
    pub path: String,
    pub old: Value,
    pub new: Value,
}

/// Minimal list of field changes turning `old` into `new`.
///
/// Objects are compared key by key and equal-length arrays element by
/// element; an array whose length changed is reported as one change on the
/// array itself.
pub fn spec_diff(old: &ProblemSpec, new: &ProblemSpec) -> Vec<FieldChange> {
    let a = serde_json::to_value(old).expect("spec serializes");
    let b = serde_json::to_value(new).expect("spec serializes");
    let mut out = Vec::new();
    diff_values("", &a, &b, &mut out);
    out
}

fn child_path(parent: &str, key: &str) -> String {
    if parent.is_empty() {
        key.to_string()
    } else {
        format!("{parent}.{key}")
    }
}

fn diff_values(path: &str, a: &Value, b: &Value, out: &mut Vec<FieldChange>) {
    match (a, b) {
        (Value::Object(ma), Value::Object(mb)) => {
            let mut keys: Vec<&String> = ma.keys().chain(mb.keys()).collect();
            keys.sort();
            keys.dedup();
            for key in keys {
                let p = child_path(path, key);
                match (ma.get(key), mb.get(key)) {
                    (Some(x), Some(y)) => diff_values(&p, x, y, out),
                    (x, y) => out.push(FieldChange {
                        path: p,
                        old: x.cloned().unwrap_or(Value::Null),
                        new: y.cloned().unwrap_or(Value::Null),
                    }),
                }
            }
        }
        (Value::Array(va), Value::Array(vb)) if va.len() == vb.len() => {
            for (i, (x, y)) in va.iter().zip(vb).enumerate() {
                diff_values(&format!("{path}[{i}]"), x, y, out);
            }
        }
        _ if a != b => out.push(FieldChange { path: path.to_string(), old: a.clone(), new: b.clone() }),
        _ => {}
    }
}

enum Segment<'a> {
    Key(&'a str),
    Index(usize),
}

fn parse_path(path: &str) -> Option<Vec<Segment<'_>>> {
    let mut segments = Vec::new();
    for part in path.split('.') {
        let (key, mut rest) = match part.find('[') {
            Some(i) => (&part[..i], &part[i..]),
            None => (part, ""),
        };
        if !key.is_empty() {
            segments.push(Segment::Key(key));
        }
        while !rest.is_empty() {
            let close = rest.find(']')?;
            segments.push(Segment::Index(rest[1..close].parse().ok()?));
            rest = &rest[close + 1..];
        }
    }
    Some(segments)
}

fn slot<'v>(root: &'v mut Value, path: &str) -> Option<&'v mut Value> {
    let mut cur = root;
    for seg in parse_path(path)? {
        cur = match seg {
            Segment::Key(k) => {
                let map = cur.as_object_mut()?;
                map.entry(k.to_string()).or_insert(Value::Null)
            }
            Segment::Index(i) => cur.as_array_mut()?.get_mut(i)?,
        };
    }
    Some(cur)
}

/// Applies a change list to `spec`, re-checking every invariant.
pub fn apply_changes(spec: &ProblemSpec, changes: &[FieldChange]) -> Result<ProblemSpec, SpecError> {
    let mut value = serde_json::to_value(spec).expect("spec serializes");
    for change in changes {
        let target = slot(&mut value, &change.path).ok_or_else(|| SpecError::InvalidValue {
            path: change.path.clone(),
            message: "path does not address a field".into(),
        })?;
        *target = change.new.clone();
    }
    strip_nulls(&mut value);
    let spec: ProblemSpec = deserialize_with_path(&value.to_string())?;
    spec.validate()?;
    Ok(spec)
}

// A removed optional field comes back as `null`; drop it so that optional
// fields deserialize as absent.
fn strip_nulls(value: &mut Value) {
    if let Value::Object(map) = value {
        map.retain(|_, v| !v.is_null());
        for v in map.values_mut() {
            strip_nulls(v);
        }
    } else if let Value::Array(items) = value {
        items.iter_mut().for_each(strip_nulls);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{builtin_benchmark, Benchmark, LoadLocation, Provenance, Rect};

    #[test]
    fn identical_specs_have_empty_diff() {
        let s = builtin_benchmark(Benchmark::MbbMidRight);
        assert!(spec_diff(&s, &s).is_empty());
    }

    #[test]
    fn moved_load_is_one_change() {
        let mut old = builtin_benchmark(Benchmark::LBracketStress);
        old.loads[0].location = LoadLocation::Point { x: 0.5, y: 0.4 };
        let mut new = old.clone();
        new.loads[0].location = LoadLocation::Point { x: 1.0, y: 0.4 };
        let d = spec_diff(&old, &new);
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].path, "loads[0].location.x");
        assert_eq!(d[0].old, serde_json::json!(0.5));
        assert_eq!(d[0].new, serde_json::json!(1.0));
    }

    #[test]
    fn added_void_is_one_change() {
        let old = builtin_benchmark(Benchmark::Cantilever);
        let mut new = old.clone();
        new.geometry.void_regions.push(Rect::new(0.8, 0.4, 1.2, 0.6));
        let d = spec_diff(&old, &new);
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].path, "geometry.void_regions");
    }

    #[test]
    fn apply_reproduces_target() {
        let old = builtin_benchmark(Benchmark::LBracketStress);
        let mut new = old.clone();
        new.provenance = Provenance::ValidatorCorrected;
        new.regularization.r_min *= 2.0;
        new.geometry.void_regions.push(Rect::new(0.1, 0.1, 0.2, 0.2));
        let d = spec_diff(&old, &new);
        assert_eq!(apply_changes(&old, &d).unwrap(), new);
    }

    #[test]
    fn optional_field_removal_round_trips() {
        let old = builtin_benchmark(Benchmark::LBracketStress);
        let new = builtin_benchmark(Benchmark::Cantilever);
        let d = spec_diff(&old, &new);
        assert_eq!(apply_changes(&old, &d).unwrap(), new);
    }

    #[test]
    fn bad_path_is_rejected() {
        let s = builtin_benchmark(Benchmark::Cantilever);
        let change = FieldChange { path: "loads[7].force".into(), old: Value::Null, new: Value::Null };
        assert!(apply_changes(&s, &[change]).is_err());
    }
}
