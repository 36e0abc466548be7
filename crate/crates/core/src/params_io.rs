//! Reading and writing parameter points as flat `key=value` text or JSON.
//!
//! A point is given either directly (`p_x`, `p_z`, `p_y0..p_y3`) or in the
//! reparameterised form (`q0`, `q1`, `c`, `p_x`, `p_z`). JSON may also carry
//! the conditionals as an array `"p_y": [..]`. Layers are merged with JSON
//! taking precedence over key=value files, and explicit overrides last.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;
use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::model::{ReparamQC, VStructParams};

const DIRECT_KEYS: [&str; 6] = ["p_x", "p_z", "p_y0", "p_y1", "p_y2", "p_y3"];
const REPARAM_KEYS: [&str; 5] = ["p_x", "p_z", "q0", "q1", "c"];
const KNOWN_KEYS: [&str; 9] = ["p_x", "p_z", "p_y0", "p_y1", "p_y2", "p_y3", "q0", "q1", "c"];

/// A resolved parameter point, remembering which form it was given in.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "form", rename_all = "kebab-case")]
pub enum ParamPoint {
    Direct(VStructParams),
    Reparam(ReparamQC),
}

impl ParamPoint {
    pub fn params(&self) -> Result<VStructParams> {
        match self {
            ParamPoint::Direct(p) => Ok(*p),
            ParamPoint::Reparam(r) => r.to_params(),
        }
    }

    /// The `(q0, q1, C)` view, when the conditionals admit one.
    pub fn reparam(&self) -> Option<ReparamQC> {
        match self {
            ParamPoint::Direct(p) => p.to_reparam(),
            ParamPoint::Reparam(r) => Some(*r),
        }
    }

    fn entries(&self) -> Vec<(&'static str, f64)> {
        match self {
            ParamPoint::Direct(p) => {
                let y = p.p_y();
                vec![
                    ("p_x", p.p_x()),
                    ("p_z", p.p_z()),
                    ("p_y0", y[0]),
                    ("p_y1", y[1]),
                    ("p_y2", y[2]),
                    ("p_y3", y[3]),
                ]
            }
            ParamPoint::Reparam(r) => vec![
                ("p_x", r.p_x),
                ("p_z", r.p_z),
                ("q0", r.q0),
                ("q1", r.q1),
                ("c", r.c),
            ],
        }
    }

    /// One `key=value` per line; values use the shortest round-trip form.
    pub fn to_kv(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.entries() {
            let _ = writeln!(out, "{k}={v:?}");
        }
        out
    }

    pub fn to_json(&self) -> Value {
        let mut map = Map::new();
        for (k, v) in self.entries() {
            map.insert(k.to_string(), Value::from(v));
        }
        Value::Object(map)
    }
}

fn parse_number(key: &str, text: &str, origin: &str) -> Result<f64> {
    text.trim()
        .parse::<f64>()
        .map_err(|_| Error::Params(format!("{origin}: `{key}` has non-numeric value `{}`", text.trim())))
}

fn check_key(key: &str, origin: &str) -> Result<()> {
    if KNOWN_KEYS.contains(&key) {
        Ok(())
    } else {
        Err(Error::Params(format!(
            "{origin}: unknown key `{key}` (expected one of {})",
            KNOWN_KEYS.join(", ")
        )))
    }
}

/// Parses `key=value` lines. Blank lines and `#` comments are ignored.
pub fn parse_kv(text: &str, origin: &str) -> Result<BTreeMap<String, f64>> {
    let mut out = BTreeMap::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            Error::Params(format!("{origin}:{}: expected key=value, got `{line}`", lineno + 1))
        })?;
        let k = k.trim();
        check_key(k, origin)?;
        let v = parse_number(k, v, origin)?;
        if out.insert(k.to_string(), v).is_some() {
            return Err(Error::Params(format!("{origin}: `{k}` given twice")));
        }
    }
    Ok(out)
}

/// Parses a JSON object of numbers (and optionally a `p_y` array of four).
pub fn parse_json(text: &str, origin: &str) -> Result<BTreeMap<String, f64>> {
    let value: Value = serde_json::from_str(text)?;
    let obj = value
        .as_object()
        .ok_or_else(|| Error::Params(format!("{origin}: expected a JSON object")))?;
    let number = |k: &str, v: &Value| {
        v.as_f64()
            .ok_or_else(|| Error::Params(format!("{origin}: `{k}` must be a number")))
    };
    let mut out = BTreeMap::new();
    for (k, v) in obj {
        if k == "p_y" {
            let arr = v
                .as_array()
                .filter(|a| a.len() == 4)
                .ok_or_else(|| Error::Params(format!("{origin}: `p_y` must be an array of 4 numbers")))?;
            for (i, item) in arr.iter().enumerate() {
                let key = format!("p_y{i}");
                if out.insert(key.clone(), number(&key, item)?).is_some() {
                    return Err(Error::Params(format!("{origin}: `{key}` given twice")));
                }
            }
            continue;
        }
        check_key(k, origin)?;
        if out.insert(k.clone(), number(k, v)?).is_some() {
            return Err(Error::Params(format!("{origin}: `{k}` given twice")));
        }
    }
    Ok(out)
}

/// Builds a point from an ordered stack of sources.
#[derive(Debug, Default, Clone)]
pub struct ParamSources {
    kv: BTreeMap<String, (f64, String)>,
    json: BTreeMap<String, (f64, String)>,
    overrides: BTreeMap<String, f64>,
    warnings: Vec<String>,
}

impl ParamSources {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a file, choosing JSON when the extension is `.json` or the
    /// content starts with `{`.
    pub fn add_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let origin = path.display().to_string();
        let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"))
            || text.trim_start().starts_with('{');
        if is_json {
            self.add_json(&text, &origin)
        } else {
            self.add_kv(&text, &origin)
        }
    }

    pub fn add_kv(&mut self, text: &str, origin: &str) -> Result<()> {
        for (k, v) in parse_kv(text, origin)? {
            self.kv.insert(k, (v, origin.to_string()));
        }
        Ok(())
    }

    pub fn add_json(&mut self, text: &str, origin: &str) -> Result<()> {
        for (k, v) in parse_json(text, origin)? {
            self.json.insert(k, (v, origin.to_string()));
        }
        Ok(())
    }

    /// A single `key=value` given on the command line; beats every file.
    pub fn set(&mut self, assignment: &str) -> Result<()> {
        let (k, v) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Params(format!("expected key=value, got `{assignment}`")))?;
        let k = k.trim();
        check_key(k, "--param")?;
        let v = parse_number(k, v, "--param")?;
        self.overrides.insert(k.to_string(), v);
        Ok(())
    }

    pub fn is_empty(&self) -> bool {
        self.kv.is_empty() && self.json.is_empty() && self.overrides.is_empty()
    }

    /// Messages about key=value entries shadowed by JSON; filled by [`Self::merged`].
    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    pub fn merged(&mut self) -> BTreeMap<String, f64> {
        self.warnings.clear();
        let mut out: BTreeMap<String, f64> = self.kv.iter().map(|(k, (v, _))| (k.clone(), *v)).collect();
        for (k, (v, origin)) in &self.json {
            if let Some((old, kv_origin)) = self.kv.get(k) {
                if old.to_bits() != v.to_bits() {
                    self.warnings.push(format!(
                        "`{k}`: {origin} ({v}) overrides {kv_origin} ({old})"
                    ));
                }
            }
            out.insert(k.clone(), *v);
        }
        for (k, v) in &self.overrides {
            out.insert(k.clone(), *v);
        }
        out
    }

    pub fn resolve(&mut self) -> Result<ParamPoint> {
        resolve_map(&self.merged())
    }
}

/// Interprets a merged key map as one of the two parameter forms.
pub fn resolve_map(map: &BTreeMap<String, f64>) -> Result<ParamPoint> {
    let has = |k: &str| map.contains_key(k);
    let direct = DIRECT_KEYS[2..].iter().any(|k| has(k));
    let reparam = ["q0", "q1", "c"].iter().any(|k| has(k));
    let get = |k: &str| map[k];
    let require = |keys: &[&str]| -> Result<()> {
        let missing: Vec<&str> = keys.iter().copied().filter(|k| !has(k)).collect();
        if missing.is_empty() {
            Ok(())
        } else {
            Err(Error::Params(format!("missing parameter(s): {}", missing.join(", "))))
        }
    };
    match (direct, reparam) {
        (true, true) => Err(Error::Params(
            "give either p_y0..p_y3 or q0, q1, c, not both".into(),
        )),
        (true, false) => {
            require(&DIRECT_KEYS)?;
            Ok(ParamPoint::Direct(VStructParams::new(
                get("p_x"),
                get("p_z"),
                [get("p_y0"), get("p_y1"), get("p_y2"), get("p_y3")],
            )?))
        }
        (false, true) => {
            require(&REPARAM_KEYS)?;
            Ok(ParamPoint::Reparam(ReparamQC::new(
                get("q0"),
                get("q1"),
                get("c"),
                get("p_x"),
                get("p_z"),
            )?))
        }
        (false, false) => Err(Error::Params(
            "no conditionals given: need p_y0..p_y3 or q0, q1, c".into(),
        )),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kv_direct() {
        let text = "# a point\np_x = 0.4\np_z=0.3\np_y0=0.1\np_y1=0.2\np_y2=0.7\np_y3=0.9\n";
        let mut s = ParamSources::new();
        s.add_kv(text, "t").unwrap();
        let p = s.resolve().unwrap().params().unwrap();
        assert_eq!(p, VStructParams::new(0.4, 0.3, [0.1, 0.2, 0.7, 0.9]).unwrap());
    }

    #[test]
    fn json_reparam_and_array() {
        let mut s = ParamSources::new();
        s.add_json(r#"{"q0": 0.25, "q1": 0.75, "c": 0.1, "p_x": 0.5, "p_z": 0.5}"#, "j")
            .unwrap();
        let point = s.resolve().unwrap();
        assert!(matches!(point, ParamPoint::Reparam(_)));
        assert_eq!(point.params().unwrap().p_y(), [0.15, 0.35, 0.65, 0.85]);

        let mut a = ParamSources::new();
        a.add_json(r#"{"p_x": 0.5, "p_z": 0.5, "p_y": [0.1, 0.2, 0.3, 0.4]}"#, "j")
            .unwrap();
        assert_eq!(a.resolve().unwrap().params().unwrap().p_y(), [0.1, 0.2, 0.3, 0.4]);
    }

    #[test]
    fn json_beats_kv_with_warning() {
        let mut s = ParamSources::new();
        s.add_json(r#"{"p_x": 0.3}"#, "a.json").unwrap();
        s.add_kv("p_x=0.6\np_z=0.5\nq0=0.5\nq1=0.5\nc=0", "b.txt").unwrap();
        let point = s.resolve().unwrap();
        assert_eq!(point.params().unwrap().p_x(), 0.3);
        assert_eq!(s.warnings().len(), 1);
        assert!(s.warnings()[0].contains("a.json"));
    }

    #[test]
    fn override_beats_json() {
        let mut s = ParamSources::new();
        s.add_json(r#"{"p_x": 0.3, "p_z": 0.5, "q0": 0.5, "q1": 0.5, "c": 0}"#, "a.json")
            .unwrap();
        s.set("c=0.2").unwrap();
        assert_eq!(s.resolve().unwrap().reparam().unwrap().c, 0.2);
        assert!(s.warnings().is_empty());
    }

    #[test]
    fn rejects_bad_input() {
        assert!(parse_kv("p_q=0.1", "t").is_err());
        assert!(parse_kv("p_x 0.1", "t").is_err());
        assert!(parse_kv("p_x=abc", "t").is_err());
        assert!(parse_kv("p_x=0.1\np_x=0.2", "t").is_err());
        assert!(parse_json("[1, 2]", "t").is_err());
        assert!(parse_json(r#"{"p_x": "0.1"}"#, "t").is_err());
        assert!(parse_json(r#"{"p_y": [0.1]}"#, "t").is_err());

        let mut mixed = ParamSources::new();
        mixed.add_kv("p_x=0.5\np_z=0.5\nq0=0.5\nq1=0.5\nc=0\np_y0=0.1", "t").unwrap();
        assert!(mixed.resolve().is_err());

        let mut missing = ParamSources::new();
        missing.add_kv("p_x=0.5\nq0=0.5\nq1=0.5\nc=0", "t").unwrap();
        let err = missing.resolve().unwrap_err().to_string();
        assert!(err.contains("p_z"), "{err}");
    }

    #[test]
    fn roundtrips_both_formats() {
        let points = [
            ParamPoint::Direct(VStructParams::new(0.4, 0.3, [0.1, 0.2, 1.0 / 3.0, 0.9]).unwrap()),
            ParamPoint::Reparam(ReparamQC::new(1.0 / 3.0, 2.0 / 3.0, 0.1, 0.5, 2.0 / 3.0).unwrap()),
        ];
        for point in points {
            let back = resolve_map(&parse_kv(&point.to_kv(), "t").unwrap()).unwrap();
            assert_eq!(back, point);
            let json = serde_json::to_string(&point.to_json()).unwrap();
            let back = resolve_map(&parse_json(&json, "t").unwrap()).unwrap();
            assert_eq!(back, point);
        }
    }
}
