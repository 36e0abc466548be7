//! Flat key/value reports rendered as aligned text, JSON or one-row CSV.

use serde_json::{Map, Value};
use vstruct_core::params_io::ParamPoint;
use vstruct_core::sweep::format_real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    Csv,
    Json,
    Text,
}

/// What every run states about itself.
#[derive(Debug, Clone)]
pub struct RunHeader {
    pub command: &'static str,
    pub params: Option<ParamPoint>,
    pub seed: Option<u64>,
    pub extra: Vec<(String, String)>,
}

impl RunHeader {
    pub fn new(command: &'static str) -> Self {
        Self {
            command,
            params: None,
            seed: None,
            extra: Vec::new(),
        }
    }

    pub fn with(mut self, key: &str, value: impl ToString) -> Self {
        self.extra.push((key.to_string(), value.to_string()));
        self
    }

    pub fn lines(&self) -> Vec<String> {
        let mut out = vec![format!("vstruct {} {}", env!("CARGO_PKG_VERSION"), self.command)];
        if let Some(p) = &self.params {
            let kv = p.to_kv().lines().collect::<Vec<_>>().join(" ");
            out.push(format!("params: {kv}"));
            if let Ok(params) = p.params() {
                let y = params.p_y();
                out.push(format!(
                    "p_y: {:?} {:?} {:?} {:?}",
                    y[0], y[1], y[2], y[3]
                ));
            }
        }
        if let Some(seed) = self.seed {
            out.push(format!("seed: {seed}"));
        }
        for (k, v) in &self.extra {
            out.push(format!("{k}: {v}"));
        }
        out
    }

    pub fn to_json(&self) -> Value {
        let mut map = Map::new();
        map.insert("version".into(), env!("CARGO_PKG_VERSION").into());
        map.insert("command".into(), self.command.into());
        if let Some(p) = &self.params {
            map.insert("params".into(), p.to_json());
            if let Ok(params) = p.params() {
                map.insert("p_y".into(), params.p_y().to_vec().into());
            }
        }
        if let Some(seed) = self.seed {
            map.insert("seed".into(), seed.into());
        }
        for (k, v) in &self.extra {
            map.insert(k.clone(), v.clone().into());
        }
        Value::Object(map)
    }
}

#[derive(Debug, Clone, Default)]
pub struct Report {
    entries: Vec<(String, Value)>,
}

impl Report {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn num(&mut self, key: &str, v: f64) -> &mut Self {
        // JSON has no NaN; keep it as null there and as NaN elsewhere
        self.entries.push((key.into(), Value::from(v)));
        if v.is_nan() {
            self.entries.last_mut().unwrap().1 = Value::Null;
        }
        self
    }

    pub fn int(&mut self, key: &str, v: u64) -> &mut Self {
        self.entries.push((key.into(), Value::from(v)));
        self
    }

    pub fn text(&mut self, key: &str, v: impl Into<String>) -> &mut Self {
        self.entries.push((key.into(), Value::String(v.into())));
        self
    }

    pub fn flag(&mut self, key: &str, v: bool) -> &mut Self {
        self.entries.push((key.into(), Value::Bool(v)));
        self
    }

    pub fn opt(&mut self, key: &str, v: Option<f64>) -> &mut Self {
        self.num(key, v.unwrap_or(f64::NAN))
    }

    fn text_value(v: &Value) -> String {
        match v {
            Value::Null => "NaN".into(),
            Value::Number(n) => match n.as_u64() {
                Some(u) => u.to_string(),
                None => format!("{:?}", n.as_f64().unwrap_or(f64::NAN)),
            },
            Value::String(s) => s.clone(),
            other => other.to_string(),
        }
    }

    fn csv_value(v: &Value) -> String {
        match v {
            Value::Number(n) if n.as_u64().is_none() => format_real(n.as_f64().unwrap_or(f64::NAN)),
            other => Self::text_value(other),
        }
    }

    pub fn render(&self, format: Format, header: &RunHeader) -> String {
        match format {
            Format::Text => {
                let width = self.entries.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
                let mut out: String = header.lines().iter().map(|l| format!("# {l}\n")).collect();
                for (k, v) in &self.entries {
                    out.push_str(&format!("{k:<width$}  {}\n", Self::text_value(v)));
                }
                out
            }
            Format::Json => {
                let result: Map<String, Value> = self.entries.iter().cloned().collect();
                let doc = serde_json::json!({ "run": header.to_json(), "result": result });
                format!("{}\n", serde_json::to_string_pretty(&doc).expect("serialisable"))
            }
            Format::Csv => {
                let keys: Vec<&str> = self.entries.iter().map(|(k, _)| k.as_str()).collect();
                let vals: Vec<String> = self.entries.iter().map(|(_, v)| Self::csv_value(v)).collect();
                format!("{}\n{}\n", keys.join(","), vals.join(","))
            }
        }
    }
}
