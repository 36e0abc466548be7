//! Grid sweeps over the reparameterised model, written as CSV.
//!
//! A spec fixes some of `p_x, p_z, q0, q1, c, n` and varies up to two of them
//! on inclusive linear grids. Rows come out outer-axis major. Points whose
//! conditionals leave `[0, 1]`, or whose moments cannot be computed, are
//! kept with `valid = false` and `NaN` in every derived column.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::asymptotics::{c_star, expected_delta_loglik, LogLikForm};
use crate::error::{Error, Result};
use crate::exact_moments::ExactMoments;
use crate::model::ReparamQC;
use crate::numeric::with_threads;

/// Environment variable that sets the worker count when no flag is given.
pub const THREADS_ENV: &str = "VSTRUCT_THREADS";

pub const AXIS_NAMES: [&str; 6] = ["p_x", "p_z", "q0", "q1", "c", "n"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Column {
    #[serde(rename = "p_X")]
    PX,
    #[serde(rename = "p_Z")]
    PZ,
    #[serde(rename = "q0")]
    Q0,
    #[serde(rename = "q1")]
    Q1,
    C,
    N,
    #[serde(rename = "V_R")]
    VR,
    #[serde(rename = "V_M")]
    VM,
    #[serde(rename = "delta")]
    Delta,
    #[serde(rename = "c_star")]
    CStar,
    #[serde(rename = "e_delta_aic")]
    EDeltaAic,
    #[serde(rename = "e_delta_bic")]
    EDeltaBic,
    #[serde(rename = "valid")]
    Valid,
}

impl Column {
    pub const ALL: [Column; 13] = [
        Column::PX,
        Column::PZ,
        Column::Q0,
        Column::Q1,
        Column::C,
        Column::N,
        Column::VR,
        Column::VM,
        Column::Delta,
        Column::CStar,
        Column::EDeltaAic,
        Column::EDeltaBic,
        Column::Valid,
    ];

    pub fn header(self) -> &'static str {
        match self {
            Column::PX => "p_X",
            Column::PZ => "p_Z",
            Column::Q0 => "q0",
            Column::Q1 => "q1",
            Column::C => "C",
            Column::N => "N",
            Column::VR => "V_R",
            Column::VM => "V_M",
            Column::Delta => "delta",
            Column::CStar => "c_star",
            Column::EDeltaAic => "e_delta_aic",
            Column::EDeltaBic => "e_delta_bic",
            Column::Valid => "valid",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Axis {
    pub name: String,
    pub min: f64,
    pub max: f64,
    pub steps: usize,
}

impl Axis {
    pub fn values(&self) -> Vec<f64> {
        match self.steps {
            0 => Vec::new(),
            1 => vec![self.min],
            s => (0..s)
                .map(|i| {
                    let t = i as f64 / (s - 1) as f64;
                    // endpoints exactly, interior by interpolation
                    if i == s - 1 {
                        self.max
                    } else {
                        self.min + t * (self.max - self.min)
                    }
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    #[serde(default)]
    pub fixed: BTreeMap<String, f64>,
    pub axes: Vec<Axis>,
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub columns: Option<Vec<Column>>,
}

impl SweepSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        let spec: SweepSpec = serde_json::from_str(text)
            .map_err(|e| Error::Sweep(format!("cannot parse spec: {e}")))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.axes.is_empty() || self.axes.len() > 2 {
            return Err(Error::Sweep(format!(
                "need one or two axes, got {}",
                self.axes.len()
            )));
        }
        for key in self.fixed.keys() {
            if !AXIS_NAMES.contains(&key.as_str()) {
                return Err(Error::Sweep(format!("unknown fixed parameter `{key}`")));
            }
        }
        for axis in &self.axes {
            if !AXIS_NAMES.contains(&axis.name.as_str()) {
                return Err(Error::Sweep(format!("unknown axis `{}`", axis.name)));
            }
            if self.fixed.contains_key(&axis.name) {
                return Err(Error::Sweep(format!("`{}` is both fixed and an axis", axis.name)));
            }
            if axis.steps == 0 {
                return Err(Error::Sweep(format!("axis `{}` is empty", axis.name)));
            }
            if !(axis.min.is_finite() && axis.max.is_finite()) {
                return Err(Error::Sweep(format!("axis `{}` has a non-finite bound", axis.name)));
            }
        }
        if self.axes.len() == 2 && self.axes[0].name == self.axes[1].name {
            return Err(Error::Sweep("the two axes must differ".into()));
        }
        let missing: Vec<&str> = AXIS_NAMES
            .iter()
            .copied()
            .filter(|k| !self.fixed.contains_key(*k) && !self.axes.iter().any(|a| a.name == *k))
            .collect();
        if !missing.is_empty() {
            return Err(Error::Sweep(format!("no value for {}", missing.join(", "))));
        }
        if let Some(cols) = &self.columns {
            if cols.is_empty() {
                return Err(Error::Sweep("column list is empty".into()));
            }
        }
        Ok(())
    }

    pub fn columns(&self) -> Vec<Column> {
        self.columns.clone().unwrap_or_else(|| Column::ALL.to_vec())
    }

    fn points(&self) -> Vec<GridPoint> {
        let outer = self.axes[0].values();
        let inner = self.axes.get(1).map(|a| a.values()).unwrap_or_else(|| vec![f64::NAN]);
        let mut out = Vec::with_capacity(outer.len() * inner.len());
        for (i, &o) in outer.iter().enumerate() {
            for (j, &v) in inner.iter().enumerate() {
                let mut vals = self.fixed.clone();
                vals.insert(self.axes[0].name.clone(), o);
                if let Some(ax) = self.axes.get(1) {
                    vals.insert(ax.name.clone(), v);
                }
                let n = vals["n"];
                out.push(GridPoint {
                    outer: i,
                    inner: j,
                    r: ReparamQC::unchecked(vals["q0"], vals["q1"], vals["c"], vals["p_x"], vals["p_z"]),
                    n,
                });
            }
        }
        out
    }
}

struct GridPoint {
    outer: usize,
    inner: usize,
    r: ReparamQC,
    n: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepRow {
    #[serde(rename = "p_X")]
    pub p_x: f64,
    #[serde(rename = "p_Z")]
    pub p_z: f64,
    pub q0: f64,
    pub q1: f64,
    #[serde(rename = "C")]
    pub c: f64,
    #[serde(rename = "N")]
    pub n: u64,
    #[serde(rename = "V_R")]
    pub v_r: f64,
    #[serde(rename = "V_M")]
    pub v_m: f64,
    pub delta: f64,
    pub c_star: f64,
    pub e_delta_aic: f64,
    pub e_delta_bic: f64,
    pub valid: bool,
    #[serde(skip)]
    pub outer_index: usize,
    #[serde(skip)]
    pub inner_index: usize,
}

impl SweepRow {
    pub fn compute(r: &ReparamQC, n: u64) -> SweepRow {
        let exact = ExactMoments::default();
        let moments = r.to_params().and_then(|p| {
            let vr = exact.var_raw(&p, n)?;
            let vm = exact.var_marginal(&p, n)?;
            Ok((vr, vm))
        });
        let (v_r, v_m, valid) = match moments {
            Ok((vr, vm)) if vr > 0.0 && vm >= 0.0 && vm.is_finite() => (vr, vm, true),
            _ => (f64::NAN, f64::NAN, false),
        };
        let asym = |v: Result<f64>| if valid { v.unwrap_or(f64::NAN) } else { f64::NAN };
        let e_aic = asym(expected_delta_loglik(r, n, LogLikForm::Quadratic).map(|l| 2.0 - 2.0 * l));
        SweepRow {
            p_x: r.p_x,
            p_z: r.p_z,
            q0: r.q0,
            q1: r.q1,
            c: r.c,
            n,
            v_r,
            v_m,
            delta: if valid { (v_m - v_r) / v_r } else { f64::NAN },
            c_star: asym(c_star(r, n)),
            e_delta_aic: e_aic,
            e_delta_bic: e_aic + (n as f64).ln(),
            valid,
            outer_index: 0,
            inner_index: 0,
        }
    }

    fn field(&self, col: Column) -> String {
        let real = |v: f64| format_real(v);
        match col {
            Column::PX => real(self.p_x),
            Column::PZ => real(self.p_z),
            Column::Q0 => real(self.q0),
            Column::Q1 => real(self.q1),
            Column::C => real(self.c),
            Column::N => self.n.to_string(),
            Column::VR => real(self.v_r),
            Column::VM => real(self.v_m),
            Column::Delta => real(self.delta),
            Column::CStar => real(self.c_star),
            Column::EDeltaAic => real(self.e_delta_aic),
            Column::EDeltaBic => real(self.e_delta_bic),
            Column::Valid => self.valid.to_string(),
        }
    }
}

/// Seventeen significant digits, enough to round-trip any double.
pub fn format_real(v: f64) -> String {
    if v.is_nan() {
        "NaN".to_string()
    } else {
        format!("{v:.16e}")
    }
}

/// One sign change of `delta` along the inner axis, linearly interpolated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ContourPoint {
    /// Value of the outer axis (`NaN` for one-axis sweeps).
    pub outer: f64,
    /// Interpolated inner-axis value where `delta` crosses zero.
    pub crossing: f64,
    /// `C*` at the crossing, when defined.
    pub c_star: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepSummary {
    pub rows: usize,
    pub invalid_rows: usize,
    pub outer_axis: String,
    pub inner_axis: Option<String>,
    pub contour: Vec<ContourPoint>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepOutput {
    pub rows: Vec<SweepRow>,
    pub summary: SweepSummary,
}

/// Worker count from [`THREADS_ENV`], or 0 (global pool) when unset.
pub fn threads_from_env() -> Result<usize> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| Error::Sweep(format!("{THREADS_ENV}=`{v}` is not a thread count"))),
        Err(_) => Ok(0),
    }
}

fn axis_value(row: &SweepRow, name: &str) -> f64 {
    match name {
        "p_x" => row.p_x,
        "p_z" => row.p_z,
        "q0" => row.q0,
        "q1" => row.q1,
        "c" => row.c,
        _ => row.n as f64,
    }
}

fn contour(spec: &SweepSpec, rows: &[SweepRow]) -> Vec<ContourPoint> {
    let (outer, inner) = match spec.axes.as_slice() {
        [o, i] => (Some(o.name.as_str()), i.name.as_str()),
        [i] => (None, i.name.as_str()),
        _ => return Vec::new(),
    };
    let mut out = Vec::new();
    let mut start = 0;
    while start < rows.len() {
        // a one-axis sweep is a single line
        let o = rows[start].outer_index;
        let end = match outer {
            Some(_) => rows[start..]
                .iter()
                .position(|r| r.outer_index != o)
                .map_or(rows.len(), |k| start + k),
            None => rows.len(),
        };
        let line: Vec<&SweepRow> = rows[start..end].iter().filter(|r| r.valid).collect();
        for w in line.windows(2) {
            let (a, b) = (w[0], w[1]);
            if (a.delta > 0.0) != (b.delta > 0.0) {
                let (xa, xb) = (axis_value(a, inner), axis_value(b, inner));
                let crossing = xa + (xb - xa) * a.delta / (a.delta - b.delta);
                let mut r = ReparamQC::unchecked(a.q0, a.q1, a.c, a.p_x, a.p_z);
                let mut n = a.n;
                set_axis(&mut r, &mut n, inner, crossing);
                out.push(ContourPoint {
                    outer: outer.map_or(f64::NAN, |name| axis_value(a, name)),
                    crossing,
                    c_star: c_star(&r, n).unwrap_or(f64::NAN),
                });
            }
        }
        start = end;
    }
    out
}

fn set_axis(r: &mut ReparamQC, n: &mut u64, name: &str, v: f64) {
    match name {
        "p_x" => r.p_x = v,
        "p_z" => r.p_z = v,
        "q0" => r.q0 = v,
        "q1" => r.q1 = v,
        "c" => r.c = v,
        _ => *n = v.round() as u64,
    }
}

/// Evaluates every grid point, in parallel when `threads != 1`.
pub fn run_sweep(spec: &SweepSpec, threads: usize) -> Result<SweepOutput> {
    spec.validate()?;
    let points = spec.points();
    if points.is_empty() {
        return Err(Error::Sweep("empty grid".into()));
    }
    for p in &points {
        if !(p.n >= 1.0 && p.n.fract() == 0.0 && p.n <= u64::MAX as f64) {
            return Err(Error::Sweep(format!("sample size {} is not a positive integer", p.n)));
        }
    }
    let rows = with_threads(threads, || {
        points
            .par_iter()
            .map(|p| {
                let mut row = SweepRow::compute(&p.r, p.n as u64);
                row.outer_index = p.outer;
                row.inner_index = p.inner;
                row
            })
            .collect::<Vec<_>>()
    })?;
    let summary = SweepSummary {
        rows: rows.len(),
        invalid_rows: rows.iter().filter(|r| !r.valid).count(),
        outer_axis: spec.axes[0].name.clone(),
        inner_axis: spec.axes.get(1).map(|a| a.name.clone()),
        contour: contour(spec, &rows),
    };
    Ok(SweepOutput { rows, summary })
}

/// Writes the header and rows with LF line endings.
pub fn write_csv<W: Write>(rows: &[SweepRow], columns: &[Column], out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    w.write_record(columns.iter().map(|c| c.header()))?;
    for row in rows {
        w.write_record(columns.iter().map(|&c| row.field(c)))?;
    }
    w.flush().map_err(|e| Error::Csv(e.into()))?;
    Ok(())
}

pub fn write_csv_file(rows: &[SweepRow], columns: &[Column], path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    write_csv(rows, columns, std::io::BufWriter::new(file))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fig_spec(n: f64, c_half: f64, steps: usize) -> SweepSpec {
        SweepSpec::from_json(&format!(
            r#"{{
                "fixed": {{"p_z": {pz}, "q0": {q0}, "q1": {q1}, "n": {n}}},
                "axes": [
                    {{"name": "p_x", "min": 0.1, "max": 0.9, "steps": {steps}}},
                    {{"name": "c", "min": -{c_half}, "max": {c_half}, "steps": {steps}}}
                ]
            }}"#,
            pz = 2.0 / 3.0,
            q0 = 1.0 / 3.0,
            q1 = 2.0 / 3.0,
        ))
        .unwrap()
    }

    #[test]
    fn axis_values_hit_endpoints() {
        let a = Axis { name: "c".into(), min: -1.0 / 3.0, max: 1.0 / 3.0, steps: 7 };
        let v = a.values();
        assert_eq!(v.len(), 7);
        assert_eq!(v[0], -1.0 / 3.0);
        assert_eq!(v[6], 1.0 / 3.0);
        assert!(v[3].abs() < 1e-16);
    }

    #[test]
    fn single_point_grid() {
        let spec = SweepSpec::from_json(
            r#"{"fixed": {"p_x": 0.5, "p_z": 0.5, "q0": 0.5, "q1": 0.5, "n": 100},
                "axes": [{"name": "c", "min": 0.0, "max": 0.0, "steps": 1}]}"#,
        )
        .unwrap();
        let out = run_sweep(&spec, 1).unwrap();
        assert_eq!(out.rows.len(), 1);
        let mut buf = Vec::new();
        write_csv(&out.rows, &spec.columns(), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 2);
        assert!(text.starts_with(
            "p_X,p_Z,q0,q1,C,N,V_R,V_M,delta,c_star,e_delta_aic,e_delta_bic,valid\n"
        ));
        assert!(!text.contains('\r'));
        assert!(text.trim_end().ends_with("true"));
    }

    #[test]
    fn out_of_range_rows_are_flagged() {
        let spec = fig_spec(100.0, 0.5, 5);
        let out = run_sweep(&spec, 1).unwrap();
        let bad: Vec<_> = out.rows.iter().filter(|r| !r.valid).collect();
        assert!(!bad.is_empty());
        for r in bad {
            assert!(r.c.abs() > 1.0 / 3.0);
            assert!(r.v_r.is_nan() && r.v_m.is_nan() && r.delta.is_nan());
        }
        assert_eq!(out.summary.invalid_rows, out.rows.iter().filter(|r| !r.valid).count());
    }

    #[test]
    fn row_order_is_outer_major() {
        let out = run_sweep(&fig_spec(100.0, 0.3, 4), 3).unwrap();
        let idx: Vec<(usize, usize)> = out.rows.iter().map(|r| (r.outer_index, r.inner_index)).collect();
        let mut sorted = idx.clone();
        sorted.sort();
        assert_eq!(idx, sorted);
        assert_eq!(out.rows[0].p_x, 0.1);
        assert_eq!(out.rows[1].p_x, 0.1);
    }

    #[test]
    fn csv_is_deterministic_across_thread_counts() {
        let spec = fig_spec(100.0, 1.0 / 3.0, 9);
        let render = |threads| {
            let out = run_sweep(&spec, threads).unwrap();
            let mut buf = Vec::new();
            write_csv(&out.rows, &spec.columns(), &mut buf).unwrap();
            buf
        };
        assert_eq!(render(1), render(4));
    }

    #[test]
    fn reals_round_trip() {
        for v in [1.0 / 3.0, 2.0f64.sqrt() * 1e-17, -123456.789, f64::MIN_POSITIVE] {
            assert_eq!(format_real(v).parse::<f64>().unwrap(), v);
        }
    }

    #[test]
    fn contour_brackets_c_star() {
        let spec = fig_spec(100.0, 1.0 / 3.0, 41);
        let out = run_sweep(&spec, 0).unwrap();
        let mid: Vec<_> = out
            .summary
            .contour
            .iter()
            .filter(|p| (p.outer - 0.5).abs() < 1e-12)
            .collect();
        assert_eq!(mid.len(), 2, "{mid:?}");
        for p in mid {
            assert!((p.crossing.abs() - p.c_star).abs() < 0.15 * p.c_star, "{p:?}");
        }
    }

    #[test]
    fn one_axis_contour() {
        let spec = SweepSpec::from_json(&format!(
            r#"{{"fixed": {{"p_x": 0.5, "p_z": {pz}, "q0": {q0}, "q1": {q1}, "n": 100}},
                 "axes": [{{"name": "c", "min": -0.3, "max": 0.3, "steps": 61}}]}}"#,
            pz = 2.0 / 3.0,
            q0 = 1.0 / 3.0,
            q1 = 2.0 / 3.0,
        ))
        .unwrap();
        let out = run_sweep(&spec, 1).unwrap();
        assert_eq!(out.summary.contour.len(), 2);
        assert!(out.summary.contour.iter().all(|p| p.outer.is_nan()));
        assert!(out.summary.contour[0].crossing < 0.0 && out.summary.contour[1].crossing > 0.0);
    }

    #[test]
    fn subset_columns() {
        let mut spec = fig_spec(100.0, 0.1, 2);
        spec.columns = Some(vec![Column::PX, Column::C, Column::Delta]);
        let out = run_sweep(&spec, 1).unwrap();
        let mut buf = Vec::new();
        write_csv(&out.rows, &spec.columns(), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("p_X,C,delta\n"));
    }

    #[test]
    fn bad_specs() {
        let cases = [
            r#"{"axes": []}"#,
            r#"{"fixed": {"p_x": 0.5, "p_z": 0.5, "q0": 0.5, "q1": 0.5}, "axes": [{"name": "c", "min": 0, "max": 0.1, "steps": 0}]}"#,
            r#"{"fixed": {"p_x": 0.5, "p_z": 0.5, "q0": 0.5, "q1": 0.5}, "axes": [{"name": "c", "min": 0, "max": 0.1, "steps": 3}]}"#,
            r#"{"fixed": {"p_x": 0.5, "p_z": 0.5, "q0": 0.5, "q1": 0.5, "n": 10, "w": 1}, "axes": [{"name": "c", "min": 0, "max": 0.1, "steps": 3}]}"#,
            r#"{"fixed": {"p_x": 0.5, "p_z": 0.5, "q0": 0.5, "q1": 0.5, "n": 10, "c": 0}, "axes": [{"name": "c", "min": 0, "max": 0.1, "steps": 3}]}"#,
            r#"{"fixed": {"p_x": 0.5, "p_z": 0.5, "q0": 0.5, "q1": 0.5, "n": 10}, "axes": [{"name": "c", "min": 0, "max": 0.1, "steps": 3}], "columns": ["nope"]}"#,
        ];
        for case in cases {
            assert!(SweepSpec::from_json(case).is_err(), "{case}");
        }
        let frac_n = SweepSpec::from_json(
            r#"{"fixed": {"p_x": 0.5, "p_z": 0.5, "q0": 0.5, "q1": 0.5, "n": 10.5}, "axes": [{"name": "c", "min": 0, "max": 0.1, "steps": 3}]}"#,
        )
        .unwrap();
        assert!(run_sweep(&frac_n, 1).is_err());
    }
}
