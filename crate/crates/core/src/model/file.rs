//! JSON problem files.
//!
//! ```json
//! {"A": [[-1]], "B": [[1]], "C": [[1]], "lambda": 0.5,
//!  "pattern": [[1]], "options": {"penalty_rho": 50}}
//! ```

use nalgebra::{DMatrix, DVector};
use serde_json::{Map, Number, Value};

use super::{
    validate, AdmmOptions, InputBound, LtiSystem, NormKind, StructurePattern, SynthesisProblem,
    TruncationMode,
};
use crate::error::{Error, Result};

const KNOWN_KEYS: &[&str] = &[
    "A",
    "B",
    "C",
    "Q",
    "R",
    "N",
    "lambda",
    "pattern",
    "input_bound",
    "options",
];
const OUTPUT_BOUND_KEYS: &[&str] = &["output_bound", "y_max"];

/// A parsed problem file.
#[derive(Debug, Clone)]
pub struct ProblemFile {
    pub problem: SynthesisProblem,
    pub options: AdmmOptions,
    /// Ignored keys and similar non-fatal findings.
    pub warnings: Vec<String>,
}

fn perr(context: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Parse {
        context: context.into(),
        message: message.into(),
    }
}

/// Parses and validates a problem file.
pub fn load_problem(text: &str) -> Result<ProblemFile> {
    let root: Value = serde_json::from_str(text).map_err(|e| {
        perr(
            format!("line {} column {}", e.line(), e.column()),
            e.to_string(),
        )
    })?;
    let obj = root
        .as_object()
        .ok_or_else(|| perr("document", "top level must be a JSON object"))?;

    let mut warnings = Vec::new();
    for key in obj.keys() {
        if OUTPUT_BOUND_KEYS.contains(&key.as_str()) {
            return Err(Error::UnsupportedFeature(format!(
                "'{key}': output-norm bounds are not implemented"
            )));
        }
        if !KNOWN_KEYS.contains(&key.as_str()) {
            warnings.push(format!("unknown key '{key}' ignored"));
        }
    }

    let a = required_matrix(obj, "A")?;
    let b = required_matrix(obj, "B")?;
    let c = required_matrix(obj, "C")?;
    let (n, m) = (a.nrows(), b.ncols());
    let system = LtiSystem { a, b, c };
    let p = system.c.nrows();

    let q_weight = optional_matrix(obj, "Q")?.unwrap_or_else(|| DMatrix::identity(n, n));
    let r_weight = optional_matrix(obj, "R")?.unwrap_or_else(|| DMatrix::identity(m, m));
    let noise_cov = optional_matrix(obj, "N")?.unwrap_or_else(|| DMatrix::identity(n, n));
    let lambda = match obj.get("lambda") {
        None => 0.0,
        Some(v) => number(v, "lambda")?,
    };
    let pattern = match obj.get("pattern") {
        None => StructurePattern::full(m, p),
        Some(v) => pattern(v)?,
    };
    let input_bound = match obj.get("input_bound") {
        None | Some(Value::Null) => None,
        Some(v) => Some(input_bound(v, &mut warnings)?),
    };
    let mut options = AdmmOptions::default();
    if let Some(v) = obj.get("options") {
        let o = v
            .as_object()
            .ok_or_else(|| perr("options", "expected an object"))?;
        for (key, val) in o {
            match apply_option(&mut options, key, val) {
                Ok(()) => {}
                Err(OptionError::Unknown) => {
                    warnings.push(format!("unknown option 'options.{key}' ignored"))
                }
                Err(OptionError::Bad(msg)) => return Err(perr(format!("options.{key}"), msg)),
            }
        }
    }

    let problem = SynthesisProblem {
        system,
        q_weight,
        r_weight,
        lambda,
        noise_cov,
        pattern,
        input_bound,
    };
    validate(&problem).map_err(Error::Invalid)?;
    options.validate().map_err(Error::Invalid)?;
    Ok(ProblemFile {
        problem,
        options,
        warnings,
    })
}

/// Writes a problem (and options) back in the file format. Floats are
/// emitted in shortest round-trip form, so `load_problem` recovers them
/// bit for bit.
pub fn serialize_problem(problem: &SynthesisProblem, options: &AdmmOptions) -> String {
    let mut obj = Map::new();
    obj.insert("A".into(), matrix_value(&problem.system.a));
    obj.insert("B".into(), matrix_value(&problem.system.b));
    obj.insert("C".into(), matrix_value(&problem.system.c));
    obj.insert("Q".into(), matrix_value(&problem.q_weight));
    obj.insert("R".into(), matrix_value(&problem.r_weight));
    obj.insert("N".into(), matrix_value(&problem.noise_cov));
    obj.insert("lambda".into(), float_value(problem.lambda));
    let rows: Vec<Value> = problem
        .pattern
        .rows()
        .into_iter()
        .map(|r| Value::Array(r.into_iter().map(|b| Value::from(b as u8)).collect()))
        .collect();
    obj.insert("pattern".into(), Value::Array(rows));
    if let Some(ib) = &problem.input_bound {
        let mut o = Map::new();
        let norm = match ib.norm_kind {
            NormKind::Two => "two",
            NormKind::Inf => "inf",
        };
        o.insert("norm".into(), Value::from(norm));
        o.insert("u_max".into(), float_value(ib.u_max));
        o.insert(
            "x0".into(),
            Value::Array(ib.x0.iter().map(|&v| float_value(v)).collect()),
        );
        obj.insert("input_bound".into(), Value::Object(o));
    }
    obj.insert("options".into(), options_value(options));
    serde_json::to_string_pretty(&Value::Object(obj)).expect("JSON values always serialize")
}

/// Applies a `key=value` style override, as given on a command line.
///
/// `value` is parsed as JSON first and falls back to a bare string, so both
/// `max_outer=50` and `truncation_mode=l0_threshold` work.
pub fn parse_override(options: &mut AdmmOptions, key: &str, value: &str) -> Result<()> {
    let v: Value = serde_json::from_str(value).unwrap_or_else(|_| Value::String(value.to_owned()));
    let before = options.clone();
    match apply_option(options, key, &v) {
        Ok(()) => {}
        Err(OptionError::Unknown) => return Err(perr(key, "unknown option")),
        Err(OptionError::Bad(msg)) => return Err(perr(key, msg)),
    }
    if let Err(v) = options.validate() {
        *options = before;
        return Err(Error::Invalid(v));
    }
    Ok(())
}

enum OptionError {
    Unknown,
    Bad(String),
}

fn apply_option(o: &mut AdmmOptions, key: &str, v: &Value) -> std::result::Result<(), OptionError> {
    let real = |v: &Value| {
        v.as_f64()
            .ok_or_else(|| OptionError::Bad("expected a number".into()))
    };
    let count = |v: &Value| {
        v.as_u64()
            .and_then(|x| usize::try_from(x).ok())
            .ok_or_else(|| OptionError::Bad("expected a nonnegative integer".into()))
    };
    match key {
        "penalty_rho" | "rho" => o.penalty_rho = real(v)?,
        "reweight_delta" | "delta" => o.reweight_delta = real(v)?,
        "eps_star" => o.eps_star = real(v)?,
        "max_outer" => o.max_outer = count(v)?,
        "inner_tol" => o.inner_tol = real(v)?,
        "inner_max" => o.inner_max = count(v)?,
        "strict_eps" => o.strict_eps = real(v)?,
        "truncation_mode" => o.truncation_mode = truncation_mode(v)?,
        _ => return Err(OptionError::Unknown),
    }
    Ok(())
}

fn truncation_mode(v: &Value) -> std::result::Result<TruncationMode, OptionError> {
    match v {
        Value::String(s) if s == "certified" => Ok(TruncationMode::Certified),
        Value::String(s) if s == "l0_threshold" => Ok(TruncationMode::L0Threshold),
        Value::Object(m) if m.len() == 1 => match m.get("manual").and_then(Value::as_f64) {
            Some(xi) => Ok(TruncationMode::Manual(xi)),
            None => Err(OptionError::Bad("expected {\"manual\": number}".into())),
        },
        _ => Err(OptionError::Bad(
            "expected \"certified\", \"l0_threshold\" or {\"manual\": number}".into(),
        )),
    }
}

fn options_value(o: &AdmmOptions) -> Value {
    let mut m = Map::new();
    m.insert("penalty_rho".into(), float_value(o.penalty_rho));
    m.insert("reweight_delta".into(), float_value(o.reweight_delta));
    m.insert("eps_star".into(), float_value(o.eps_star));
    m.insert("max_outer".into(), Value::from(o.max_outer));
    m.insert("inner_tol".into(), float_value(o.inner_tol));
    m.insert("inner_max".into(), Value::from(o.inner_max));
    m.insert("strict_eps".into(), float_value(o.strict_eps));
    let tm = match o.truncation_mode {
        TruncationMode::Certified => Value::from("certified"),
        TruncationMode::L0Threshold => Value::from("l0_threshold"),
        TruncationMode::Manual(xi) => {
            let mut t = Map::new();
            t.insert("manual".into(), float_value(xi));
            Value::Object(t)
        }
    };
    m.insert("truncation_mode".into(), tm);
    Value::Object(m)
}

fn float_value(x: f64) -> Value {
    match Number::from_f64(x) {
        Some(n) => Value::Number(n),
        None if x == f64::INFINITY => Value::from("inf"),
        None => Value::Null,
    }
}

fn matrix_value(m: &DMatrix<f64>) -> Value {
    Value::Array(
        (0..m.nrows())
            .map(|i| Value::Array((0..m.ncols()).map(|j| float_value(m[(i, j)])).collect()))
            .collect(),
    )
}

fn number(v: &Value, field: &str) -> Result<f64> {
    match v {
        Value::Number(n) => n.as_f64().ok_or_else(|| perr(field, "number out of range")),
        Value::String(s) if s == "inf" => Ok(f64::INFINITY),
        _ => Err(perr(field, "expected a number")),
    }
}

fn required_matrix(obj: &Map<String, Value>, key: &str) -> Result<DMatrix<f64>> {
    let v = obj
        .get(key)
        .ok_or_else(|| perr(key, format!("missing required matrix '{key}'")))?;
    matrix(v, key)
}

fn optional_matrix(obj: &Map<String, Value>, key: &str) -> Result<Option<DMatrix<f64>>> {
    obj.get(key).map(|v| matrix(v, key)).transpose()
}

fn matrix(v: &Value, field: &str) -> Result<DMatrix<f64>> {
    let rows = v
        .as_array()
        .ok_or_else(|| perr(field, "expected an array of rows"))?;
    if rows.is_empty() {
        return Err(perr(field, "matrix has no rows"));
    }
    let mut data = Vec::new();
    let mut cols = None;
    for (i, row) in rows.iter().enumerate() {
        let row = row
            .as_array()
            .ok_or_else(|| perr(format!("{field}[{i}]"), "expected an array"))?;
        match cols {
            None => cols = Some(row.len()),
            Some(c) if c != row.len() => {
                return Err(perr(
                    field,
                    format!("row {i} has {} entries, expected {c}", row.len()),
                ))
            }
            _ => {}
        }
        for (j, x) in row.iter().enumerate() {
            data.push(number(x, &format!("{field}[{i}][{j}]"))?);
        }
    }
    let cols = cols.unwrap_or(0);
    if cols == 0 {
        return Err(perr(field, "matrix has no columns"));
    }
    Ok(DMatrix::from_row_slice(rows.len(), cols, &data))
}

fn pattern(v: &Value) -> Result<StructurePattern> {
    let rows = v
        .as_array()
        .ok_or_else(|| perr("pattern", "expected an array of 0/1 rows"))?;
    let mut out = Vec::with_capacity(rows.len());
    for (i, row) in rows.iter().enumerate() {
        let row = row
            .as_array()
            .ok_or_else(|| perr(format!("pattern[{i}]"), "expected an array"))?;
        let mut r = Vec::with_capacity(row.len());
        for (j, x) in row.iter().enumerate() {
            r.push(match x {
                Value::Bool(b) => *b,
                Value::Number(n) if n.as_u64() == Some(0) => false,
                Value::Number(n) if n.as_u64() == Some(1) => true,
                _ => return Err(perr(format!("pattern[{i}][{j}]"), "expected 0 or 1")),
            });
        }
        out.push(r);
    }
    StructurePattern::from_rows(&out).ok_or_else(|| perr("pattern", "rows have unequal lengths"))
}

fn input_bound(v: &Value, warnings: &mut Vec<String>) -> Result<InputBound> {
    let o = v
        .as_object()
        .ok_or_else(|| perr("input_bound", "expected an object"))?;
    for key in o.keys() {
        if !["norm", "u_max", "x0"].contains(&key.as_str()) {
            warnings.push(format!("unknown key 'input_bound.{key}' ignored"));
        }
    }
    let norm_kind = match o.get("norm").and_then(Value::as_str) {
        Some("two") => NormKind::Two,
        Some("inf") => NormKind::Inf,
        _ => return Err(perr("input_bound.norm", "expected \"two\" or \"inf\"")),
    };
    let u_max = number(
        o.get("u_max")
            .ok_or_else(|| perr("input_bound.u_max", "missing"))?,
        "input_bound.u_max",
    )?;
    let x0 = o
        .get("x0")
        .and_then(Value::as_array)
        .ok_or_else(|| perr("input_bound.x0", "expected an array"))?
        .iter()
        .enumerate()
        .map(|(i, x)| number(x, &format!("input_bound.x0[{i}]")))
        .collect::<Result<Vec<_>>>()?;
    Ok(InputBound {
        norm_kind,
        u_max,
        x0: DVector::from_vec(x0),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Violation;

    #[test]
    fn minimal_file_defaults() {
        let f = load_problem(r#"{"A": [[-1]], "B": [[1]], "C": [[1]]}"#).unwrap();
        assert_eq!(f.problem.n(), 1);
        assert_eq!(f.problem.lambda, 0.0);
        assert_eq!(f.problem.pattern, StructurePattern::full(1, 1));
        assert_eq!(f.problem.noise_cov, DMatrix::identity(1, 1));
        assert_eq!(f.options, AdmmOptions::default());
        assert!(f.warnings.is_empty());
    }

    #[test]
    fn ragged_rows_name_the_matrix() {
        let err =
            load_problem(r#"{"A": [[-1, 0], [0]], "B": [[1], [1]], "C": [[1, 0]]}"#).unwrap_err();
        match err {
            Error::Parse { context, .. } => assert_eq!(context, "A"),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn syntax_error_has_line() {
        let err = load_problem("{\n\"A\": [[1]],\n oops}").unwrap_err();
        match err {
            Error::Parse { context, .. } => assert!(context.starts_with("line 3")),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn unknown_key_warns() {
        let f = load_problem(r#"{"A": [[-1]], "B": [[1]], "C": [[1]], "comment": "x"}"#).unwrap();
        assert_eq!(f.warnings.len(), 1);
    }

    #[test]
    fn output_bound_unsupported() {
        let err = load_problem(r#"{"A": [[-1]], "B": [[1]], "C": [[1]], "output_bound": {}}"#)
            .unwrap_err();
        assert!(matches!(err, Error::UnsupportedFeature(_)));
    }

    #[test]
    fn invalid_weights_reported() {
        let err = load_problem(r#"{"A": [[-1]], "B": [[1]], "C": [[1]], "R": [[0]]}"#).unwrap_err();
        match err {
            Error::Invalid(v) => assert!(matches!(&v[0], Violation::NotPositiveDefinite { .. })),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn options_and_overrides() {
        let f = load_problem(
            r#"{"A": [[-1]], "B": [[1]], "C": [[1]],
                "options": {"penalty_rho": 5, "truncation_mode": {"manual": 0.1}}}"#,
        )
        .unwrap();
        assert_eq!(f.options.penalty_rho, 5.0);
        assert_eq!(f.options.truncation_mode, TruncationMode::Manual(0.1));
        let mut o = f.options;
        parse_override(&mut o, "truncation_mode", "l0_threshold").unwrap();
        assert_eq!(o.truncation_mode, TruncationMode::L0Threshold);
        assert!(parse_override(&mut o, "eps_star", "3").is_err());
        assert_eq!(o.eps_star, 1e-4);
        assert!(parse_override(&mut o, "bogus", "1").is_err());
    }

    #[test]
    fn round_trip_with_input_bound() {
        let text = r#"{"A": [[0.1, 1], [-2, -0.3]], "B": [[0], [1]], "C": [[1, 0]],
            "lambda": 0.1, "pattern": [[1]],
            "input_bound": {"norm": "inf", "u_max": 2.5, "x0": [1, -1]}}"#;
        let f = load_problem(text).unwrap();
        let g = load_problem(&serialize_problem(&f.problem, &f.options)).unwrap();
        assert_eq!(f.problem, g.problem);
        assert_eq!(f.options, g.options);
    }
}
