//! The embedded script engine: a Rhai engine with only arithmetic, logic,
//! math, arrays, maps and strings. No module loading, no clock, no I/O.

use std::sync::OnceLock;
use std::time::Instant;

use rhai::packages::{
    BasicArrayPackage, BasicMapPackage, BasicMathPackage, CorePackage, LogicPackage, Package,
};
use rhai::{Array, Dynamic, Engine, Scope, Shared, AST};
use rhai::Module;
use serde_json::{Map, Value};

pub const ENTRY_POINT: &str = "custom_code";

/// Identifiers naming facilities custom code may not use, with the
/// capability class they belong to.
const FORBIDDEN: &[(&str, &str)] = &[
    ("open", "file"),
    ("open_file", "file"),
    ("read_file", "file"),
    ("write_file", "file"),
    ("remove_file", "file"),
    ("File", "file"),
    ("fs", "file"),
    ("net", "network"),
    ("http", "network"),
    ("fetch", "network"),
    ("socket", "network"),
    ("connect", "network"),
    ("tcp", "network"),
    ("udp", "network"),
    ("spawn", "process"),
    ("exec", "process"),
    ("system", "process"),
    ("command", "process"),
    ("process", "process"),
    ("fork", "process"),
    ("env", "environment"),
    ("getenv", "environment"),
    ("setenv", "environment"),
    ("set_env", "environment"),
    ("env_var", "environment"),
    ("set_time", "clock"),
    ("set_clock", "clock"),
    ("settimeofday", "clock"),
    ("timestamp", "clock"),
    ("sleep", "clock"),
    ("import", "import"),
    ("include", "import"),
    ("require", "import"),
    ("eval", "import"),
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CapabilityHit {
    pub identifier: String,
    pub capability: &'static str,
    pub offset: usize,
}

/// Blanks out comments and string/char literals so that only code tokens
/// remain. Offsets are preserved.
fn code_only(source: &str) -> Vec<u8> {
    let b = source.as_bytes();
    let mut out = b.to_vec();
    let mut i = 0;
    while i < b.len() {
        match b[i] {
            b'/' if b.get(i + 1) == Some(&b'/') => {
                while i < b.len() && b[i] != b'\n' {
                    out[i] = b' ';
                    i += 1;
                }
            }
            b'/' if b.get(i + 1) == Some(&b'*') => {
                let mut depth = 0usize;
                while i < b.len() {
                    if b[i] == b'/' && b.get(i + 1) == Some(&b'*') {
                        depth += 1;
                        out[i] = b' ';
                        out[i + 1] = b' ';
                        i += 2;
                    } else if b[i] == b'*' && b.get(i + 1) == Some(&b'/') {
                        depth -= 1;
                        out[i] = b' ';
                        out[i + 1] = b' ';
                        i += 2;
                        if depth == 0 {
                            break;
                        }
                    } else {
                        out[i] = b' ';
                        i += 1;
                    }
                }
            }
            quote @ (b'"' | b'`' | b'\'') => {
                out[i] = b' ';
                i += 1;
                while i < b.len() && b[i] != quote {
                    if b[i] == b'\\' && quote != b'`' {
                        out[i] = b' ';
                        i += 1;
                        if i >= b.len() {
                            break;
                        }
                    }
                    out[i] = b' ';
                    i += 1;
                }
                if i < b.len() {
                    out[i] = b' ';
                    i += 1;
                }
            }
            _ => i += 1,
        }
    }
    out
}

/// Every use of a forbidden identifier, in source order.
pub fn capability_scan(source: &str) -> Vec<CapabilityHit> {
    let code = code_only(source);
    let mut hits = Vec::new();
    let mut i = 0;
    while i < code.len() {
        let c = code[i];
        if c.is_ascii_alphabetic() || c == b'_' {
            let start = i;
            while i < code.len() && (code[i].is_ascii_alphanumeric() || code[i] == b'_') {
                i += 1;
            }
            let word = &source[start..i];
            if let Some((_, class)) = FORBIDDEN.iter().find(|(name, _)| *name == word) {
                hits.push(CapabilityHit {
                    identifier: word.to_owned(),
                    capability: class,
                    offset: start,
                });
            }
        } else if c.is_ascii_digit() {
            while i < code.len() && (code[i].is_ascii_alphanumeric() || code[i] == b'_') {
                i += 1;
            }
        } else {
            i += 1;
        }
    }
    hits
}

/// Building the packages dominates engine start-up, so they are built once
/// per process and shared.
fn packages() -> &'static [Shared<Module>] {
    static PACKAGES: OnceLock<Vec<Shared<Module>>> = OnceLock::new();
    PACKAGES.get_or_init(|| {
        vec![
            CorePackage::new().as_shared_module(),
            LogicPackage::new().as_shared_module(),
            BasicMathPackage::new().as_shared_module(),
            BasicArrayPackage::new().as_shared_module(),
            BasicMapPackage::new().as_shared_module(),
        ]
    })
}

pub(crate) fn new_engine(params: &Map<String, Value>, deadline: Option<Instant>) -> Engine {
    let mut engine = Engine::new_raw();
    for package in packages() {
        engine.register_global_module(package.clone());
    }
    engine
        .set_max_call_levels(64)
        .set_max_expr_depths(128, 64)
        .set_max_string_size(1 << 20)
        .set_max_array_size(1 << 22)
        .set_max_map_size(1 << 16);
    engine.on_print(|_| {});
    engine.on_debug(|_, _, _| {});

    let params = rhai::serde::to_dynamic(Value::Object(params.clone())).unwrap_or(Dynamic::UNIT);
    let params = params.into_read_only();
    engine.register_fn("params", move || params.clone());

    if let Some(deadline) = deadline {
        engine.on_progress(move |_| {
            if Instant::now() >= deadline {
                Some(Dynamic::from("deadline exceeded"))
            } else {
                None
            }
        });
    }
    engine
}

pub(crate) fn compile(engine: &Engine, source: &str) -> Result<AST, String> {
    engine.compile(source).map_err(|e| e.to_string())
}

/// Arity of each `custom_code` definition in the script.
pub(crate) fn entry_arities(ast: &AST) -> Vec<usize> {
    ast.iter_functions()
        .filter(|f| f.name == ENTRY_POINT)
        .map(|f| f.params.len())
        .collect()
}

pub(crate) fn call_entry(engine: &Engine, ast: &AST, input: &[f64]) -> Result<Dynamic, String> {
    let arr: Array = input.iter().map(|&v| Dynamic::from_float(v)).collect();
    engine
        .call_fn::<Dynamic>(&mut Scope::new(), ast, ENTRY_POINT, (arr,))
        .map_err(|e| e.to_string())
}

/// Converts a script value to JSON for transport from the sandbox process.
/// Finite numbers become JSON numbers, non-finite floats the strings `NaN`,
/// `inf` or `-inf`, and anything else `{"type": <name>}`. The receiver
/// decides what is acceptable.
pub(crate) fn to_transport(value: &Dynamic) -> Value {
    if let Ok(f) = value.as_float() {
        return float_to_transport(f);
    }
    if let Ok(i) = value.as_int() {
        return Value::from(i);
    }
    if value.is_array() {
        let arr = value.read_lock::<Array>().expect("checked array");
        return Value::Array(arr.iter().map(to_transport).collect());
    }
    serde_json::json!({ "type": value.type_name() })
}

fn float_to_transport(f: f64) -> Value {
    if f.is_nan() {
        Value::from("NaN")
    } else if f.is_infinite() {
        Value::from(if f > 0.0 { "inf" } else { "-inf" })
    } else {
        Value::from(f)
    }
}

fn describe(value: &Value) -> String {
    match value {
        Value::String(s) if s == "NaN" || s == "inf" || s == "-inf" => {
            format!("non-finite value {s}")
        }
        Value::Object(o) => match o.get("type").and_then(Value::as_str) {
            Some(t) => format!("a value of type {t}"),
            None => "an object".into(),
        },
        Value::Array(_) => "a list".into(),
        Value::Null => "nothing".into(),
        other => format!("{other}"),
    }
}

/// The return-type rule: a finite number, or a list of finite numbers.
pub(crate) fn check_return(value: &Value) -> Result<crate::envelope::Payload, String> {
    use crate::envelope::Payload;
    match value {
        Value::Number(n) => n
            .as_f64()
            .filter(|f| f.is_finite())
            .map(Payload::Scalar)
            .ok_or_else(|| "returned a non-finite number".to_owned()),
        Value::Array(items) => {
            let mut out = Vec::with_capacity(items.len());
            for (i, item) in items.iter().enumerate() {
                match item.as_f64() {
                    Some(f) if f.is_finite() => out.push(f),
                    _ => {
                        return Err(format!(
                            "element {i} of the returned list is {}, expected a finite number",
                            describe(item)
                        ))
                    }
                }
            }
            Ok(Payload::Vector(out))
        }
        other => Err(format!(
            "returned {}, expected a number or a list of numbers",
            describe(other)
        )),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envelope::Payload;

    #[test]
    fn scan_finds_forbidden_identifiers() {
        let hits = capability_scan("fn custom_code(x) { let f = open_file(\"/etc/passwd\"); x }");
        assert_eq!(hits.len(), 1);
        assert_eq!(hits[0].identifier, "open_file");
        assert_eq!(hits[0].capability, "file");
        let hits = capability_scan("import \"fs\" as fs;\nfn custom_code(x) { x }");
        let names: Vec<_> = hits.iter().map(|h| h.identifier.as_str()).collect();
        assert_eq!(names, ["import", "fs"]);
    }

    #[test]
    fn scan_ignores_comments_strings_and_substrings() {
        let src = r#"
            // open the file? no: this is a comment mentioning spawn and env
            /* nested /* exec */ still comment: system */
            fn custom_code(x) {
                let label = "open socket \" env";
                let environment = 3;   // not "env"
                let opener = x.len();  // not "open"
                x
            }
        "#;
        assert_eq!(capability_scan(src), vec![]);
    }

    #[test]
    fn transport_encoding() {
        assert_eq!(to_transport(&Dynamic::from_float(1.5)), Value::from(1.5));
        assert_eq!(to_transport(&Dynamic::from_float(f64::NAN)), Value::from("NaN"));
        assert_eq!(to_transport(&Dynamic::from_int(3)), Value::from(3));
        let s = to_transport(&Dynamic::from("hello"));
        assert_eq!(s["type"], "string");
    }

    #[test]
    fn return_rule() {
        assert_eq!(check_return(&Value::from(4.0)), Ok(Payload::Scalar(4.0)));
        assert_eq!(
            check_return(&serde_json::json!([1, 2.5])),
            Ok(Payload::Vector(vec![1.0, 2.5]))
        );
        assert!(check_return(&Value::from("NaN")).unwrap_err().contains("non-finite"));
        assert!(check_return(&serde_json::json!({"type": "string"})).unwrap_err().contains("string"));
        assert!(check_return(&serde_json::json!([1, "inf"])).is_err());
        assert!(check_return(&serde_json::json!([[1]])).is_err());
    }

    #[test]
    fn engine_runs_entry_point_with_params() {
        let mut params = Map::new();
        params.insert("scale".into(), Value::from(2.0));
        let engine = new_engine(&params, None);
        let ast = compile(
            &engine,
            "fn custom_code(x) { let s = params().scale; x.map(|v| v * s) }",
        )
        .unwrap();
        assert_eq!(entry_arities(&ast), vec![1]);
        let out = call_entry(&engine, &ast, &[1.0, 2.0]).unwrap();
        assert_eq!(to_transport(&out), serde_json::json!([2.0, 4.0]));
    }

    #[test]
    fn engine_has_no_clock_or_files() {
        let engine = new_engine(&Map::new(), None);
        let ast = compile(&engine, "fn custom_code(x) { timestamp(); x }").unwrap();
        assert!(call_entry(&engine, &ast, &[1.0]).is_err());
    }

    #[test]
    fn deadline_stops_loops() {
        let engine = new_engine(&Map::new(), Some(Instant::now() + std::time::Duration::from_millis(50)));
        let ast = compile(&engine, "fn custom_code(x) { loop { } }").unwrap();
        let started = Instant::now();
        assert!(call_entry(&engine, &ast, &[1.0]).is_err());
        assert!(started.elapsed() < std::time::Duration::from_secs(2));
    }
}
