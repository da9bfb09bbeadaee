//! Canonical JSON: sorted keys, floats at 17 significant digits, no
//! insignificant whitespace, trailing newline.

use serde::Serialize;
use serde_json::Value;

pub fn to_canonical_string<T: Serialize>(value: &T) -> serde_json::Result<String> {
    let v = serde_json::to_value(value)?;
    let mut out = String::new();
    write_value(&v, &mut out);
    out.push('\n');
    Ok(out)
}

pub fn format_float(x: f64) -> String {
    if !x.is_finite() {
        // serde_json already maps non-finite floats to null; kept for direct callers.
        return "null".to_string();
    }
    if x == 0.0 {
        return "0.0".to_string();
    }
    format!("{x:.16e}")
}

fn write_value(v: &Value, out: &mut String) {
    match v {
        Value::Null => out.push_str("null"),
        Value::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Value::Number(n) => {
            if let Some(i) = n.as_i64() {
                out.push_str(&i.to_string());
            } else if let Some(u) = n.as_u64() {
                out.push_str(&u.to_string());
            } else {
                out.push_str(&format_float(n.as_f64().unwrap_or(f64::NAN)));
            }
        }
        Value::String(s) => out.push_str(&Value::String(s.clone()).to_string()),
        Value::Array(items) => {
            out.push('[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write_value(item, out);
            }
            out.push(']');
        }
        Value::Object(map) => {
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            out.push('{');
            for (i, k) in keys.into_iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                out.push_str(&Value::String(k.clone()).to_string());
                out.push(':');
                write_value(&map[k], out);
            }
            out.push('}');
        }
    }
}

/// Serde adapter for floats that may be infinite or NaN: finite values stay
/// numbers, the rest become `"Infinity"`, `"-Infinity"` or `"NaN"`.
pub mod nonfinite {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
        if x.is_finite() {
            s.serialize_f64(*x)
        } else if x.is_nan() {
            s.serialize_str("NaN")
        } else if *x > 0.0 {
            s.serialize_str("Infinity")
        } else {
            s.serialize_str("-Infinity")
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Text(String),
        }
        match Repr::deserialize(d)? {
            Repr::Num(x) => Ok(x),
            Repr::Text(t) => match t.as_str() {
                "Infinity" => Ok(f64::INFINITY),
                "-Infinity" => Ok(f64::NEG_INFINITY),
                "NaN" => Ok(f64::NAN),
                other => Err(serde::de::Error::custom(format!("expected a number, got `{other}`"))),
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use serde_json::json;

    #[derive(serde::Serialize, serde::Deserialize, Debug)]
    struct Wrapped {
        #[serde(with = "nonfinite")]
        x: f64,
    }

    #[test]
    fn nonfinite_round_trip() {
        for x in [f64::INFINITY, f64::NEG_INFINITY, 1.5] {
            let s = to_canonical_string(&Wrapped { x }).unwrap();
            assert_eq!(serde_json::from_str::<Wrapped>(&s).unwrap().x, x);
        }
        let s = to_canonical_string(&Wrapped { x: f64::NAN }).unwrap();
        assert_eq!(s, "{\"x\":\"NaN\"}\n");
        assert!(serde_json::from_str::<Wrapped>(&s).unwrap().x.is_nan());
    }

    #[test]
    fn sorts_keys_and_formats_numbers() {
        let v = json!({"b": 1, "a": [0.1, 2.5, -3], "c": {"z": null, "y": "é"}});
        let s = to_canonical_string(&v).unwrap();
        assert_eq!(
            s,
            "{\"a\":[1.0000000000000001e-1,2.5000000000000000e0,-3],\"b\":1,\"c\":{\"y\":\"é\",\"z\":null}}\n"
        );
    }

    proptest! {
        #[test]
        fn floats_round_trip(x in proptest::num::f64::NORMAL | proptest::num::f64::SUBNORMAL) {
            let s = format_float(x);
            let back: f64 = s.parse().unwrap();
            prop_assert_eq!(back, x);
        }
    }
}
