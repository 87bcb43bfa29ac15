//! Number formatting for CSV/JSON outputs: 9 significant digits plus an
//! exact hexadecimal float.

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

/// Decimal with 9 significant digits in scientific notation.
pub fn fmt_sig(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.8e}")
    } else {
        format!("{x}")
    }
}

/// C99 hexadecimal float literal, exact round trip (`0x1.8p+1` for 3).
pub fn hex(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    let sign = if x.is_sign_negative() { "-" } else { "" };
    let bits = x.to_bits();
    let exp = ((bits >> 52) & 0x7ff) as i64;
    let mant = bits & ((1u64 << 52) - 1);
    if exp == 0 && mant == 0 {
        return format!("{sign}0x0p+0");
    }
    let (lead, e) = if exp == 0 { (0, -1022) } else { (1, exp - 1023) };
    let mut digits = format!("{mant:013x}");
    while digits.ends_with('0') {
        digits.pop();
    }
    if digits.is_empty() {
        format!("{sign}0x{lead}p{e:+}")
    } else {
        format!("{sign}0x{lead}.{digits}p{e:+}")
    }
}

/// Parses the output of [`hex`].
pub fn parse_hex(s: &str) -> Option<f64> {
    let (neg, s) = match s.strip_prefix('-') {
        Some(r) => (true, r),
        None => (false, s),
    };
    let s = s.strip_prefix("0x")?;
    let (m, e) = s.split_once('p')?;
    let e: i32 = e.parse().ok()?;
    let (lead, frac) = m.split_once('.').unwrap_or((m, ""));
    let mut v = u64::from_str_radix(lead, 16).ok()? as f64;
    let mut scale = 1.0 / 16.0;
    for c in frac.chars() {
        v += c.to_digit(16)? as f64 * scale;
        scale /= 16.0;
    }
    let v = v * 2f64.powi(e);
    Some(if neg { -v } else { v })
}

/// A number rendered both ways.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Num {
    pub value: String,
    pub hex: String,
}

impl From<f64> for Num {
    fn from(x: f64) -> Self {
        Self { value: fmt_sig(x), hex: hex(x) }
    }
}

/// Pretty JSON text.
pub fn to_json<T: Serialize>(v: &T) -> crate::Result<String> {
    serde_json::to_string_pretty(v).map_err(|e| crate::Error::Parse(e.to_string()))
}

/// Replaces every non-integer JSON number by `{"value": <9 digits>, "hex": <exact>}`.
pub fn annotate(v: &Value) -> Value {
    match v {
        Value::Number(x) if x.is_f64() => {
            let f = x.as_f64().unwrap_or(f64::NAN);
            let mut m = Map::new();
            m.insert("value".into(), Value::String(fmt_sig(f)));
            m.insert("hex".into(), Value::String(hex(f)));
            Value::Object(m)
        }
        Value::Array(a) => Value::Array(a.iter().map(annotate).collect()),
        Value::Object(o) => Value::Object(o.iter().map(|(k, x)| (k.clone(), annotate(x))).collect()),
        other => other.clone(),
    }
}

/// Inverse of [`annotate`], restoring each number exactly from its hex field.
pub fn strip(v: &Value) -> Value {
    match v {
        Value::Object(o) if o.len() == 2 && o.contains_key("value") => {
            match o.get("hex").and_then(Value::as_str).and_then(parse_hex) {
                Some(f) => serde_json::Number::from_f64(f).map_or(Value::Null, Value::Number),
                None => Value::Object(o.iter().map(|(k, x)| (k.clone(), strip(x))).collect()),
            }
        }
        Value::Array(a) => Value::Array(a.iter().map(strip).collect()),
        Value::Object(o) => Value::Object(o.iter().map(|(k, x)| (k.clone(), strip(x))).collect()),
        other => other.clone(),
    }
}

fn json_err(e: serde_json::Error) -> crate::Error {
    crate::Error::Parse(e.to_string())
}

/// `{"config": ..., "result": ...}` with annotated numbers.
pub fn document<C: Serialize, T: Serialize>(config: &C, result: &T) -> crate::Result<String> {
    let mut m = Map::new();
    m.insert("config".into(), annotate(&serde_json::to_value(config).map_err(json_err)?));
    m.insert("result".into(), annotate(&serde_json::to_value(result).map_err(json_err)?));
    serde_json::to_string_pretty(&Value::Object(m)).map_err(json_err)
}

/// Reads the `result` of a [`document`] back.
pub fn load_result<T: DeserializeOwned>(text: &str) -> crate::Result<T> {
    let v: Value = serde_json::from_str(text).map_err(json_err)?;
    let r = v.get("result").ok_or_else(|| crate::Error::Parse("missing result".into()))?;
    serde_json::from_value(strip(r)).map_err(json_err)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn documents_round_trip_exactly() {
        #[derive(Serialize, serde::Deserialize, PartialEq, Debug)]
        struct R {
            k: usize,
            x: f64,
            v: Vec<f64>,
            name: String,
        }
        let r = R { k: 3, x: 0.1 + 0.2, v: vec![1.0, -2.5e-300, 18.919104], name: "a".into() };
        let text = document(&"cfg", &r).unwrap();
        assert!(text.contains("\"value\": \"3.00000000e-1\""));
        assert_eq!(load_result::<R>(&text).unwrap(), r);
    }

    #[test]
    fn hex_examples() {
        assert_eq!(hex(1.0), "0x1p+0");
        assert_eq!(hex(3.0), "0x1.8p+1");
        assert_eq!(hex(-0.5), "-0x1p-1");
        assert_eq!(hex(0.0), "0x0p+0");
        assert_eq!(hex(std::f64::consts::PI), "0x1.921fb54442d18p+1");
        assert_eq!(hex(f64::MIN_POSITIVE / 2.0), "0x0.8p-1022");
    }

    #[test]
    fn hex_round_trips() {
        for x in [1.0, -2.5e-300, 18.919104, 1e300, f64::MIN_POSITIVE / 3.0, 123456.789] {
            assert_eq!(parse_hex(&hex(x)), Some(x), "{x}");
        }
    }

    #[test]
    fn nine_significant_digits() {
        assert_eq!(fmt_sig(18.9191040123), "1.89191040e1");
        assert_eq!(fmt_sig(-0.000123456789), "-1.23456789e-4");
    }
}
