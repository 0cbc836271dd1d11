//! JSON with stable key order and 17-significant-digit floats.

use std::io;

use serde::Serialize;
use serde_json::ser::{Formatter, PrettyFormatter};
use serde_json::{Map, Value};

use crate::error::{LabError, LabResult};

/// Wraps another formatter, writing every float as `d.dddddddddddddddde±x`.
pub struct Sig17<F>(pub F);

fn write_sig17<W: ?Sized + io::Write>(w: &mut W, v: f64) -> io::Result<()> {
    write!(w, "{v:.16e}")
}

macro_rules! delegate {
    ($($name:ident),*) => {$(
        fn $name<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
            self.0.$name(w)
        }
    )*};
}

macro_rules! delegate_first {
    ($($name:ident),*) => {$(
        fn $name<W: ?Sized + io::Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
            self.0.$name(w, first)
        }
    )*};
}

impl<F: Formatter> Formatter for Sig17<F> {
    delegate!(begin_array, end_array, end_array_value, begin_object, end_object, begin_object_value, end_object_value);
    delegate_first!(begin_array_value, begin_object_key);

    fn write_f64<W: ?Sized + io::Write>(&mut self, w: &mut W, v: f64) -> io::Result<()> {
        write_sig17(w, v)
    }

    fn write_f32<W: ?Sized + io::Write>(&mut self, w: &mut W, v: f32) -> io::Result<()> {
        write_sig17(w, f64::from(v))
    }
}

struct Compact;
impl Formatter for Compact {}

fn write_value<F: Formatter>(value: &Value, formatter: F) -> String {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, Sig17(formatter));
    value.serialize(&mut ser).expect("serialising a Value into memory cannot fail");
    String::from_utf8(buf).expect("serde_json emits UTF-8")
}

pub fn to_pretty(value: &Value) -> String {
    let mut s = write_value(value, PrettyFormatter::with_indent(b"  "));
    s.push('\n');
    s
}

pub fn to_line(value: &Value) -> String {
    write_value(value, Compact)
}

/// Finite floats become numbers; infinities and NaN become the strings
/// `"inf"`, `"-inf"` and `"nan"`.
pub fn num(v: f64) -> Value {
    match serde_json::Number::from_f64(v) {
        Some(n) => Value::Number(n),
        None if v.is_nan() => Value::String("nan".into()),
        None if v > 0.0 => Value::String("inf".into()),
        None => Value::String("-inf".into()),
    }
}

pub fn opt_num(v: Option<f64>) -> Value {
    v.map(num).unwrap_or(Value::Null)
}

pub fn nums(v: &[f64]) -> Value {
    Value::Array(v.iter().copied().map(num).collect())
}

pub fn ints(v: &[usize]) -> Value {
    Value::Array(v.iter().map(|&i| Value::from(i)).collect())
}

/// Builder for an object whose keys keep insertion order.
#[derive(Default)]
pub struct Obj(Map<String, Value>);

impl Obj {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn put(mut self, key: &str, v: impl Into<Value>) -> Self {
        self.0.insert(key.to_string(), v.into());
        self
    }

    pub fn build(self) -> Value {
        Value::Object(self.0)
    }
}

impl From<Obj> for Value {
    fn from(o: Obj) -> Value {
        o.build()
    }
}

pub fn parse(text: &str, path: &str) -> LabResult<Value> {
    serde_json::from_str(text).map_err(|e| LabError::Format {
        path: path.to_string(),
        line: e.line(),
        reason: e.to_string(),
    })
}

/// Typed field access with the document path and field name in every error.
#[derive(Clone, Copy)]
pub struct Read<'a> {
    pub value: &'a Value,
    pub path: &'a str,
    pub at: &'a str,
}

impl<'a> Read<'a> {
    pub fn new(value: &'a Value, path: &'a str) -> Self {
        Self { value, path, at: "" }
    }

    fn err(&self, field: &str, reason: impl Into<String>) -> LabError {
        let full = if self.at.is_empty() { field.to_string() } else { format!("{}.{field}", self.at) };
        LabError::schema(self.path, full, reason)
    }

    pub fn field(&self, key: &str) -> LabResult<&'a Value> {
        self.value.get(key).ok_or_else(|| self.err(key, "missing"))
    }

    pub fn child(&self, key: &'a str) -> LabResult<Read<'a>> {
        Ok(Read { value: self.field(key)?, path: self.path, at: key })
    }

    pub fn value_f64(&self, field: &str, v: &Value) -> LabResult<f64> {
        match v {
            Value::Number(n) => n.as_f64().ok_or_else(|| self.err(field, "not a float")),
            Value::String(s) if s == "inf" => Ok(f64::INFINITY),
            Value::String(s) if s == "-inf" => Ok(f64::NEG_INFINITY),
            Value::String(s) if s == "nan" => Ok(f64::NAN),
            _ => Err(self.err(field, "expected a number")),
        }
    }

    pub fn f64(&self, key: &str) -> LabResult<f64> {
        self.value_f64(key, self.field(key)?)
    }

    pub fn opt_f64(&self, key: &str) -> LabResult<Option<f64>> {
        match self.field(key)? {
            Value::Null => Ok(None),
            v => self.value_f64(key, v).map(Some),
        }
    }

    pub fn usize(&self, key: &str) -> LabResult<usize> {
        self.value_usize(key, self.field(key)?)
    }

    pub fn value_usize(&self, field: &str, v: &Value) -> LabResult<usize> {
        v.as_u64()
            .and_then(|n| usize::try_from(n).ok())
            .ok_or_else(|| self.err(field, "expected a nonnegative integer"))
    }

    pub fn u64(&self, key: &str) -> LabResult<u64> {
        self.field(key)?.as_u64().ok_or_else(|| self.err(key, "expected a nonnegative integer"))
    }

    pub fn bool(&self, key: &str) -> LabResult<bool> {
        self.field(key)?.as_bool().ok_or_else(|| self.err(key, "expected a boolean"))
    }

    pub fn str(&self, key: &str) -> LabResult<&'a str> {
        self.field(key)?.as_str().ok_or_else(|| self.err(key, "expected a string"))
    }

    pub fn parsed<T>(&self, key: &str, parse: fn(&str) -> Option<T>) -> LabResult<T> {
        let s = self.str(key)?;
        parse(s).ok_or_else(|| self.err(key, format!("unknown value `{s}`")))
    }

    pub fn array(&self, key: &str) -> LabResult<&'a Vec<Value>> {
        self.field(key)?.as_array().ok_or_else(|| self.err(key, "expected an array"))
    }

    pub fn items(&self, key: &'a str) -> LabResult<Vec<Read<'a>>> {
        Ok(self.array(key)?.iter().map(|v| Read { value: v, path: self.path, at: key }).collect())
    }

    pub fn f64s(&self, key: &str) -> LabResult<Vec<f64>> {
        self.array(key)?.iter().map(|v| self.value_f64(key, v)).collect()
    }

    pub fn opt_f64s(&self, key: &str) -> LabResult<Vec<Option<f64>>> {
        self.array(key)?
            .iter()
            .map(|v| if v.is_null() { Ok(None) } else { self.value_f64(key, v).map(Some) })
            .collect()
    }

    pub fn usizes(&self, key: &str) -> LabResult<Vec<usize>> {
        self.array(key)?.iter().map(|v| self.value_usize(key, v)).collect()
    }

    pub fn f64_rows(&self, key: &str) -> LabResult<Vec<Vec<f64>>> {
        self.array(key)?
            .iter()
            .map(|row| {
                row.as_array()
                    .ok_or_else(|| self.err(key, "expected an array of arrays"))?
                    .iter()
                    .map(|v| self.value_f64(key, v))
                    .collect()
            })
            .collect()
    }
}
