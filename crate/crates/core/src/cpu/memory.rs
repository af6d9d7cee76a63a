use std::collections::BTreeMap;
use std::hash::{Hash, Hasher};

use serde::{Deserialize, Serialize};

use crate::ir::ScalarType;

/// A scalar argument.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Value {
    Int(i64),
    Float(f64),
}

impl Value {
    pub fn ty(self) -> ScalarType {
        match self {
            Value::Int(_) => ScalarType::Int,
            Value::Float(_) => ScalarType::Float,
        }
    }

    pub(crate) fn to_bits(self) -> u64 {
        match self {
            Value::Int(v) => v as u64,
            Value::Float(v) => v.to_bits(),
        }
    }
}

/// Equality is bitwise for floats, so `NaN == NaN` and `0.0 != -0.0`.
impl PartialEq for Value {
    fn eq(&self, other: &Self) -> bool {
        self.ty() == other.ty() && self.to_bits() == other.to_bits()
    }
}

impl Eq for Value {}

impl Hash for Value {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.ty().hash(state);
        self.to_bits().hash(state);
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArrayData {
    Int(Vec<i64>),
    Float(Vec<f64>),
}

impl ArrayData {
    pub fn len(&self) -> usize {
        match self {
            ArrayData::Int(v) => v.len(),
            ArrayData::Float(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn elem(&self) -> ScalarType {
        match self {
            ArrayData::Int(_) => ScalarType::Int,
            ArrayData::Float(_) => ScalarType::Float,
        }
    }

    pub(crate) fn bits(&self, i: usize) -> u64 {
        match self {
            ArrayData::Int(v) => v[i] as u64,
            ArrayData::Float(v) => v[i].to_bits(),
        }
    }
}

/// Equality is bitwise for floats (see [`Value`]).
impl PartialEq for ArrayData {
    fn eq(&self, other: &Self) -> bool {
        self.elem() == other.elem() && self.len() == other.len() && (0..self.len()).all(|i| self.bits(i) == other.bits(i))
    }
}

impl Eq for ArrayData {}

impl Hash for ArrayData {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.elem().hash(state);
        self.len().hash(state);
        for i in 0..self.len() {
            self.bits(i).hash(state);
        }
    }
}

/// A dense row-major array.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Array {
    pub shape: Vec<usize>,
    pub data: ArrayData,
}

impl Array {
    pub fn float(shape: Vec<usize>, data: Vec<f64>) -> Self {
        Array { shape, data: ArrayData::Float(data) }
    }

    pub fn int(shape: Vec<usize>, data: Vec<i64>) -> Self {
        Array { shape, data: ArrayData::Int(data) }
    }

    pub fn zeros(elem: ScalarType, shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        let data = match elem {
            ScalarType::Int => ArrayData::Int(vec![0; n]),
            ScalarType::Float => ArrayData::Float(vec![0.0; n]),
        };
        Array { shape, data }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn elem(&self) -> ScalarType {
        self.data.elem()
    }

    /// Every element is 8 bytes wide.
    pub fn byte_size(&self) -> u64 {
        self.len() as u64 * 8
    }

    pub fn as_f64(&self) -> Option<&[f64]> {
        match &self.data {
            ArrayData::Float(v) => Some(v),
            ArrayData::Int(_) => None,
        }
    }

    pub fn as_i64(&self) -> Option<&[i64]> {
        match &self.data {
            ArrayData::Int(v) => Some(v),
            ArrayData::Float(_) => None,
        }
    }
}

/// Arguments of one invocation, keyed by parameter name.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryImage {
    pub arrays: BTreeMap<String, Array>,
    pub scalars: BTreeMap<String, Value>,
}

impl MemoryImage {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_array(mut self, name: &str, a: Array) -> Self {
        self.arrays.insert(name.to_string(), a);
        self
    }

    pub fn with_int(mut self, name: &str, v: i64) -> Self {
        self.scalars.insert(name.to_string(), Value::Int(v));
        self
    }

    pub fn with_float(mut self, name: &str, v: f64) -> Self {
        self.scalars.insert(name.to_string(), Value::Float(v));
        self
    }

    pub fn array(&self, name: &str) -> Option<&Array> {
        self.arrays.get(name)
    }

    pub fn scalar(&self, name: &str) -> Option<Value> {
        self.scalars.get(name).copied()
    }
}
