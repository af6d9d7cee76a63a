use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

/// An integer affine form `constant + sum(coef * name)`.
///
/// Terms with a zero coefficient are never stored, so two forms that denote
/// the same function compare equal.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "RawAffine")]
pub struct AffineExpr {
    constant: i64,
    terms: BTreeMap<String, i64>,
}

#[derive(Deserialize)]
struct RawAffine {
    #[serde(default)]
    constant: i64,
    #[serde(default)]
    terms: BTreeMap<String, i64>,
}

impl From<RawAffine> for AffineExpr {
    fn from(raw: RawAffine) -> Self {
        let mut e = AffineExpr::constant(raw.constant);
        for (name, coef) in raw.terms {
            e.add_term(&name, coef);
        }
        e
    }
}

impl AffineExpr {
    pub fn constant(c: i64) -> Self {
        AffineExpr {
            constant: c,
            terms: BTreeMap::new(),
        }
    }

    pub fn var(name: &str) -> Self {
        Self::term(name, 1)
    }

    pub fn term(name: &str, coef: i64) -> Self {
        let mut e = Self::constant(0);
        e.add_term(name, coef);
        e
    }

    pub fn constant_part(&self) -> i64 {
        self.constant
    }

    pub fn terms(&self) -> impl Iterator<Item = (&str, i64)> {
        self.terms.iter().map(|(k, v)| (k.as_str(), *v))
    }

    pub fn coeff(&self, name: &str) -> i64 {
        self.terms.get(name).copied().unwrap_or(0)
    }

    pub fn vars(&self) -> impl Iterator<Item = &str> {
        self.terms.keys().map(String::as_str)
    }

    pub fn mentions(&self, name: &str) -> bool {
        self.terms.contains_key(name)
    }

    /// The value when the form has no variable terms.
    pub fn as_constant(&self) -> Option<i64> {
        self.terms.is_empty().then_some(self.constant)
    }

    pub fn add_term(&mut self, name: &str, coef: i64) {
        let slot = self.terms.entry(name.to_string()).or_insert(0);
        *slot = slot.wrapping_add(coef);
        if *slot == 0 {
            self.terms.remove(name);
        }
    }

    pub fn add_constant(&mut self, c: i64) {
        self.constant = self.constant.wrapping_add(c);
    }

    pub fn plus(&self, other: &AffineExpr) -> AffineExpr {
        let mut out = self.clone();
        out.add_constant(other.constant);
        for (name, coef) in &other.terms {
            out.add_term(name, *coef);
        }
        out
    }

    pub fn minus(&self, other: &AffineExpr) -> AffineExpr {
        self.plus(&other.scaled(-1))
    }

    pub fn scaled(&self, k: i64) -> AffineExpr {
        let mut out = AffineExpr::constant(self.constant.wrapping_mul(k));
        for (name, coef) in &self.terms {
            out.add_term(name, coef.wrapping_mul(k));
        }
        out
    }

    /// Replaces `name` by `value` everywhere it occurs.
    pub fn substitute(&self, name: &str, value: &AffineExpr) -> AffineExpr {
        match self.terms.get(name) {
            None => self.clone(),
            Some(&coef) => {
                let mut rest = self.clone();
                rest.terms.remove(name);
                rest.plus(&value.scaled(coef))
            }
        }
    }

    /// Replaces every variable for which `lookup` yields a value.
    pub fn bind(&self, lookup: &dyn Fn(&str) -> Option<i64>) -> AffineExpr {
        let mut out = AffineExpr::constant(self.constant);
        for (name, coef) in &self.terms {
            match lookup(name) {
                Some(v) => out.add_constant(coef.wrapping_mul(v)),
                None => out.add_term(name, *coef),
            }
        }
        out
    }

    /// Evaluates the form; `None` if a variable is unbound.
    pub fn eval(&self, lookup: &dyn Fn(&str) -> Option<i64>) -> Option<i64> {
        let mut acc = self.constant;
        for (name, coef) in &self.terms {
            acc = acc.wrapping_add(coef.wrapping_mul(lookup(name)?));
        }
        Some(acc)
    }
}

impl fmt::Display for AffineExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        for (name, &coef) in &self.terms {
            let mag = coef.unsigned_abs();
            if first {
                if coef < 0 {
                    f.write_str("-")?;
                }
            } else if coef < 0 {
                f.write_str(" - ")?;
            } else {
                f.write_str(" + ")?;
            }
            if mag == 1 {
                write!(f, "{name}")?;
            } else {
                write!(f, "{mag}*{name}")?;
            }
            first = false;
        }
        if first {
            write!(f, "{}", self.constant)
        } else if self.constant > 0 {
            write!(f, " + {}", self.constant)
        } else if self.constant < 0 {
            write!(f, " - {}", self.constant.unsigned_abs())
        } else {
            Ok(())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_terms_are_dropped() {
        let mut e = AffineExpr::var("i");
        e.add_term("i", -1);
        assert_eq!(e, AffineExpr::constant(0));
        assert_eq!(e.as_constant(), Some(0));
    }

    #[test]
    fn substitute_and_eval() {
        let e = AffineExpr::term("i", 2).plus(&AffineExpr::var("n")).plus(&AffineExpr::constant(-1));
        let s = e.substitute("i", &AffineExpr::var("j").plus(&AffineExpr::constant(3)));
        assert_eq!(s.coeff("j"), 2);
        assert_eq!(s.constant_part(), 5);
        let v = s.eval(&|n| match n {
            "j" => Some(1),
            "n" => Some(10),
            _ => None,
        });
        assert_eq!(v, Some(17));
        assert_eq!(e.eval(&|_| None), None);
    }

    #[test]
    fn display_forms() {
        let e = AffineExpr::term("i", 2).plus(&AffineExpr::term("j", -1)).plus(&AffineExpr::constant(-3));
        assert_eq!(e.to_string(), "2*i - j - 3");
        assert_eq!(AffineExpr::term("k", -1).to_string(), "-k");
        assert_eq!(AffineExpr::constant(-4).to_string(), "-4");
    }
}
