//! Conversions between ndarray tensors and the nested-array JSON layout.

use ndarray::{Array1, Array2, Array3, Array4};

use crate::error::{Error, Result};

pub type Nested2 = Vec<Vec<f64>>;
pub type Nested3 = Vec<Vec<Vec<f64>>>;
pub type Nested4 = Vec<Vec<Vec<Vec<f64>>>>;

pub fn to_nested2(a: &Array2<f64>) -> Nested2 {
    a.outer_iter().map(|r| r.to_vec()).collect()
}

pub fn to_nested3(a: &Array3<f64>) -> Nested3 {
    a.outer_iter().map(|m| m.outer_iter().map(|r| r.to_vec()).collect()).collect()
}

pub fn to_nested4(a: &Array4<f64>) -> Nested4 {
    a.outer_iter()
        .map(|t| t.outer_iter().map(|m| m.outer_iter().map(|r| r.to_vec()).collect()).collect())
        .collect()
}

fn ragged(what: &str) -> Error {
    Error::shape(format!("{what}: ragged nested array"))
}

pub fn from_nested1(v: &[f64], len: usize, what: &str) -> Result<Array1<f64>> {
    if v.len() != len {
        return Err(Error::shape(format!("{what}: expected length {len}, got {}", v.len())));
    }
    Ok(Array1::from(v.to_vec()))
}

pub fn from_nested2(v: &Nested2, what: &str) -> Result<Array2<f64>> {
    let d0 = v.len();
    let d1 = v.first().map_or(0, |r| r.len());
    let mut flat = Vec::with_capacity(d0 * d1);
    for row in v {
        if row.len() != d1 {
            return Err(ragged(what));
        }
        flat.extend_from_slice(row);
    }
    Array2::from_shape_vec((d0, d1), flat).map_err(|_| ragged(what))
}

pub fn from_nested3(v: &Nested3, what: &str) -> Result<Array3<f64>> {
    let d0 = v.len();
    let d1 = v.first().map_or(0, |m| m.len());
    let d2 = v.first().and_then(|m| m.first()).map_or(0, |r| r.len());
    let mut flat = Vec::with_capacity(d0 * d1 * d2);
    for m in v {
        if m.len() != d1 {
            return Err(ragged(what));
        }
        for r in m {
            if r.len() != d2 {
                return Err(ragged(what));
            }
            flat.extend_from_slice(r);
        }
    }
    Array3::from_shape_vec((d0, d1, d2), flat).map_err(|_| ragged(what))
}

pub fn from_nested4(v: &Nested4, what: &str) -> Result<Array4<f64>> {
    let d0 = v.len();
    let d1 = v.first().map_or(0, |t| t.len());
    let d2 = v.first().and_then(|t| t.first()).map_or(0, |m| m.len());
    let d3 = v.first().and_then(|t| t.first()).and_then(|m| m.first()).map_or(0, |r| r.len());
    let mut flat = Vec::with_capacity(d0 * d1 * d2 * d3);
    for t in v {
        if t.len() != d1 {
            return Err(ragged(what));
        }
        for m in t {
            if m.len() != d2 {
                return Err(ragged(what));
            }
            for r in m {
                if r.len() != d3 {
                    return Err(ragged(what));
                }
                flat.extend_from_slice(r);
            }
        }
    }
    Array4::from_shape_vec((d0, d1, d2, d3), flat).map_err(|_| ragged(what))
}
