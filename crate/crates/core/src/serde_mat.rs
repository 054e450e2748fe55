//! Serialize matrices as arrays of rows.

use nalgebra::DMatrix;
use serde::ser::{SerializeSeq, Serializer};

pub fn rows<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
    let mut seq = s.serialize_seq(Some(m.nrows()))?;
    for i in 0..m.nrows() {
        let row: Vec<f64> = m.row(i).iter().copied().collect();
        seq.serialize_element(&row)?;
    }
    seq.end()
}

pub fn opt_rows<S: Serializer>(m: &Option<DMatrix<f64>>, s: S) -> Result<S::Ok, S::Error> {
    match m {
        Some(m) => rows(m, s),
        None => s.serialize_none(),
    }
}
