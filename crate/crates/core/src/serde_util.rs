//! Complex matrices on the wire: row-major nested arrays of `[re, im]`.

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::linalg::{c64, CMatrix, CVector};

pub type RawMatrix = Vec<Vec<[f64; 2]>>;

pub fn matrix_to_raw(m: &CMatrix) -> RawMatrix {
    (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| [m[(i, j)].re, m[(i, j)].im]).collect()).collect()
}

pub fn matrix_from_raw(raw: &RawMatrix) -> Result<CMatrix, String> {
    let rows = raw.len();
    let cols = raw.first().map_or(0, Vec::len);
    if raw.iter().any(|r| r.len() != cols) {
        return Err("ragged matrix".into());
    }
    Ok(CMatrix::from_fn(rows, cols, |i, j| c64(raw[i][j][0], raw[i][j][1])))
}

pub mod matrix {
    use super::*;

    pub fn serialize<S: Serializer>(m: &CMatrix, s: S) -> Result<S::Ok, S::Error> {
        matrix_to_raw(m).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<CMatrix, D::Error> {
        let raw = RawMatrix::deserialize(d)?;
        matrix_from_raw(&raw).map_err(D::Error::custom)
    }
}

pub mod matrix_list {
    use super::*;

    pub fn serialize<S: Serializer>(ms: &[CMatrix], s: S) -> Result<S::Ok, S::Error> {
        ms.iter().map(matrix_to_raw).collect::<Vec<_>>().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<CMatrix>, D::Error> {
        let raw = Vec::<RawMatrix>::deserialize(d)?;
        raw.iter().map(|r| matrix_from_raw(r).map_err(D::Error::custom)).collect()
    }
}

pub mod vector {
    use super::*;

    pub fn serialize<S: Serializer>(v: &CVector, s: S) -> Result<S::Ok, S::Error> {
        v.iter().map(|z| [z.re, z.im]).collect::<Vec<_>>().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<CVector, D::Error> {
        let raw = Vec::<[f64; 2]>::deserialize(d)?;
        Ok(CVector::from_iterator(raw.len(), raw.iter().map(|z| c64(z[0], z[1]))))
    }
}
