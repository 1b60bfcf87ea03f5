//! Versioned JSON map from tensor name to shape and values.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const TENSOR_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorRecord {
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorMap {
    pub version: u32,
    pub tensors: BTreeMap<String, TensorRecord>,
}

impl TensorMap {
    pub fn from_tensors(tensors: &BTreeMap<String, Tensor>) -> Self {
        TensorMap {
            version: TENSOR_FORMAT_VERSION,
            tensors: tensors
                .iter()
                .map(|(k, t)| {
                    (
                        k.clone(),
                        TensorRecord {
                            shape: t.shape().to_vec(),
                            values: t.values().to_vec(),
                        },
                    )
                })
                .collect(),
        }
    }

    pub fn to_tensors(&self) -> Result<BTreeMap<String, Tensor>> {
        if self.version != TENSOR_FORMAT_VERSION {
            return Err(Error::Data(format!(
                "unsupported tensor map version {}",
                self.version
            )));
        }
        self.tensors
            .iter()
            .map(|(k, r)| Ok((k.clone(), Tensor::new(r.shape.clone(), r.values.clone())?)))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn json_round_trip_is_bit_exact(values in prop::collection::vec(any::<f64>().prop_filter("finite", |v| v.is_finite()), 1..40)) {
            let mut m = BTreeMap::new();
            m.insert("w".to_string(), Tensor::new(vec![values.len()], values.clone()).unwrap());
            let text = serde_json::to_string(&TensorMap::from_tensors(&m)).unwrap();
            let back: TensorMap = serde_json::from_str(&text).unwrap();
            let t = back.to_tensors().unwrap();
            let got = t["w"].values();
            for (a, b) in got.iter().zip(&values) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }

    #[test]
    fn unknown_version_rejected() {
        let m = TensorMap {
            version: 99,
            tensors: BTreeMap::new(),
        };
        assert!(m.to_tensors().is_err());
    }
}
