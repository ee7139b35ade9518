//! Flat parameter storage with a named segment map.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};

pub const PARAMS_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segment {
    pub name: String,
    pub offset: usize,
    pub len: usize,
}

/// Real-valued parameters plus a layout naming contiguous ranges.
///
/// Segments are disjoint and cover `0..len()` exactly; all values are finite.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    values: Vec<f64>,
    segments: Vec<Segment>,
}

impl ParamVector {
    /// Zero-initialized vector with the given `(name, len)` layout, laid out in order.
    pub fn zeros(layout: &[(&str, usize)]) -> Self {
        let mut segments = Vec::with_capacity(layout.len());
        let mut offset = 0;
        for &(name, len) in layout {
            segments.push(Segment {
                name: name.to_string(),
                offset,
                len,
            });
            offset += len;
        }
        Self {
            values: vec![0.0; offset],
            segments,
        }
    }

    pub fn from_parts(values: Vec<f64>, mut segments: Vec<Segment>) -> Result<Self> {
        segments.sort_by_key(|s| s.offset);
        let mut cursor = 0;
        for s in &segments {
            if s.offset != cursor {
                return Err(Error::Contract(format!(
                    "segment `{}` starts at {} but previous coverage ends at {}",
                    s.name, s.offset, cursor
                )));
            }
            cursor += s.len;
        }
        if cursor != values.len() {
            return Err(Error::Contract(format!(
                "segments cover {} values but vector has {}",
                cursor,
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Contract(format!("non-finite value at index {i}")));
        }
        Ok(Self { values, segments })
    }

    /// Same layout, new values.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        check_len("ParamVector::with_values", self.values.len(), values.len())?;
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Contract(format!("non-finite value at index {i}")));
        }
        Ok(Self {
            values,
            segments: self.segments.clone(),
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Mutable access. Callers must keep values finite.
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn segment(&self, name: &str) -> Option<&Segment> {
        self.segments.iter().find(|s| s.name == name)
    }

    pub fn slice(&self, name: &str) -> Option<&[f64]> {
        self.segment(name)
            .map(|s| &self.values[s.offset..s.offset + s.len])
    }

    pub fn same_layout(&self, other: &ParamVector) -> bool {
        self.segments == other.segments
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

#[derive(Serialize, Deserialize)]
struct ParamVectorRepr {
    version: u32,
    segments: BTreeMap<String, (usize, usize)>,
    values: Vec<f64>,
}

impl Serialize for ParamVector {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        ParamVectorRepr {
            version: PARAMS_FORMAT_VERSION,
            segments: self
                .segments
                .iter()
                .map(|s| (s.name.clone(), (s.offset, s.len)))
                .collect(),
            values: self.values.clone(),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for ParamVector {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let repr = ParamVectorRepr::deserialize(deserializer)?;
        if repr.version != PARAMS_FORMAT_VERSION {
            return Err(serde::de::Error::custom(format!(
                "unsupported ParamVector version {}",
                repr.version
            )));
        }
        let segments = repr
            .segments
            .into_iter()
            .map(|(name, (offset, len))| Segment { name, offset, len })
            .collect();
        ParamVector::from_parts(repr.values, segments).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn zeros_layout_covers_range() {
        let p = ParamVector::zeros(&[("w", 6), ("b", 2)]);
        assert_eq!(p.len(), 8);
        assert_eq!(p.segment("b").unwrap().offset, 6);
        assert_eq!(p.slice("w").unwrap().len(), 6);
    }

    #[test]
    fn rejects_gaps_overlap_and_nan() {
        let gap = vec![
            Segment { name: "a".into(), offset: 0, len: 2 },
            Segment { name: "b".into(), offset: 3, len: 1 },
        ];
        assert!(ParamVector::from_parts(vec![0.0; 4], gap).is_err());
        let short = vec![Segment { name: "a".into(), offset: 0, len: 2 }];
        assert!(ParamVector::from_parts(vec![0.0; 3], short.clone()).is_err());
        assert!(ParamVector::from_parts(vec![0.0, f64::NAN], short).is_err());
    }

    #[test]
    fn json_has_versioned_shape() {
        let p = ParamVector::zeros(&[("w", 2), ("b", 1)]);
        let v: serde_json::Value = serde_json::to_value(&p).unwrap();
        assert_eq!(v["version"], 1);
        assert_eq!(v["segments"]["b"], serde_json::json!([2, 1]));
        assert_eq!(v["values"].as_array().unwrap().len(), 3);
    }

    #[test]
    fn json_rejects_bad_version() {
        let s = r#"{"version":9,"segments":{"w":[0,1]},"values":[0.0]}"#;
        assert!(serde_json::from_str::<ParamVector>(s).is_err());
    }

    proptest! {
        #[test]
        fn json_round_trip(vals in proptest::collection::vec(-1e6f64..1e6, 1..40), split in 0usize..40) {
            let k = split.min(vals.len());
            let mut p = ParamVector::zeros(&[("a", k), ("b", vals.len() - k)]);
            p.values_mut().copy_from_slice(&vals);
            let text = serde_json::to_string(&p).unwrap();
            let back: ParamVector = serde_json::from_str(&text).unwrap();
            prop_assert_eq!(back, p);
        }
    }
}
