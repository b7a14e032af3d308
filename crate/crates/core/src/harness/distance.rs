use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::benchdata::{EditInstance, Vocab};
use crate::error::{usage, Error, Result};
use crate::grace::{encode_key, EncoderWeights};
use crate::numcore::euclidean;
use crate::toymodel::{prompt_key, KeyMode, ToyDecoder};

/// How an input becomes the vector whose distances are measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum KeyPipeline {
    #[serde(rename = "raw-last")]
    RawLast,
    #[serde(rename = "raw-mean")]
    RawMean,
    #[serde(rename = "encoded-mean")]
    EncodedMean,
    #[serde(rename = "encoded-last")]
    EncodedLast,
}

impl KeyPipeline {
    pub const ALL: [KeyPipeline; 4] =
        [KeyPipeline::RawLast, KeyPipeline::RawMean, KeyPipeline::EncodedMean, KeyPipeline::EncodedLast];

    pub fn label(self) -> &'static str {
        match self {
            KeyPipeline::RawLast => "raw-last",
            KeyPipeline::RawMean => "raw-mean",
            KeyPipeline::EncodedMean => "encoded-mean",
            KeyPipeline::EncodedLast => "encoded-last",
        }
    }

    pub fn key_mode(self) -> KeyMode {
        match self {
            KeyPipeline::RawLast | KeyPipeline::EncodedLast => KeyMode::Last,
            KeyPipeline::RawMean | KeyPipeline::EncodedMean => KeyMode::Mean,
        }
    }

    pub fn encoded(self) -> bool {
        matches!(self, KeyPipeline::EncodedMean | KeyPipeline::EncodedLast)
    }
}

impl fmt::Display for KeyPipeline {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for KeyPipeline {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|p| p.label() == s)
            .ok_or_else(|| Error::Usage(format!("unknown key pipeline {s:?}")))
    }
}

/// Distances from an input's key to its rewrite's key and to its first
/// neighbor's key.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceRow {
    pub id: String,
    pub pipeline: KeyPipeline,
    pub d_gri: f64,
    pub d_sri: f64,
}

/// One row per instance. Encoded pipelines need `encoder`; raw ones ignore it.
pub fn analyze_distances(
    model: &ToyDecoder,
    instances: &[EditInstance],
    layer: usize,
    pipeline: KeyPipeline,
    encoder: Option<&EncoderWeights>,
) -> Result<Vec<DistanceRow>> {
    model.check_layer(layer)?;
    let enc = match (pipeline.encoded(), encoder) {
        (true, None) => return usage(format!("pipeline {pipeline} needs an encoder")),
        (true, Some(e)) => Some(e),
        (false, _) => None,
    };
    let v = Vocab::standard();
    let key = |text: &str| -> Result<Vec<f64>> {
        let raw = prompt_key(model, &v.prompt(text), layer, pipeline.key_mode())?;
        match enc {
            Some(e) => encode_key(e, &raw),
            None => Ok(raw),
        }
    };
    instances
        .iter()
        .map(|inst| {
            let (Some(rewrite), Some(neighbor)) = (inst.rewrites.first(), inst.neighbors.first()) else {
                return usage(format!("{} lacks a rewrite or a neighbor", inst.id));
            };
            let oi = key(&inst.x)?;
            Ok(DistanceRow {
                id: inst.id.clone(),
                pipeline,
                d_gri: euclidean(&oi, &key(rewrite)?),
                d_sri: euclidean(&oi, &key(&neighbor.x_u)?),
            })
        })
        .collect()
}

/// Fraction of rows where the rewrite is strictly closer than the neighbor.
pub fn ordering_accuracy(rows: &[DistanceRow]) -> f64 {
    if rows.is_empty() {
        return f64::NAN;
    }
    rows.iter().filter(|r| r.d_gri < r.d_sri).count() as f64 / rows.len() as f64
}

pub fn distances_csv(rows: &[DistanceRow]) -> String {
    let mut out = String::from("id,pipeline,d_oi_gri,d_oi_sri\n");
    for r in rows {
        out.push_str(&format!("{},{},{},{}\n", r.id, r.pipeline, r.d_gri, r.d_sri));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(g: f64, s: f64) -> DistanceRow {
        DistanceRow { id: "i".into(), pipeline: KeyPipeline::RawLast, d_gri: g, d_sri: s }
    }

    #[test]
    fn ordering_counts_strict_wins() {
        assert_eq!(ordering_accuracy(&[row(1.0, 2.0), row(2.0, 2.0), row(3.0, 1.0), row(0.0, 0.5)]), 0.5);
        assert!(ordering_accuracy(&[]).is_nan());
    }

    #[test]
    fn pipeline_labels_round_trip() {
        for p in KeyPipeline::ALL {
            assert_eq!(p.label().parse::<KeyPipeline>().unwrap(), p);
        }
        assert!("raw".parse::<KeyPipeline>().is_err());
    }

    #[test]
    fn csv_has_one_line_per_row() {
        let csv = distances_csv(&[row(1.0, 2.5)]);
        assert_eq!(csv, "id,pipeline,d_oi_gri,d_oi_sri\ni,raw-last,1,2.5\n");
    }
}
