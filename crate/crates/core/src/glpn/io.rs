//! Parameter files: one JSON header line, then the tensors as raw
//! little-endian `f64` in header order.

use serde::{Deserialize, Serialize};

use super::{GlpnConfig, GlpnParams, InitRecord};
use crate::error::{Error, Result};
use crate::DenseMatrix;

pub const FORMAT: &str = "glpn-params";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub format: String,
    pub version: u32,
    pub config: GlpnConfig,
    pub init: InitRecord,
    pub tensors: Vec<TensorEntry>,
}

pub fn to_bytes(params: &GlpnParams, config: &GlpnConfig) -> Result<Vec<u8>> {
    let named = params.named();
    let header = Header {
        format: FORMAT.into(),
        version: VERSION,
        config: config.clone(),
        init: params.init.clone(),
        tensors: named
            .iter()
            .map(|(name, m)| TensorEntry {
                name: name.clone(),
                rows: m.rows(),
                cols: m.cols(),
            })
            .collect(),
    };
    let mut out = serde_json::to_vec(&header).map_err(|e| Error::contract(e.to_string()))?;
    out.push(b'\n');
    for (_, m) in named {
        for v in m.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

/// Parses a parameter file, returning the stored config and parameters.
pub fn from_bytes(bytes: &[u8]) -> Result<(GlpnConfig, GlpnParams)> {
    let split = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::contract("parameter file has no header line"))?;
    let header: Header =
        serde_json::from_slice(&bytes[..split]).map_err(|e| Error::contract(format!("bad header: {e}")))?;
    if header.format != FORMAT || header.version != VERSION {
        return Err(Error::contract(format!(
            "unsupported parameter file {} v{}",
            header.format, header.version
        )));
    }
    let payload = &bytes[split + 1..];
    let total: usize = header.tensors.iter().map(|t| t.rows * t.cols).sum();
    if payload.len() != total * 8 {
        return Err(Error::contract(format!(
            "payload holds {} bytes, header describes {}",
            payload.len(),
            total * 8
        )));
    }
    let mut values = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunks of 8")));
    let mut tensors = Vec::with_capacity(header.tensors.len());
    for t in &header.tensors {
        let data: Vec<f64> = values.by_ref().take(t.rows * t.cols).collect();
        tensors.push((t.name.as_str(), DenseMatrix::new(t.rows, t.cols, data)?));
    }

    let mut draft_theta = Vec::new();
    let mut levels: Vec<[Option<DenseMatrix>; 3]> = Vec::new();
    let mut decoder = None;
    let mut final_theta = None;
    for (name, m) in tensors {
        let parts: Vec<&str> = name.split('.').collect();
        match parts.as_slice() {
            ["draft", _, "theta"] => draft_theta.push(m),
            ["level", l, w] => {
                let l: usize = l.parse().map_err(|_| Error::contract(format!("bad tensor name {name}")))?;
                if levels.len() <= l {
                    levels.resize_with(l + 1, Default::default);
                }
                let slot = match *w {
                    "w1" => 0,
                    "w2" => 1,
                    "w3" => 2,
                    _ => return Err(Error::contract(format!("bad tensor name {name}"))),
                };
                levels[l][slot] = Some(m);
            }
            ["decoder"] => decoder = Some(m),
            ["final", "theta"] => final_theta = Some(m),
            _ => return Err(Error::contract(format!("bad tensor name {name}"))),
        }
    }
    let levels = levels
        .into_iter()
        .map(|[w1, w2, w3]| match (w1, w2, w3) {
            (Some(w1), Some(w2), Some(w3)) => Ok(super::LevelParams { w1, w2, w3 }),
            _ => Err(Error::contract("incomplete level parameters")),
        })
        .collect::<Result<Vec<_>>>()?;
    let params = GlpnParams {
        draft_theta,
        levels,
        decoder: decoder.ok_or_else(|| Error::contract("missing decoder tensor"))?,
        final_theta,
        init: header.init,
    };
    Ok((header.config, params))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::glpn::GlpnModel;
    use crate::graph::binary_adjacency;

    #[test]
    fn round_trip_is_exact() {
        let a = binary_adjacency(6, &[(0, 1), (1, 2), (2, 3), (3, 4), (4, 5)]).unwrap();
        let config = GlpnConfig {
            levels: 2,
            hidden: 3,
            ..GlpnConfig::default()
        };
        let model = GlpnModel::new(&a, 2, &config).unwrap();
        let params = model.init_params(5);
        let bytes = to_bytes(&params, &config).unwrap();
        let (cfg, back) = from_bytes(&bytes).unwrap();
        assert_eq!(cfg, config);
        assert_eq!(back, params);
        assert_eq!(to_bytes(&back, &cfg).unwrap(), bytes);
    }

    #[test]
    fn truncated_payload_is_rejected() {
        let a = binary_adjacency(3, &[(0, 1), (1, 2)]).unwrap();
        let config = GlpnConfig {
            hidden: 2,
            ..GlpnConfig::default()
        };
        let params = GlpnModel::new(&a, 1, &config).unwrap().init_params(0);
        let mut bytes = to_bytes(&params, &config).unwrap();
        bytes.truncate(bytes.len() - 3);
        assert!(from_bytes(&bytes).is_err());
        assert!(from_bytes(b"no newline").is_err());
    }
}
