//! The SALM saliency-map file format.
//!
//! Layout:
//!
//! ```text
//! "SALM0001"                      8-byte magic
//! u32 little-endian               header length in bytes
//! UTF-8 header                    key=value lines: width, height, method_id, image_id
//! f32 little-endian * (w*h)       scores, row-major
//! ```

use thiserror::Error;

use crate::saliency::{SaliencyError, SaliencyMap};

pub const MAGIC: &[u8; 8] = b"SALM0001";

#[derive(Debug, Error, PartialEq)]
pub enum SalmError {
    #[error("magic mismatch: expected SALM0001")]
    BadMagic,
    #[error("truncated header")]
    TruncatedHeader,
    #[error("malformed header: {0}")]
    Header(String),
    #[error("payload length mismatch: header declares {expected} bytes, found {got}")]
    PayloadLength { expected: usize, got: usize },
    #[error(transparent)]
    Map(#[from] SaliencyError),
}

pub fn encode(map: &SaliencyMap) -> Vec<u8> {
    let header = format!(
        "width={}\nheight={}\nmethod_id={}\nimage_id={}\n",
        map.width(),
        map.height(),
        map.method_id,
        map.image_id
    );
    let mut out = Vec::with_capacity(12 + header.len() + 4 * map.n_pixels());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(header.as_bytes());
    for s in map.scores() {
        out.extend_from_slice(&s.to_le_bytes());
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<SaliencyMap, SalmError> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(SalmError::BadMagic);
    }
    let rest = &bytes[MAGIC.len()..];
    if rest.len() < 4 {
        return Err(SalmError::TruncatedHeader);
    }
    let header_len = u32::from_le_bytes(rest[..4].try_into().unwrap()) as usize;
    let rest = &rest[4..];
    if rest.len() < header_len {
        return Err(SalmError::TruncatedHeader);
    }
    let header = std::str::from_utf8(&rest[..header_len])
        .map_err(|_| SalmError::Header("not UTF-8".into()))?;
    let payload = &rest[header_len..];

    let (mut width, mut height, mut method_id, mut image_id) = (None, None, None, None);
    for line in header.lines().filter(|l| !l.is_empty()) {
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| SalmError::Header(format!("line without '=': {line:?}")))?;
        let parse_dim = |v: &str| {
            v.parse::<usize>()
                .map_err(|_| SalmError::Header(format!("bad {key}: {v:?}")))
        };
        match key {
            "width" => width = Some(parse_dim(value)?),
            "height" => height = Some(parse_dim(value)?),
            "method_id" => method_id = Some(value.to_string()),
            "image_id" => image_id = Some(value.to_string()),
            // Unknown keys are tolerated so producers can annotate maps.
            _ => {}
        }
    }
    let missing = |k: &str| SalmError::Header(format!("missing {k}"));
    let width = width.ok_or_else(|| missing("width"))?;
    let height = height.ok_or_else(|| missing("height"))?;
    let method_id = method_id.ok_or_else(|| missing("method_id"))?;
    let image_id = image_id.ok_or_else(|| missing("image_id"))?;

    let expected = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| SalmError::Header("dimensions overflow".into()))?;
    if payload.len() != expected {
        return Err(SalmError::PayloadLength {
            expected,
            got: payload.len(),
        });
    }
    let scores = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(SaliencyMap::new(width, height, scores, method_id, image_id)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample() -> SaliencyMap {
        SaliencyMap::new(2, 2, vec![0.5, 0.0, 0.0, 1.0], "vanilla", "img-3").unwrap()
    }

    #[test]
    fn byte_layout() {
        let bytes = encode(&sample());
        let header = b"width=2\nheight=2\nmethod_id=vanilla\nimage_id=img-3\n";
        assert_eq!(&bytes[..8], b"SALM0001");
        assert_eq!(&bytes[8..12], &(header.len() as u32).to_le_bytes());
        assert_eq!(&bytes[12..12 + header.len()], header);
        let payload = &bytes[12 + header.len()..];
        assert_eq!(payload.len(), 16);
        assert_eq!(
            payload,
            &[0, 0, 0, 0x3f, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0x80, 0x3f]
        );
    }

    #[test]
    fn truncated_payload() {
        let mut bytes = encode(&sample());
        bytes.pop();
        assert_eq!(
            decode(&bytes).unwrap_err(),
            SalmError::PayloadLength {
                expected: 16,
                got: 15
            }
        );
        assert!(decode(&bytes).unwrap_err().to_string().contains("payload length mismatch"));
    }

    #[test]
    fn bad_magic() {
        let mut bytes = encode(&sample());
        bytes[4] = b'9';
        assert_eq!(decode(&bytes).unwrap_err(), SalmError::BadMagic);
        assert_eq!(decode(b"SAL").unwrap_err(), SalmError::BadMagic);
    }

    #[test]
    fn truncated_header() {
        let bytes = encode(&sample());
        assert_eq!(decode(&bytes[..20]).unwrap_err(), SalmError::TruncatedHeader);
    }

    #[test]
    fn dimension_mismatch_with_extra_payload() {
        let mut bytes = encode(&sample());
        bytes.extend_from_slice(&[0; 4]);
        assert!(matches!(decode(&bytes), Err(SalmError::PayloadLength { .. })));
    }

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(
            w in 1usize..12,
            h in 1usize..12,
            seed in any::<u64>(),
            method in "[a-z_]{1,12}",
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let scores: Vec<f32> = (0..w * h).map(|_| rng.random_range(-1e6f32..1e6)).collect();
            let m = SaliencyMap::new(w, h, scores, method, "img").unwrap();
            let back = decode(&encode(&m)).unwrap();
            prop_assert_eq!(back.scores().iter().map(|s| s.to_bits()).collect::<Vec<_>>(),
                            m.scores().iter().map(|s| s.to_bits()).collect::<Vec<_>>());
            prop_assert_eq!(back, m);
        }
    }
}
