//! Weight container: magic "MSTN1", then one record per parameter in
//! serialization order. Record layout, all integers little-endian:
//!
//!   name_len: u32, name: UTF-8 bytes, rank: u32, extents: u64 × rank,
//!   values: f32 × product(extents)
//!
//! Values are stored as f32 regardless of the model's working precision;
//! save -> load -> save is byte-identical because f32 -> f64 -> f32 is exact.

use std::io::{Read, Write};

use crate::error::{Error, Result};

use super::{Element, Tensor};

pub const MAGIC: &[u8; 5] = b"MSTN1";

pub fn write_weights<E: Element, W: Write>(
    out: &mut W,
    entries: &[(String, &Tensor<E>)],
) -> Result<()> {
    out.write_all(MAGIC)?;
    for (name, tensor) in entries {
        let bytes = name.as_bytes();
        out.write_all(&(bytes.len() as u32).to_le_bytes())?;
        out.write_all(bytes)?;
        out.write_all(&(tensor.rank() as u32).to_le_bytes())?;
        for &d in tensor.shape() {
            out.write_all(&(d as u64).to_le_bytes())?;
        }
        for &v in tensor.data() {
            out.write_all(&v.to_f32().to_le_bytes())?;
        }
    }
    Ok(())
}

/// Exact serialized byte size for a set of named shapes.
pub fn serialized_len(entries: impl Iterator<Item = (usize, usize, usize)>) -> usize {
    // entries yield (name_bytes, rank, element_count)
    MAGIC.len()
        + entries.map(|(name, rank, count)| 4 + name + 4 + 8 * rank + 4 * count).sum::<usize>()
}

pub fn read_weights<E: Element, R: Read>(input: &mut R) -> Result<Vec<(String, Tensor<E>)>> {
    let mut magic = [0u8; 5];
    input
        .read_exact(&mut magic)
        .map_err(|_| Error::WeightMismatch("file too short for magic".into()))?;
    if &magic != MAGIC {
        return Err(Error::WeightMismatch(format!("bad magic {:?}, want {:?}", magic, MAGIC)));
    }
    let mut entries = Vec::new();
    loop {
        let mut len_buf = [0u8; 4];
        match input.read(&mut len_buf)? {
            0 => break,
            4 => {}
            n => {
                // partial header bytes may arrive split; finish the read
                input
                    .read_exact(&mut len_buf[n..])
                    .map_err(|_| Error::WeightMismatch("truncated record header".into()))?;
            }
        }
        let name_len = u32::from_le_bytes(len_buf) as usize;
        let mut name_bytes = vec![0u8; name_len];
        input
            .read_exact(&mut name_bytes)
            .map_err(|_| Error::WeightMismatch("truncated parameter name".into()))?;
        let name = String::from_utf8(name_bytes)
            .map_err(|_| Error::WeightMismatch("parameter name is not UTF-8".into()))?;
        let mut rank_buf = [0u8; 4];
        input
            .read_exact(&mut rank_buf)
            .map_err(|_| Error::WeightMismatch(format!("truncated rank for {name}")))?;
        let rank = u32::from_le_bytes(rank_buf) as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            let mut ext = [0u8; 8];
            input
                .read_exact(&mut ext)
                .map_err(|_| Error::WeightMismatch(format!("truncated extents for {name}")))?;
            shape.push(u64::from_le_bytes(ext) as usize);
        }
        let count: usize = shape.iter().product();
        let mut data = Vec::with_capacity(count);
        let mut val = [0u8; 4];
        for _ in 0..count {
            input
                .read_exact(&mut val)
                .map_err(|_| Error::WeightMismatch(format!("truncated values for {name}")))?;
            data.push(E::from_f32(f32::from_le_bytes(val)));
        }
        entries.push((name, Tensor::new(shape, data)?));
    }
    Ok(entries)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Vec<(String, Tensor<f32>)> {
        vec![
            (
                "a.weight".into(),
                Tensor::new(vec![2, 3], vec![1.0, -2.5, 0.0, 3.25, 7.5, -0.125]).unwrap(),
            ),
            ("a.bias".into(), Tensor::new(vec![3], vec![0.5, 0.25, -1.0]).unwrap()),
        ]
    }

    #[test]
    fn round_trip_is_byte_exact() {
        let entries = sample();
        let refs: Vec<(String, &Tensor<f32>)> =
            entries.iter().map(|(n, t)| (n.clone(), t)).collect();
        let mut buf = Vec::new();
        write_weights(&mut buf, &refs).unwrap();
        let loaded = read_weights::<f32, _>(&mut buf.as_slice()).unwrap();
        assert_eq!(loaded, entries);
        let refs2: Vec<(String, &Tensor<f32>)> =
            loaded.iter().map(|(n, t)| (n.clone(), t)).collect();
        let mut buf2 = Vec::new();
        write_weights(&mut buf2, &refs2).unwrap();
        assert_eq!(buf, buf2);
    }

    #[test]
    fn round_trip_through_f64_is_byte_exact() {
        let entries = sample();
        let refs: Vec<(String, &Tensor<f32>)> =
            entries.iter().map(|(n, t)| (n.clone(), t)).collect();
        let mut buf = Vec::new();
        write_weights(&mut buf, &refs).unwrap();
        let wide = read_weights::<f64, _>(&mut buf.as_slice()).unwrap();
        let refs2: Vec<(String, &Tensor<f64>)> = wide.iter().map(|(n, t)| (n.clone(), t)).collect();
        let mut buf2 = Vec::new();
        write_weights(&mut buf2, &refs2).unwrap();
        assert_eq!(buf, buf2);
    }

    #[test]
    fn bad_magic_is_rejected() {
        let err = read_weights::<f32, _>(&mut &b"WRONG..."[..]).unwrap_err();
        assert!(matches!(err, Error::WeightMismatch(_)));
    }

    #[test]
    fn truncated_file_is_rejected() {
        let entries = sample();
        let refs: Vec<(String, &Tensor<f32>)> =
            entries.iter().map(|(n, t)| (n.clone(), t)).collect();
        let mut buf = Vec::new();
        write_weights(&mut buf, &refs).unwrap();
        buf.truncate(buf.len() - 2);
        assert!(matches!(
            read_weights::<f32, _>(&mut buf.as_slice()),
            Err(Error::WeightMismatch(_))
        ));
    }

    #[test]
    fn serialized_len_matches_actual_bytes() {
        let entries = sample();
        let refs: Vec<(String, &Tensor<f32>)> =
            entries.iter().map(|(n, t)| (n.clone(), t)).collect();
        let mut buf = Vec::new();
        write_weights(&mut buf, &refs).unwrap();
        let predicted = serialized_len(entries.iter().map(|(n, t)| (n.len(), t.rank(), t.len())));
        assert_eq!(predicted, buf.len());
    }
}
