//! Binary tensor records: header of rank then extents as little-endian u64,
//! followed by the values as little-endian 64-bit floats. Checkpoints and
//! golden tests build on this.

use std::io::{Read, Write};

use crate::error::TensorError;
use crate::scalar::Scalar;

use super::Tensor;

pub fn write_tensor<T: Scalar, W: Write>(w: &mut W, t: &Tensor<T>) -> std::io::Result<()> {
    w.write_all(&(t.rank() as u64).to_le_bytes())?;
    for &e in t.shape() {
        w.write_all(&(e as u64).to_le_bytes())?;
    }
    for v in t.data() {
        let f = v.to_f64().expect("scalar convertible to f64");
        w.write_all(&f.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_tensor<T: Scalar, R: Read>(r: &mut R) -> Result<Tensor<T>, TensorError> {
    let mut buf8 = [0u8; 8];
    let mut read_u64 = |r: &mut R| -> Result<u64, TensorError> {
        r.read_exact(&mut buf8)
            .map_err(|e| TensorError::invalid("read_tensor", format!("truncated header: {e}")))?;
        Ok(u64::from_le_bytes(buf8))
    };
    let rank = read_u64(r)? as usize;
    if rank > 8 {
        return Err(TensorError::invalid(
            "read_tensor",
            format!("implausible rank {rank}"),
        ));
    }
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        shape.push(read_u64(r)? as usize);
    }
    let n: usize = shape.iter().product();
    let mut data = Vec::with_capacity(n);
    let mut fbuf = [0u8; 8];
    for i in 0..n {
        r.read_exact(&mut fbuf).map_err(|e| {
            TensorError::invalid(
                "read_tensor",
                format!("truncated payload at element {i} of {n}: {e}"),
            )
        })?;
        let f = f64::from_le_bytes(fbuf);
        if !f.is_finite() {
            return Err(TensorError::invalid(
                "read_tensor",
                format!("non-finite value at element {i}"),
            ));
        }
        data.push(T::from_f64(f).ok_or_else(|| {
            TensorError::invalid("read_tensor", format!("value {f} not representable"))
        })?);
    }
    Tensor::from_vec(&shape, data)
}

/// Byte length of the serialized record for a given shape.
pub fn record_len(shape: &[usize]) -> usize {
    8 * (1 + shape.len() + shape.iter().product::<usize>())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_exact() {
        let t = Tensor::<f64>::from_vec(&[2, 3], vec![1.5, -2.25, 0.1, 1e-300, 3e7, -0.0]).unwrap();
        let mut buf = Vec::new();
        write_tensor(&mut buf, &t).unwrap();
        assert_eq!(buf.len(), record_len(t.shape()));
        let back: Tensor<f64> = read_tensor(&mut buf.as_slice()).unwrap();
        assert_eq!(back.shape(), t.shape());
        let a: Vec<u64> = t.data().iter().map(|v| v.to_bits()).collect();
        let b: Vec<u64> = back.data().iter().map(|v| v.to_bits()).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn golden_record_layout() {
        // rank 1, extent 2, then 1.0 and -2.0 as little-endian f64.
        let t = Tensor::<f64>::from_vec(&[2], vec![1.0, -2.0]).unwrap();
        let mut buf = Vec::new();
        write_tensor(&mut buf, &t).unwrap();
        let expect: Vec<u8> = [
            1u64.to_le_bytes().to_vec(),
            2u64.to_le_bytes().to_vec(),
            1.0f64.to_le_bytes().to_vec(),
            (-2.0f64).to_le_bytes().to_vec(),
        ]
        .concat();
        assert_eq!(buf, expect);
        assert_eq!(&buf[..8], &[1, 0, 0, 0, 0, 0, 0, 0]);
        assert_eq!(&buf[16..24], &[0, 0, 0, 0, 0, 0, 0xf0, 0x3f]);
    }

    #[test]
    fn truncated_record_rejected() {
        let t = Tensor::<f64>::from_vec(&[4], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let mut buf = Vec::new();
        write_tensor(&mut buf, &t).unwrap();
        buf.truncate(buf.len() - 3);
        assert!(read_tensor::<f64, _>(&mut buf.as_slice()).is_err());
    }
}
