//! AMLT tensor files: `"AMLT"`, version byte, rank byte, `u32` LE dims, `f64` LE payload.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

use super::{Scalar, Tensor};

pub const TENSOR_MAGIC: &[u8; 4] = b"AMLT";
pub const TENSOR_VERSION: u8 = 1;

pub fn write_tensor<T: Scalar, W: Write>(w: &mut W, t: &Tensor<T>) -> Result<()> {
    if t.rank() > u8::MAX as usize {
        return Err(Error::InvalidArgument(format!("rank {} too large for AMLT", t.rank())));
    }
    w.write_all(TENSOR_MAGIC)?;
    w.write_all(&[TENSOR_VERSION, t.rank() as u8])?;
    for &d in t.shape() {
        let d = u32::try_from(d).map_err(|_| Error::InvalidArgument(format!("dim {d} exceeds u32")))?;
        w.write_all(&d.to_le_bytes())?;
    }
    for &x in t.data() {
        w.write_all(&x.as_f64().to_le_bytes())?;
    }
    Ok(())
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::Corrupt("truncated tensor".into()),
        _ => Error::Io(e),
    })
}

pub fn read_tensor<T: Scalar, R: Read>(r: &mut R) -> Result<Tensor<T>> {
    let mut magic = [0u8; 4];
    read_exact(r, &mut magic)?;
    if &magic != TENSOR_MAGIC {
        return Err(Error::Corrupt(format!("bad tensor magic {magic:?}")));
    }
    let mut head = [0u8; 2];
    read_exact(r, &mut head)?;
    if head[0] != TENSOR_VERSION {
        return Err(Error::Version { found: head[0], expected: TENSOR_VERSION });
    }
    let rank = head[1] as usize;
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        let mut b = [0u8; 4];
        read_exact(r, &mut b)?;
        shape.push(u32::from_le_bytes(b) as usize);
    }
    let n: usize = shape.iter().product();
    let mut payload = vec![0u8; n * 8];
    read_exact(r, &mut payload)?;
    let data = payload
        .chunks_exact(8)
        .map(|c| T::of(f64::from_le_bytes(c.try_into().expect("8-byte chunk"))))
        .collect();
    Tensor::new(shape, data).map_err(|e| Error::Corrupt(format!("tensor payload: {e}")))
}

pub fn tensor_to_bytes<T: Scalar>(t: &Tensor<T>) -> Vec<u8> {
    let mut buf = Vec::with_capacity(6 + 4 * t.rank() + 8 * t.len());
    write_tensor(&mut buf, t).expect("writing to a Vec cannot fail");
    buf
}

pub fn tensor_from_bytes<T: Scalar>(mut bytes: &[u8]) -> Result<Tensor<T>> {
    let t = read_tensor(&mut bytes)?;
    if !bytes.is_empty() {
        return Err(Error::Corrupt(format!("{} trailing bytes after tensor", bytes.len())));
    }
    Ok(t)
}

pub fn save_tensor<T: Scalar>(path: impl AsRef<Path>, t: &Tensor<T>) -> Result<()> {
    fs::write(path, tensor_to_bytes(t))?;
    Ok(())
}

pub fn load_tensor<T: Scalar>(path: impl AsRef<Path>) -> Result<Tensor<T>> {
    tensor_from_bytes(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout_is_exact() {
        let t = Tensor::matrix(1, 2, vec![1.0, -2.0]).unwrap();
        let b = tensor_to_bytes(&t);
        assert_eq!(&b[..4], b"AMLT");
        assert_eq!(b[4], 1);
        assert_eq!(b[5], 2);
        assert_eq!(&b[6..10], &1u32.to_le_bytes());
        assert_eq!(&b[10..14], &2u32.to_le_bytes());
        assert_eq!(&b[14..22], &1.0f64.to_le_bytes());
        assert_eq!(&b[22..30], &(-2.0f64).to_le_bytes());
        assert_eq!(b.len(), 30);
    }

    #[test]
    fn rejects_bad_input() {
        let t = Tensor::vector(vec![1.0, 2.0, 3.0]).unwrap();
        let b = tensor_to_bytes(&t);
        assert!(matches!(tensor_from_bytes::<f64>(&b[..b.len() - 1]), Err(Error::Corrupt(_))));
        let mut bad = b.clone();
        bad[0] = b'X';
        assert!(matches!(tensor_from_bytes::<f64>(&bad), Err(Error::Corrupt(_))));
        let mut ver = b.clone();
        ver[4] = 9;
        assert!(matches!(tensor_from_bytes::<f64>(&ver), Err(Error::Version { found: 9, .. })));
    }

    #[test]
    fn f32_tensors_widen_on_disk() {
        let t: Tensor<f32> = Tensor::vector(vec![0.5, 0.25]).unwrap();
        let back: Tensor<f64> = tensor_from_bytes(&tensor_to_bytes(&t)).unwrap();
        assert_eq!(back.data(), &[0.5, 0.25]);
    }
}
