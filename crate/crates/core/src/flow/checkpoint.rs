//! Binary flow checkpoints: `D` and `K` as little-endian `u64`, followed by
//! the `K·(2D+1)` flat parameters as little-endian `f64`.

use std::io::{Read, Write};

use super::ComposedFlow;
use crate::error::{Error, Result};

pub fn write_checkpoint(flow: &ComposedFlow, mut out: impl Write) -> Result<()> {
    out.write_all(&(flow.dim() as u64).to_le_bytes())?;
    out.write_all(&(flow.n_layers() as u64).to_le_bytes())?;
    for p in flow.params() {
        out.write_all(&p.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_checkpoint(mut input: impl Read) -> Result<ComposedFlow> {
    let mut word = [0u8; 8];
    input.read_exact(&mut word)?;
    let dim = u64::from_le_bytes(word) as usize;
    input.read_exact(&mut word)?;
    let k = u64::from_le_bytes(word) as usize;
    if dim == 0 || dim > 1 << 20 || k > 1 << 20 {
        return Err(Error::input(format!("implausible checkpoint header D={dim} K={k}")));
    }
    let mut params = Vec::with_capacity(k * (2 * dim + 1));
    for _ in 0..k * (2 * dim + 1) {
        input.read_exact(&mut word)?;
        params.push(f64::from_le_bytes(word));
    }
    let mut rest = Vec::new();
    input.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(Error::input("trailing bytes after checkpoint parameters"));
    }
    ComposedFlow::from_params(dim, k, &params)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checkpoint_layout() {
        let mut rng = crate::rng::seeded(3);
        let f = ComposedFlow::random(2, 3, 1.0, &mut rng);
        let mut buf = Vec::new();
        write_checkpoint(&f, &mut buf).unwrap();
        assert_eq!(buf.len(), 16 + 8 * 15);
        assert_eq!(&buf[..8], &2u64.to_le_bytes());
        assert_eq!(read_checkpoint(&buf[..]).unwrap(), f);
        assert!(read_checkpoint(&buf[..buf.len() - 1]).is_err());
    }
}
