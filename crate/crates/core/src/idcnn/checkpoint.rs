//! Versioned binary checkpoints.
//!
//! ```text
//! magic            8 bytes  "IDCNNCKP"
//! version          u32
//! input_channels   u32
//! branch_widths    3 x u32
//! tail_channels    u32
//! final_rectifier  u8
//! mean count       u32, then that many f64 (input normalizer)
//! tensor count     u32
//! per tensor       u64 element count, then f64 values
//! ```
//!
//! Integers and floats are little-endian; tensors follow parameter
//! declaration order.

use std::io::{Read, Write};

use super::data::InputNormalizer;
use super::network::{Network, NetworkConfig};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const MAGIC: &[u8; 8] = b"IDCNNCKP";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T> {
    pub network: Network<T>,
    pub normalizer: InputNormalizer<T>,
}

fn put_u32<W: Write>(w: &mut W, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn get_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn get_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn get_f64<R: Read>(r: &mut R) -> Result<f64> {
    Ok(f64::from_bits(get_u64(r)?))
}

fn small(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::Checkpoint(format!("{what} {v} does not fit the format")))
}

pub fn write_checkpoint<T: Scalar, W: Write>(mut w: W, ckpt: &Checkpoint<T>) -> Result<()> {
    let cfg = &ckpt.network.config;
    w.write_all(MAGIC)?;
    put_u32(&mut w, VERSION)?;
    put_u32(&mut w, small(cfg.input_channels, "input channels")?)?;
    for bw in cfg.branch_widths {
        put_u32(&mut w, small(bw, "branch width")?)?;
    }
    put_u32(&mut w, small(cfg.tail_channels, "tail channels")?)?;
    w.write_all(&[cfg.final_rectifier as u8])?;
    put_u32(&mut w, small(ckpt.normalizer.mean.len(), "mean count")?)?;
    for m in &ckpt.normalizer.mean {
        w.write_all(&m.as_f64().to_le_bytes())?;
    }
    let params = ckpt.network.parameters();
    put_u32(&mut w, small(params.len(), "tensor count")?)?;
    for (_, t) in params {
        w.write_all(&(t.len() as u64).to_le_bytes())?;
        for v in t.data() {
            w.write_all(&v.as_f64().to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_checkpoint<T: Scalar, R: Read>(mut r: R) -> Result<Checkpoint<T>> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = get_u32(&mut r)?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let input_channels = get_u32(&mut r)? as usize;
    let branch_widths = [get_u32(&mut r)? as usize, get_u32(&mut r)? as usize, get_u32(&mut r)? as usize];
    let tail_channels = get_u32(&mut r)? as usize;
    let mut flag = [0u8; 1];
    r.read_exact(&mut flag)?;
    let config = NetworkConfig {
        input_channels,
        branch_widths,
        tail_channels,
        final_rectifier: flag[0] != 0,
    };
    config.validate().map_err(|e| Error::Checkpoint(e.to_string()))?;

    let n_mean = get_u32(&mut r)? as usize;
    if n_mean != input_channels {
        return Err(Error::Checkpoint(format!("{n_mean} channel means for {input_channels} input channels")));
    }
    let mean = (0..n_mean).map(|_| get_f64(&mut r).map(T::of)).collect::<Result<_>>()?;

    let mut network = Network::zeros(config);
    let names = network.parameter_names();
    let count = get_u32(&mut r)? as usize;
    if count != names.len() {
        return Err(Error::Checkpoint(format!("{count} tensors, config needs {}", names.len())));
    }
    for (param, name) in network.parameters_mut().into_iter().zip(&names) {
        let len = get_u64(&mut r)? as usize;
        if len != param.len() {
            return Err(Error::Checkpoint(format!("{name}: {len} values, config needs {}", param.len())));
        }
        for v in param.data_mut() {
            *v = T::of(get_f64(&mut r)?);
        }
    }
    Ok(Checkpoint {
        network,
        normalizer: InputNormalizer { mean },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ckpt() -> Checkpoint<f64> {
        let cfg = NetworkConfig {
            branch_widths: [2, 3, 4],
            tail_channels: 5,
            ..NetworkConfig::tiny()
        };
        Checkpoint {
            network: Network::init(cfg, 21),
            normalizer: InputNormalizer { mean: vec![0.25, 0.5, 0.125] },
        }
    }

    #[test]
    fn roundtrip_is_exact() {
        let c = ckpt();
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &c).unwrap();
        assert_eq!(&buf[..8], MAGIC);
        let back: Checkpoint<f64> = read_checkpoint(buf.as_slice()).unwrap();
        assert_eq!(back, c);
        let as_f32: Checkpoint<f32> = read_checkpoint(buf.as_slice()).unwrap();
        assert_eq!(as_f32.network.config, c.network.config);
    }

    #[test]
    fn rejects_corruption() {
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &ckpt()).unwrap();
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(read_checkpoint::<f64, _>(bad.as_slice()).is_err());
        let mut bad = buf.clone();
        bad[8] = 9;
        assert!(read_checkpoint::<f64, _>(bad.as_slice()).is_err());
        // claim a wider first branch than the stored tensors hold
        let mut bad = buf.clone();
        bad[16] = 7;
        let err = read_checkpoint::<f64, _>(bad.as_slice()).unwrap_err();
        assert!(err.to_string().contains("inception1.rate1.weight"), "{err}");
        assert!(read_checkpoint::<f64, _>(&buf[..buf.len() - 3]).is_err());
    }
}
