//! Little-endian primitives shared by the binary file formats.

use std::io::{Read, Write};

use crate::error::Result;

macro_rules! le_io {
    ($read:ident, $write:ident, $t:ty, $n:expr) => {
        pub fn $read(mut r: impl Read) -> Result<$t> {
            let mut b = [0u8; $n];
            r.read_exact(&mut b)?;
            Ok(<$t>::from_le_bytes(b))
        }

        pub fn $write(mut w: impl Write, v: $t) -> Result<()> {
            w.write_all(&v.to_le_bytes())?;
            Ok(())
        }
    };
}

le_io!(read_u8, write_u8, u8, 1);
le_io!(read_u16, write_u16, u16, 2);
le_io!(read_u32, write_u32, u32, 4);
le_io!(read_f32, write_f32, f32, 4);
le_io!(read_f64, write_f64, f64, 8);

/// Reads a magic tag plus version byte and checks both.
pub fn expect_header(mut r: impl Read, magic: &[u8; 4], version: u8, format: &'static str) -> Result<()> {
    let mut m = [0u8; 4];
    r.read_exact(&mut m)?;
    if &m != magic {
        return Err(crate::error::Error::format(format, format!("bad magic {m:?}")));
    }
    let v = read_u8(&mut r)?;
    if v != version {
        return Err(crate::error::Error::format(format, format!("unsupported version {v}")));
    }
    Ok(())
}

pub fn write_header(mut w: impl Write, magic: &[u8; 4], version: u8) -> Result<()> {
    w.write_all(magic)?;
    w.write_all(&[version])?;
    Ok(())
}
