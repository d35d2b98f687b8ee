//! Little-endian binary read/write helpers shared by the file formats.

use std::io::{self, Read, Write};

macro_rules! rw_impl {
    ($read:ident, $write:ident, $ty:ty, $n:expr) => {
        pub(crate) fn $read(r: &mut impl Read) -> io::Result<$ty> {
            let mut buf = [0u8; $n];
            r.read_exact(&mut buf)?;
            Ok(<$ty>::from_le_bytes(buf))
        }

        pub(crate) fn $write(w: &mut impl Write, v: $ty) -> io::Result<()> {
            w.write_all(&v.to_le_bytes())
        }
    };
}

rw_impl!(read_u16, write_u16, u16, 2);
rw_impl!(read_u32, write_u32, u32, 4);
rw_impl!(read_u64, write_u64, u64, 8);
rw_impl!(read_f32, write_f32, f32, 4);
rw_impl!(read_f64, write_f64, f64, 8);

pub(crate) fn read_magic(r: &mut impl Read, expect: &[u8; 4]) -> io::Result<bool> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(&buf == expect)
}
