//! Little-endian framing shared by the binary checkpoints.

use std::io::{Cursor, Read};

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};

use crate::error::{Error, Result};

pub(crate) struct Writer {
    pub buf: Vec<u8>,
}

impl Writer {
    /// Starts a file with `magic` and a format `version`.
    pub fn new(magic: &[u8; 8], version: u32) -> Self {
        let mut w = Self { buf: magic.to_vec() };
        w.u32(version);
        w
    }

    pub fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    pub fn u32(&mut self, v: u32) {
        self.buf.write_u32::<LE>(v).expect("vec write");
    }

    pub fn u64(&mut self, v: u64) {
        self.buf.write_u64::<LE>(v).expect("vec write");
    }

    pub fn f64(&mut self, v: f64) {
        self.buf.write_f64::<LE>(v).expect("vec write");
    }

    pub fn f32(&mut self, v: f32) {
        self.buf.write_f32::<LE>(v).expect("vec write");
    }

    pub fn bytes(&mut self, b: &[u8]) {
        self.buf.extend_from_slice(b);
    }
}

pub(crate) struct Reader<'a> {
    cur: Cursor<&'a [u8]>,
    what: &'static str,
}

impl<'a> Reader<'a> {
    /// Checks the magic and returns the reader with the format version.
    pub fn open(data: &'a [u8], magic: &[u8; 8], what: &'static str) -> Result<(Self, u32)> {
        if data.len() < 12 || &data[..8] != magic {
            return Err(Error::Checkpoint(format!("not a {what} checkpoint")));
        }
        let mut r = Self { cur: Cursor::new(data), what };
        r.cur.set_position(8);
        let version = r.u32()?;
        Ok((r, version))
    }

    fn eof(&self) -> Error {
        Error::Checkpoint(format!("truncated {} checkpoint", self.what))
    }

    pub fn u8(&mut self) -> Result<u8> {
        self.cur.read_u8().map_err(|_| self.eof())
    }

    pub fn u32(&mut self) -> Result<u32> {
        self.cur.read_u32::<LE>().map_err(|_| self.eof())
    }

    pub fn u64(&mut self) -> Result<u64> {
        self.cur.read_u64::<LE>().map_err(|_| self.eof())
    }

    pub fn f64(&mut self) -> Result<f64> {
        self.cur.read_f64::<LE>().map_err(|_| self.eof())
    }

    pub fn f32(&mut self) -> Result<f32> {
        self.cur.read_f32::<LE>().map_err(|_| self.eof())
    }

    pub fn bytes(&mut self, n: usize) -> Result<Vec<u8>> {
        let mut b = vec![0; n];
        self.cur.read_exact(&mut b).map_err(|_| self.eof())?;
        Ok(b)
    }

    pub fn remaining(&self) -> usize {
        self.cur.get_ref().len() - self.cur.position() as usize
    }

    /// Errors unless every byte was consumed.
    pub fn finish(&self) -> Result<()> {
        if self.cur.position() as usize != self.cur.get_ref().len() {
            return Err(Error::Checkpoint(format!("trailing bytes in {} checkpoint", self.what)));
        }
        Ok(())
    }
}
