//! Little-endian helpers shared by the binary artifact formats, and the
//! optional `META` trailer that carries provenance (config hash, subject
//! ids) after the fixed layout of a file.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use crate::error::{Error, Result};

pub const META_TAG: &[u8; 4] = b"META";

pub type Meta = BTreeMap<String, String>;

pub(crate) struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    what: &'static str,
}

impl<'a> Reader<'a> {
    pub fn new(bytes: &'a [u8], what: &'static str) -> Self {
        Self { bytes, pos: 0, what }
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Format(format!("{}: unexpected end of file", self.what)));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn magic(&mut self, magic: &[u8; 4]) -> Result<()> {
        if self.take(4)? != magic {
            return Err(Error::Format(format!(
                "{}: bad magic, expected {:?}",
                self.what,
                String::from_utf8_lossy(magic)
            )));
        }
        Ok(())
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn f32s(&mut self, n: usize, out: &mut Vec<f32>) -> Result<()> {
        let raw = self.take(n * 4)?;
        out.extend(raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())));
        Ok(())
    }

    pub fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n * 8)?;
        Ok(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }

    pub fn string_u16(&mut self) -> Result<String> {
        let n = self.u16()? as usize;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| Error::Format(format!("{}: non-UTF-8 text", self.what)))
    }

    /// Reads the optional trailer; anything other than a well-formed
    /// trailer after the fixed layout is an error.
    pub fn finish_with_meta(mut self) -> Result<Meta> {
        if self.pos == self.bytes.len() {
            return Ok(Meta::new());
        }
        self.magic(META_TAG)?;
        let n = self.u32()? as usize;
        let text = std::str::from_utf8(self.take(n)?)
            .map_err(|_| Error::Format(format!("{}: non-UTF-8 metadata", self.what)))?;
        if self.pos != self.bytes.len() {
            return Err(Error::Format(format!("{}: trailing bytes after metadata", self.what)));
        }
        parse_meta(text)
    }
}

pub(crate) fn put_string_u16(buf: &mut Vec<u8>, s: &str) -> Result<()> {
    let len = u16::try_from(s.len()).map_err(|_| Error::InvalidArgument(format!("text too long: {s:.40}")))?;
    buf.extend_from_slice(&len.to_le_bytes());
    buf.extend_from_slice(s.as_bytes());
    Ok(())
}

pub(crate) fn put_f32s(buf: &mut Vec<u8>, values: &[f32]) {
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn format_meta(meta: &Meta) -> Result<String> {
    let mut out = String::new();
    for (k, v) in meta {
        if k.is_empty() || k.contains(['=', '\n']) || v.contains('\n') {
            return Err(Error::InvalidArgument(format!("metadata entry `{k}` cannot be encoded")));
        }
        out.push_str(k);
        out.push('=');
        out.push_str(v);
        out.push('\n');
    }
    Ok(out)
}

pub fn parse_meta(text: &str) -> Result<Meta> {
    let mut meta = Meta::new();
    for line in text.lines().filter(|l| !l.is_empty()) {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Format(format!("metadata line without `=`: {line}")))?;
        meta.insert(k.to_string(), v.to_string());
    }
    Ok(meta)
}

pub(crate) fn put_meta(buf: &mut Vec<u8>, meta: &Meta) -> Result<()> {
    if meta.is_empty() {
        return Ok(());
    }
    let text = format_meta(meta)?;
    buf.extend_from_slice(META_TAG);
    buf.extend_from_slice(&(text.len() as u32).to_le_bytes());
    buf.extend_from_slice(text.as_bytes());
    Ok(())
}

pub(crate) fn read_all<R: Read>(mut r: R) -> Result<Vec<u8>> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    Ok(bytes)
}

pub(crate) fn write_all<W: Write>(mut w: W, bytes: &[u8]) -> Result<()> {
    w.write_all(bytes)?;
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn meta_trailer_round_trip() {
        let mut meta = Meta::new();
        meta.insert("config_hash".into(), "abc".into());
        meta.insert("subjects".into(), "s1,s2".into());
        let mut buf = b"XXXX".to_vec();
        put_meta(&mut buf, &meta).unwrap();
        let mut r = Reader::new(&buf, "test");
        r.magic(b"XXXX").unwrap();
        assert_eq!(r.finish_with_meta().unwrap(), meta);
    }

    #[test]
    fn garbage_after_layout_rejected() {
        let buf = b"XXXXjunk".to_vec();
        let mut r = Reader::new(&buf, "test");
        r.magic(b"XXXX").unwrap();
        assert!(r.finish_with_meta().is_err());
    }
}
