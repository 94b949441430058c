use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{io_err, CliResult};

fn temp_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(format!(".tmp{}", std::process::id()));
    path.with_file_name(name)
}

/// Writes `bytes` to a sibling temp file, syncs it and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let tmp = temp_path(path);
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()
    })();
    if let Err(e) = result {
        let _ = fs::remove_file(&tmp);
        return Err(io_err(path)(e));
    }
    fs::rename(&tmp, path).map_err(io_err(path))
}

pub fn read(path: &Path) -> CliResult<Vec<u8>> {
    fs::read(path).map_err(io_err(path))
}

/// Little-endian cursor that reports the byte offset of every failure.
pub struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    what: &'a str,
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8], what: &'a str) -> Self {
        Self { buf, pos: 0, what }
    }

    pub fn pos(&self) -> usize {
        self.pos
    }

    pub fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub fn error(&self, at: usize, msg: impl std::fmt::Display) -> crate::CliError {
        crate::CliError::Data(format!("{}: byte {}: {}", self.what, at, msg))
    }

    pub fn take(&mut self, n: usize) -> CliResult<&'a [u8]> {
        if self.remaining() < n {
            return Err(self.error(self.pos, format!("need {} bytes, only {} left", n, self.remaining())));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u8(&mut self) -> CliResult<u8> {
        Ok(self.take(1)?[0])
    }

    pub fn u16(&mut self) -> CliResult<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    pub fn u32(&mut self) -> CliResult<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn u64(&mut self) -> CliResult<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn f32(&mut self) -> CliResult<f32> {
        Ok(f32::from_bits(self.u32()?))
    }

    pub fn f64(&mut self) -> CliResult<f64> {
        Ok(f64::from_bits(self.u64()?))
    }

    /// Length-prefixed (`u64`) element count, checked against the bytes left.
    pub fn len(&mut self, elem: usize) -> CliResult<usize> {
        let at = self.pos;
        let n = self.u64()?;
        if n.saturating_mul(elem as u64) > self.remaining() as u64 {
            return Err(self.error(at, format!("length {} exceeds the {} bytes left", n, self.remaining())));
        }
        Ok(n as usize)
    }

    pub fn bytes(&mut self) -> CliResult<&'a [u8]> {
        let n = self.len(1)?;
        self.take(n)
    }

    pub fn string(&mut self) -> CliResult<String> {
        let at = self.pos;
        let b = self.bytes()?;
        String::from_utf8(b.to_vec()).map_err(|_| self.error(at, "string is not UTF-8"))
    }

    pub fn f32s(&mut self) -> CliResult<Vec<f32>> {
        let n = self.len(4)?;
        (0..n).map(|_| self.f32()).collect()
    }

    pub fn f64s(&mut self) -> CliResult<Vec<f64>> {
        let n = self.len(8)?;
        (0..n).map(|_| self.f64()).collect()
    }

    pub fn expect_end(&self) -> CliResult<()> {
        if self.remaining() != 0 {
            return Err(self.error(self.pos, format!("{} trailing bytes", self.remaining())));
        }
        Ok(())
    }
}

/// Little-endian byte sink mirroring [`Reader`].
#[derive(Default)]
pub struct Writer {
    pub buf: Vec<u8>,
}

impl Writer {
    pub fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    pub fn u16(&mut self, v: u16) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f32(&mut self, v: f32) {
        self.u32(v.to_bits());
    }

    pub fn f64(&mut self, v: f64) {
        self.u64(v.to_bits());
    }

    pub fn bytes(&mut self, b: &[u8]) {
        self.u64(b.len() as u64);
        self.buf.extend_from_slice(b);
    }

    pub fn string(&mut self, s: &str) {
        self.bytes(s.as_bytes());
    }

    pub fn f32s(&mut self, v: &[f32]) {
        self.u64(v.len() as u64);
        v.iter().for_each(|x| self.f32(*x));
    }

    pub fn f64s(&mut self, v: &[f64]) {
        self.u64(v.len() as u64);
        v.iter().for_each(|x| self.f64(*x));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn atomic_write_replaces_and_leaves_no_temp() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sub/file.bin");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(fs::read(&p).unwrap(), b"two");
        assert_eq!(fs::read_dir(p.parent().unwrap()).unwrap().count(), 1);
    }

    #[test]
    fn reader_reports_offsets() {
        let mut w = Writer::default();
        w.u32(7);
        w.f64s(&[1.5, -0.0]);
        let mut r = Reader::new(&w.buf, "test");
        assert_eq!(r.u32().unwrap(), 7);
        let v = r.f64s().unwrap();
        assert_eq!(v[1].to_bits(), (-0.0f64).to_bits());
        r.expect_end().unwrap();

        let mut r = Reader::new(&w.buf[..10], "test");
        r.u32().unwrap();
        let e = r.f64s().unwrap_err().to_string();
        assert!(e.contains("byte 4"), "{e}");
    }
}
