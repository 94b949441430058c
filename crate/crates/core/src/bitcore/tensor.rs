use alloc::vec;
use alloc::vec::Vec;

use crate::error::bail;
use crate::Result;

/// Internal packing word. The byte-level export format does not depend on it.
pub type Word = u64;
pub const WORD_BITS: usize = Word::BITS as usize;

/// How the bits of a [`BitTensor`] are read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum BitSemantics {
    /// `{0, 1}` bit planes, e.g. thermometer encoder output.
    Plane01,
    /// Bit `b` stands for `2b - 1`, i.e. `{-1, +1}`.
    Signed,
}

/// Row-major bit-packed tensor.
///
/// The innermost dimension forms a row; each row starts on a word boundary
/// and the bits past the end of a row are always zero.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BitTensor {
    shape: Vec<usize>,
    semantics: BitSemantics,
    row_len: usize,
    words_per_row: usize,
    words: Vec<Word>,
}

impl BitTensor {
    pub fn zeros(shape: &[usize], semantics: BitSemantics) -> Self {
        let row_len = shape.last().copied().unwrap_or(1);
        let rows = if shape.is_empty() {
            1
        } else {
            shape[..shape.len() - 1].iter().product()
        };
        let words_per_row = row_len.div_ceil(WORD_BITS);
        Self {
            shape: shape.to_vec(),
            semantics,
            row_len,
            words_per_row,
            words: vec![0; rows * words_per_row],
        }
    }

    /// Builds a tensor from one `0`/`1` byte per element (row-major).
    pub fn from_bits(shape: &[usize], semantics: BitSemantics, bits: &[u8]) -> Result<Self> {
        let mut t = Self::zeros(shape, semantics);
        if bits.len() != t.len() {
            bail!(Dimension, "{} bits given for shape {:?}", bits.len(), shape);
        }
        for (i, &b) in bits.iter().enumerate() {
            if b > 1 {
                bail!(Domain, "bit value {} at index {}", b, i);
            }
            if b == 1 {
                t.set(i, true);
            }
        }
        Ok(t)
    }

    /// Builds a signed tensor from `+1`/`-1` values.
    pub fn from_signs(shape: &[usize], signs: &[i8]) -> Result<Self> {
        let mut t = Self::zeros(shape, BitSemantics::Signed);
        if signs.len() != t.len() {
            bail!(Dimension, "{} values given for shape {:?}", signs.len(), shape);
        }
        for (i, &s) in signs.iter().enumerate() {
            match s {
                1 => t.set(i, true),
                -1 => {}
                _ => bail!(Domain, "sign value {} at index {} is not +-1", s, i),
            }
        }
        Ok(t)
    }

    /// Builds a signed tensor from reals using `sign(0) = +1`.
    pub fn from_signs_f32(shape: &[usize], values: &[f32]) -> Result<Self> {
        let mut t = Self::zeros(shape, BitSemantics::Signed);
        if values.len() != t.len() {
            bail!(Dimension, "{} values given for shape {:?}", values.len(), shape);
        }
        let row_len = t.row_len;
        let wpr = t.words_per_row;
        if row_len == 0 {
            return Ok(t);
        }
        for (r, row) in values.chunks(row_len).enumerate() {
            let dst = &mut t.words[r * wpr..(r + 1) * wpr];
            for (w, chunk) in row.chunks(WORD_BITS).enumerate() {
                let mut word: Word = 0;
                for (b, &v) in chunk.iter().enumerate() {
                    word |= Word::from(v >= 0.0) << b;
                }
                dst[w] = word;
            }
        }
        Ok(t)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn semantics(&self) -> BitSemantics {
        self.semantics
    }

    pub fn with_semantics(mut self, semantics: BitSemantics) -> Self {
        self.semantics = semantics;
        self
    }

    /// Number of logical elements.
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn row_len(&self) -> usize {
        self.row_len
    }

    pub fn words_per_row(&self) -> usize {
        self.words_per_row
    }

    pub fn words(&self) -> &[Word] {
        &self.words
    }

    pub fn row(&self, r: usize) -> &[Word] {
        &self.words[r * self.words_per_row..(r + 1) * self.words_per_row]
    }

    #[inline]
    fn locate(&self, i: usize) -> (usize, usize) {
        let r = i / self.row_len;
        let c = i % self.row_len;
        (r * self.words_per_row + c / WORD_BITS, c % WORD_BITS)
    }

    #[inline]
    pub fn get(&self, i: usize) -> bool {
        let (w, b) = self.locate(i);
        (self.words[w] >> b) & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, i: usize, bit: bool) {
        let (w, b) = self.locate(i);
        if bit {
            self.words[w] |= 1 << b;
        } else {
            self.words[w] &= !(1 << b);
        }
    }

    /// Element as an integer under the tensor's semantics (`0/1` or `-1/+1`).
    pub fn value(&self, i: usize) -> i32 {
        let b = i32::from(self.get(i));
        match self.semantics {
            BitSemantics::Plane01 => b,
            BitSemantics::Signed => 2 * b - 1,
        }
    }

    /// One `0`/`1` byte per element.
    pub fn to_bits(&self) -> Vec<u8> {
        (0..self.len()).map(|i| u8::from(self.get(i))).collect()
    }

    /// `-1`/`+1` per element regardless of semantics.
    pub fn to_signs(&self) -> Vec<i8> {
        (0..self.len()).map(|i| if self.get(i) { 1 } else { -1 }).collect()
    }

    /// Bitwise complement of every logical element; padding stays zero.
    pub fn complement(&self) -> Self {
        let mut out = self.clone();
        let tail = self.row_len % WORD_BITS;
        for (i, w) in out.words.iter_mut().enumerate() {
            *w = !*w;
            if tail != 0 && i % self.words_per_row == self.words_per_row - 1 {
                *w &= (1 << tail) - 1;
            }
        }
        out
    }

    /// Contiguous byte stream: element `i` lives in byte `i / 8`, bit `i % 8`
    /// (little-endian bit order), no per-row padding.
    pub fn to_bytes(&self) -> Vec<u8> {
        let n = self.len();
        let mut out = vec![0u8; n.div_ceil(8)];
        for i in 0..n {
            if self.get(i) {
                out[i / 8] |= 1 << (i % 8);
            }
        }
        out
    }

    pub fn from_bytes(shape: &[usize], semantics: BitSemantics, bytes: &[u8]) -> Result<Self> {
        let mut t = Self::zeros(shape, semantics);
        let n = t.len();
        if bytes.len() != n.div_ceil(8) {
            bail!(
                Dimension,
                "{} bytes given, {} needed for shape {:?}",
                bytes.len(),
                n.div_ceil(8),
                shape
            );
        }
        for i in 0..n {
            if (bytes[i / 8] >> (i % 8)) & 1 == 1 {
                t.set(i, true);
            }
        }
        if n % 8 != 0 && bytes[n / 8] >> (n % 8) != 0 {
            bail!(Domain, "nonzero padding bits in final byte");
        }
        Ok(t)
    }

    /// Checks the zero-padding invariant.
    pub fn padding_is_clean(&self) -> bool {
        let tail = self.row_len % WORD_BITS;
        if tail == 0 {
            return true;
        }
        self.words
            .chunks(self.words_per_row)
            .all(|row| row[self.words_per_row - 1] >> tail == 0)
    }
}

/// Dense tensor of 32-bit popcount accumulators.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct IntTensor {
    shape: Vec<usize>,
    data: Vec<i32>,
}

impl IntTensor {
    pub fn new(shape: &[usize], data: Vec<i32>) -> Result<Self> {
        if shape.iter().product::<usize>() != data.len() {
            bail!(Dimension, "{} values for shape {:?}", data.len(), shape);
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![0; shape.iter().product()],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[i32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [i32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<i32> {
        self.data
    }
}
