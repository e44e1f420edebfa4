//! Binary masks and their run-length encoding.
//!
//! Runs are taken in row-major order and alternate between 0 and 1, always
//! starting with the count of zeros (possibly 0). `[2, 3, 1]` over a 1x6 mask
//! is `0 0 1 1 1 0`.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(height: usize, width: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != height * width {
            return Err(Error::shape("mask", format!("{height}x{width}"), format!("{} pixels", bits.len())));
        }
        Ok(BinaryMask { height, width, bits })
    }

    pub fn empty(height: usize, width: usize) -> Self {
        BinaryMask {
            height,
            width,
            bits: vec![false; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut bits = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                bits.push(f(y, x));
            }
        }
        BinaryMask { height, width, bits }
    }

    pub fn extent(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, y: usize, x: usize) -> bool {
        self.bits[y * self.width + x]
    }

    pub fn area(&self) -> u64 {
        self.bits.iter().filter(|&&b| b).count() as u64
    }

    /// Run lengths as described in the module docs.
    pub fn to_rle(&self) -> Vec<u64> {
        let mut counts = Vec::new();
        let mut current = false;
        let mut run = 0u64;
        for &b in &self.bits {
            if b != current {
                counts.push(run);
                run = 0;
                current = b;
            }
            run += 1;
        }
        counts.push(run);
        counts
    }

    pub fn from_rle(height: usize, width: usize, counts: &[u64]) -> Result<Self> {
        let total: u64 = counts.iter().sum();
        if total != (height * width) as u64 {
            return Err(Error::malformed(
                "RLE mask",
                format!("runs cover {total} pixels, extent {height}x{width} has {}", height * width),
            ));
        }
        let mut bits = Vec::with_capacity(height * width);
        for (i, &n) in counts.iter().enumerate() {
            bits.extend(std::iter::repeat_n(i % 2 == 1, n as usize));
        }
        Ok(BinaryMask { height, width, bits })
    }
}

/// One line of an instance-prediction JSON lines file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RleRecord {
    pub category: u32,
    pub score: f32,
    /// `[height, width]`.
    pub size: [usize; 2],
    pub counts: Vec<u64>,
}

impl RleRecord {
    pub fn from_mask(category: u32, score: f32, mask: &BinaryMask) -> Self {
        RleRecord {
            category,
            score,
            size: [mask.height, mask.width],
            counts: mask.to_rle(),
        }
    }

    pub fn mask(&self) -> Result<BinaryMask> {
        BinaryMask::from_rle(self.size[0], self.size[1], &self.counts)
    }
}

/// Reads records, skipping blank lines. Errors name the 1-based line.
pub fn read_jsonl(reader: impl BufRead) -> Result<Vec<RleRecord>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: RleRecord =
            serde_json::from_str(&line).map_err(|e| Error::malformed(format!("instance line {}", i + 1), e))?;
        rec.mask()
            .map_err(|e| Error::malformed(format!("instance line {}", i + 1), e))?;
        out.push(rec);
    }
    Ok(out)
}

pub fn write_jsonl(mut writer: impl Write, records: &[RleRecord]) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut writer, r).map_err(std::io::Error::from)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn documented_example() {
        let m = BinaryMask::from_rle(1, 6, &[2, 3, 1]).unwrap();
        assert_eq!(m.bits(), &[false, false, true, true, true, false]);
        assert_eq!(m.to_rle(), vec![2, 3, 1]);
    }

    #[test]
    fn leading_one_gets_zero_run() {
        let m = BinaryMask::new(2, 2, vec![true, true, false, true]).unwrap();
        assert_eq!(m.to_rle(), vec![0, 2, 1, 1]);
        assert_eq!(BinaryMask::from_rle(2, 2, &m.to_rle()).unwrap(), m);
        assert_eq!(BinaryMask::empty(3, 3).to_rle(), vec![9]);
    }

    #[test]
    fn run_total_must_match_extent() {
        assert!(BinaryMask::from_rle(2, 2, &[1, 2]).is_err());
        assert!(BinaryMask::new(2, 2, vec![true]).is_err());
    }

    #[test]
    fn jsonl_round_trip_and_errors() {
        let m = BinaryMask::from_fn(3, 4, |y, x| y == x);
        let recs = vec![RleRecord::from_mask(2, 0.75, &m), RleRecord::from_mask(5, 0.5, &BinaryMask::empty(3, 4))];
        let mut buf = Vec::new();
        write_jsonl(&mut buf, &recs).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(read_jsonl(format!("{text}\n\n").as_bytes()).unwrap(), recs);
        let err = read_jsonl(r#"{"category":1,"score":1,"size":[2,2],"counts":[3]}"#.as_bytes()).unwrap_err();
        assert!(err.to_string().contains("line 1"), "{err}");
        assert!(read_jsonl("{".as_bytes()).is_err());
    }
}
