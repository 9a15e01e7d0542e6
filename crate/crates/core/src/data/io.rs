//! `KDDS` dataset files.
//!
//! Layout (little-endian): magic `KDDS`, version u16, flags u8 (bit 0 set
//! for labeled sets), num_classes u16, count u32, C u8, H u16, W u16, then
//! per sample its raw `C·H·W` pixel bytes followed by a u16 label (labeled
//! sets only), then a CRC-64 of all preceding bytes.

use std::fs;
use std::path::Path;

use super::{ImageSample, LabeledSet, UnlabeledSet};
use crate::codec::{seal, Reader};
use crate::error::{Error, Result};

const MAGIC: &str = "KDDS";
const VERSION: u16 = 1;
const WHAT: &str = "dataset";
const FLAG_LABELED: u8 = 1;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Dataset {
    Labeled(LabeledSet),
    Unlabeled(UnlabeledSet),
}

impl Dataset {
    pub fn is_labeled(&self) -> bool {
        matches!(self, Dataset::Labeled(_))
    }

    pub fn len(&self) -> usize {
        self.samples().len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples().is_empty()
    }

    pub fn samples(&self) -> &[ImageSample] {
        match self {
            Dataset::Labeled(s) => s.samples(),
            Dataset::Unlabeled(s) => s.samples(),
        }
    }

    pub fn into_labeled(self) -> Result<LabeledSet> {
        match self {
            Dataset::Labeled(s) => Ok(s),
            Dataset::Unlabeled(_) => Err(Error::InvalidArgument("expected a labeled dataset".into())),
        }
    }

    pub fn into_unlabeled(self) -> Result<UnlabeledSet> {
        match self {
            Dataset::Unlabeled(s) => Ok(s),
            Dataset::Labeled(_) => Err(Error::InvalidArgument("expected an unlabeled dataset".into())),
        }
    }
}

impl From<LabeledSet> for Dataset {
    fn from(s: LabeledSet) -> Self {
        Dataset::Labeled(s)
    }
}

impl From<UnlabeledSet> for Dataset {
    fn from(s: UnlabeledSet) -> Self {
        Dataset::Unlabeled(s)
    }
}

pub fn write_dataset(set: &Dataset) -> Result<Vec<u8>> {
    let [c, h, w] = set.samples().first().map_or([1, 16, 16], ImageSample::shape);
    if set.len() > u32::MAX as usize || h > u16::MAX as usize || w > u16::MAX as usize {
        return Err(Error::InvalidArgument("dataset too large for KDDS".into()));
    }
    let (flags, num_classes) = match set {
        Dataset::Labeled(s) => (FLAG_LABELED, s.num_classes()),
        Dataset::Unlabeled(_) => (0, 0),
    };
    let num_classes = u16::try_from(num_classes).map_err(|_| Error::InvalidArgument("too many classes".into()))?;
    let mut buf = Vec::with_capacity(32 + set.len() * (c * h * w + 2));
    buf.extend_from_slice(MAGIC.as_bytes());
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.push(flags);
    buf.extend_from_slice(&num_classes.to_le_bytes());
    buf.extend_from_slice(&(set.len() as u32).to_le_bytes());
    buf.push(c as u8);
    buf.extend_from_slice(&(h as u16).to_le_bytes());
    buf.extend_from_slice(&(w as u16).to_le_bytes());
    for s in set.samples() {
        buf.extend_from_slice(s.pixels());
        if let Some(l) = s.label.filter(|_| set.is_labeled()) {
            buf.extend_from_slice(&(l as u16).to_le_bytes());
        }
    }
    seal(&mut buf);
    Ok(buf)
}

pub fn read_dataset(bytes: &[u8]) -> Result<Dataset> {
    let mut r = Reader::new(bytes, WHAT);
    r.expect_magic(MAGIC)?;
    let version = r.u16()?;
    if version != VERSION {
        return Err(Error::UnsupportedVersion { what: WHAT, version });
    }
    let labeled = r.u8()? & FLAG_LABELED != 0;
    let num_classes = r.u16()? as usize;
    let count = r.u32()? as usize;
    let (c, h, w) = (r.u8()? as usize, r.u16()? as usize, r.u16()? as usize);
    let mut raw = Vec::with_capacity(count.min(1 << 20));
    for _ in 0..count {
        let pixels = r.take(c * h * w)?.to_vec();
        let label = if labeled { Some(r.u16()? as usize) } else { None };
        raw.push((pixels, label));
    }
    r.finish_with_crc()?;

    let samples = raw.into_iter().map(|(p, l)| ImageSample::new(c, h, w, p, l)).collect::<Result<Vec<_>>>()?;
    Ok(if labeled {
        Dataset::Labeled(LabeledSet::new(samples, num_classes)?)
    } else {
        Dataset::Unlabeled(UnlabeledSet::new(samples)?)
    })
}

pub fn save_dataset(path: impl AsRef<Path>, set: &Dataset) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, write_dataset(set)?).map_err(|e| Error::io(path, e))
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    read_dataset(&bytes)
}
