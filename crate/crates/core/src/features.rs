//! `SSFT` feature tables: one row per epoch with its label.

use crate::error::{Error, Result};
use crate::io::{self, Meta, Reader};
use crate::matrix::Matrix;

pub const FEATURE_MAGIC: &[u8; 4] = b"SSFT";
const UNLABELED: u8 = 255;

/// Tag byte of the representation stored in a feature table.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ViewTag {
    Time = 0,
    Spec = 1,
    Concat = 2,
    /// The epoch samples themselves.
    Raw = 3,
}

impl ViewTag {
    pub fn from_byte(b: u8) -> Result<Self> {
        Ok(match b {
            0 => ViewTag::Time,
            1 => ViewTag::Spec,
            2 => ViewTag::Concat,
            3 => ViewTag::Raw,
            other => return Err(Error::Format(format!("unknown view tag {other}"))),
        })
    }

    pub fn name(self) -> &'static str {
        ["time", "spec", "concat", "raw"][self as usize]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub view: ViewTag,
    pub rows: usize,
    pub dim: usize,
    pub data: Vec<f32>,
    pub labels: Vec<Option<u8>>,
    /// Subject id of every row; stored in the metadata trailer.
    pub subjects: Vec<String>,
    pub meta: Meta,
}

impl FeatureMatrix {
    pub fn new(view: ViewTag, dim: usize, data: Vec<f32>, labels: Vec<Option<u8>>, subjects: Vec<String>) -> Result<Self> {
        let rows = labels.len();
        if data.len() != rows * dim || subjects.len() != rows {
            return Err(Error::Dimension(format!(
                "{} values, {} labels and {} subjects for dim {dim}",
                data.len(),
                rows,
                subjects.len()
            )));
        }
        Ok(Self {
            view,
            rows,
            dim,
            data,
            labels,
            subjects,
            meta: Meta::new(),
        })
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    /// Labelled rows as an `f64` matrix, their labels and subjects.
    pub fn labelled(&self) -> Result<(Matrix, Vec<u8>, Vec<String>)> {
        let idx: Vec<usize> = (0..self.rows).filter(|&i| self.labels[i].is_some()).collect();
        let mut data = Vec::with_capacity(idx.len() * self.dim);
        for &i in &idx {
            data.extend(self.row(i).iter().map(|&v| v as f64));
        }
        Ok((
            Matrix::new(idx.len(), self.dim, data)?,
            idx.iter().map(|&i| self.labels[i].unwrap()).collect(),
            idx.iter().map(|&i| self.subjects[i].clone()).collect(),
        ))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        if self.subjects.iter().any(|s| s.contains([',', '\n'])) {
            return Err(Error::InvalidArgument("subject ids may not contain ',' or newlines".into()));
        }
        let mut buf = Vec::with_capacity(self.data.len() * 4 + self.rows + 64);
        buf.extend_from_slice(FEATURE_MAGIC);
        buf.extend_from_slice(&(self.rows as u32).to_le_bytes());
        buf.extend_from_slice(&(self.dim as u32).to_le_bytes());
        buf.push(self.view as u8);
        for i in 0..self.rows {
            buf.push(self.labels[i].unwrap_or(UNLABELED));
            io::put_f32s(&mut buf, self.row(i));
        }
        let mut meta = self.meta.clone();
        meta.insert("subjects".into(), self.subjects.join(","));
        io::put_meta(&mut buf, &meta)?;
        Ok(buf)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes, "feature file");
        r.magic(FEATURE_MAGIC)?;
        let rows = r.u32()? as usize;
        let dim = r.u32()? as usize;
        let view = ViewTag::from_byte(r.u8()?)?;
        let mut data = Vec::with_capacity((rows * dim).min(1 << 26));
        let mut labels = Vec::with_capacity(rows.min(1 << 20));
        for _ in 0..rows {
            labels.push(match r.u8()? {
                UNLABELED => None,
                l => Some(l),
            });
            r.f32s(dim, &mut data)?;
        }
        let mut meta = r.finish_with_meta()?;
        let subjects: Vec<String> = match meta.remove("subjects") {
            Some(s) if rows > 0 => s.split(',').map(str::to_string).collect(),
            _ => vec![String::new(); rows],
        };
        if subjects.len() != rows {
            return Err(Error::Format(format!("{} subject ids for {rows} rows", subjects.len())));
        }
        let mut m = Self::new(view, dim, data, labels, subjects)?;
        m.meta = meta;
        Ok(m)
    }

    pub fn write(&self, path: &std::path::Path) -> Result<()> {
        io::write_all(std::fs::File::create(path)?, &self.to_bytes()?)
    }

    pub fn read(path: &std::path::Path) -> Result<Self> {
        Self::from_bytes(&io::read_all(std::fs::File::open(path)?)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let mut f = FeatureMatrix::new(
            ViewTag::Concat,
            2,
            vec![1.0, 2.0, 3.0, 4.0],
            vec![Some(1), None],
            vec!["a".into(), "b".into()],
        )
        .unwrap();
        f.meta.insert("config_hash".into(), "x".into());
        let bytes = f.to_bytes().unwrap();
        assert_eq!(&bytes[..4], b"SSFT");
        assert_eq!(bytes[12], 2);
        assert_eq!(FeatureMatrix::from_bytes(&bytes).unwrap(), f);
        let (m, y, s) = f.labelled().unwrap();
        assert_eq!((m.rows(), y, s), (1, vec![1], vec!["a".to_string()]));
    }

    #[test]
    fn bad_tag_rejected() {
        let mut bytes = FeatureMatrix::new(ViewTag::Time, 1, vec![0.0], vec![None], vec!["a".into()])
            .unwrap()
            .to_bytes()
            .unwrap();
        bytes[12] = 9;
        assert!(FeatureMatrix::from_bytes(&bytes).is_err());
    }
}
