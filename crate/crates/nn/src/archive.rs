//! Versioned single-file checkpoint: a JSON header describing every section
//! and tensor, followed by the tensor values as little-endian `f64`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ps_core::Scalar;
use serde::{Deserialize, Serialize};

use crate::{NnError, ParamSet, Result, Tensor};

const MAGIC: &[u8; 8] = b"PSSARCH\x01";
pub const ARCHIVE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Section {
    pub name: String,
    pub tensors: Vec<(String, Tensor<f64>)>,
}

impl Section {
    pub fn new(name: impl Into<String>) -> Self {
        Section { name: name.into(), tensors: Vec::new() }
    }

    pub fn from_params<T: Scalar>(name: impl Into<String>, set: &ParamSet<T>) -> Self {
        Section {
            name: name.into(),
            tensors: set.names.iter().cloned().zip(set.tensors.iter().map(|t| t.cast())).collect(),
        }
    }

    pub fn push<T: Scalar>(&mut self, name: impl Into<String>, t: &Tensor<T>) {
        self.tensors.push((name.into(), t.cast()));
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<f64>> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    /// Overwrites every parameter of `set` by name; shapes must agree.
    pub fn load_into<T: Scalar>(&self, set: &mut ParamSet<T>) -> Result<()> {
        for (name, dst) in set.names.iter().zip(set.tensors.iter_mut()) {
            let src = self.get(name).ok_or_else(|| NnError::MissingParam(format!("{}/{}", self.name, name)))?;
            if src.shape != dst.shape {
                return Err(NnError::Shape { op: "load_into", detail: format!("{name}: {:?} vs {:?}", src.shape, dst.shape) });
            }
            *dst = src.cast();
        }
        Ok(())
    }

    pub fn tensors_as<T: Scalar>(&self) -> Vec<(String, Tensor<T>)> {
        self.tensors.iter().map(|(n, t)| (n.clone(), t.cast())).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Archive {
    pub version: u32,
    pub meta: serde_json::Value,
    pub sections: Vec<Section>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    version: u32,
    meta: serde_json::Value,
    sections: Vec<SectionHeader>,
}

#[derive(Serialize, Deserialize)]
struct SectionHeader {
    name: String,
    tensors: Vec<(String, Vec<usize>)>,
}

impl Archive {
    pub fn new(meta: serde_json::Value) -> Self {
        Archive { version: ARCHIVE_VERSION, meta, sections: Vec::new() }
    }

    pub fn section(&self, name: &str) -> Option<&Section> {
        self.sections.iter().find(|s| s.name == name)
    }

    pub fn require(&self, name: &str) -> Result<&Section> {
        self.section(name).ok_or_else(|| NnError::Format(format!("missing section {name}")))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let header = Header {
            version: self.version,
            meta: self.meta.clone(),
            sections: self
                .sections
                .iter()
                .map(|s| SectionHeader { name: s.name.clone(), tensors: s.tensors.iter().map(|(n, t)| (n.clone(), t.shape.clone())).collect() })
                .collect(),
        };
        let json = serde_json::to_vec(&header)?;
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(MAGIC)?;
        w.write_all(&(json.len() as u64).to_le_bytes())?;
        w.write_all(&json)?;
        for s in &self.sections {
            for (_, t) in &s.tensors {
                for v in &t.data {
                    w.write_all(&v.to_le_bytes())?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(NnError::Format("not a checkpoint archive".into()));
        }
        let mut len = [0u8; 8];
        r.read_exact(&mut len)?;
        let mut json = vec![0u8; u64::from_le_bytes(len) as usize];
        r.read_exact(&mut json)?;
        let header: Header = serde_json::from_slice(&json)?;
        if header.version != ARCHIVE_VERSION {
            return Err(NnError::Format(format!("unsupported archive version {}", header.version)));
        }
        let mut sections = Vec::new();
        let mut buf = [0u8; 8];
        for sh in header.sections {
            let mut s = Section::new(sh.name);
            for (name, shape) in sh.tensors {
                let n: usize = shape.iter().product();
                let mut data = Vec::with_capacity(n);
                for _ in 0..n {
                    r.read_exact(&mut buf)?;
                    data.push(f64::from_le_bytes(buf));
                }
                s.tensors.push((name, Tensor::new(shape, data)));
            }
            sections.push(s);
        }
        Ok(Archive { version: header.version, meta: header.meta, sections })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn save_load_round_trip() {
        let mut set = ParamSet::<f32>::new(3);
        set.add("a", Tensor::new(vec![2, 2], vec![1.5, -2.25, 3.0, 0.1]));
        set.add("b", Tensor::scalar(7.0));
        let mut arc = Archive::new(serde_json::json!({"profile": "toy"}));
        arc.sections.push(Section::from_params("net", &set));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.ckpt");
        arc.save(&path).unwrap();
        let back = Archive::load(&path).unwrap();
        assert_eq!(back, arc);
        let mut other = ParamSet::<f32>::new(3);
        other.add("a", Tensor::zeros(&[2, 2]));
        other.add("b", Tensor::scalar(0.0));
        back.require("net").unwrap().load_into(&mut other).unwrap();
        assert_eq!(other.tensors, set.tensors);
    }

    #[test]
    fn rejects_foreign_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x");
        std::fs::write(&path, b"hello world, not an archive").unwrap();
        assert!(matches!(Archive::load(&path), Err(NnError::Format(_))));
    }
}
