//! Model file: a versioned header followed by named binary sections.
//!
//! ```text
//! magic    8 bytes  "STMPFEAT"
//! version  u32 LE
//! count    u32 LE   number of sections
//! section  u16 LE name length, name (UTF-8), u64 LE payload length, payload
//! ```
//!
//! Reals are little-endian IEEE-754 `f64`, integers little-endian `u64`.
//! Writes go to a temporary file in the target directory and are renamed into
//! place, so a failed save never leaves a partial model behind.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use crate::classifier::LinearModel;
use crate::dictionary::{AtomScores, Dictionary, RankedDictionary};
use crate::error::{Error, Result};
use crate::features::feature_len;
use crate::pipeline::PreprocessConfig;
use crate::whitening::WhiteningTransform;

pub const MAGIC: &[u8; 8] = b"STMPFEAT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct ModelFile {
    pub preprocess: PreprocessConfig,
    pub ranked: RankedDictionary,
    pub svm: Option<LinearModel>,
    /// Seeds, manifest hashes and similar free-form facts.
    pub provenance: BTreeMap<String, String>,
}

fn format_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::ModelFormat(msg.into()))
}

impl ModelFile {
    pub fn new(preprocess: PreprocessConfig, ranked: RankedDictionary) -> Result<Self> {
        let m = ModelFile {
            preprocess,
            ranked,
            svm: None,
            provenance: BTreeMap::new(),
        };
        m.check()?;
        Ok(m)
    }

    /// Cross-field consistency: patch size, atom length and SVM dimension.
    pub fn check(&self) -> Result<()> {
        let p = &self.preprocess;
        if p.patch == 0 || p.patch > p.height || p.patch > p.width {
            return format_err(format!("patch {} does not fit {}x{}", p.patch, p.height, p.width));
        }
        if self.ranked.dict().atom_side() != p.patch {
            return format_err(format!(
                "atom side {} does not match patch size {}",
                self.ranked.dict().atom_side(),
                p.patch
            ));
        }
        if let Some(svm) = &self.svm {
            let expected = feature_len(self.ranked.v());
            if svm.dim() != expected {
                return format_err(format!("SVM dimension {} does not match 16 * v = {expected}", svm.dim()));
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.check()?;
        let rd = &self.ranked;
        let dict = rd.dict();
        let w = rd.whitening();
        let mut sections: Vec<(&str, Vec<u8>)> = Vec::new();
        let p = &self.preprocess;
        sections.push((
            "config",
            u64s(&[p.height as u64, p.width as u64, p.patch as u64, dict.k() as u64, rd.v() as u64]),
        ));
        sections.push(("whiten.epsilon", f64s(&[w.epsilon()])));
        sections.push(("whiten.mean", f64s(w.mean())));
        sections.push(("whiten.matrix", f64s(w.matrix())));
        sections.push(("atoms", f64s(&dict.atoms().concat())));
        sections.push(("scores", f64s(rd.scores().scores())));
        sections.push((
            "rank",
            u64s(&rd.scores().rank().iter().map(|&r| r as u64).collect::<Vec<_>>()),
        ));
        if let Some(svm) = &self.svm {
            let mut v = vec![svm.c(), svm.bias()];
            v.extend_from_slice(svm.weights());
            sections.push(("svm", f64s(&v)));
        }
        let prov: String = self.provenance.iter().map(|(k, v)| format!("{k}={v}\n")).collect();
        sections.push(("provenance", prov.into_bytes()));

        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(sections.len() as u32).to_le_bytes());
        for (name, payload) in sections {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
            out.extend_from_slice(&payload);
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return format_err("bad magic; not a model file");
        }
        let version = u32::from_le_bytes(r.take(4)?.try_into().unwrap());
        if version != FORMAT_VERSION {
            return format_err(format!("unsupported model version {version} (expected {FORMAT_VERSION})"));
        }
        let count = u32::from_le_bytes(r.take(4)?.try_into().unwrap());
        let mut sections: BTreeMap<String, &[u8]> = BTreeMap::new();
        for _ in 0..count {
            let name_len = u16::from_le_bytes(r.take(2)?.try_into().unwrap()) as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| Error::ModelFormat("section name is not UTF-8".into()))?
                .to_owned();
            let len = u64::from_le_bytes(r.take(8)?.try_into().unwrap()) as usize;
            sections.insert(name, r.take(len)?);
        }
        if r.pos != bytes.len() {
            return format_err("trailing bytes after last section");
        }
        let get = |name: &str| {
            sections
                .get(name)
                .copied()
                .ok_or_else(|| Error::ModelFormat(format!("missing section {name:?}")))
        };

        let config = read_u64s(get("config")?)?;
        let [height, width, patch, k, v] = config[..] else {
            return format_err("config section has the wrong length");
        };
        let (height, width, patch, k, v) = (height as usize, width as usize, patch as usize, k as usize, v as usize);
        let epsilon = read_f64s(get("whiten.epsilon")?)?;
        let [epsilon] = epsilon[..] else {
            return format_err("epsilon section has the wrong length");
        };
        let dim = patch * patch;
        let mean = read_f64s(get("whiten.mean")?)?;
        let matrix = read_f64s(get("whiten.matrix")?)?;
        let atoms = read_f64s(get("atoms")?)?;
        if mean.len() != dim || matrix.len() != dim * dim || atoms.len() != k * dim {
            return format_err("whitening or atom sections disagree with the patch size");
        }
        let whitening = WhiteningTransform::from_parts(mean, matrix, epsilon)?;
        let dict = Dictionary::new(patch, atoms.chunks_exact(dim).map(<[f64]>::to_vec).collect())?;
        let scores = AtomScores::from_scores(read_f64s(get("scores")?)?)?;
        let rank: Vec<usize> = read_u64s(get("rank")?)?.into_iter().map(|r| r as usize).collect();
        if rank != scores.rank() {
            return format_err("stored rank disagrees with stored scores");
        }
        let ranked = RankedDictionary::new(dict, scores, v, whitening)?;

        let svm = match sections.get("svm") {
            None => None,
            Some(bytes) => {
                let v = read_f64s(bytes)?;
                if v.len() < 3 {
                    return format_err("svm section too short");
                }
                Some(LinearModel::new(v[2..].to_vec(), v[1], v[0])?)
            }
        };
        let prov = std::str::from_utf8(get("provenance")?)
            .map_err(|_| Error::ModelFormat("provenance is not UTF-8".into()))?;
        let provenance = prov
            .lines()
            .filter_map(|l| l.split_once('=').map(|(a, b)| (a.to_owned(), b.to_owned())))
            .collect();
        let model = ModelFile {
            preprocess: PreprocessConfig { height, width, patch },
            ranked,
            svm,
            provenance,
        };
        model.check()?;
        Ok(model)
    }

    /// Atomic save: temp file in the same directory, then rename.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let bytes = self.to_bytes()?;
        let dir = match path.parent() {
            Some(d) if !d.as_os_str().is_empty() => d,
            _ => Path::new("."),
        };
        let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
        tmp.write_all(&bytes).map_err(|e| Error::io(tmp.path(), e))?;
        tmp.as_file().sync_all().map_err(|e| Error::io(path, e))?;
        tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

fn f64s(v: &[f64]) -> Vec<u8> {
    v.iter().flat_map(|x| x.to_le_bytes()).collect()
}

fn u64s(v: &[u64]) -> Vec<u8> {
    v.iter().flat_map(|x| x.to_le_bytes()).collect()
}

fn read_f64s(b: &[u8]) -> Result<Vec<f64>> {
    if !b.len().is_multiple_of(8) {
        return format_err("real section length is not a multiple of 8");
    }
    Ok(b.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
}

fn read_u64s(b: &[u8]) -> Result<Vec<u64>> {
    if !b.len().is_multiple_of(8) {
        return format_err("integer section length is not a multiple of 8");
    }
    Ok(b.chunks_exact(8).map(|c| u64::from_le_bytes(c.try_into().unwrap())).collect())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => format_err("truncated model file"),
        }
    }
}
