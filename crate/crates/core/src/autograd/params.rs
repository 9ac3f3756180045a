use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::util::write_atomic;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    Zeros,
    Ones,
    /// `N(0, 1/fan_in)` with `fan_in` the first extent.
    FanIn,
    Normal(f64),
}

struct Param {
    name: String,
    value: Tensor,
    grad: Option<Tensor>,
}

/// Named parameters and their accumulated gradients.
#[derive(Default)]
pub struct ParamStore {
    params: Vec<Param>,
    index: BTreeMap<String, ParamId>,
}

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"SSCK";

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a parameter under a unique dotted name.
    pub fn add(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        init: Init,
        rng: &mut impl Rng,
    ) -> ParamId {
        let name = name.into();
        assert!(
            !self.index.contains_key(&name),
            "parameter '{name}' registered twice"
        );
        let n: usize = shape.iter().product();
        let data = match init {
            Init::Zeros => vec![0.0; n],
            Init::Ones => vec![1.0; n],
            Init::FanIn => {
                let fan_in = shape.first().copied().unwrap_or(1).max(1);
                let dist = Normal::new(0.0, (1.0 / fan_in as f64).sqrt()).unwrap();
                (0..n).map(|_| dist.sample(rng)).collect()
            }
            Init::Normal(std) => {
                let dist = Normal::new(0.0, std).unwrap();
                (0..n).map(|_| dist.sample(rng)).collect()
            }
        };
        let id = ParamId(self.params.len());
        self.params.push(Param {
            name: name.clone(),
            value: Tensor::new(shape.to_vec(), data).unwrap(),
            grad: None,
        });
        self.index.insert(name, id);
        id
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn get(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].value
    }

    /// `None` when no backward pass reached the parameter since the last
    /// [`ParamStore::zero_grad`].
    pub fn grad(&self, id: ParamId) -> Option<&Tensor> {
        self.params[id.0].grad.as_ref()
    }

    pub(crate) fn accumulate_grad(&mut self, id: ParamId, g: &[f64]) {
        let p = &mut self.params[id.0];
        match &mut p.grad {
            Some(acc) => acc
                .data_mut()
                .iter_mut()
                .zip(g)
                .for_each(|(a, b)| *a += b),
            slot => *slot = Some(Tensor::new(p.value.shape().to_vec(), g.to_vec()).unwrap()),
        }
    }

    pub fn zero_grad(&mut self) {
        self.params.iter_mut().for_each(|p| p.grad = None);
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    /// Serialises every parameter in registration order.
    pub fn to_checkpoint_bytes(&self) -> Vec<u8> {
        self.to_checkpoint_bytes_where(|_| true)
    }

    /// Serialises the parameters whose name passes `keep`, in registration order.
    pub fn to_checkpoint_bytes_where(&self, keep: impl Fn(&str) -> bool) -> Vec<u8> {
        let kept: Vec<&Param> = self.params.iter().filter(|p| keep(&p.name)).collect();
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&(kept.len() as u32).to_le_bytes());
        for p in kept {
            out.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
            out.extend_from_slice(p.name.as_bytes());
            out.extend_from_slice(&(p.value.rank() as u32).to_le_bytes());
            for &e in p.value.shape() {
                out.extend_from_slice(&(e as u32).to_le_bytes());
            }
            for &v in p.value.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    /// Writes a checkpoint atomically (temp file then rename).
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path.as_ref(), &self.to_checkpoint_bytes())
    }

    /// Copies values for every name present in both `named` and the store.
    ///
    /// With `strict`, a missing or extra name is an error; a shape mismatch is
    /// always an error. Returns the number of parameters loaded.
    pub fn load_named(&mut self, named: &[(String, Tensor)], strict: bool) -> Result<usize> {
        let mut loaded = 0;
        for (name, t) in named {
            match self.index.get(name) {
                Some(&id) => {
                    let p = &mut self.params[id.0];
                    if p.value.shape() != t.shape() {
                        return Err(Error::Shape(format!(
                            "checkpoint '{name}' has shape {:?}, model expects {:?}",
                            t.shape(),
                            p.value.shape()
                        )));
                    }
                    p.value = t.clone();
                    loaded += 1;
                }
                None if strict => {
                    return Err(Error::Invalid(format!("unexpected checkpoint entry '{name}'")))
                }
                None => {}
            }
        }
        if strict && loaded != self.params.len() {
            return Err(Error::Invalid(format!(
                "checkpoint covers {loaded} of {} parameters",
                self.params.len()
            )));
        }
        Ok(loaded)
    }
}

pub fn read_checkpoint_bytes(bytes: &[u8]) -> Result<Vec<(String, Tensor)>> {
    let mut pos = 0usize;
    let mut take = |n: usize| -> Result<&[u8]> {
        if pos + n > bytes.len() {
            return Err(Error::parse(format!("byte {pos}"), "truncated checkpoint"));
        }
        let s = &bytes[pos..pos + n];
        pos += n;
        Ok(s)
    };
    if take(4)? != CHECKPOINT_MAGIC {
        return Err(Error::parse("byte 0", "bad checkpoint magic"));
    }
    let u32_at = |b: &[u8]| u32::from_le_bytes(b.try_into().unwrap()) as usize;
    let count = u32_at(take(4)?);
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let len = u32_at(take(4)?);
        let name = String::from_utf8(take(len)?.to_vec())
            .map_err(|_| Error::parse("checkpoint", "parameter name is not UTF-8"))?;
        let rank = u32_at(take(4)?);
        let shape: Vec<usize> = (0..rank)
            .map(|_| take(4).map(u32_at))
            .collect::<Result<_>>()?;
        let n: usize = shape.iter().product();
        let payload = take(8 * n)?;
        let data = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        out.push((name, Tensor::new(shape, data)?));
    }
    Ok(out)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Vec<(String, Tensor)>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn checkpoint_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut ps = ParamStore::new();
        ps.add("enc.w", &[3, 4], Init::FanIn, &mut rng);
        ps.add("enc.b", &[4], Init::Zeros, &mut rng);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.ssck");
        ps.save(&path).unwrap();
        let named = load_checkpoint(&path).unwrap();
        assert_eq!(named.len(), 2);
        assert_eq!(named[0].0, "enc.w");
        assert_eq!(&named[0].1, ps.value(ParamId(0)));

        let mut other = ParamStore::new();
        other.add("enc.w", &[3, 4], Init::Zeros, &mut rng);
        other.add("enc.b", &[4], Init::Ones, &mut rng);
        assert_eq!(other.load_named(&named, true).unwrap(), 2);
        assert_eq!(other.to_checkpoint_bytes(), ps.to_checkpoint_bytes());
    }

    #[test]
    fn bad_magic_and_truncation() {
        assert!(read_checkpoint_bytes(b"NOPE\0\0\0\0").is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut ps = ParamStore::new();
        ps.add("w", &[2, 2], Init::FanIn, &mut rng);
        let bytes = ps.to_checkpoint_bytes();
        assert!(read_checkpoint_bytes(&bytes[..bytes.len() - 1]).is_err());
    }

    #[test]
    fn shape_mismatch_on_load() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut ps = ParamStore::new();
        ps.add("w", &[2, 2], Init::FanIn, &mut rng);
        let named = vec![("w".to_string(), Tensor::zeros(vec![3]))];
        assert!(ps.load_named(&named, false).is_err());
    }
}
