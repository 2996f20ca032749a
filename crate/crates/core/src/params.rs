//! Named parameter storage shared by every layer.
//!
//! Layers only hold [`ParamId`] handles; the arrays themselves live in one
//! [`ParamStore`], which makes optimizer updates, checksums and checkpoint
//! serialization a flat walk over named entries.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::rng::SeededRng;
use crate::{Error, Real, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<T>,
}

/// How a freshly registered parameter is filled.
#[derive(Debug, Clone, Copy)]
pub enum Init {
    Zeros,
    Ones,
    Normal { std: f64 },
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore<T> {
    params: Vec<Param<T>>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self { params: Vec::new() }
    }

    pub fn register(&mut self, name: impl Into<String>, shape: &[usize], init: Init, rng: &mut SeededRng) -> ParamId {
        let len = shape.iter().product();
        let data = match init {
            Init::Zeros => vec![T::zero(); len],
            Init::Ones => vec![T::one(); len],
            Init::Normal { std } => (0..len).map(|_| T::from_f64_lossy(std * rng.normal())).collect(),
        };
        self.params.push(Param { name: name.into(), shape: shape.to_vec(), data });
        ParamId(self.params.len() - 1)
    }

    #[inline]
    pub fn get(&self, id: ParamId) -> &[T] {
        &self.params[id.0].data
    }

    #[inline]
    pub fn get_mut(&mut self, id: ParamId) -> &mut [T] {
        &mut self.params[id.0].data
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param<T>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param<T>> {
        self.params.iter_mut()
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.data.len()).sum()
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    /// Zero-filled gradient buffers aligned with this store.
    pub fn zeros_like(&self) -> Grads<T> {
        Grads { bufs: self.params.iter().map(|p| vec![T::zero(); p.data.len()]).collect() }
    }

    /// Overwrite every entry from `(name, shape, data)` triples, which must
    /// match this store's layout exactly.
    pub fn load_entries<'a, I>(&mut self, entries: I) -> Result<()>
    where
        I: IntoIterator<Item = (&'a str, &'a [usize], Vec<T>)>,
    {
        let mut seen = 0;
        for (name, shape, data) in entries {
            let id = self
                .find(name)
                .ok_or_else(|| Error::InvalidArgument(alloc::format!("unexpected parameter `{name}`")))?;
            let p = &mut self.params[id.0];
            if p.shape != shape || data.len() != p.data.len() {
                return Err(Error::Shape(alloc::format!(
                    "parameter `{name}`: expected {:?}, got {:?}",
                    p.shape,
                    shape
                )));
            }
            p.data = data;
            seen += 1;
        }
        if seen != self.params.len() {
            return Err(Error::InvalidArgument(alloc::format!(
                "expected {} parameters, got {seen}",
                self.params.len()
            )));
        }
        Ok(())
    }

    /// Order-sensitive FNV-1a digest over names, shapes and bit patterns.
    pub fn checksum(&self) -> u64 {
        let mut h = Fnv::new();
        for p in &self.params {
            h.write(p.name.as_bytes());
            for &d in &p.shape {
                h.write(&(d as u64).to_le_bytes());
            }
            for &x in &p.data {
                h.write(&x.as_f64().to_bits().to_le_bytes());
            }
        }
        h.finish()
    }
}

/// Gradient buffers, one per parameter, in store order.
#[derive(Debug, Clone, PartialEq)]
pub struct Grads<T> {
    bufs: Vec<Vec<T>>,
}

impl<T: Real> Grads<T> {
    #[inline]
    pub fn get(&self, id: ParamId) -> &[T] {
        &self.bufs[id.0]
    }

    #[inline]
    pub fn get_mut(&mut self, id: ParamId) -> &mut [T] {
        &mut self.bufs[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Vec<T>> {
        self.bufs.iter()
    }

    pub fn zero(&mut self) {
        for b in &mut self.bufs {
            b.iter_mut().for_each(|x| *x = T::zero());
        }
    }

    pub fn global_norm(&self) -> f64 {
        libm::sqrt(self.bufs.iter().flatten().map(|&g| g.as_f64() * g.as_f64()).sum::<f64>())
    }

    pub fn scale(&mut self, s: T) {
        for b in &mut self.bufs {
            b.iter_mut().for_each(|x| *x *= s);
        }
    }

    pub fn all_finite(&self) -> bool {
        self.bufs.iter().flatten().all(|g| g.is_finite())
    }
}

struct Fnv(u64);

impl Fnv {
    fn new() -> Self {
        Fnv(0xcbf2_9ce4_8422_2325)
    }

    fn write(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 ^= b as u64;
            self.0 = self.0.wrapping_mul(0x0100_0000_01b3);
        }
    }

    fn finish(&self) -> u64 {
        self.0
    }
}
