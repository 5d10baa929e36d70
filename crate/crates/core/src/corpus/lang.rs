use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};

/// Bijection from the base vocabulary `0..n` onto the content block
/// `offset..offset + n`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "CipherRepr", into = "CipherRepr")]
pub struct Cipher {
    forward: Vec<u32>,
    inverse: Vec<u32>,
    offset: u32,
}

#[derive(Serialize, Deserialize)]
struct CipherRepr {
    forward: Vec<u32>,
    offset: u32,
}

impl TryFrom<CipherRepr> for Cipher {
    type Error = crate::Error;
    fn try_from(r: CipherRepr) -> Result<Self> {
        Cipher::new(r.forward, r.offset)
    }
}

impl From<Cipher> for CipherRepr {
    fn from(c: Cipher) -> Self {
        CipherRepr {
            forward: c.forward,
            offset: c.offset,
        }
    }
}

impl Cipher {
    /// Rejects anything that is not a permutation of `0..forward.len()`.
    pub fn new(forward: Vec<u32>, offset: u32) -> Result<Self> {
        let n = forward.len();
        ensure!(n > 0, InvalidInput, "empty cipher");
        let mut inverse = vec![u32::MAX; n];
        for (i, &f) in forward.iter().enumerate() {
            ensure!((f as usize) < n, InvalidInput, "cipher image {f} outside 0..{n}");
            ensure!(inverse[f as usize] == u32::MAX, InvalidInput, "cipher is not injective at {f}");
            inverse[f as usize] = i as u32;
        }
        Ok(Self {
            forward,
            inverse,
            offset,
        })
    }

    pub fn identity(n: usize, offset: u32) -> Self {
        Self::new((0..n as u32).collect(), offset).expect("identity is a bijection")
    }

    /// Shuffles a random subset of `round(fraction * n)` symbols among
    /// themselves; the rest map to themselves.
    pub fn partial<R: Rng + ?Sized>(n: usize, fraction: f64, offset: u32, rng: &mut R) -> Result<Self> {
        ensure!((0.0..=1.0).contains(&fraction), InvalidInput, "cipher fraction {fraction} outside [0, 1]");
        let mut forward: Vec<u32> = (0..n as u32).collect();
        let mut chosen: Vec<u32> = forward.clone();
        chosen.shuffle(rng);
        chosen.truncate((fraction * n as f64).round() as usize);
        let mut images = chosen.clone();
        images.shuffle(rng);
        for (&from, &to) in chosen.iter().zip(&images) {
            forward[from as usize] = to;
        }
        Self::new(forward, offset)
    }

    pub fn len(&self) -> usize {
        self.forward.len()
    }

    pub fn is_empty(&self) -> bool {
        self.forward.is_empty()
    }

    pub fn offset(&self) -> u32 {
        self.offset
    }

    /// The inverse permutation, placed in the same block.
    pub fn inverted(&self) -> Self {
        Self::new(self.inverse.clone(), self.offset).expect("inverse is a bijection")
    }

    pub fn with_offset(mut self, offset: u32) -> Self {
        self.offset = offset;
        self
    }

    pub fn apply(&self, base: &[u32]) -> Vec<u32> {
        base.iter().map(|&b| self.offset + self.forward[b as usize]).collect()
    }

    /// Maps content indices back to the base vocabulary.
    pub fn invert(&self, content: &[u32]) -> Result<Vec<u32>> {
        content
            .iter()
            .map(|&c| {
                let local = c.wrapping_sub(self.offset);
                ensure!((local as usize) < self.len(), InvalidInput, "symbol {c} outside cipher block");
                Ok(self.inverse[local as usize])
            })
            .collect()
    }
}

/// Reverses every complete window of `window` positions; a trailing partial
/// window stays in place. The map is its own inverse.
pub fn reorder<T: Copy>(seq: &[T], window: usize) -> Vec<T> {
    let mut out = seq.to_vec();
    if window > 1 {
        for chunk in out.chunks_exact_mut(window) {
            chunk.reverse();
        }
    }
    out
}

/// One synthetic language: English text enciphered then locally reordered.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LanguageSpec {
    pub id: String,
    pub cipher: Cipher,
    pub window: usize,
    /// Training sentence pairs with English.
    pub pair_count: usize,
}

impl LanguageSpec {
    pub fn new(id: impl Into<String>, cipher: Cipher, window: usize, pair_count: usize) -> Result<Self> {
        ensure!(window >= 1, InvalidInput, "reorder window must be at least 1");
        Ok(Self {
            id: id.into(),
            cipher,
            window,
            pair_count,
        })
    }

    /// Content indices of this language's rendering of a base sentence.
    pub fn render(&self, base: &[u32]) -> Vec<u32> {
        reorder(&self.cipher.apply(base), self.window)
    }

    pub fn unrender(&self, content: &[u32]) -> Result<Vec<u32>> {
        self.cipher.invert(&reorder(content, self.window))
    }
}

/// Renders each base sentence into `(english, target)` content-index pairs.
pub fn gen_language(spec: &LanguageSpec, english: &Cipher, base_sentences: &[Vec<u32>]) -> Result<Vec<(Vec<u32>, Vec<u32>)>> {
    let n = spec.cipher.len();
    ensure!(english.len() == n, InvalidInput, "cipher sizes differ: {} vs {n}", english.len());
    base_sentences
        .iter()
        .map(|s| {
            ensure!(s.iter().all(|&t| (t as usize) < n), InvalidInput, "base token outside 0..{n}");
            Ok((english.apply(s), spec.render(s)))
        })
        .collect()
}
