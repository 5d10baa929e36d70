use std::collections::HashMap;
use std::ops::Range;

use crate::error::{ensure, Error, Result};
use crate::model::{BOS_ID, EOS_ID, NUM_SPECIALS, PAD_ID};

/// Token id layout: specials, then content tokens, then one control token per
/// language in a contiguous block.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    content_size: usize,
    languages: Vec<String>,
    lookup: HashMap<String, u32>,
}

impl Vocab {
    pub fn new(content_size: usize, languages: Vec<String>) -> Result<Self> {
        ensure!(content_size > 0, InvalidInput, "empty content vocabulary");
        ensure!(!languages.is_empty(), InvalidInput, "no languages");
        let mut v = Self {
            content_size,
            languages,
            lookup: HashMap::new(),
        };
        v.rebuild()?;
        Ok(v)
    }

    fn rebuild(&mut self) -> Result<()> {
        self.lookup.clear();
        for id in 0..self.size() as u32 {
            let text = self.token_text(id);
            ensure!(
                self.lookup.insert(text.clone(), id).is_none(),
                InvalidInput,
                "duplicate token {text}"
            );
        }
        Ok(())
    }

    pub fn size(&self) -> usize {
        NUM_SPECIALS as usize + self.content_size + self.languages.len()
    }

    pub fn content_size(&self) -> usize {
        self.content_size
    }

    pub fn languages(&self) -> &[String] {
        &self.languages
    }

    pub fn language_index(&self, lang: &str) -> Result<usize> {
        self.languages
            .iter()
            .position(|l| l == lang)
            .ok_or_else(|| Error::InvalidInput(format!("unknown language {lang}")))
    }

    /// Id of content token `c` (0-based within the content block).
    pub fn content_id(&self, c: u32) -> u32 {
        NUM_SPECIALS + c
    }

    pub fn content_range(&self) -> Range<u32> {
        NUM_SPECIALS..NUM_SPECIALS + self.content_size as u32
    }

    pub fn control_range(&self) -> Range<u32> {
        let start = self.content_range().end;
        start..start + self.languages.len() as u32
    }

    pub fn control_id(&self, lang: &str) -> Result<u32> {
        Ok(self.control_range().start + self.language_index(lang)? as u32)
    }

    pub fn is_content(&self, id: u32) -> bool {
        self.content_range().contains(&id)
    }

    pub fn token_text(&self, id: u32) -> String {
        match id {
            PAD_ID => "<pad>".into(),
            BOS_ID => "<s>".into(),
            EOS_ID => "</s>".into(),
            _ if self.is_content(id) => format!("w{}", id - NUM_SPECIALS),
            _ if self.control_range().contains(&id) => {
                format!("<2{}>", self.languages[(id - self.control_range().start) as usize])
            }
            _ => format!("<unk:{id}>"),
        }
    }

    /// Content tokens to ids, with the control token of `target_lang` first.
    pub fn encode<S: AsRef<str>>(&self, tokens: &[S], target_lang: &str) -> Result<Vec<u32>> {
        let mut ids = vec![self.control_id(target_lang)?];
        for t in tokens {
            let t = t.as_ref();
            match self.lookup.get(t) {
                Some(&id) if self.is_content(id) => ids.push(id),
                _ => return Err(Error::InvalidInput(format!("unknown content token {t:?}"))),
            }
        }
        Ok(ids)
    }

    /// Ids to content tokens; specials and control tokens are dropped.
    pub fn decode(&self, ids: &[u32]) -> Result<Vec<String>> {
        let mut out = Vec::with_capacity(ids.len());
        for &id in ids {
            ensure!((id as usize) < self.size(), InvalidInput, "token id {id} out of range");
            if self.is_content(id) {
                out.push(self.token_text(id));
            }
        }
        Ok(out)
    }

    /// Every token's text in id order, for manifests.
    pub fn tokens(&self) -> Vec<String> {
        (0..self.size() as u32).map(|i| self.token_text(i)).collect()
    }
}
