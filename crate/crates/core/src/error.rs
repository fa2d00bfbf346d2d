use thiserror::Error;

/// A configuration value outside its admissible range.
///
/// `key` is a dotted path (`geometry.cell_radius`) once the value has been
/// located inside a full experiment config; component validators fill in
/// the bare field name and callers prefix it.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("invalid value for `{key}`: {reason}")]
pub struct InvalidParam {
    pub key: String,
    pub reason: String,
}

impl InvalidParam {
    pub fn new(key: impl Into<String>, reason: impl Into<String>) -> Self {
        Self { key: key.into(), reason: reason.into() }
    }

    pub fn prefixed(mut self, prefix: &str) -> Self {
        self.key = format!("{prefix}.{}", self.key);
        self
    }
}

pub(crate) fn ensure(cond: bool, key: &str, reason: impl Into<String>) -> Result<(), InvalidParam> {
    if cond {
        Ok(())
    } else {
        Err(InvalidParam::new(key, reason))
    }
}
