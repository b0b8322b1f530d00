//! Variant labels naming a model configuration.
//!
//! ```text
//! baseline
//! 1sum                       attention variant at the default position
//! 1sum@attn3                 attention variant at an explicit position
//! AF3-cat-1024-attn3-1sum    attention-feature skip: position, fusion, width,
//!                            attention position, attention variant
//! ```

use alloc::format;
use alloc::string::String;
use core::fmt;
use core::str::FromStr;

use crate::attention::AttentionSpec;
use crate::error::{Error, Result};

/// Where an attention module is placed: after stage 2, 3 or 4.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AttnPosition {
    None,
    Attn2,
    Attn3,
    Attn4,
}

impl AttnPosition {
    /// Stage number (2, 3 or 4) the module follows.
    pub fn stage(self) -> Option<usize> {
        match self {
            AttnPosition::None => None,
            AttnPosition::Attn2 => Some(2),
            AttnPosition::Attn3 => Some(3),
            AttnPosition::Attn4 => Some(4),
        }
    }

    pub fn from_stage(stage: usize) -> Option<Self> {
        match stage {
            2 => Some(AttnPosition::Attn2),
            3 => Some(AttnPosition::Attn3),
            4 => Some(AttnPosition::Attn4),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Fusion {
    Cat,
    Sum,
}

impl fmt::Display for Fusion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Fusion::Cat => "cat",
            Fusion::Sum => "sum",
        })
    }
}

impl FromStr for Fusion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cat" => Ok(Fusion::Cat),
            "sum" => Ok(Fusion::Sum),
            _ => Err(Error::Parse { input: s.into(), position: 0, expected: "cat or sum" }),
        }
    }
}

/// Parsed form of a variant label.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum VariantLabel {
    Baseline,
    /// An attention module without the skip branch. `position` is `None` for a
    /// bare variant such as `1sum`.
    Attention {
        spec: AttentionSpec,
        position: Option<AttnPosition>,
    },
    /// Attention plus the attention-feature skip branch of width `dim`.
    Skip {
        fusion: Fusion,
        dim: usize,
        position: AttnPosition,
        spec: AttentionSpec,
    },
}

/// Position used when a label names a variant without one.
pub const DEFAULT_POSITION: AttnPosition = AttnPosition::Attn3;

impl VariantLabel {
    pub fn spec(&self) -> Option<AttentionSpec> {
        match *self {
            VariantLabel::Baseline => None,
            VariantLabel::Attention { spec, .. } | VariantLabel::Skip { spec, .. } => Some(spec),
        }
    }

    /// The effective attention position.
    pub fn position(&self) -> AttnPosition {
        match *self {
            VariantLabel::Baseline => AttnPosition::None,
            VariantLabel::Attention { position, .. } => position.unwrap_or(DEFAULT_POSITION),
            VariantLabel::Skip { position, .. } => position,
        }
    }
}

impl fmt::Display for VariantLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            VariantLabel::Baseline => f.write_str("baseline"),
            VariantLabel::Attention { spec, position: None } => write!(f, "{spec}"),
            VariantLabel::Attention { spec, position: Some(p) } => {
                write!(f, "{spec}@attn{}", p.stage().unwrap_or(0))
            }
            VariantLabel::Skip { fusion, dim, position, spec } => {
                let p = position.stage().unwrap_or(0);
                write!(f, "AF{p}-{fusion}-{dim}-attn{p}-{spec}")
            }
        }
    }
}

/// Cursor over the label being parsed, so errors can report a byte position.
struct Cursor<'a> {
    input: &'a str,
    at: usize,
}

impl<'a> Cursor<'a> {
    fn fail(&self, expected: &'static str) -> Error {
        Error::Parse { input: self.input.into(), position: self.at, expected }
    }

    fn rest(&self) -> &'a str {
        &self.input[self.at..]
    }

    fn literal(&mut self, lit: &str, expected: &'static str) -> Result<()> {
        if self.rest().starts_with(lit) {
            self.at += lit.len();
            Ok(())
        } else {
            Err(self.fail(expected))
        }
    }

    /// A decimal number without leading zeros.
    fn number(&mut self, expected: &'static str) -> Result<usize> {
        let digits = self.rest().bytes().take_while(u8::is_ascii_digit).count();
        let text = &self.rest()[..digits];
        if digits == 0 || (digits > 1 && text.starts_with('0')) {
            return Err(self.fail(expected));
        }
        let n = text.parse().map_err(|_| self.fail(expected))?;
        self.at += digits;
        Ok(n)
    }

    fn position(&mut self) -> Result<AttnPosition> {
        let start = self.at;
        let n = self.number("attention position 2, 3 or 4")?;
        AttnPosition::from_stage(n).ok_or_else(|| {
            self.at = start;
            self.fail("attention position 2, 3 or 4")
        })
    }

    fn until(&mut self, sep: char) -> &'a str {
        let rest = self.rest();
        let len = rest.find(sep).unwrap_or(rest.len());
        self.at += len;
        &rest[..len]
    }

    fn spec(&mut self) -> Result<AttentionSpec> {
        let start = self.at;
        let text = self.until('@');
        text.parse::<AttentionSpec>().map_err(|e| match e {
            Error::Parse { position, expected, .. } => {
                Error::Parse { input: self.input.into(), position: start + position, expected }
            }
            other => other,
        })
    }
}

impl FromStr for VariantLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "baseline" {
            return Ok(VariantLabel::Baseline);
        }
        let mut cur = Cursor { input: s, at: 0 };
        if s.starts_with("AF") {
            cur.literal("AF", "AF")?;
            let af = cur.position()?;
            cur.literal("-", "'-' after the AF position")?;
            let fusion = match cur.until('-') {
                "cat" => Fusion::Cat,
                "sum" => Fusion::Sum,
                f => {
                    cur.at -= f.len();
                    return Err(cur.fail("fusion cat or sum"));
                }
            };
            cur.literal("-", "'-' after the fusion")?;
            let dim = cur.number("positive skip width")?;
            if dim == 0 {
                cur.at -= 1;
                return Err(cur.fail("positive skip width"));
            }
            cur.literal("-attn", "'-attn' after the skip width")?;
            let at = cur.at;
            let position = cur.position()?;
            if position != af {
                cur.at = at;
                return Err(cur.fail("attention position equal to the AF position"));
            }
            cur.literal("-", "'-' before the attention variant")?;
            let spec = cur.spec()?;
            if !cur.rest().is_empty() {
                return Err(cur.fail("end of label"));
            }
            return Ok(VariantLabel::Skip { fusion, dim, position, spec });
        }
        let spec = cur.spec()?;
        if cur.rest().is_empty() {
            return Ok(VariantLabel::Attention { spec, position: None });
        }
        cur.literal("@attn", "'@attn' or end of label")?;
        let position = cur.position()?;
        if !cur.rest().is_empty() {
            return Err(cur.fail("end of label"));
        }
        Ok(VariantLabel::Attention { spec, position: Some(position) })
    }
}

/// Parses a label; shorthand for `label.parse::<VariantLabel>()`.
pub fn parse_variant_label(label: &str) -> Result<VariantLabel> {
    label.parse()
}

impl VariantLabel {
    pub fn to_label(&self) -> String {
        format!("{self}")
    }
}
