use std::fmt;

use serde::{Deserialize, Serialize};

use super::ClientError;

/// A binary classification outcome: `0` = did not recidivate, `1` = did.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum Verdict {
    Zero,
    One,
}

impl Verdict {
    pub fn as_u8(self) -> u8 {
        match self {
            Verdict::Zero => 0,
            Verdict::One => 1,
        }
    }

    /// The binary complement `1 - v`.
    pub fn flip(self) -> Verdict {
        match self {
            Verdict::Zero => Verdict::One,
            Verdict::One => Verdict::Zero,
        }
    }

    pub fn is_positive(self) -> bool {
        self == Verdict::One
    }
}

impl From<bool> for Verdict {
    fn from(b: bool) -> Self {
        if b {
            Verdict::One
        } else {
            Verdict::Zero
        }
    }
}

impl From<Verdict> for u8 {
    fn from(v: Verdict) -> u8 {
        v.as_u8()
    }
}

impl TryFrom<u8> for Verdict {
    type Error = String;

    fn try_from(v: u8) -> Result<Self, Self::Error> {
        match v {
            0 => Ok(Verdict::Zero),
            1 => Ok(Verdict::One),
            other => Err(format!("verdict must be 0 or 1, got {other}")),
        }
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.as_u8())
    }
}

/// Extracts the verdict from a model completion.
///
/// Returns the first standalone `0` or `1` token, where a token is a maximal
/// run of alphanumeric characters. If the next binary token on the same line
/// disagrees with the first, the output is ambiguous and rejected.
pub fn parse_verdict(raw: &str) -> Result<Verdict, ClientError> {
    let mut found: Option<(Verdict, usize)> = None;
    for (line_no, line) in raw.lines().enumerate() {
        for token in line.split(|c: char| !c.is_alphanumeric()) {
            let v = match token {
                "0" => Verdict::Zero,
                "1" => Verdict::One,
                _ => continue,
            };
            match found {
                None => found = Some((v, line_no)),
                Some((first, first_line)) => {
                    if first_line == line_no && first != v {
                        return Err(ClientError::Unparseable { raw: raw.to_string() });
                    }
                    return Ok(first);
                }
            }
        }
    }
    found
        .map(|(v, _)| v)
        .ok_or_else(|| ClientError::Unparseable { raw: raw.to_string() })
}
