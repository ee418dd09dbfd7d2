use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Dotted event identifier such as `ev1.2.1`.
///
/// Ordering is numeric per component, so `ev1.2` sorts before `ev1.10`
/// and a parent always sorts before its children.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct EventId {
    raw: String,
    parts: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid event id {0:?}: expected ev<N>(.<N>)*")]
pub struct InvalidEventId(pub String);

impl EventId {
    pub fn parse(s: &str) -> Result<Self, InvalidEventId> {
        let err = || InvalidEventId(s.to_string());
        let rest = s.strip_prefix("ev").ok_or_else(err)?;
        if rest.is_empty() {
            return Err(err());
        }
        let mut parts = Vec::new();
        for piece in rest.split('.') {
            if piece.is_empty() || !piece.bytes().all(|b| b.is_ascii_digit()) {
                return Err(err());
            }
            parts.push(piece.parse::<u32>().map_err(|_| err())?);
        }
        Ok(Self {
            raw: s.to_string(),
            parts,
        })
    }

    /// Builds `ev<a>.<b>...` from numeric components.
    pub fn from_parts(parts: &[u32]) -> Self {
        assert!(!parts.is_empty(), "event id needs at least one component");
        let body: Vec<String> = parts.iter().map(u32::to_string).collect();
        Self {
            raw: format!("ev{}", body.join(".")),
            parts: parts.to_vec(),
        }
    }

    pub fn as_str(&self) -> &str {
        &self.raw
    }

    pub fn parts(&self) -> &[u32] {
        &self.parts
    }

    pub fn depth(&self) -> usize {
        self.parts.len() - 1
    }

    /// The id obtained by dropping the last dotted component.
    pub fn dotted_parent(&self) -> Option<EventId> {
        if self.parts.len() < 2 {
            None
        } else {
            Some(Self::from_parts(&self.parts[..self.parts.len() - 1]))
        }
    }

    pub fn child(&self, n: u32) -> EventId {
        let mut parts = self.parts.clone();
        parts.push(n);
        Self::from_parts(&parts)
    }
}

impl Ord for EventId {
    fn cmp(&self, other: &Self) -> Ordering {
        // leading zeros ("ev01") compare equal numerically; fall back to the raw text
        self.parts
            .cmp(&other.parts)
            .then_with(|| self.raw.cmp(&other.raw))
    }
}

impl PartialOrd for EventId {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for EventId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.raw)
    }
}

impl fmt::Debug for EventId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.raw)
    }
}

impl FromStr for EventId {
    type Err = InvalidEventId;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::parse(s)
    }
}

impl Serialize for EventId {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.raw)
    }
}

impl<'de> Deserialize<'de> for EventId {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        EventId::parse(&s).map_err(serde::de::Error::custom)
    }
}

/// Lowercases and collapses whitespace; the identity key for events
/// across libraries.
pub fn normalize_name(name: &str) -> String {
    name.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}
