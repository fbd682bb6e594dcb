//! Category vocabularies and their render colors.
//!
//! The last category of every vocabulary is the structure channel: room or
//! shelf geometry is encoded there in the generated-context condition.

use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    names: Vec<String>,
    colors: Vec<[u8; 3]>,
}

const SHELF: &[(&str, u32)] = &[
    ("bookcolumn", 0xFABD2E),
    ("bookstack", 0xF29433),
    ("bottle", 0x00A1B8),
    ("bowl", 0xD17AC7),
    ("can", 0x8C94A3),
    ("cup", 0x3B7DF2),
    ("foodbag", 0xDB6E57),
    ("foodbox", 0xE6B24C),
    ("hardware", 0x333842),
    ("jar", 0x2EAD5C),
    ("natureshelftrinkets", 0xB28040),
    ("pan", 0x61616B),
    ("plate", 0xF2EBC7),
    ("pot", 0xA87052),
    ("wineglass", 0x6BCCEB),
    ("largeshelf", 0x7A8285),
];

const ROOM: &[(&str, u32)] = &[
    ("bed", 0xE57373),
    ("nightstand", 0xBA68C8),
    ("wardrobe", 0x7986CB),
    ("chair", 0x4FC3F7),
    ("table", 0x4DB6AC),
    ("sofa", 0xAED581),
    ("cabinet", 0xFFD54F),
    ("desk", 0xFF8A65),
    ("lamp", 0xF06292),
    ("bookshelf", 0x9575CD),
    ("tv_stand", 0x64B5F6),
    ("structure", 0x9E9E9E),
];

fn rgb(v: u32) -> [u8; 3] {
    [(v >> 16) as u8, (v >> 8) as u8, v as u8]
}

impl Vocabulary {
    pub fn new(entries: Vec<(String, [u8; 3])>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::invalid("vocabulary is empty"));
        }
        if entries.len() > u16::MAX as usize {
            return Err(Error::invalid("vocabulary has too many categories"));
        }
        let mut names = Vec::with_capacity(entries.len());
        let mut colors = Vec::with_capacity(entries.len());
        for (n, c) in entries {
            if n.is_empty() || n.chars().any(char::is_whitespace) {
                return Err(Error::invalid(format!("bad category name {n:?}")));
            }
            if names.contains(&n) {
                return Err(Error::invalid(format!("duplicate category {n:?}")));
            }
            names.push(n);
            colors.push(c);
        }
        Ok(Vocabulary { names, colors })
    }

    fn from_table(t: &[(&str, u32)]) -> Self {
        Vocabulary::new(t.iter().map(|(n, c)| (n.to_string(), rgb(*c))).collect()).expect("built-in table is valid")
    }

    /// Shelf categories with their published colors; `largeshelf` is the
    /// structure channel.
    pub fn shelf() -> Self {
        Vocabulary::from_table(SHELF)
    }

    pub fn room() -> Self {
        Vocabulary::from_table(ROOM)
    }

    /// `room` or `shelf` name a built-in table; anything else is a palette
    /// file path, relative to `base`.
    pub fn resolve(reference: &str, base: &Path) -> Result<Self> {
        match reference {
            "room" => Ok(Vocabulary::room()),
            "shelf" => Ok(Vocabulary::shelf()),
            path => {
                let p = base.join(path);
                let text = std::fs::read_to_string(&p)?;
                Vocabulary::parse(&text, &p.display().to_string())
            }
        }
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn name(&self, i: u16) -> Option<&str> {
        self.names.get(i as usize).map(String::as_str)
    }

    pub fn index(&self, name: &str) -> Option<u16> {
        self.names.iter().position(|n| n == name).map(|i| i as u16)
    }

    pub fn color(&self, i: u16) -> Option<[u8; 3]> {
        self.colors.get(i as usize).copied()
    }

    pub fn structure_index(&self) -> u16 {
        (self.names.len() - 1) as u16
    }

    /// One `name RRGGBB` pair per line; `#` starts a comment.
    pub fn parse(text: &str, source: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let loc = format!("{source}:{}", i + 1);
            let mut parts = line.split_whitespace();
            let name = parts.next().unwrap_or_default();
            let hex = parts.next().ok_or_else(|| Error::parse(&loc, "expected `name RRGGBB`"))?;
            if parts.next().is_some() || hex.len() != 6 {
                return Err(Error::parse(&loc, "expected `name RRGGBB`"));
            }
            let v = u32::from_str_radix(hex, 16).map_err(|e| Error::parse(&loc, e.to_string()))?;
            entries.push((name.to_string(), rgb(v)));
        }
        Vocabulary::new(entries).map_err(|e| Error::parse(source, e.to_string()))
    }

    pub fn to_text(&self) -> String {
        self.names
            .iter()
            .zip(&self.colors)
            .map(|(n, c)| format!("{n} {:02X}{:02X}{:02X}\n", c[0], c[1], c[2]))
            .collect()
    }
}
