//! Directory storage overhead per cached block.

use std::fmt;
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    /// One (tag, state) entry per cache block, mirrored from the caches.
    DuplicateTag,
    /// Full-map sharer bit vector per block.
    Complete,
    /// Sharer vector of a fixed number of bits.
    Coarse(u32),
}

impl FromStr for Scheme {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "dup" | "duplicate-tag" => Ok(Scheme::DuplicateTag),
            "complete" => Ok(Scheme::Complete),
            _ => match s.strip_prefix("coarse:").map(str::parse::<u32>) {
                Some(Ok(b)) if b > 0 => Ok(Scheme::Coarse(b)),
                _ => Err(format!(
                    "unknown scheme `{s}` (expected dup, complete or coarse:<bits>)"
                )),
            },
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scheme::DuplicateTag => f.write_str("dup"),
            Scheme::Complete => f.write_str("complete"),
            Scheme::Coarse(b) => write!(f, "coarse:{b}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EntryLayout {
    pub tag_bits: u32,
    pub state_bits: u32,
    pub block_bits: u32,
    /// Entries round up to a multiple of this many bits.
    pub pad: u32,
}

impl Default for EntryLayout {
    fn default() -> Self {
        EntryLayout {
            tag_bits: 28,
            state_bits: 3,
            block_bits: 512,
            pad: 32,
        }
    }
}

impl EntryLayout {
    fn padded(&self, bits: u32) -> u32 {
        let p = self.pad.max(1);
        bits.div_ceil(p) * p
    }

    pub fn entry_bits(&self, scheme: Scheme, caches: u32) -> u32 {
        let base = self.tag_bits + self.state_bits;
        self.padded(match scheme {
            Scheme::DuplicateTag => base,
            Scheme::Complete => base + caches,
            Scheme::Coarse(b) => base + b,
        })
    }
}

/// Overhead in percent of the data array.
pub fn overhead_calc(scheme: Scheme, caches: u32, layout: &EntryLayout) -> Result<f64, String> {
    if caches < 2 {
        return Err(format!("need at least 2 caches, got {caches}"));
    }
    Ok(100.0 * layout.entry_bits(scheme, caches) as f64 / layout.block_bits as f64)
}

pub fn format_percent(p: f64) -> String {
    format!("{p:.2}%")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicate_tag_is_constant() {
        let l = EntryLayout::default();
        for c in 2..=64 {
            let p = overhead_calc(Scheme::DuplicateTag, c, &l).unwrap();
            assert_eq!(format_percent(p), "6.25%");
        }
    }

    #[test]
    fn complete_grows_past_duplicate_tag() {
        let dup = overhead_calc(Scheme::DuplicateTag, 2, &EntryLayout::default()).unwrap();
        let bitwise = EntryLayout {
            pad: 1,
            ..Default::default()
        };
        let v: Vec<f64> = [2, 4, 8, 16, 32, 64]
            .iter()
            .map(|c| overhead_calc(Scheme::Complete, *c, &bitwise).unwrap())
            .collect();
        assert!(v.windows(2).all(|w| w[0] < w[1]), "{v:?}");
        assert!(v.iter().all(|p| *p > dup));
        assert_eq!(format_percent(v[5]), "18.55%");
    }

    #[test]
    fn word_padding_plateaus() {
        let l = EntryLayout::default();
        let p = |c| overhead_calc(Scheme::Complete, c, &l).unwrap();
        assert_eq!(p(2), p(32));
        assert_eq!(format_percent(p(2)), "12.50%");
        assert_eq!(format_percent(p(64)), "18.75%");
        assert_eq!(
            format_percent(overhead_calc(Scheme::Coarse(8), 64, &l).unwrap()),
            "12.50%"
        );
    }

    #[test]
    fn schemes_parse() {
        assert_eq!("dup".parse(), Ok(Scheme::DuplicateTag));
        assert_eq!("complete".parse(), Ok(Scheme::Complete));
        assert_eq!("coarse:8".parse(), Ok(Scheme::Coarse(8)));
        assert!("coarse:".parse::<Scheme>().is_err());
        assert!("coarse:0".parse::<Scheme>().is_err());
        assert!("full".parse::<Scheme>().is_err());
        assert_eq!(Scheme::Coarse(4).to_string(), "coarse:4");
    }

    #[test]
    fn single_cache_rejected() {
        assert!(overhead_calc(Scheme::Complete, 1, &EntryLayout::default()).is_err());
    }
}
