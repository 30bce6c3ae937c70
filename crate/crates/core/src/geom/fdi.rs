use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of tooth channels; channel 0 is reserved for background.
pub const TOOTH_CHANNELS: usize = 32;
/// Tooth channels plus background.
pub const MASK_CHANNELS: usize = TOOTH_CHANNELS + 1;

/// A permanent tooth in FDI two-digit notation (quadrant 1..4, position 1..8).
///
/// Quadrants follow the usual convention: 1 upper right, 2 upper left,
/// 3 lower left, 4 lower right (patient's perspective).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct FdiTooth {
    quadrant: u8,
    position: u8,
}

impl FdiTooth {
    pub fn new(quadrant: u8, position: u8) -> Result<Self> {
        if !(1..=4).contains(&quadrant) || !(1..=8).contains(&position) {
            return Err(Error::InvalidTooth { quadrant, position });
        }
        Ok(Self { quadrant, position })
    }

    /// Parses the two-digit code, e.g. `27`.
    pub fn from_code(code: u8) -> Result<Self> {
        Self::new(code / 10, code % 10)
    }

    /// Inverse of [`FdiTooth::channel`].
    pub fn from_channel(channel: usize) -> Result<Self> {
        if !(1..=TOOTH_CHANNELS).contains(&channel) {
            return Err(Error::InvalidArgument(format!(
                "tooth channel {channel} outside 1..={TOOTH_CHANNELS}"
            )));
        }
        let c = channel - 1;
        Self::new((c / 8) as u8 + 1, (c % 8) as u8 + 1)
    }

    pub fn quadrant(self) -> u8 {
        self.quadrant
    }

    pub fn position(self) -> u8 {
        self.position
    }

    pub fn code(self) -> u8 {
        self.quadrant * 10 + self.position
    }

    /// Mask channel: `(quadrant - 1) * 8 + position`, in 1..=32.
    pub fn channel(self) -> usize {
        (self.quadrant as usize - 1) * 8 + self.position as usize
    }

    pub fn is_upper(self) -> bool {
        self.quadrant <= 2
    }

    /// Quadrants 1 and 4 sit on the patient's right.
    pub fn is_right(self) -> bool {
        self.quadrant == 1 || self.quadrant == 4
    }

    pub fn is_molar(self) -> bool {
        self.position >= 6
    }

    pub fn is_incisor(self) -> bool {
        self.position <= 2
    }

    /// All 32 teeth in FDI order (11..18, 21..28, 31..38, 41..48).
    pub fn all() -> impl Iterator<Item = FdiTooth> {
        (1..=4u8).flat_map(|q| (1..=8u8).map(move |p| FdiTooth { quadrant: q, position: p }))
    }
}

/// Channel index of a tooth in a 33-channel mask.
pub fn fdi_channel(tooth: FdiTooth) -> usize {
    tooth.channel()
}

impl fmt::Display for FdiTooth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", self.quadrant, self.position)
    }
}

impl TryFrom<u8> for FdiTooth {
    type Error = Error;

    fn try_from(code: u8) -> Result<Self> {
        Self::from_code(code)
    }
}

impl From<FdiTooth> for u8 {
    fn from(t: FdiTooth) -> u8 {
        t.code()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn channel_examples() {
        assert_eq!(FdiTooth::from_code(11).unwrap().channel(), 1);
        assert_eq!(FdiTooth::from_code(48).unwrap().channel(), 32);
        assert_eq!(FdiTooth::from_code(27).unwrap().channel(), 15);
    }

    #[test]
    fn channel_is_a_bijection() {
        let mut seen = HashSet::new();
        for q in 1..=4u8 {
            for p in 1..=8u8 {
                let t = FdiTooth::new(q, p).unwrap();
                let c = fdi_channel(t);
                assert!((1..=32).contains(&c));
                assert!(seen.insert(c), "channel {c} hit twice");
                assert_eq!(FdiTooth::from_channel(c).unwrap(), t);
            }
        }
        assert_eq!(seen.len(), 32);
    }

    #[test]
    fn rejects_out_of_range() {
        assert!(FdiTooth::new(0, 1).is_err());
        assert!(FdiTooth::new(5, 1).is_err());
        assert!(FdiTooth::new(1, 0).is_err());
        assert!(FdiTooth::new(1, 9).is_err());
        assert!(FdiTooth::from_code(19).is_err());
        assert!(FdiTooth::from_channel(0).is_err());
        assert!(FdiTooth::from_channel(33).is_err());
    }

    #[test]
    fn serde_uses_two_digit_code() {
        let t = FdiTooth::from_code(36).unwrap();
        assert_eq!(serde_json::to_string(&t).unwrap(), "36");
        let back: FdiTooth = serde_json::from_str("36").unwrap();
        assert_eq!(back, t);
        assert!(serde_json::from_str::<FdiTooth>("59").is_err());
    }

    #[test]
    fn all_is_in_fdi_order() {
        let codes: Vec<u8> = FdiTooth::all().map(|t| t.code()).collect();
        assert_eq!(codes.len(), 32);
        assert_eq!(&codes[..3], &[11, 12, 13]);
        assert_eq!(codes[31], 48);
        let mut sorted = codes.clone();
        sorted.sort();
        assert_eq!(codes, sorted);
    }
}
