use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::DataError;

/// A Sentinel-2 spectral band.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BandId {
    B1,
    B2,
    B3,
    B4,
    B5,
    B6,
    B7,
    B8,
    B8A,
    B9,
    B10,
    B11,
    B12,
}

impl BandId {
    pub const ALL: [BandId; 13] = [
        BandId::B1,
        BandId::B2,
        BandId::B3,
        BandId::B4,
        BandId::B5,
        BandId::B6,
        BandId::B7,
        BandId::B8,
        BandId::B8A,
        BandId::B9,
        BandId::B10,
        BandId::B11,
        BandId::B12,
    ];

    /// RGB display/model order.
    pub const RGB: [BandId; 3] = [BandId::B4, BandId::B3, BandId::B2];

    /// The ten-band set without the 60 m coastal-aerosol, water-vapour and cirrus bands.
    pub const TEN_BAND: [BandId; 10] = [
        BandId::B2,
        BandId::B3,
        BandId::B4,
        BandId::B5,
        BandId::B6,
        BandId::B7,
        BandId::B8,
        BandId::B8A,
        BandId::B11,
        BandId::B12,
    ];

    /// Default twelve-band set: the ten-band set plus B1 and B10.
    pub const TWELVE_BAND: [BandId; 12] = [
        BandId::B1,
        BandId::B2,
        BandId::B3,
        BandId::B4,
        BandId::B5,
        BandId::B6,
        BandId::B7,
        BandId::B8,
        BandId::B8A,
        BandId::B10,
        BandId::B11,
        BandId::B12,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BandId::B1 => "B1",
            BandId::B2 => "B2",
            BandId::B3 => "B3",
            BandId::B4 => "B4",
            BandId::B5 => "B5",
            BandId::B6 => "B6",
            BandId::B7 => "B7",
            BandId::B8 => "B8",
            BandId::B8A => "B8A",
            BandId::B9 => "B9",
            BandId::B10 => "B10",
            BandId::B11 => "B11",
            BandId::B12 => "B12",
        }
    }

    pub fn nominal_resolution_m(self) -> u32 {
        match self {
            BandId::B1 | BandId::B9 | BandId::B10 => 60,
            BandId::B5 | BandId::B6 | BandId::B7 | BandId::B8A | BandId::B11 | BandId::B12 => 20,
            BandId::B2 | BandId::B3 | BandId::B4 | BandId::B8 => 10,
        }
    }

    pub fn is_rgb(self) -> bool {
        matches!(self, BandId::B2 | BandId::B3 | BandId::B4)
    }
}

impl fmt::Display for BandId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BandId {
    type Err = DataError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let upper = s.trim().to_ascii_uppercase();
        BandId::ALL
            .iter()
            .copied()
            .find(|b| b.name() == upper)
            .ok_or_else(|| DataError::UnknownBand(s.to_string()))
    }
}

impl Serialize for BandId {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for BandId {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Parses a comma-separated band list. `rgb`, `10` and `12` expand to the named presets.
pub fn parse_band_list(spec: &str) -> Result<Vec<BandId>, DataError> {
    let bands: Vec<BandId> = match spec.trim().to_ascii_lowercase().as_str() {
        "rgb" => BandId::RGB.to_vec(),
        "10" | "ten" | "10-band" => BandId::TEN_BAND.to_vec(),
        "12" | "twelve" | "12-band" => BandId::TWELVE_BAND.to_vec(),
        _ => spec
            .split(',')
            .filter(|s| !s.trim().is_empty())
            .map(str::parse)
            .collect::<Result<_, _>>()?,
    };
    check_unique(&bands)?;
    Ok(bands)
}

pub(crate) fn check_unique(bands: &[BandId]) -> Result<(), DataError> {
    for (i, b) in bands.iter().enumerate() {
        if bands[..i].contains(b) {
            return Err(DataError::DuplicateBand(*b));
        }
    }
    Ok(())
}

/// Position of each requested band inside `bands`.
pub fn band_positions(bands: &[BandId], wanted: &[BandId]) -> Result<Vec<usize>, DataError> {
    wanted
        .iter()
        .map(|w| {
            bands
                .iter()
                .position(|b| b == w)
                .ok_or(DataError::MissingBand(*w))
        })
        .collect()
}
