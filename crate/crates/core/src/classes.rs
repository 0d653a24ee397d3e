use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub const NUM_CLASSES: usize = 3;

/// Weather label. The discriminant is the class index used everywhere.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum WeatherClass {
    #[serde(rename = "no_precip")]
    NoPrecipitation = 0,
    #[serde(rename = "rain")]
    Rain = 1,
    #[serde(rename = "snow")]
    Snow = 2,
}

impl WeatherClass {
    pub const ALL: [WeatherClass; NUM_CLASSES] = [
        WeatherClass::NoPrecipitation,
        WeatherClass::Rain,
        WeatherClass::Snow,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn token(self) -> &'static str {
        match self {
            WeatherClass::NoPrecipitation => "no_precip",
            WeatherClass::Rain => "rain",
            WeatherClass::Snow => "snow",
        }
    }

    pub fn display_name(self) -> &'static str {
        match self {
            WeatherClass::NoPrecipitation => "No Precipitation",
            WeatherClass::Rain => "Rain",
            WeatherClass::Snow => "Snow",
        }
    }
}

impl fmt::Display for WeatherClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

impl FromStr for WeatherClass {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|c| c.token() == s)
            .ok_or_else(|| format!("unknown class `{s}`"))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Day,
    Night,
}

impl Domain {
    pub const ALL: [Domain; 2] = [Domain::Day, Domain::Night];

    pub fn token(self) -> &'static str {
        match self {
            Domain::Day => "day",
            Domain::Night => "night",
        }
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

impl FromStr for Domain {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "day" => Ok(Domain::Day),
            "night" => Ok(Domain::Night),
            _ => Err(format!("unknown domain `{s}`")),
        }
    }
}
