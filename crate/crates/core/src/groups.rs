//! Estimation cells: national, province × urban/rural, and demographic
//! post-strata.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Area {
    Urban,
    Rural,
}

impl Area {
    pub const ALL: [Area; 2] = [Area::Urban, Area::Rural];

    pub fn as_str(self) -> &'static str {
        match self {
            Area::Urban => "urban",
            Area::Rural => "rural",
        }
    }
}

impl fmt::Display for Area {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Area {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "urban" => Ok(Area::Urban),
            "rural" => Ok(Area::Rural),
            other => Err(Error::Config(format!("unknown area `{other}`"))),
        }
    }
}

/// Demographic post-stratum index (sex × age group by default).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PostStratum(pub u16);

impl fmt::Display for PostStratum {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ps{:02}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupLevel {
    National,
    Area,
    PostStratum,
}

impl GroupLevel {
    pub const ALL: [GroupLevel; 3] = [GroupLevel::National, GroupLevel::Area, GroupLevel::PostStratum];
}

/// One estimation cell. Ordering is national first, then areas, then post-strata.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub enum GroupKey {
    #[default]
    National,
    Area { province: u16, area: Area },
    PostStratum(PostStratum),
}

impl GroupKey {
    pub fn level(&self) -> GroupLevel {
        match self {
            GroupKey::National => GroupLevel::National,
            GroupKey::Area { .. } => GroupLevel::Area,
            GroupKey::PostStratum(_) => GroupLevel::PostStratum,
        }
    }

    /// Every key a unit with these attributes contributes to, restricted to `levels`.
    pub fn keys_for(
        province: u16,
        area: Area,
        post_stratum: PostStratum,
        levels: &[GroupLevel],
    ) -> impl Iterator<Item = GroupKey> + '_ {
        levels.iter().map(move |level| match level {
            GroupLevel::National => GroupKey::National,
            GroupLevel::Area => GroupKey::Area { province, area },
            GroupLevel::PostStratum => GroupKey::PostStratum(post_stratum),
        })
    }
}

impl fmt::Display for GroupKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GroupKey::National => f.write_str("national"),
            GroupKey::Area { province, area } => write!(f, "p{province:02}-{area}"),
            GroupKey::PostStratum(ps) => write!(f, "{ps}"),
        }
    }
}

impl FromStr for GroupKey {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "national" {
            return Ok(GroupKey::National);
        }
        if let Some(rest) = s.strip_prefix("ps") {
            let idx = rest
                .parse()
                .map_err(|_| Error::Config(format!("bad post-stratum key `{s}`")))?;
            return Ok(GroupKey::PostStratum(PostStratum(idx)));
        }
        if let Some(rest) = s.strip_prefix('p') {
            if let Some((prov, area)) = rest.split_once('-') {
                let province = prov
                    .parse()
                    .map_err(|_| Error::Config(format!("bad area key `{s}`")))?;
                return Ok(GroupKey::Area {
                    province,
                    area: area.parse()?,
                });
            }
        }
        Err(Error::Config(format!("unknown group key `{s}`")))
    }
}

impl Serialize for GroupKey {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for GroupKey {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}
