//! CSV manifests (geotags, dataset split) and the static/dynamic class partition.

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use super::geo::{common_frame, GeoFrame, GeoTag};
use super::ClassId;
use crate::error::{Error, Result};

const PLANAR_HEADER: [&str; 3] = ["image_id", "x_m", "y_m"];
const SPHERICAL_HEADER: [&str; 3] = ["image_id", "lat", "lon"];

/// Reads a geotag manifest. The header decides the frame.
pub fn read_geotags(path: impl AsRef<Path>) -> Result<Vec<(String, GeoTag)>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let header: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let frame = if header == PLANAR_HEADER {
        GeoFrame::Planar
    } else if header == SPHERICAL_HEADER {
        GeoFrame::Spherical
    } else {
        return Err(Error::Format {
            offset: 0,
            message: format!("unrecognized geotag header {header:?}"),
        });
    };
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let offset = rec.position().map(|p| p.byte()).unwrap_or(0);
        let parse = |i: usize| -> Result<f64> {
            rec.get(i)
                .and_then(|s| s.trim().parse::<f64>().ok())
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::Format {
                    offset,
                    message: format!("bad coordinate in column {i}"),
                })
        };
        let id = rec.get(0).unwrap_or_default().trim().to_string();
        let (a, b) = (parse(1)?, parse(2)?);
        let tag = match frame {
            GeoFrame::Planar => GeoTag::planar(a, b),
            GeoFrame::Spherical => GeoTag::spherical(a, b),
        };
        if !seen.insert(id.clone()) {
            return Err(Error::DuplicateId(id));
        }
        out.push((id, tag));
    }
    Ok(out)
}

pub fn write_geotags(path: impl AsRef<Path>, tags: &[(String, GeoTag)]) -> Result<()> {
    let frame = common_frame(tags.iter().map(|(_, t)| t))?.unwrap_or(GeoFrame::Planar);
    let mut wtr = csv::Writer::from_path(path)?;
    wtr.write_record(match frame {
        GeoFrame::Planar => PLANAR_HEADER,
        GeoFrame::Spherical => SPHERICAL_HEADER,
    })?;
    for (id, tag) in tags {
        let (a, b) = tag.coords();
        wtr.write_record([id.as_str(), &a.to_string(), &b.to_string()])?;
    }
    wtr.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Role {
    Database,
    Query,
}

impl FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => Err(Error::Config(format!("unknown split {s:?}"))),
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

impl FromStr for Role {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "db" => Ok(Role::Database),
            "query" => Ok(Role::Query),
            _ => Err(Error::Config(format!("unknown role {s:?}"))),
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::Database => "db",
            Role::Query => "query",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitEntry {
    pub image_id: String,
    pub split: Split,
    pub role: Role,
}

/// Assignment of every image to a split and a database/query role.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DatasetSplit {
    pub entries: Vec<SplitEntry>,
}

impl DatasetSplit {
    /// Image ids of one split and role, in manifest order.
    pub fn ids(&self, split: Split, role: Role) -> Vec<&str> {
        self.entries
            .iter()
            .filter(|e| e.split == split && e.role == role)
            .map(|e| e.image_id.as_str())
            .collect()
    }

    pub fn ids_in(&self, split: Split) -> Vec<&str> {
        self.entries
            .iter()
            .filter(|e| e.split == split)
            .map(|e| e.image_id.as_str())
            .collect()
    }
}

pub fn read_split(path: impl AsRef<Path>) -> Result<DatasetSplit> {
    let mut rdr = csv::Reader::from_path(path)?;
    let header: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    if header != ["image_id", "split", "role"] {
        return Err(Error::Format {
            offset: 0,
            message: format!("unrecognized split header {header:?}"),
        });
    }
    let mut seen = HashSet::new();
    let mut entries = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let image_id = rec.get(0).unwrap_or_default().trim().to_string();
        if !seen.insert(image_id.clone()) {
            return Err(Error::DuplicateId(image_id));
        }
        entries.push(SplitEntry {
            image_id,
            split: rec.get(1).unwrap_or_default().trim().parse()?,
            role: rec.get(2).unwrap_or_default().trim().parse()?,
        });
    }
    Ok(DatasetSplit { entries })
}

pub fn write_split(path: impl AsRef<Path>, split: &DatasetSplit) -> Result<()> {
    let mut wtr = csv::Writer::from_path(path)?;
    wtr.write_record(["image_id", "split", "role"])?;
    for e in &split.entries {
        wtr.write_record([e.image_id.clone(), e.split.to_string(), e.role.to_string()])?;
    }
    wtr.flush()?;
    Ok(())
}

/// Static (task-relevant) and dynamic (misleading) semantic classes.
/// Ids in neither set are unused.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SemanticPartition {
    static_classes: BTreeSet<ClassId>,
    dynamic_classes: BTreeSet<ClassId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelKind {
    Static,
    Dynamic,
    Unused,
}

impl SemanticPartition {
    pub fn new(
        static_classes: impl IntoIterator<Item = ClassId>,
        dynamic_classes: impl IntoIterator<Item = ClassId>,
    ) -> Result<Self> {
        let static_classes: BTreeSet<_> = static_classes.into_iter().collect();
        let dynamic_classes: BTreeSet<_> = dynamic_classes.into_iter().collect();
        if let Some(c) = static_classes.intersection(&dynamic_classes).next() {
            return Err(Error::Config(format!("class {c} is both static and dynamic")));
        }
        Ok(Self {
            static_classes,
            dynamic_classes,
        })
    }

    /// Cityscapes train ids: road, building, traffic sign, vegetation are
    /// static; sky, person, car are dynamic.
    pub fn cityscapes() -> Self {
        Self::new([0, 2, 7, 8], [10, 11, 13]).unwrap()
    }

    pub fn static_classes(&self) -> &BTreeSet<ClassId> {
        &self.static_classes
    }

    pub fn dynamic_classes(&self) -> &BTreeSet<ClassId> {
        &self.dynamic_classes
    }

    pub fn kind(&self, label: ClassId) -> LabelKind {
        if self.static_classes.contains(&label) {
            LabelKind::Static
        } else if self.dynamic_classes.contains(&label) {
            LabelKind::Dynamic
        } else {
            LabelKind::Unused
        }
    }

    /// Parses `static=0,2,7` / `dynamic=10,11` lines. `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut stat = None;
        let mut dynm = None;
        for line in text.lines() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("partition line without '=': {line:?}")))?;
            let ids = value
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(|s| {
                    s.parse::<ClassId>()
                        .map_err(|_| Error::Config(format!("bad class id {s:?}")))
                })
                .collect::<Result<Vec<_>>>()?;
            match key.trim() {
                "static" => stat = Some(ids),
                "dynamic" => dynm = Some(ids),
                k => return Err(Error::Config(format!("unknown partition key {k:?}"))),
            }
        }
        match (stat, dynm) {
            (Some(s), Some(d)) => Self::new(s, d),
            _ => Err(Error::Config("partition needs both static= and dynamic=".into())),
        }
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_string())?;
        Ok(())
    }
}

impl fmt::Display for SemanticPartition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let join = |s: &BTreeSet<ClassId>| {
            s.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(",")
        };
        writeln!(f, "static={}", join(&self.static_classes))?;
        writeln!(f, "dynamic={}", join(&self.dynamic_classes))
    }
}
