//! A dataset on disk: one feature file per image plus manifests.
//!
//! ```text
//! DIR/geotags.csv
//! DIR/split.csv          (optional)
//! DIR/partition.txt      (optional)
//! DIR/features/<image_id>.srlf
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use super::{
    read_feature_file, read_geotags, read_split, write_feature_file, write_geotags, write_split, DatasetSplit, GeoTag,
    LocalFeatureSet, SemanticPartition,
};
use crate::error::{Error, Result};

pub const GEOTAGS_FILE: &str = "geotags.csv";
pub const SPLIT_FILE: &str = "split.csv";
pub const PARTITION_FILE: &str = "partition.txt";
pub const FEATURES_DIR: &str = "features";

#[derive(Debug, Clone)]
pub struct DatasetFiles {
    /// In geotag manifest order.
    pub sets: Vec<LocalFeatureSet>,
    pub geotags: Vec<(String, GeoTag)>,
    pub split: Option<DatasetSplit>,
    pub partition: Option<SemanticPartition>,
}

pub fn feature_path(dir: &Path, image_id: &str) -> PathBuf {
    dir.join(FEATURES_DIR).join(format!("{image_id}.srlf"))
}

fn check_id(id: &str) -> Result<()> {
    if id.is_empty() || id.contains(['/', '\\']) || id == "." || id == ".." {
        return Err(Error::Config(format!("image id {id:?} cannot be used as a file name")));
    }
    Ok(())
}

pub fn write_dataset_dir(
    dir: impl AsRef<Path>,
    sets: &[LocalFeatureSet],
    geotags: &[(String, GeoTag)],
    split: Option<&DatasetSplit>,
    partition: Option<&SemanticPartition>,
) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir.join(FEATURES_DIR))?;
    for s in sets {
        check_id(s.image_id())?;
        write_feature_file(s, feature_path(dir, s.image_id()))?;
    }
    write_geotags(dir.join(GEOTAGS_FILE), geotags)?;
    if let Some(split) = split {
        write_split(dir.join(SPLIT_FILE), split)?;
    }
    if let Some(p) = partition {
        p.write(dir.join(PARTITION_FILE))?;
    }
    Ok(())
}

/// Loads every image listed in the geotag manifest.
pub fn read_dataset_dir(dir: impl AsRef<Path>) -> Result<DatasetFiles> {
    let dir = dir.as_ref();
    let geotags = read_geotags(dir.join(GEOTAGS_FILE))?;
    let mut sets = Vec::with_capacity(geotags.len());
    for (id, _) in &geotags {
        check_id(id)?;
        let fs = read_feature_file(feature_path(dir, id))?;
        if fs.image_id() != id {
            return Err(Error::Format {
                offset: 0,
                message: format!("feature file for {id} carries id {}", fs.image_id()),
            });
        }
        sets.push(fs);
    }
    let split_path = dir.join(SPLIT_FILE);
    let split = if split_path.exists() { Some(read_split(split_path)?) } else { None };
    let part_path = dir.join(PARTITION_FILE);
    let partition = if part_path.exists() {
        Some(SemanticPartition::read(part_path)?)
    } else {
        None
    };
    Ok(DatasetFiles {
        sets,
        geotags,
        split,
        partition,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{generate_synthetic_dataset, SyntheticDataset, SyntheticPlaceSpec};

    #[test]
    fn round_trip() {
        let spec = SyntheticPlaceSpec {
            num_places: 3,
            views_per_place: 2,
            dim: 4,
            height: 2,
            width: 2,
            ..SyntheticPlaceSpec::default()
        };
        let ds = generate_synthetic_dataset(&spec).unwrap();
        let tags: Vec<(String, GeoTag)> = ds
            .sets
            .iter()
            .zip(&ds.geotags)
            .map(|(s, t)| (s.image_id().to_string(), *t))
            .collect();
        let tmp = tempfile::tempdir().unwrap();
        let split = ds.split(0.2);
        let part = SyntheticDataset::partition();
        write_dataset_dir(tmp.path(), &ds.sets, &tags, Some(&split), Some(&part)).unwrap();
        let back = read_dataset_dir(tmp.path()).unwrap();
        assert_eq!(back.sets, ds.sets);
        assert_eq!(back.geotags, tags);
        assert_eq!(back.split, Some(split));
        assert_eq!(back.partition, Some(part));
    }

    #[test]
    fn missing_feature_file() {
        let tmp = tempfile::tempdir().unwrap();
        fs::write(tmp.path().join(GEOTAGS_FILE), "image_id,x_m,y_m\na,0,0\n").unwrap();
        assert!(matches!(read_dataset_dir(tmp.path()), Err(Error::Io(_))));
    }

    #[test]
    fn rejects_path_ids() {
        assert!(check_id("../x").is_err());
        assert!(check_id("p0001_v00").is_ok());
    }
}
