//! Unified semantic taxonomy and remap tables.
//!
//! Camera labels (Cityscapes) and LiDAR labels (SemanticKITTI) land in one
//! 20-class unified set. Dynamic SemanticKITTI classes collapse to their
//! static counterparts; Cityscapes meta classes collapse to unlabeled. The
//! full tables are data (JSON id -> name maps) so they can be edited without
//! code changes; the defaults ship embedded.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashSet};
use std::path::Path;

/// The unified class set. Ids are dense from 0, unlabeled = 0.
#[derive(Copy, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
#[repr(u16)]
pub enum UnifiedClass {
    Unlabeled = 0,
    Road = 1,
    Sidewalk = 2,
    Building = 3,
    Fence = 4,
    Pole = 5,
    TrafficSign = 6,
    Vegetation = 7,
    Trunk = 8,
    Terrain = 9,
    Person = 10,
    Rider = 11,
    Car = 12,
    Truck = 13,
    Bus = 14,
    Motorcycle = 15,
    Bicycle = 16,
    OtherGround = 17,
    OtherStructure = 18,
    OtherObject = 19,
}

pub const NUM_CLASSES: usize = 20;

impl UnifiedClass {
    pub const ALL: [UnifiedClass; NUM_CLASSES] = [
        UnifiedClass::Unlabeled,
        UnifiedClass::Road,
        UnifiedClass::Sidewalk,
        UnifiedClass::Building,
        UnifiedClass::Fence,
        UnifiedClass::Pole,
        UnifiedClass::TrafficSign,
        UnifiedClass::Vegetation,
        UnifiedClass::Trunk,
        UnifiedClass::Terrain,
        UnifiedClass::Person,
        UnifiedClass::Rider,
        UnifiedClass::Car,
        UnifiedClass::Truck,
        UnifiedClass::Bus,
        UnifiedClass::Motorcycle,
        UnifiedClass::Bicycle,
        UnifiedClass::OtherGround,
        UnifiedClass::OtherStructure,
        UnifiedClass::OtherObject,
    ];

    pub fn id(self) -> u16 {
        self as u16
    }

    pub fn from_id(id: u16) -> Option<UnifiedClass> {
        Self::ALL.get(id as usize).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            UnifiedClass::Unlabeled => "unlabeled",
            UnifiedClass::Road => "road",
            UnifiedClass::Sidewalk => "sidewalk",
            UnifiedClass::Building => "building",
            UnifiedClass::Fence => "fence",
            UnifiedClass::Pole => "pole",
            UnifiedClass::TrafficSign => "traffic-sign",
            UnifiedClass::Vegetation => "vegetation",
            UnifiedClass::Trunk => "trunk",
            UnifiedClass::Terrain => "terrain",
            UnifiedClass::Person => "person",
            UnifiedClass::Rider => "rider",
            UnifiedClass::Car => "car",
            UnifiedClass::Truck => "truck",
            UnifiedClass::Bus => "bus",
            UnifiedClass::Motorcycle => "motorcycle",
            UnifiedClass::Bicycle => "bicycle",
            UnifiedClass::OtherGround => "other-ground",
            UnifiedClass::OtherStructure => "other-structure",
            UnifiedClass::OtherObject => "other-object",
        }
    }

    pub fn from_name(name: &str) -> Option<UnifiedClass> {
        Self::ALL.iter().copied().find(|c| c.name() == name)
    }
}

/// Total mapping from one source taxonomy's raw ids into the unified set.
#[derive(Clone, Debug)]
pub struct RemapTable {
    taxonomy: String,
    map: BTreeMap<u32, UnifiedClass>,
}

impl RemapTable {
    pub fn new(taxonomy: impl Into<String>, map: BTreeMap<u32, UnifiedClass>) -> Self {
        RemapTable {
            taxonomy: taxonomy.into(),
            map,
        }
    }

    /// Identity table over the unified set itself.
    pub fn unified_identity() -> Self {
        let map = UnifiedClass::ALL
            .iter()
            .map(|&c| (c.id() as u32, c))
            .collect();
        RemapTable::new("unified", map)
    }

    pub fn semantickitti() -> Self {
        Self::from_json_str("semantickitti", include_str!("../data/remap_semantickitti.json"))
            .expect("embedded semantickitti table is valid")
    }

    pub fn cityscapes() -> Self {
        Self::from_json_str("cityscapes", include_str!("../data/remap_cityscapes.json"))
            .expect("embedded cityscapes table is valid")
    }

    pub fn builtin(name: &str) -> Option<Self> {
        match name {
            "unified" => Some(Self::unified_identity()),
            "semantickitti" => Some(Self::semantickitti()),
            "cityscapes" => Some(Self::cityscapes()),
            _ => None,
        }
    }

    /// Parse a JSON object mapping source id (string key) to unified class name.
    pub fn from_json_str(taxonomy: &str, json: &str) -> Result<Self> {
        let raw: BTreeMap<String, String> = serde_json::from_str(json)
            .map_err(|e| Error::invalid("remap table", e.to_string()))?;
        let mut map = BTreeMap::new();
        for (k, v) in raw {
            let id: u32 = k
                .parse()
                .map_err(|_| Error::invalid("remap table", format!("bad source id {k:?}")))?;
            let class = UnifiedClass::from_name(&v)
                .ok_or_else(|| Error::invalid("remap table", format!("unknown class name {v:?}")))?;
            map.insert(id, class);
        }
        Ok(RemapTable::new(taxonomy, map))
    }

    pub fn from_json_file(taxonomy: &str, path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        Self::from_json_str(taxonomy, &text)
    }

    pub fn taxonomy(&self) -> &str {
        &self.taxonomy
    }

    pub fn remap(&self, source_id: u32) -> Result<UnifiedClass> {
        self.map.get(&source_id).copied().ok_or(Error::UnknownClassId {
            id: source_id,
            taxonomy: self.taxonomy.clone(),
        })
    }
}

/// Class-group predicates used by registration and mapping filters.
#[derive(Clone, Debug)]
pub struct ClassGroups {
    pub ground: HashSet<UnifiedClass>,
    pub dynamic: HashSet<UnifiedClass>,
    pub unreliable: HashSet<UnifiedClass>,
}

impl Default for ClassGroups {
    fn default() -> Self {
        use UnifiedClass::*;
        ClassGroups {
            ground: [Road, Sidewalk, Terrain, OtherGround].into_iter().collect(),
            dynamic: [Person, Rider, Car, Truck, Bus, Motorcycle, Bicycle]
                .into_iter()
                .collect(),
            unreliable: [Unlabeled].into_iter().collect(),
        }
    }
}
