//! The class registry: semantic and lane-mark label tables.
//!
//! Scene classes use IDs 1–21, lane-mark classes 200–250; 255 is the shared
//! ignore label and is never stored as an entry of its own.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use super::MapError;

/// Pixels/points with this ID are excluded from all metric computation.
pub const IGNORE_ID: u16 = 255;

/// Built-in class IDs referenced elsewhere in the crate.
pub mod class_id {
    pub const CAR: u16 = 1;
    pub const ROAD: u16 = 9;
    pub const SIDEWALK: u16 = 10;
    pub const TRAFFIC_LIGHT: u16 = 14;
    pub const POLE: u16 = 15;
    pub const TRAFFIC_SIGN: u16 = 16;
    pub const BUILDING: u16 = 20;
    pub const VEGETATION: u16 = 21;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClassGroup {
    Movable,
    Surface,
    Infrastructure,
    Nature,
    Void,
    Lane,
}

impl ClassGroup {
    pub fn as_str(&self) -> &'static str {
        match self {
            ClassGroup::Movable => "movable",
            ClassGroup::Surface => "surface",
            ClassGroup::Infrastructure => "infrastructure",
            ClassGroup::Nature => "nature",
            ClassGroup::Void => "void",
            ClassGroup::Lane => "lane",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "movable" => ClassGroup::Movable,
            "surface" => ClassGroup::Surface,
            "infrastructure" => ClassGroup::Infrastructure,
            "nature" => ClassGroup::Nature,
            "void" => ClassGroup::Void,
            "lane" => ClassGroup::Lane,
            _ => return None,
        })
    }
}

impl fmt::Display for ClassGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassEntry {
    pub name: String,
    pub group: ClassGroup,
}

/// Mapping `class_id -> (name, group)`; movability derives from the group.
#[derive(Debug, Clone, Default)]
pub struct ClassRegistry {
    entries: BTreeMap<u16, ClassEntry>,
}

const SEMANTIC_TABLE: &[(u16, &str, ClassGroup)] = &[
    (1, "car", ClassGroup::Movable),
    (2, "motorcycle", ClassGroup::Movable),
    (3, "bicycle", ClassGroup::Movable),
    (4, "person", ClassGroup::Movable),
    (5, "rider", ClassGroup::Movable),
    (6, "truck", ClassGroup::Movable),
    (7, "bus", ClassGroup::Movable),
    (8, "tricycle", ClassGroup::Movable),
    (9, "road", ClassGroup::Surface),
    (10, "sidewalk", ClassGroup::Surface),
    (11, "traffic_cone", ClassGroup::Infrastructure),
    (12, "bollard", ClassGroup::Infrastructure),
    (13, "fence", ClassGroup::Infrastructure),
    (14, "traffic_light", ClassGroup::Infrastructure),
    (15, "pole", ClassGroup::Infrastructure),
    (16, "traffic_sign", ClassGroup::Infrastructure),
    (17, "wall", ClassGroup::Infrastructure),
    (18, "trash_can", ClassGroup::Infrastructure),
    (19, "billboard", ClassGroup::Infrastructure),
    (20, "building", ClassGroup::Infrastructure),
    (255, "bridge", ClassGroup::Infrastructure),
    (255, "tunnel", ClassGroup::Infrastructure),
    (255, "overpass", ClassGroup::Infrastructure),
    (21, "vegetation", ClassGroup::Nature),
    (255, "void", ClassGroup::Void),
];

// Lane-mark labels, abbreviated type_color_use (e.g. s_w_d = solid, white,
// dividing).
const LANE_TABLE: &[(u16, &str)] = &[
    (200, "s_w_d"),
    (204, "s_y_d"),
    (213, "ds_w_dn"),
    (209, "ds_y_dn"),
    (207, "sb_y_do"),
    (206, "sb_w_do"),
    (201, "b_w_g"),
    (203, "b_y_g"),
    (208, "db_y_g"),
    (211, "db_w_g"),
    (216, "db_w_s"),
    (217, "ds_w_s"),
    (215, "s_w_s"),
    (218, "s_w_c"),
    (219, "s_y_c"),
    (210, "s_w_p"),
    (232, "s_n_p"),
    (214, "c_wy_z"),
    (202, "a_w_u"),
    (220, "a_w_t"),
    (221, "a_w_tl"),
    (222, "a_w_tr"),
    (231, "a_w_tlr"),
    (224, "a_w_l"),
    (225, "a_w_r"),
    (226, "a_w_lr"),
    (230, "a_w_lu"),
    (228, "a_w_tu"),
    (229, "a_w_m"),
    (233, "a_y_t"),
    (205, "b_n_sr"),
    (212, "d_wy_za"),
    (227, "r_wy_np"),
    (223, "vom_wy_n"),
    (250, "om_n_n"),
];

impl ClassRegistry {
    /// Registry with no entries; only the ignore ID 255 is reserved.
    pub fn empty() -> Self {
        Self::default()
    }

    /// The 21 scored scene-parsing classes (movable objects, surfaces,
    /// infrastructure, nature).
    pub fn semantic_classes() -> Self {
        let mut reg = Self::empty();
        for &(id, name, group) in SEMANTIC_TABLE {
            reg.insert(id, name, group).expect("built-in table is consistent");
        }
        reg
    }

    /// The 35 lane-mark labels.
    pub fn lane_classes() -> Self {
        let mut reg = Self::empty();
        for &(id, name) in LANE_TABLE {
            reg.insert(id, name, ClassGroup::Lane)
                .expect("built-in table is consistent");
        }
        reg
    }

    /// Scene-parsing plus lane-mark classes; the ID ranges are disjoint.
    pub fn full() -> Self {
        let mut reg = Self::semantic_classes();
        for &(id, name) in LANE_TABLE {
            reg.insert(id, name, ClassGroup::Lane)
                .expect("ranges 1-21 and 200-250 are disjoint");
        }
        reg
    }

    /// Adds a class. Rows carrying the ignore ID are accepted but not stored
    /// (255 stays reserved); duplicate IDs are an error.
    pub fn insert(&mut self, id: u16, name: &str, group: ClassGroup) -> Result<(), MapError> {
        if id == IGNORE_ID {
            return Ok(());
        }
        if self.entries.contains_key(&id) {
            return Err(MapError::DuplicateClassId(id));
        }
        self.entries.insert(
            id,
            ClassEntry {
                name: name.to_string(),
                group,
            },
        );
        Ok(())
    }

    /// Loads a class-table file: one `id name group` row per line, `#`
    /// comments allowed.
    pub fn load(path: &Path) -> Result<Self, MapError> {
        let reader = BufReader::new(std::fs::File::open(path)?);
        let mut reg = Self::empty();
        for (idx, line) in reader.lines().enumerate() {
            let line = line?;
            let line_no = idx + 1;
            let body = line.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let fields: Vec<&str> = body.split_whitespace().collect();
            if fields.len() != 3 {
                return Err(MapError::Parse {
                    line: line_no,
                    msg: format!("expected `id name group`, got {} fields", fields.len()),
                });
            }
            let id: u16 = fields[0].parse().map_err(|e| MapError::Parse {
                line: line_no,
                msg: format!("bad class id: {e}"),
            })?;
            let group = ClassGroup::parse(fields[2]).ok_or_else(|| MapError::UnknownGroup {
                line: line_no,
                group: fields[2].to_string(),
            })?;
            reg.insert(id, fields[1], group)?;
        }
        Ok(reg)
    }

    /// Writes the registry in the format accepted by [`ClassRegistry::load`].
    pub fn save(&self, path: &Path) -> Result<(), MapError> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(out, "# id name group")?;
        for (id, entry) in &self.entries {
            writeln!(out, "{} {} {}", id, entry.name, entry.group)?;
        }
        Ok(())
    }

    pub fn get(&self, id: u16) -> Option<&ClassEntry> {
        self.entries.get(&id)
    }

    pub fn contains(&self, id: u16) -> bool {
        self.entries.contains_key(&id)
    }

    /// True exactly for entries in the movable-object group.
    pub fn is_movable(&self, id: u16) -> bool {
        self.entries
            .get(&id)
            .is_some_and(|e| e.group == ClassGroup::Movable)
    }

    /// A label is valid if it is registered or the ignore ID.
    pub fn is_valid_label(&self, id: u16) -> bool {
        id == IGNORE_ID || self.contains(id)
    }

    pub fn ids(&self) -> impl Iterator<Item = u16> + '_ {
        self.entries.keys().copied()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}
