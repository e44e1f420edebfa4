//! Panoptic id maps and category metadata shared by fusion, metrics and IO.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest id representable in an RGB-encoded PNG.
pub const MAX_SEGMENT_ID: u32 = (1 << 24) - 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Segment {
    pub category: u32,
    pub is_thing: bool,
    pub area: u64,
    pub crowd: bool,
}

/// Per-pixel segment ids (0 = void) with a segment table.
///
/// Invariants, enforced by [`PanopticMap::new`]: every nonzero id in the map
/// has a table entry and vice versa, and every entry's area equals its pixel
/// count.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PanopticMap {
    height: usize,
    width: usize,
    ids: Vec<u32>,
    segments: BTreeMap<u32, Segment>,
}

impl PanopticMap {
    pub fn new(height: usize, width: usize, ids: Vec<u32>, segments: BTreeMap<u32, Segment>) -> Result<Self> {
        let map = PanopticMap {
            height,
            width,
            ids,
            segments,
        };
        map.validate()?;
        Ok(map)
    }

    /// A map where every pixel is void.
    pub fn void(height: usize, width: usize) -> Self {
        PanopticMap {
            height,
            width,
            ids: vec![0; height * width],
            segments: BTreeMap::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.ids.len() != self.height * self.width {
            return Err(Error::Validation(format!(
                "id map has {} pixels, extent {}x{} needs {}",
                self.ids.len(),
                self.height,
                self.width,
                self.height * self.width
            )));
        }
        if self.segments.contains_key(&0) {
            return Err(Error::Validation("segment id 0 is reserved for void".into()));
        }
        let counts = pixel_counts(&self.ids);
        if let Some(id) = counts.keys().find(|&&id| id != 0 && !self.segments.contains_key(&id)) {
            return Err(Error::Validation(format!("id {id} appears in the map but has no segment entry")));
        }
        for (&id, seg) in &self.segments {
            let actual = counts.get(&id).copied().unwrap_or(0);
            if actual == 0 {
                return Err(Error::Validation(format!("segment {id} has no pixels")));
            }
            if seg.area != actual {
                return Err(Error::Validation(format!(
                    "segment {id}: declared area {} but {actual} pixels",
                    seg.area
                )));
            }
        }
        Ok(())
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn extent(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    pub fn id_at(&self, y: usize, x: usize) -> u32 {
        self.ids[y * self.width + x]
    }

    pub fn segments(&self) -> &BTreeMap<u32, Segment> {
        &self.segments
    }

    pub fn segment(&self, id: u32) -> Option<&Segment> {
        self.segments.get(&id)
    }

    pub fn void_pixels(&self) -> usize {
        self.ids.iter().filter(|&&i| i == 0).count()
    }

    pub fn into_parts(self) -> (usize, usize, Vec<u32>, BTreeMap<u32, Segment>) {
        (self.height, self.width, self.ids, self.segments)
    }

    /// Renames ids through `f`, which must be injective on the present ids.
    pub fn relabel(&self, f: impl Fn(u32) -> u32) -> Result<Self> {
        let mut segments = BTreeMap::new();
        for (&id, seg) in &self.segments {
            let new = f(id);
            if new == 0 || segments.insert(new, *seg).is_some() {
                return Err(Error::invalid(format!("relabel maps {id} to a void or repeated id")));
            }
        }
        let ids = self.ids.iter().map(|&i| if i == 0 { 0 } else { f(i) }).collect();
        Ok(PanopticMap {
            height: self.height,
            width: self.width,
            ids,
            segments,
        })
    }

    /// Same map with ids renumbered 1.. in raster order of first appearance,
    /// so two maps with identical segments compare equal.
    pub fn canonical(&self) -> Self {
        let mut order = BTreeMap::new();
        for &i in &self.ids {
            if i != 0 {
                let next = order.len() as u32 + 1;
                order.entry(i).or_insert(next);
            }
        }
        self.relabel(|i| order[&i]).expect("raster renumbering is injective")
    }
}

pub(crate) fn pixel_counts(ids: &[u32]) -> BTreeMap<u32, u64> {
    let mut counts = BTreeMap::new();
    for &i in ids {
        *counts.entry(i).or_insert(0u64) += 1;
    }
    counts
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryMeta {
    pub id: u32,
    pub name: String,
    #[serde(rename = "isthing", with = "int_bool")]
    pub is_thing: bool,
}

/// Accepts the 0/1 integers of the annotation JSON as well as booleans.
mod int_bool {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &bool, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u8(*v as u8)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<bool, D::Error> {
        #[derive(serde::Deserialize)]
        #[serde(untagged)]
        enum Raw {
            B(bool),
            I(u64),
        }
        match Raw::deserialize(d)? {
            Raw::B(b) => Ok(b),
            Raw::I(0) => Ok(false),
            Raw::I(1) => Ok(true),
            Raw::I(n) => Err(serde::de::Error::custom(format!("expected 0 or 1, got {n}"))),
        }
    }
}

/// Category metadata plus the mapping from semantic-head channels to
/// category ids. Without an explicit mapping channel `c` means category `c`.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct CategoryTable {
    categories: BTreeMap<u32, CategoryMeta>,
    channels: Option<Vec<u32>>,
}

impl CategoryTable {
    pub fn new(categories: Vec<CategoryMeta>) -> Result<Self> {
        let mut map = BTreeMap::new();
        for c in categories {
            let id = c.id;
            if map.insert(id, c).is_some() {
                return Err(Error::Validation(format!("duplicate category id {id}")));
            }
        }
        Ok(CategoryTable {
            categories: map,
            channels: None,
        })
    }

    /// Semantic channel `i` predicts category `channels[i]`.
    pub fn with_channels(mut self, channels: Vec<u32>) -> Self {
        self.channels = Some(channels);
        self
    }

    pub fn get(&self, id: u32) -> Option<&CategoryMeta> {
        self.categories.get(&id)
    }

    pub fn is_thing(&self, id: u32) -> Option<bool> {
        self.categories.get(&id).map(|c| c.is_thing)
    }

    pub fn iter(&self) -> impl Iterator<Item = &CategoryMeta> {
        self.categories.values()
    }

    pub fn len(&self) -> usize {
        self.categories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.categories.is_empty()
    }

    pub fn channel_category(&self, channel: usize) -> Result<u32> {
        match &self.channels {
            None => Ok(channel as u32),
            Some(c) => c
                .get(channel)
                .copied()
                .ok_or_else(|| Error::invalid(format!("semantic channel {channel} has no category mapping"))),
        }
    }

    pub fn channels(&self) -> Option<&[u32]> {
        self.channels.as_deref()
    }
}
