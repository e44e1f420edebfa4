//! Panoptic annotation files: id-encoded RGB PNGs plus the JSON index
//! (`images`, `annotations`, `categories`).
//!
//! A pixel's segment id is `R + 256 G + 65536 B`; 0 is void.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::{BufWriter, Cursor};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panoptic::{pixel_counts, CategoryMeta, CategoryTable, PanopticMap, Segment, MAX_SEGMENT_ID};
use crate::tensor::{Shape, Tensor};

pub fn id_to_rgb(id: u32) -> [u8; 3] {
    [id as u8, (id >> 8) as u8, (id >> 16) as u8]
}

pub fn rgb_to_id(rgb: [u8; 3]) -> u32 {
    rgb[0] as u32 | (rgb[1] as u32) << 8 | (rgb[2] as u32) << 16
}

/// Encodes ids as an 8-bit RGB PNG with fixed encoder settings.
pub fn encode_id_png(height: usize, width: usize, ids: &[u32]) -> Result<Vec<u8>> {
    if ids.len() != height * width {
        return Err(Error::shape("encode_id_png", height * width, ids.len()));
    }
    if let Some(&bad) = ids.iter().find(|&&i| i > MAX_SEGMENT_ID) {
        return Err(Error::invalid(format!("segment id {bad} does not fit in 24 bits")));
    }
    let mut rgb = Vec::with_capacity(ids.len() * 3);
    for &i in ids {
        rgb.extend_from_slice(&id_to_rgb(i));
    }
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, width as u32, height as u32);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        enc.set_compression(png::Compression::Balanced);
        enc.set_filter(png::Filter::Sub);
        let mut w = enc.write_header().map_err(|e| Error::malformed("PNG", e))?;
        w.write_image_data(&rgb).map_err(|e| Error::malformed("PNG", e))?;
    }
    Ok(out)
}

/// Decodes an 8-bit RGB PNG into `(height, width, ids)`.
pub fn decode_id_png(bytes: &[u8]) -> Result<(usize, usize, Vec<u32>)> {
    let decoder = png::Decoder::new(Cursor::new(bytes));
    let mut reader = decoder.read_info().map_err(|e| Error::malformed("PNG", e))?;
    let info = reader.info();
    if info.color_type != png::ColorType::Rgb || info.bit_depth != png::BitDepth::Eight {
        return Err(Error::malformed(
            "id PNG",
            format!("expected 8-bit RGB, found {:?} {:?}", info.color_type, info.bit_depth),
        ));
    }
    let (w, h) = (info.width as usize, info.height as usize);
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::malformed("id PNG", "image too large"))?;
    let mut buf = vec![0; size];
    let frame = reader.next_frame(&mut buf).map_err(|e| Error::malformed("PNG", e))?;
    let ids = buf[..frame.buffer_size()]
        .chunks_exact(3)
        .map(|p| rgb_to_id([p[0], p[1], p[2]]))
        .collect();
    Ok((h, w, ids))
}

pub fn write_id_png(path: &Path, map: &PanopticMap) -> Result<()> {
    fs::write(path, encode_id_png(map.height(), map.width(), map.ids())?)?;
    Ok(())
}

pub fn read_id_png(path: &Path) -> Result<(usize, usize, Vec<u32>)> {
    decode_id_png(&read_file(path)?)
}

/// Reads a whole file, reporting a missing path as [`Error::MissingFile`].
pub fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingFile { path: path.to_path_buf() },
        _ => Error::Io(e),
    })
}

/// Id map as a `(1, 1, H, W)` tensor; exact because ids are below 2^24.
pub fn ids_to_tensor(height: usize, width: usize, ids: &[u32]) -> Result<Tensor> {
    Tensor::new(Shape::new(1, 1, height, width), ids.iter().map(|&i| i as f32).collect())
}

pub fn tensor_to_ids(t: &Tensor) -> Result<(usize, usize, Vec<u32>)> {
    let s = t.shape();
    if s.n != 1 || s.c != 1 {
        return Err(Error::shape("tensor_to_ids", "(1, 1, H, W)", s));
    }
    let ids = t
        .data()
        .iter()
        .map(|&v| {
            if v.fract() == 0.0 && (0.0..=MAX_SEGMENT_ID as f32).contains(&v) {
                Ok(v as u32)
            } else {
                Err(Error::Validation(format!("{v} is not a valid segment id")))
            }
        })
        .collect::<Result<_>>()?;
    Ok((s.h, s.w, ids))
}

/// Image ids are integers in some datasets and strings in others.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ImageId {
    Int(u64),
    Str(String),
}

impl fmt::Display for ImageId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ImageId::Int(i) => write!(f, "{i}"),
            ImageId::Str(s) => f.write_str(s),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentInfo {
    pub id: u32,
    pub category_id: u32,
    pub area: u64,
    #[serde(default)]
    pub iscrowd: u8,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub image_id: ImageId,
    pub file_name: String,
    pub segments_info: Vec<SegmentInfo>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageInfo {
    pub id: ImageId,
    #[serde(default)]
    pub file_name: String,
    pub height: usize,
    pub width: usize,
}

/// Top-level annotation JSON. Unknown keys are ignored.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DatasetIndex {
    #[serde(default)]
    pub images: Vec<ImageInfo>,
    #[serde(default)]
    pub annotations: Vec<AnnotationRecord>,
    #[serde(default)]
    pub categories: Vec<CategoryMeta>,
}

impl DatasetIndex {
    pub fn read(path: &Path) -> Result<Self> {
        let bytes = read_file(path)?;
        serde_json::from_slice(&bytes).map_err(|e| Error::malformed(path.display().to_string(), e))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let f = BufWriter::new(fs::File::create(path)?);
        serde_json::to_writer_pretty(f, self).map_err(std::io::Error::from)?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct LoadOptions {
    /// Replace declared areas with pixel counts instead of failing.
    pub repair_areas: bool,
}

/// Lazily decodes one PNG per step.
#[derive(Debug, Clone)]
pub struct DatasetLoader {
    index: DatasetIndex,
    png_dir: PathBuf,
    options: LoadOptions,
    categories: BTreeMap<u32, CategoryMeta>,
}

pub fn load_dataset(json: &Path, png_dir: &Path, options: LoadOptions) -> Result<DatasetLoader> {
    let index = DatasetIndex::read(json)?;
    let mut categories = BTreeMap::new();
    for c in &index.categories {
        if categories.insert(c.id, c.clone()).is_some() {
            return Err(Error::Validation(format!("duplicate category id {}", c.id)));
        }
    }
    Ok(DatasetLoader {
        index,
        png_dir: png_dir.to_path_buf(),
        options,
        categories,
    })
}

impl DatasetLoader {
    pub fn index(&self) -> &DatasetIndex {
        &self.index
    }

    pub fn categories(&self) -> &[CategoryMeta] {
        &self.index.categories
    }

    pub fn records(&self) -> &[AnnotationRecord] {
        &self.index.annotations
    }

    pub fn len(&self) -> usize {
        self.index.annotations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.annotations.is_empty()
    }

    /// Decodes and validates the map of one record.
    pub fn load(&self, record: &AnnotationRecord) -> Result<PanopticMap> {
        let (h, w, ids) = read_id_png(&self.png_dir.join(&record.file_name))?;
        let img = &record.image_id;
        let counts = pixel_counts(&ids);
        let mut segments = BTreeMap::new();
        for s in &record.segments_info {
            let meta = self.categories.get(&s.category_id).ok_or_else(|| {
                Error::Validation(format!("image {img}: segment {} has unknown category {}", s.id, s.category_id))
            })?;
            if s.id == 0 || s.id > MAX_SEGMENT_ID {
                return Err(Error::Validation(format!("image {img}: invalid segment id {}", s.id)));
            }
            let actual = counts.get(&s.id).copied().unwrap_or(0);
            if actual == 0 {
                return Err(Error::Validation(format!("image {img}: segment {} has no pixels", s.id)));
            }
            if actual != s.area && !self.options.repair_areas {
                return Err(Error::Validation(format!(
                    "image {img}: segment {} declares area {} but has {actual} pixels",
                    s.id, s.area
                )));
            }
            let seg = Segment {
                category: s.category_id,
                is_thing: meta.is_thing,
                area: actual,
                crowd: s.iscrowd != 0,
            };
            if segments.insert(s.id, seg).is_some() {
                return Err(Error::Validation(format!("image {img}: segment {} listed twice", s.id)));
            }
        }
        if let Some(id) = counts.keys().find(|&&i| i != 0 && !segments.contains_key(&i)) {
            return Err(Error::Validation(format!("image {img}: PNG id {id} has no segments_info entry")));
        }
        PanopticMap::new(h, w, ids, segments).map_err(|e| Error::Validation(format!("image {img}: {e}")))
    }

    pub fn iter(&self) -> impl Iterator<Item = Result<(PanopticMap, &AnnotationRecord)>> + '_ {
        self.index.annotations.iter().map(move |r| self.load(r).map(|m| (m, r)))
    }
}

/// Writes PNGs as maps are added, and the JSON index on `finish`.
#[derive(Debug)]
pub struct DatasetWriter {
    png_dir: PathBuf,
    index: DatasetIndex,
}

impl DatasetWriter {
    pub fn new(png_dir: &Path, categories: Vec<CategoryMeta>) -> Result<Self> {
        fs::create_dir_all(png_dir)?;
        Ok(DatasetWriter {
            png_dir: png_dir.to_path_buf(),
            index: DatasetIndex {
                categories,
                ..Default::default()
            },
        })
    }

    pub fn add(&mut self, image_id: ImageId, file_name: &str, map: &PanopticMap) -> Result<()> {
        write_id_png(&self.png_dir.join(file_name), map)?;
        self.index.images.push(ImageInfo {
            id: image_id.clone(),
            file_name: file_name.to_string(),
            height: map.height(),
            width: map.width(),
        });
        self.index.annotations.push(record_for(image_id, file_name, map));
        Ok(())
    }

    pub fn finish(self, json: &Path) -> Result<DatasetIndex> {
        self.index.write(json)?;
        Ok(self.index)
    }
}

pub fn record_for(image_id: ImageId, file_name: &str, map: &PanopticMap) -> AnnotationRecord {
    AnnotationRecord {
        image_id,
        file_name: file_name.to_string(),
        segments_info: map
            .segments()
            .iter()
            .map(|(&id, s)| SegmentInfo {
                id,
                category_id: s.category,
                area: s.area,
                iscrowd: s.crowd as u8,
            })
            .collect(),
    }
}

/// Category file: either a bare `[{"id", "name", "isthing"}, ...]` array
/// or an object with `categories` and an optional `channels` list mapping
/// semantic-head channels to category ids. A full annotation JSON also
/// parses (its other keys are ignored).
pub fn read_categories(path: &Path) -> Result<CategoryTable> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        List(Vec<CategoryMeta>),
        Object {
            categories: Vec<CategoryMeta>,
            #[serde(default)]
            channels: Option<Vec<u32>>,
        },
    }
    let bytes = read_file(path)?;
    let raw: Raw = serde_json::from_slice(&bytes).map_err(|e| Error::malformed(path.display().to_string(), e))?;
    match raw {
        Raw::List(c) => CategoryTable::new(c),
        Raw::Object { categories, channels } => {
            let table = CategoryTable::new(categories)?;
            Ok(match channels {
                Some(ch) => table.with_channels(ch),
                None => table,
            })
        }
    }
}
