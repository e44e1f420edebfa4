//! Deterministic inputs shared by the benchmarks in `benches/`.

use std::collections::BTreeMap;

use panfpn::fusion::{FusionConfig, InstancePrediction};
use panfpn::rle::BinaryMask;
use panfpn::{CategoryMeta, CategoryTable, PanopticMap, Rng, Segment, Shape, Tensor};

pub fn random_tensor(rng: &mut Rng, shape: Shape) -> Tensor {
    Tensor::from_fn(shape, |_, _, _, _| rng.symmetric(1.0) as f32)
}

/// Stuff 0..stuff, things stuff..stuff+things, `other` = stuff+things.
pub fn table(stuff: u32, things: u32) -> CategoryTable {
    let cats = (0..stuff + things)
        .map(|id| CategoryMeta {
            id,
            name: format!("c{id}"),
            is_thing: id >= stuff,
        })
        .collect();
    let channels = (0..stuff).chain([stuff + things]).collect();
    CategoryTable::new(cats).expect("unique ids").with_channels(channels)
}

/// `n` elliptical instances with random scores over an `h x w` image, plus
/// semantic scores for `stuff + 1` channels.
pub fn fusion_scene(
    rng: &mut Rng,
    h: usize,
    w: usize,
    n: usize,
    stuff: u32,
    things: u32,
) -> (Vec<InstancePrediction>, Tensor, FusionConfig) {
    let instances = (0..n)
        .map(|_| {
            let (cy, cx) = (rng.below(h) as f64, rng.below(w) as f64);
            let (ry, rx) = (rng.range(4, h / 4 + 5) as f64, rng.range(4, w / 4 + 5) as f64);
            InstancePrediction {
                category: stuff + rng.below(things as usize) as u32,
                score: rng.next_f64() as f32,
                mask: BinaryMask::from_fn(h, w, |y, x| {
                    let (dy, dx) = ((y as f64 - cy) / ry, (x as f64 - cx) / rx);
                    dy * dy + dx * dx <= 1.0
                }),
            }
        })
        .collect();
    let probs = random_tensor(rng, Shape::new(1, stuff as usize + 1, h, w));
    let config = FusionConfig {
        stuff_area_min: 64,
        other_class_id: Some(stuff + things),
        ..FusionConfig::default()
    };
    (instances, probs, config)
}

/// Blocky map with `segments` segments over categories `0..categories`.
pub fn blocky_map(rng: &mut Rng, h: usize, w: usize, segments: u32, categories: u32, stuff: u32) -> PanopticMap {
    let info: Vec<u32> = (0..segments).map(|_| rng.below(categories as usize) as u32).collect();
    let (by, bx) = (8, 8);
    let blocks: Vec<u32> = (0..by * bx).map(|_| 1 + rng.below(segments as usize) as u32).collect();
    let ids: Vec<u32> = (0..h * w)
        .map(|i| blocks[((i / w) * by / h) * bx + (i % w) * bx / w])
        .collect();
    let mut segs = BTreeMap::new();
    for &id in &ids {
        let category = info[id as usize - 1];
        segs.entry(id)
            .or_insert(Segment {
                category,
                is_thing: category >= stuff,
                area: 0,
                crowd: false,
            })
            .area += 1;
    }
    PanopticMap::new(h, w, ids, segs).expect("consistent map")
}
