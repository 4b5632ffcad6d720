use alloc::vec;
use alloc::vec::Vec;

use crate::camera::{splat_extent, Splat2D};
use crate::math;

pub const TILE_SIZE: usize = 16;

/// Per-tile depth-ordered splat lists in compressed-row form.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TileBins {
    pub tiles_x: usize,
    pub tiles_y: usize,
    /// `offsets[t]..offsets[t + 1]` indexes `entries` for tile `t` (row-major).
    pub offsets: Vec<usize>,
    /// Positions into the binned splat slice.
    pub entries: Vec<u32>,
}

impl TileBins {
    pub fn tile_count(&self) -> usize {
        self.tiles_x * self.tiles_y
    }

    pub fn tile(&self, tx: usize, ty: usize) -> &[u32] {
        let t = ty * self.tiles_x + tx;
        &self.entries[self.offsets[t]..self.offsets[t + 1]]
    }

    #[inline]
    pub(crate) fn tile_by_id(&self, t: usize) -> &[u32] {
        &self.entries[self.offsets[t]..self.offsets[t + 1]]
    }
}

/// Inclusive pixel range whose centers fall within `[center - radius, center + radius]`.
#[inline]
pub(crate) fn covered_pixels(center: f64, radius: f64, size: usize) -> Option<(usize, usize)> {
    let lo = math::ceil(center - radius - 0.5);
    let hi = math::floor(center + radius - 0.5);
    let lo = lo.max(0.0);
    let hi = hi.min(size as f64 - 1.0);
    if lo > hi {
        None
    } else {
        Some((lo as usize, hi as usize))
    }
}

/// Item to bin: pixel-space center, footprint radius, depth and tie-break key.
#[derive(Debug, Clone, Copy)]
pub(crate) struct BinItem {
    pub center: [f64; 2],
    pub radius: f64,
    pub depth: f64,
    pub key: usize,
}

pub(crate) fn bin_items(items: &[BinItem], width: usize, height: usize) -> TileBins {
    let tiles_x = width.div_ceil(TILE_SIZE);
    let tiles_y = height.div_ceil(TILE_SIZE);
    let n_tiles = tiles_x * tiles_y;

    let mut order: Vec<u32> = (0..items.len() as u32).collect();
    order.sort_unstable_by(|&a, &b| {
        let (a, b) = (&items[a as usize], &items[b as usize]);
        a.depth.total_cmp(&b.depth).then(a.key.cmp(&b.key))
    });

    let tile_range = |it: &BinItem| -> Option<(usize, usize, usize, usize)> {
        let (x0, x1) = covered_pixels(it.center[0], it.radius, width)?;
        let (y0, y1) = covered_pixels(it.center[1], it.radius, height)?;
        Some((x0 / TILE_SIZE, x1 / TILE_SIZE, y0 / TILE_SIZE, y1 / TILE_SIZE))
    };

    let mut counts = vec![0usize; n_tiles + 1];
    for it in items {
        if let Some((tx0, tx1, ty0, ty1)) = tile_range(it) {
            for ty in ty0..=ty1 {
                for tx in tx0..=tx1 {
                    counts[ty * tiles_x + tx + 1] += 1;
                }
            }
        }
    }
    for t in 0..n_tiles {
        counts[t + 1] += counts[t];
    }
    let offsets = counts;
    let mut cursor = offsets.clone();
    let mut entries = vec![0u32; offsets[n_tiles]];
    for &i in &order {
        if let Some((tx0, tx1, ty0, ty1)) = tile_range(&items[i as usize]) {
            for ty in ty0..=ty1 {
                for tx in tx0..=tx1 {
                    let t = ty * tiles_x + tx;
                    entries[cursor[t]] = i;
                    cursor[t] += 1;
                }
            }
        }
    }
    TileBins {
        tiles_x,
        tiles_y,
        offsets,
        entries,
    }
}

/// Assigns every splat to each 16x16 tile its 3σ footprint overlaps, ordered
/// front to back (ties broken by primitive index).
///
/// Entries are positions into `splats`.
pub fn bin_and_sort(splats: &[Splat2D], width: usize, height: usize) -> TileBins {
    let items: Vec<BinItem> = splats
        .iter()
        .map(|s| BinItem {
            center: s.mean2d,
            radius: splat_extent(s.cov2d),
            depth: s.depth,
            key: s.gaussian_index,
        })
        .collect();
    bin_items(&items, width, height)
}
