//! Tile-parallel evaluation of per-pixel kernels.
//!
//! Each pixel is computed from pixel-local inputs only, so the output is
//! independent of the tile size and of how rayon schedules tiles.

use rayon::prelude::*;

/// Default tile edge length in pixels.
pub const DEFAULT_TILE: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Tiling {
    pub tile: usize,
}

impl Default for Tiling {
    fn default() -> Self {
        Tiling { tile: DEFAULT_TILE }
    }
}

impl Tiling {
    pub fn new(tile: usize) -> Self {
        Tiling { tile: tile.max(1) }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Tile {
    pub x0: usize,
    pub y0: usize,
    pub width: usize,
    pub height: usize,
}

impl Tile {
    /// Row-major pixel indices covered by this tile, in the image's index space.
    pub fn indices(self, image_width: usize) -> impl Iterator<Item = usize> {
        (self.y0..self.y0 + self.height)
            .flat_map(move |y| (self.x0..self.x0 + self.width).map(move |x| y * image_width + x))
    }
}

pub fn tiles(width: usize, height: usize, tiling: Tiling) -> Vec<Tile> {
    let t = tiling.tile.max(1);
    let mut out = Vec::new();
    for y0 in (0..height).step_by(t) {
        for x0 in (0..width).step_by(t) {
            out.push(Tile {
                x0,
                y0,
                width: t.min(width - x0),
                height: t.min(height - y0),
            });
        }
    }
    out
}

/// Evaluates `kernel` for every pixel index and returns `STRIDE` outputs per
/// pixel, interleaved in row-major order.
///
/// `init` builds per-tile scratch state that the kernel may reuse.
pub fn map_pixels<const STRIDE: usize, S, I, K>(
    width: usize,
    height: usize,
    tiling: Tiling,
    init: I,
    kernel: K,
) -> Vec<f32>
where
    I: Fn() -> S + Sync,
    K: Fn(&mut S, usize) -> [f32; STRIDE] + Sync,
{
    let tile_list = tiles(width, height, tiling);
    let results: Vec<(Tile, Vec<f32>)> = tile_list
        .into_par_iter()
        .map(|tile| {
            let mut scratch = init();
            let mut buf = Vec::with_capacity(tile.width * tile.height * STRIDE);
            for index in tile.indices(width) {
                buf.extend_from_slice(&kernel(&mut scratch, index));
            }
            (tile, buf)
        })
        .collect();

    let mut out = vec![0.0f32; width * height * STRIDE];
    for (tile, buf) in results {
        let row_len = tile.width * STRIDE;
        for (r, src) in buf.chunks_exact(row_len).enumerate() {
            let start = ((tile.y0 + r) * width + tile.x0) * STRIDE;
            out[start..start + row_len].copy_from_slice(src);
        }
    }
    out
}
