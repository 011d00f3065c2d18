//! Overlapping-tile restoration for images larger than the tile size.

use retinexdual_core::{Error, ImageTensor, ParamStore, Result, RetinexDual};

/// Pixels shared by neighbouring tiles.
pub const OVERLAP: usize = 32;

/// Tile origins along one axis of length `len`. Neighbours overlap by at least [`OVERLAP`].
pub fn tile_starts(len: usize, tile: usize) -> Vec<usize> {
    if len <= tile {
        return vec![0];
    }
    let stride = tile - OVERLAP;
    let mut starts: Vec<usize> = (0..).map(|i| i * stride).take_while(|&s| s + tile < len).collect();
    starts.push(len - tile);
    starts
}

/// Blend weight of position `i` in a tile of length `t` starting at `start`:
/// a linear ramp across the overlap on every side that has a neighbour.
fn feather(i: usize, t: usize, start: usize, len: usize) -> f32 {
    let ramp = |d: usize| ((d + 1) as f32 / (OVERLAP + 1) as f32).min(1.0);
    let left = if start > 0 { ramp(i) } else { 1.0 };
    let right = if start + t < len { ramp(t - 1 - i) } else { 1.0 };
    left * right
}

pub fn check_tile(tile: usize) -> Result<()> {
    if tile < 2 * OVERLAP {
        return Err(Error::config("tile", format!("must be at least {} pixels", 2 * OVERLAP)));
    }
    Ok(())
}

/// Restore `image`, in one pass when it fits within `tile` on both sides and
/// otherwise as feather-blended overlapping tiles. The flag reports which path ran.
pub fn restore_image(
    model: &RetinexDual,
    store: &ParamStore<f32>,
    image: &ImageTensor,
    tile: usize,
) -> Result<(ImageTensor, bool)> {
    check_tile(tile)?;
    let (h, w) = (image.height(), image.width());
    if h <= tile && w <= tile {
        return Ok((model.restore(store, image)?.final_image, false));
    }
    let (th, tw) = (tile.min(h), tile.min(w));
    let mut acc = vec![0.0f32; 3 * h * w];
    let mut weight = vec![0.0f32; h * w];
    for &y0 in &tile_starts(h, tile) {
        for &x0 in &tile_starts(w, tile) {
            let out = model.restore(store, &image.crop(y0, x0, th, tw)?)?.final_image;
            for y in 0..th {
                let wy = feather(y, th, y0, h);
                for x in 0..tw {
                    let wgt = wy * feather(x, tw, x0, w);
                    let p = (y0 + y) * w + x0 + x;
                    weight[p] += wgt;
                    for c in 0..3 {
                        acc[c * h * w + p] += wgt * out.get(c, y, x);
                    }
                }
            }
        }
    }
    let blended = ImageTensor::from_fn(h, w, |c, y, x| {
        let p = y * w + x;
        (acc[c * h * w + p] / weight[p]).clamp(0.0, 1.0)
    })?;
    Ok((blended, true))
}
