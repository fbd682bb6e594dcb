use std::io::{Seek, Write};

use image::{ImageFormat, Rgb, RgbImage};

use crate::error::{Error, Result};
use crate::vocab::Vocabulary;
use crate::voxgrid::GlobalGrid;

pub const IMAGE_SIZE: u32 = 256;
pub const BACKGROUND: [u8; 3] = [255, 255, 255];

/// Orthographic top-down image of the grid along −y.
///
/// The xz footprint is scaled uniformly to fit the image and centered. Each
/// pixel takes the color of the category of the highest occupied voxel in
/// the column under its center; structure voxels are drawn like any other
/// category.
pub fn render_topdown(grid: &GlobalGrid, palette: &Vocabulary) -> Result<RgbImage> {
    let [nx, ny, nz] = grid.spec().dims();
    let spec = *grid.spec();
    // Column top semantic, or None when the column is empty.
    let mut top: Vec<Option<u16>> = vec![None; nx * nz];
    for z in 0..nz {
        for x in 0..nx {
            top[z * nx + x] = (0..ny)
                .rev()
                .map(|y| spec.linear([x, y, z]))
                .find(|&l| !grid.is_free(l))
                .map(|l| grid.semantic(l));
        }
    }
    let mut colors = std::collections::BTreeMap::new();
    for s in top.iter().flatten() {
        if !colors.contains_key(s) {
            let c = palette
                .color(*s)
                .ok_or_else(|| Error::invalid(format!("palette has no color for category {s}")))?;
            colors.insert(*s, c);
        }
    }
    let n = nx.max(nz) as f64;
    let per_pixel = n / IMAGE_SIZE as f64;
    let off_x = (n - nx as f64) / 2.0;
    let off_z = (n - nz as f64) / 2.0;
    let mut img = RgbImage::from_pixel(IMAGE_SIZE, IMAGE_SIZE, Rgb(BACKGROUND));
    for (u, v, px) in img.enumerate_pixels_mut() {
        let gx = (u as f64 + 0.5) * per_pixel - off_x;
        let gz = (v as f64 + 0.5) * per_pixel - off_z;
        if gx < 0.0 || gz < 0.0 || gx >= nx as f64 || gz >= nz as f64 {
            continue;
        }
        if let Some(s) = top[gz as usize * nx + gx as usize] {
            *px = Rgb(colors[&s]);
        }
    }
    Ok(img)
}

pub fn write_png<W: Write + Seek>(img: &RgbImage, mut w: W) -> Result<()> {
    img.write_to(&mut w, ImageFormat::Png)
        .map_err(|e| Error::Io(std::io::Error::other(e)))
}
