//! PNG reading and writing for sky rasters.

use std::path::Path;

use image::RgbImage;
use spirit_core::embeddings::Raster;
use spirit_core::{Error, Result};

pub fn write_png(path: &Path, raster: &Raster) -> Result<()> {
    let img = RgbImage::from_raw(raster.width as u32, raster.height as u32, raster.data.clone())
        .ok_or_else(|| Error::InvalidInput(format!("{}: raster size mismatch", path.display())))?;
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

pub fn read_png(path: &Path) -> Result<Raster> {
    let img = image::open(path).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?.to_rgb8();
    let (w, h) = img.dimensions();
    Raster::new(h as usize, w as usize, img.into_raw())
}
