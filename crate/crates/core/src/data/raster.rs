use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Binary PGM (`[h, w]`) or PPM (`[h, w, 3]`), maxval 255. Each value v in
/// [0, 1] becomes `floor(v·255 + 0.5)` (round half up).
pub fn encode_raster(image: &Tensor) -> Result<Vec<u8>> {
    let (magic, h, w) = match image.shape() {
        [h, w] => ("P5", *h, *w),
        [h, w, 3] => ("P6", *h, *w),
        s => {
            return Err(Error::shape(format!(
                "raster needs [h, w] or [h, w, 3], got {s:?}"
            )))
        }
    };
    if let Some(bad) = image.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::contract(format!(
            "raster value {bad} outside [0, 1]; clamp before export"
        )));
    }
    let mut out = format!("{magic}\n{w} {h}\n255\n").into_bytes();
    out.extend(image.data().iter().map(|v| (v * 255.0 + 0.5).floor() as u8));
    Ok(out)
}

pub fn export_raster(image: &Tensor, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_raster(image)?).map_err(|e| Error::io(path, e))
}
