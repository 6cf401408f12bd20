//! Writes a tiny IDX image/label pair, loads it back as a dataset, and shows
//! how a corrupt header is reported.

use envae::data::{load_idx, parse_idx_images, write_idx_images, write_idx_labels};

fn main() -> envae::Result<()> {
    let dir = tempfile::tempdir().map_err(|e| envae::Error::Io { path: "tmp".into(), source: e })?;
    let pixels: Vec<u8> = (0..2 * 3 * 3).map(|i| (i * 15) as u8).collect();
    let images = write_idx_images(3, 3, &pixels);
    std::fs::write(dir.path().join("images"), &images).unwrap();
    std::fs::write(dir.path().join("labels"), write_idx_labels(&[4, 9])).unwrap();

    let ds = load_idx(dir.path().join("images"), Some(&dir.path().join("labels")))?;
    println!("{} images of {:?}, labels {:?}", ds.len(), ds.kind, ds.labels);
    println!("first image:\n{:?}", ds.image(0)?.data());

    let mut corrupt = images.clone();
    corrupt[2] = 9;
    println!("corrupt magic: {}", parse_idx_images(&corrupt).unwrap_err());
    println!("truncated: {}", parse_idx_images(&images[..20]).unwrap_err());
    Ok(())
}
