//! Dumping the Laplacian levels of an image for inspection.

use std::path::{Path, PathBuf};

use mmht_core::pyramid::laplacian_decompose;

use crate::error::{CliError, Result};
use crate::imageio::{read_image, write_image};

/// Band-pass levels are shifted by this before clipping so that zero maps to
/// mid-gray.
pub const BAND_OFFSET: f32 = 0.5;

/// Writes `level1.png` (finest band) through `level{levels}.png` (coarse
/// residual) into `out`.
pub fn run(input: &Path, out: &Path, levels: usize) -> Result<Vec<PathBuf>> {
    if levels < 1 {
        return Err(CliError::input("--levels must be >= 1"));
    }
    let img = read_image(input)?;
    let (_, h, w) = img.chw()?;
    let m = 1usize << (levels - 1);
    if h % m != 0 || w % m != 0 {
        return Err(CliError::at(input, format!("{h}x{w} is not divisible by 2^(levels-1) = {m}")));
    }
    let pyr = laplacian_decompose(&img, levels).map_err(|e| CliError::at(input, e))?;
    std::fs::create_dir_all(out).map_err(|e| CliError::at(out, e))?;
    (1..=levels)
        .map(|i| {
            let level = pyr.level(i);
            let shown = if i < levels { level.map(|v| v + BAND_OFFSET) } else { level.clone() };
            let path = out.join(format!("level{i}.png"));
            write_image(&path, &shown)?;
            Ok(path)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::procedural_scene;
    use crate::imageio::write_image;

    #[test]
    fn writes_every_level_at_halving_sizes() {
        let tmp = tempfile::tempdir().unwrap();
        let src = tmp.path().join("in.png");
        write_image(&src, &procedural_scene(32, 16, 0)).unwrap();
        let files = run(&src, &tmp.path().join("out"), 3).unwrap();
        assert_eq!(files.len(), 3);
        let dims: Vec<(u32, u32)> = files.iter().map(|p| image::image_dimensions(p).unwrap()).collect();
        assert_eq!(dims, [(16, 32), (8, 16), (4, 8)]);
    }

    #[test]
    fn indivisible_size_is_input_error() {
        let tmp = tempfile::tempdir().unwrap();
        let src = tmp.path().join("in.png");
        write_image(&src, &procedural_scene(10, 10, 0)).unwrap();
        assert_eq!(run(&src, tmp.path(), 3).unwrap_err().exit_code(), 1);
    }
}
