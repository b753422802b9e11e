use image::imageops::{self, FilterType};
use image::{Rgb, RgbImage};

use super::Resolution;
use crate::error::BackendError;
use crate::grid::{FrameRef, FrameSource};

/// Loads (or synthesizes) a frame and resizes it to `res`.
pub fn render_frame(frame: &FrameRef, res: Resolution) -> Result<RgbImage, BackendError> {
    match &frame.source {
        FrameSource::Image(path) => {
            let img = image::open(path).map_err(|e| BackendError::Frame {
                path: path.display().to_string(),
                message: e.to_string(),
            })?;
            Ok(imageops::resize(
                &img.to_rgb8(),
                res.width,
                res.height,
                FilterType::Triangle,
            ))
        }
        FrameSource::Synthetic(id) => Ok(render_synthetic(id, res)),
    }
}

/// Solid placeholder whose colour is a deterministic function of `id`.
pub fn render_synthetic(id: &str, res: Resolution) -> RgbImage {
    let mix = id.bytes().fold(0x811c_9dc5u32, |h, b| {
        (h ^ b as u32).wrapping_mul(0x0100_0193)
    });
    let [r, g, b, _] = mix.to_le_bytes();
    RgbImage::from_pixel(res.width, res.height, Rgb([r, g, b]))
}

/// Tiles `tiles` row-major into a `side`×`side` layout on a black canvas.
/// Slots are `canvas / side` pixels (truncated); unused slots stay black.
pub fn compose_tiles(tiles: &[RgbImage], side: u32, canvas: Resolution) -> RgbImage {
    let mut out = RgbImage::new(canvas.width, canvas.height);
    let side = side.max(1);
    let slot_w = (canvas.width / side).max(1);
    let slot_h = (canvas.height / side).max(1);
    for (i, tile) in tiles.iter().enumerate().take((side * side) as usize) {
        let (row, col) = (i as u32 / side, i as u32 % side);
        let fitted = if tile.dimensions() == (slot_w, slot_h) {
            tile.clone()
        } else {
            imageops::resize(tile, slot_w, slot_h, FilterType::Triangle)
        };
        imageops::replace(
            &mut out,
            &fitted,
            (col * slot_w) as i64,
            (row * slot_h) as i64,
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn synthetic_frames_are_stable() {
        let a = render_synthetic("episode-1/3", Resolution::square(8));
        let b = render_synthetic("episode-1/3", Resolution::square(8));
        let c = render_synthetic("episode-1/4", Resolution::square(8));
        assert_eq!(a, b);
        assert_ne!(a.get_pixel(0, 0), c.get_pixel(0, 0));
    }

    #[test]
    fn collage_leaves_empty_slots_black() {
        let white = RgbImage::from_pixel(4, 4, Rgb([255, 255, 255]));
        let tiles = vec![white; 5];
        let out = compose_tiles(&tiles, 3, Resolution::square(30));
        assert_eq!(out.dimensions(), (30, 30));
        // slot 4 (row 1, col 1) filled, slot 5 (row 1, col 2) empty
        assert_eq!(out.get_pixel(15, 15), &Rgb([255, 255, 255]));
        assert_eq!(out.get_pixel(25, 15), &Rgb([0, 0, 0]));
        assert_eq!(out.get_pixel(5, 25), &Rgb([0, 0, 0]));
    }

    #[test]
    fn image_files_are_resized() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.png");
        RgbImage::from_pixel(10, 6, Rgb([1, 2, 3]))
            .save(&path)
            .unwrap();
        let frame = FrameRef {
            pool_index: 0,
            source_index: 0,
            source: FrameSource::Image(path),
        };
        let img = render_frame(&frame, Resolution::new(5, 5)).unwrap();
        assert_eq!(img.dimensions(), (5, 5));
        let missing = FrameRef {
            source: FrameSource::Image(dir.path().join("nope.png")),
            ..frame
        };
        assert!(matches!(
            render_frame(&missing, Resolution::new(5, 5)),
            Err(BackendError::Frame { .. })
        ));
    }
}
