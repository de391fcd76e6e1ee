use std::path::Path;

use image::{DynamicImage, GrayImage, ImageBuffer, Luma, RgbImage};

use super::{Image, Planar, Planes, ScalarMap};
use crate::error::{Error, Result};

fn codec_err(path: &Path, e: image::ImageError) -> Error {
    match e {
        image::ImageError::IoError(source) => Error::io(path, source),
        other => Error::Codec { path: path.to_path_buf(), message: other.to_string() },
    }
}

/// Reads an 8-bit PNG as a gray or RGB image with values divided by 255.
pub fn read_png(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let img = image::open(path).map_err(|e| codec_err(path, e))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    match img {
        DynamicImage::ImageLuma8(g) => {
            let data = g.into_raw().into_iter().map(|b| b as f64 / 255.0).collect();
            Image::new(Planes::new(1, h, w, data)?)
        }
        other => {
            let rgb = other.to_rgb8();
            let raw = rgb.as_raw();
            Image::from_fn(3, h, w, |c, y, x| raw[(y * w + x) * 3 + c] as f64 / 255.0)
        }
    }
}

fn quantize(v: f64) -> u8 {
    // f64::round is half-away-from-zero
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn write_png(img: &Image, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let p = img.planes();
    let (h, w) = (p.height() as u32, p.width() as u32);
    let result = if p.channels() == 1 {
        GrayImage::from_fn(w, h, |x, y| Luma([quantize(p.get(0, y as usize, x as usize))]))
            .save(path)
    } else {
        RgbImage::from_fn(w, h, |x, y| {
            let (x, y) = (x as usize, y as usize);
            image::Rgb([quantize(p.get(0, y, x)), quantize(p.get(1, y, x)), quantize(p.get(2, y, x))])
        })
        .save(path)
    };
    result.map_err(|e| codec_err(path, e))
}

/// 16-bit grayscale heat map normalized so the map maximum becomes 65535.
pub fn write_heatmap_png(map: &ScalarMap, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let max = map.max();
    let scale = if max > 0.0 { 65535.0 / max } else { 0.0 };
    let w = map.width();
    let values = map.values();
    let buf: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_fn(w as u32, map.height() as u32, |x, y| {
            let v = values[y as usize * w + x as usize].max(0.0);
            Luma([(v * scale).round().min(65535.0) as u16])
        });
    buf.save(path).map_err(|e| codec_err(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantize_rounds_half_away_from_zero() {
        assert_eq!(quantize(0.5 / 255.0), 1);
        assert_eq!(quantize(1.0), 255);
        assert_eq!(quantize(-0.2), 0);
        assert_eq!(quantize(1.5), 255);
    }

    #[test]
    fn rgb_roundtrip_through_png() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.png");
        let img = Image::from_fn(3, 4, 5, |c, y, x| ((c * 20 + y * 5 + x) % 256) as f64 / 255.0).unwrap();
        write_png(&img, &path).unwrap();
        assert_eq!(read_png(&path).unwrap(), img);
    }

    #[test]
    fn gray_roundtrip_through_png() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.png");
        let img = Image::from_fn(1, 3, 3, |_, y, x| (y * 3 + x) as f64 / 255.0).unwrap();
        write_png(&img, &path).unwrap();
        assert_eq!(read_png(&path).unwrap(), img);
    }

    #[test]
    fn heatmap_is_sixteen_bit() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("h.png");
        let map = ScalarMap::new(1, 2, vec![0.0, 2.0]).unwrap();
        write_heatmap_png(&map, &path).unwrap();
        let back = image::open(&path).unwrap();
        let back = back.as_luma16().unwrap();
        assert_eq!(back.as_raw(), &vec![0u16, 65535]);
    }

    #[test]
    fn missing_png_is_io_error() {
        let err = read_png("/definitely/not/here.png").unwrap_err();
        assert!(err.is_io());
    }
}
