//! Raster files and atomic writes.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use cgni_core::imaging::to_grayscale;
use cgni_core::{Error as CoreError, GrayImage, RgbImage};
use image::codecs::jpeg::JpegEncoder;
use image::{ExtendedColorType, ImageEncoder, ImageReader};

use crate::{Error, Result};

/// Decodes a PNG or JPEG file into 8-bit RGB.
pub fn load_image(path: &Path) -> Result<RgbImage> {
    let image_err = |source| Error::Image {
        path: path.to_path_buf(),
        source,
    };
    let decoded = ImageReader::open(path)
        .map_err(Error::io(path))?
        .with_guessed_format()
        .map_err(Error::io(path))?
        .decode()
        .map_err(image_err)?
        .into_rgb8();
    let (w, h) = decoded.dimensions();
    Ok(RgbImage::new(w as usize, h as usize, decoded.into_raw())?)
}

pub fn load_gray(path: &Path) -> Result<GrayImage> {
    load_image(path).map(|rgb| to_grayscale(&rgb))
}

/// Image dimensions from the file header, without decoding pixels.
pub fn image_dimensions(path: &Path) -> Result<(usize, usize)> {
    let (w, h) = ImageReader::open(path)
        .map_err(Error::io(path))?
        .with_guessed_format()
        .map_err(Error::io(path))?
        .into_dimensions()
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?;
    Ok((w as usize, h as usize))
}

fn dims_u32(img: &RgbImage) -> (u32, u32) {
    (img.width as u32, img.height as u32)
}

pub fn save_png(path: &Path, img: &RgbImage) -> Result<()> {
    let (w, h) = dims_u32(img);
    let mut bytes = Vec::new();
    image::codecs::png::PngEncoder::new(&mut bytes)
        .write_image(&img.data, w, h, ExtendedColorType::Rgb8)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?;
    write_atomic(path, &bytes)
}

pub fn encode_jpeg(img: &RgbImage, quality: u8, path_for_errors: &Path) -> Result<Vec<u8>> {
    if !(1..=100).contains(&quality) {
        return Err(CoreError::InvalidConfig(format!("JPEG quality {quality} outside [1, 100]")).into());
    }
    let (w, h) = dims_u32(img);
    let mut bytes = Vec::new();
    JpegEncoder::new_with_quality(&mut bytes, quality)
        .write_image(&img.data, w, h, ExtendedColorType::Rgb8)
        .map_err(|source| Error::Image {
            path: path_for_errors.to_path_buf(),
            source,
        })?;
    Ok(bytes)
}

/// Decodes `src` and writes it to `dst` as a JPEG at `quality`.
pub fn reencode_jpeg(src: &Path, quality: u8, dst: &Path) -> Result<PathBuf> {
    let img = load_image(src)?;
    let bytes = encode_jpeg(&img, quality, dst)?;
    write_atomic(dst, &bytes)?;
    Ok(dst.to_path_buf())
}

/// Writes through a sibling temporary file and renames it into place, so a
/// failed write never leaves a truncated `path` behind.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(Error::io(dir))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    let result = (|| {
        let mut f = BufWriter::new(fs::File::create(&tmp)?);
        f.write_all(bytes)?;
        f.into_inner().map_err(|e| e.into_error())?.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result.map_err(Error::io(path))
}

pub fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(Error::io(path))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn white_pixel_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("w.png");
        save_png(&p, &RgbImage::new(1, 1, vec![255; 3]).unwrap()).unwrap();
        assert_eq!(load_image(&p).unwrap().data, [255, 255, 255]);
        assert_eq!(image_dimensions(&p).unwrap(), (1, 1));
    }

    #[test]
    fn truncated_file_names_path() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.png");
        let img = RgbImage::new(8, 8, (0..192).map(|v| v as u8).collect()).unwrap();
        save_png(&p, &img).unwrap();
        let bytes = fs::read(&p).unwrap();
        fs::write(&p, &bytes[..bytes.len() / 2]).unwrap();
        let err = load_image(&p).unwrap_err();
        assert!(err.to_string().contains("t.png"), "{err}");
    }

    #[test]
    fn missing_file_names_path() {
        let err = load_image(Path::new("/nonexistent/x.png")).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/x.png"));
    }

    #[test]
    fn jpeg_decodes_like_its_png_resave() {
        let dir = tempfile::tempdir().unwrap();
        let src = dir.path().join("s.png");
        let img = RgbImage::new(16, 16, (0..768).map(|v| (v * 37 % 256) as u8).collect()).unwrap();
        save_png(&src, &img).unwrap();
        let jpg = reencode_jpeg(&src, 90, &dir.path().join("s.jpg")).unwrap();
        let decoded = load_image(&jpg).unwrap();
        let png = dir.path().join("r.png");
        save_png(&png, &decoded).unwrap();
        assert_eq!(load_image(&png).unwrap(), decoded);
        assert_eq!((decoded.width, decoded.height), (16, 16));
    }

    #[test]
    fn quality_out_of_range() {
        let img = RgbImage::new(1, 1, vec![0; 3]).unwrap();
        assert!(encode_jpeg(&img, 0, Path::new("x")).is_err());
        assert!(encode_jpeg(&img, 101, Path::new("x")).is_err());
    }
}
