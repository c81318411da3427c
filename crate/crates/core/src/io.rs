//! PNG encodings for label and instance maps: 16-bit grayscale, with
//! 65535 marking unlabeled pixels in label maps and 0 marking "no
//! instance" in instance maps.

use std::io::Cursor;
use std::path::Path;

use image::{DynamicImage, ImageBuffer, ImageFormat, Luma, RgbImage};

use crate::error::{invalid, Result};
use crate::raster::{InstanceMap, LabelMap, UNLABELED};

fn gray16(img: DynamicImage, unlabeled_8bit: Option<u16>) -> Result<(u32, u32, Vec<u16>)> {
    let (w, h) = (img.width(), img.height());
    let data = match img {
        DynamicImage::ImageLuma16(buf) => buf.into_raw(),
        DynamicImage::ImageLuma8(buf) => buf
            .into_raw()
            .into_iter()
            .map(|v| match unlabeled_8bit {
                Some(sentinel) if v == u8::MAX => sentinel,
                _ => v as u16,
            })
            .collect(),
        other => return invalid(format!("expected grayscale PNG, got {:?}", other.color())),
    };
    Ok((w, h, data))
}

pub fn decode_labels(bytes: &[u8], num_categories: u16) -> Result<LabelMap> {
    let img = image::load_from_memory_with_format(bytes, ImageFormat::Png)?;
    let (w, h, data) = gray16(img, Some(UNLABELED))?;
    LabelMap::new(w, h, num_categories, data)
}

pub fn decode_instances(bytes: &[u8]) -> Result<InstanceMap> {
    let img = image::load_from_memory_with_format(bytes, ImageFormat::Png)?;
    let (w, h, data) = gray16(img, None)?;
    InstanceMap::new(w, h, data)
}

pub fn read_labels(path: &Path, num_categories: u16) -> Result<LabelMap> {
    decode_labels(&std::fs::read(path)?, num_categories)
}

pub fn read_instances(path: &Path) -> Result<InstanceMap> {
    decode_instances(&std::fs::read(path)?)
}

fn encode_gray16(w: u32, h: u32, data: &[u16]) -> Result<Vec<u8>> {
    let buf: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_raw(w, h, data.to_vec()).expect("buffer length matches dimensions");
    let mut out = Cursor::new(Vec::new());
    buf.write_to(&mut out, ImageFormat::Png)?;
    Ok(out.into_inner())
}

pub fn encode_labels(map: &LabelMap) -> Result<Vec<u8>> {
    encode_gray16(map.width(), map.height(), map.data())
}

pub fn encode_instances(map: &InstanceMap) -> Result<Vec<u8>> {
    encode_gray16(map.width(), map.height(), map.data())
}

pub fn write_labels(path: &Path, map: &LabelMap) -> Result<()> {
    std::fs::write(path, encode_labels(map)?)?;
    Ok(())
}

pub fn write_instances(path: &Path, map: &InstanceMap) -> Result<()> {
    std::fs::write(path, encode_instances(map)?)?;
    Ok(())
}

pub fn encode_rgb(img: &RgbImage) -> Result<Vec<u8>> {
    let mut out = Cursor::new(Vec::new());
    img.write_to(&mut out, ImageFormat::Png)?;
    Ok(out.into_inner())
}

pub fn read_rgb(path: &Path) -> Result<RgbImage> {
    Ok(image::open(path)?.into_rgb8())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn label_png_round_trip_keeps_sentinel() {
        let map = LabelMap::new(3, 2, 300, vec![0, 299, UNLABELED, 7, 8, 9]).unwrap();
        let back = decode_labels(&encode_labels(&map).unwrap(), 300).unwrap();
        assert_eq!(back, map);
    }

    #[test]
    fn eight_bit_labels_map_255_to_unlabeled() {
        let buf: ImageBuffer<Luma<u8>, Vec<u8>> = ImageBuffer::from_raw(2, 1, vec![3, 255]).unwrap();
        let mut bytes = Cursor::new(Vec::new());
        buf.write_to(&mut bytes, ImageFormat::Png).unwrap();
        let map = decode_labels(bytes.get_ref(), 4).unwrap();
        assert_eq!(map.data(), &[3, UNLABELED]);
    }

    #[test]
    fn rgb_png_is_rejected_as_labels() {
        let img = RgbImage::new(2, 2);
        assert!(decode_labels(&encode_rgb(&img).unwrap(), 4).is_err());
    }
}
