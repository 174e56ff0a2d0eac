use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::Tensor;

fn image_err(path: &Path, reason: impl Into<String>) -> Error {
    Error::Image {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

/// Reads an 8-bit RGB PNG as a `[3, H, W]` tensor of raw values 0..=255.
pub fn load_image(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut decoder = png::Decoder::new(BufReader::new(file));
    decoder.set_transformations(png::Transformations::IDENTITY);
    let mut reader = decoder
        .read_info()
        .map_err(|e| image_err(path, format!("malformed PNG: {e}")))?;
    let (color, depth) = {
        let info = reader.info();
        (info.color_type, info.bit_depth)
    };
    if depth != png::BitDepth::Eight {
        return Err(image_err(
            path,
            format!("unsupported bit depth {}", depth as u8),
        ));
    }
    if color != png::ColorType::Rgb {
        return Err(image_err(path, format!("non-RGB color type {color:?}")));
    }
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| image_err(path, "image too large"))?;
    let mut buf = vec![0u8; size];
    let frame = reader
        .next_frame(&mut buf)
        .map_err(|e| image_err(path, format!("malformed PNG: {e}")))?;
    let (w, h) = (frame.width as usize, frame.height as usize);
    let bytes = &buf[..frame.buffer_size()];
    let mut data = vec![0.0; 3 * h * w];
    for y in 0..h {
        let row = &bytes[y * frame.line_size..y * frame.line_size + 3 * w];
        for x in 0..w {
            for c in 0..3 {
                data[(c * h + y) * w + x] = f64::from(row[3 * x + c]);
            }
        }
    }
    Tensor::new(vec![3, h, w], data)
}

/// Writes a `[3, H, W]` tensor of values 0..=255 as an 8-bit RGB PNG
/// (values are rounded and clamped).
pub fn save_image(img: &Tensor, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let (c, h, w) = img.dims3()?;
    if c != 3 {
        return Err(Error::dim(format!("save_image needs 3 channels, got {c}")));
    }
    let mut bytes = vec![0u8; 3 * h * w];
    let d = img.data();
    for y in 0..h {
        for x in 0..w {
            for ch in 0..3 {
                bytes[3 * (y * w + x) + ch] =
                    d[(ch * h + y) * w + x].round().clamp(0.0, 255.0) as u8;
            }
        }
    }
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), w as u32, h as u32);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    let mut writer = enc
        .write_header()
        .map_err(|e| image_err(path, e.to_string()))?;
    writer
        .write_image_data(&bytes)
        .map_err(|e| image_err(path, e.to_string()))?;
    writer.finish().map_err(|e| image_err(path, e.to_string()))
}

/// `x ↦ x/127.5 − 1`, mapping 0..=255 onto [−1, 1].
pub fn normalize(img: &Tensor) -> Tensor {
    img.map(|v| v / 127.5 - 1.0)
}

/// Inverse of [`normalize`], rounded to integers and clamped to 0..=255.
pub fn denormalize(img: &Tensor) -> Tensor {
    img.map(|v| ((v + 1.0) * 127.5).round().clamp(0.0, 255.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_png(path: &Path, color: png::ColorType, depth: png::BitDepth, bytes: &[u8]) {
        let file = File::create(path).unwrap();
        let mut enc = png::Encoder::new(BufWriter::new(file), 2, 2);
        enc.set_color(color);
        enc.set_depth(depth);
        let mut w = enc.write_header().unwrap();
        w.write_image_data(bytes).unwrap();
    }

    #[test]
    fn ramp_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("ramp.png");
        let img = Tensor::from_fn(&[3, 4, 4], |i| (i * 5) as f64);
        save_image(&img, &p).unwrap();
        assert_eq!(load_image(&p).unwrap(), img);
    }

    #[test]
    fn rejects_grayscale_and_16_bit() {
        let dir = tempfile::tempdir().unwrap();
        let g = dir.path().join("gray.png");
        write_png(
            &g,
            png::ColorType::Grayscale,
            png::BitDepth::Eight,
            &[0, 1, 2, 3],
        );
        let err = load_image(&g).unwrap_err().to_string();
        assert!(err.contains("non-RGB"), "{err}");

        let d = dir.path().join("deep.png");
        write_png(&d, png::ColorType::Rgb, png::BitDepth::Sixteen, &[7u8; 24]);
        let err = load_image(&d).unwrap_err().to_string();
        assert!(err.contains("unsupported bit depth"), "{err}");
    }

    #[test]
    fn missing_and_malformed_files() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            load_image(dir.path().join("nope.png")),
            Err(Error::Io { .. })
        ));
        let bad = dir.path().join("bad.png");
        std::fs::write(&bad, b"not a png").unwrap();
        assert!(load_image(&bad)
            .unwrap_err()
            .to_string()
            .contains("malformed"));
    }

    #[test]
    fn normalize_endpoints_and_clamp() {
        let t = Tensor::new(vec![3], vec![0.0, 255.0, 127.5]).unwrap();
        assert_eq!(normalize(&t).data(), &[-1.0, 1.0, 0.0]);
        let over = Tensor::new(vec![2], vec![1.2, -3.0]).unwrap();
        assert_eq!(denormalize(&over).data(), &[255.0, 0.0]);
    }

    proptest::proptest! {
        #[test]
        fn normalize_round_trip_is_exact(v in proptest::collection::vec(0u8..=255, 27)) {
            let img = Tensor::new(vec![3, 3, 3], v.iter().map(|&x| x as f64).collect()).unwrap();
            let n = normalize(&img);
            proptest::prop_assert!(n.data().iter().all(|x| (-1.0..=1.0).contains(x)));
            proptest::prop_assert_eq!(denormalize(&n), img);
        }
    }
}
