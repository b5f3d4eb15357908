//! PNG output: viridis heatmaps and flat RGB images.

use crate::error::{Error, Result};

/// Polynomial fit of matplotlib's viridis on `t` in [0, 1].
pub fn viridis(t: f64) -> [u8; 3] {
    const C: [[f64; 3]; 7] = [
        [0.277_727_327_2, 0.005_407_344_544, 0.334_099_805_5],
        [0.105_093_043_1, 1.404_613_529, 1.384_590_162],
        [-0.330_861_828_9, 0.214_847_559_5, 0.095_095_163_92],
        [-4.634_230_499, -5.799_100_973, -19.332_440_88],
        [6.228_269_936, 14.179_933_47, 56.690_552_6],
        [4.776_384_997, -13.745_145_38, -65.353_032_63],
        [-5.435_455_855, 4.645_852_612, 26.312_435_24],
    ];
    let t = if t.is_finite() { t.clamp(0.0, 1.0) } else { 0.0 };
    let mut rgb = [0u8; 3];
    for (k, out) in rgb.iter_mut().enumerate() {
        let mut acc = 0.0;
        for row in C.iter().rev() {
            acc = acc * t + row[k];
        }
        *out = (acc.clamp(0.0, 1.0) * 255.0).round() as u8;
    }
    rgb
}

/// Encode an 8-bit RGB image.
pub fn rgb_png(rgb: &[u8], height: usize, width: usize) -> Result<Vec<u8>> {
    if rgb.len() != height * width * 3 {
        return Err(Error::InvalidGrid(format!(
            "{} bytes for a {height}x{width} RGB image",
            rgb.len()
        )));
    }
    let mut out = Vec::new();
    let mut enc = png::Encoder::new(&mut out, width as u32, height as u32);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    let png_err = |e: png::EncodingError| Error::InvalidGrid(format!("png encoding: {e}"));
    let mut writer = enc.write_header().map_err(png_err)?;
    writer.write_image_data(rgb).map_err(png_err)?;
    writer.finish().map_err(png_err)?;
    Ok(out)
}

/// Viridis heatmap of a row-major plane, with `lo..hi` mapped onto the colormap.
pub fn viridis_png(plane: &[f32], height: usize, width: usize, lo: f64, hi: f64) -> Result<Vec<u8>> {
    let span = if hi > lo { hi - lo } else { 1.0 };
    let rgb: Vec<u8> = plane
        .iter()
        .flat_map(|&v| viridis((v as f64 - lo) / span))
        .collect();
    rgb_png(&rgb, height, width)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn endpoints_match_viridis() {
        // Reference endpoints of the matplotlib map, #440154 and #fde725; the
        // polynomial fit is within a few levels of both.
        let lo = viridis(0.0);
        let hi = viridis(1.0);
        for (got, want) in lo.iter().chain(&hi).zip([0x44, 0x01, 0x54, 0xfd, 0xe7, 0x25]) {
            assert!((*got as i32 - want).abs() <= 5, "{lo:?} {hi:?}");
        }
    }

    #[test]
    fn png_dimensions_round_trip() {
        let bytes = viridis_png(&[0.0, 0.5, 1.0, 0.2, 0.1, 0.9], 2, 3, 0.0, 1.0).unwrap();
        let dec = png::Decoder::new(std::io::Cursor::new(bytes));
        let reader = dec.read_info().unwrap();
        assert_eq!((reader.info().width, reader.info().height), (3, 2));
    }
}
