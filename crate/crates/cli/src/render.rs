//! Grayscale spectrogram images: time runs left to right, frequency bottom
//! to top, brightness is `log(1 + X)` scaled by the image maximum.

use std::path::Path;

use anyhow::{bail, Context, Result};
use ndarray::Array2;

pub struct Gray {
    pub width: usize,
    pub height: usize,
    /// Row-major, top row first.
    pub pixels: Vec<u8>,
}

/// Renders a frames-by-bins magnitude. Negative entries count as zero; an
/// all-zero input renders black.
pub fn render(mag: &Array2<f64>) -> Gray {
    let (frames, bins) = mag.dim();
    let compressed = mag.mapv(|x| x.max(0.0).ln_1p());
    let peak = compressed.iter().copied().fold(0.0, f64::max);
    let mut pixels = Vec::with_capacity(frames * bins);
    for f in (0..bins).rev() {
        for t in 0..frames {
            let v = if peak > 0.0 { compressed[[t, f]] / peak } else { 0.0 };
            pixels.push((v * 255.0).round() as u8);
        }
    }
    Gray {
        width: frames,
        height: bins,
        pixels,
    }
}

pub fn encode_pgm(img: &Gray) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.pixels);
    out
}

/// Writes PGM or PNG depending on the extension of `path`.
pub fn save(img: &Gray, path: &Path) -> Result<()> {
    let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
    match ext.as_deref() {
        Some("pgm") => std::fs::write(path, encode_pgm(img)).with_context(|| format!("writing {}", path.display())),
        Some("png") => {
            let buf = image::GrayImage::from_raw(img.width as u32, img.height as u32, img.pixels.clone())
                .context("image buffer size")?;
            buf.save_with_format(path, image::ImageFormat::Png)
                .with_context(|| format!("writing {}", path.display()))
        }
        _ => bail!("unsupported image extension for {} (use .pgm or .png)", path.display()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn low_frequency_at_bottom_and_peak_white() {
        let mut m = Array2::zeros((3, 4));
        m[[1, 0]] = 10.0;
        m[[2, 3]] = -1.0;
        let img = render(&m);
        assert_eq!((img.width, img.height), (3, 4));
        // bin 0 is the last row, frame 1 its middle pixel
        assert_eq!(img.pixels[3 * 3 + 1], 255);
        assert_eq!(img.pixels.iter().filter(|&&p| p != 0).count(), 1);
    }

    #[test]
    fn zeros_render_black_and_pgm_header() {
        let img = render(&Array2::zeros((5, 2)));
        assert!(img.pixels.iter().all(|&p| p == 0));
        let bytes = encode_pgm(&img);
        assert!(bytes.starts_with(b"P5\n5 2\n255\n"));
        assert_eq!(bytes.len(), 11 + 10);
    }
}
