use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("image buffer has {len} values, expected {width}x{height}")]
    Shape {
        width: usize,
        height: usize,
        len: usize,
    },
    #[error("intensity {0} outside [0, 1]")]
    Range(f32),
    #[cfg(feature = "image-io")]
    #[error(transparent)]
    Codec(#[from] image::ImageError),
}

/// Row-major grayscale image with intensities in `[0, 1]`.
///
/// Pixel `(x, y)` is sampled at integer coordinates `(x, y)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

/// Luminance weights for RGB to gray conversion.
pub const LUMA_WEIGHTS: [f32; 3] = [0.299, 0.587, 0.114];

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self, ImageError> {
        if data.len() != width * height {
            return Err(ImageError::Shape {
                width,
                height,
                len: data.len(),
            });
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(ImageError::Range(*v));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    /// Samples `f(x, y)` at every pixel; values are clamped to `[0, 1]`.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(f64, f64) -> f64) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x as f64, y as f64).clamp(0.0, 1.0) as f32);
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn from_luma8(width: usize, height: usize, pixels: &[u8]) -> Result<Self, ImageError> {
        Self::new(
            width,
            height,
            pixels.iter().map(|&p| f32::from(p) / 255.0).collect(),
        )
    }

    pub fn from_rgb8(width: usize, height: usize, pixels: &[u8]) -> Result<Self, ImageError> {
        if pixels.len() != width * height * 3 {
            return Err(ImageError::Shape {
                width,
                height,
                len: pixels.len() / 3,
            });
        }
        let [wr, wg, wb] = LUMA_WEIGHTS;
        let data = pixels
            .chunks_exact(3)
            .map(|p| {
                ((wr * f32::from(p[0]) + wg * f32::from(p[1]) + wb * f32::from(p[2])) / 255.0)
                    .clamp(0.0, 1.0)
            })
            .collect();
        Self::new(width, height, data)
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    pub fn to_luma8(&self) -> Vec<u8> {
        self.data
            .iter()
            .map(|v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
            .collect()
    }

    pub fn mean_and_variance(&self) -> (f64, f64) {
        let n = self.data.len().max(1) as f64;
        let mean = self.data.iter().map(|&v| f64::from(v)).sum::<f64>() / n;
        let var = self
            .data
            .iter()
            .map(|&v| (f64::from(v) - mean).powi(2))
            .sum::<f64>()
            / n;
        (mean, var)
    }

    #[cfg(feature = "image-io")]
    pub fn load(path: &std::path::Path) -> Result<Self, ImageError> {
        let img = image::open(path)?;
        let rgb = img.to_rgb8();
        let (w, h) = rgb.dimensions();
        Self::from_rgb8(w as usize, h as usize, rgb.as_raw())
    }

    #[cfg(feature = "image-io")]
    pub fn save_png(&self, path: &std::path::Path) -> Result<(), ImageError> {
        image::save_buffer(
            path,
            &self.to_luma8(),
            self.width as u32,
            self.height as u32,
            image::ExtendedColorType::L8,
        )?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conversions() {
        let g = GrayImage::from_rgb8(1, 1, &[255, 0, 0]).unwrap();
        assert!((g.get(0, 0) - 0.299).abs() < 1e-6);
        let g = GrayImage::from_luma8(2, 1, &[0, 255]).unwrap();
        assert_eq!(g.data(), &[0.0, 1.0]);
        assert_eq!(g.to_luma8(), vec![0, 255]);
        assert!(GrayImage::new(2, 2, vec![0.0; 3]).is_err());
        assert!(GrayImage::new(1, 1, vec![1.5]).is_err());
    }

    #[cfg(feature = "image-io")]
    #[test]
    fn png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.png");
        let g = GrayImage::from_fn(7, 5, |x, y| (x + y) / 10.0);
        g.save_png(&path).unwrap();
        let back = GrayImage::load(&path).unwrap();
        assert_eq!(back.width(), 7);
        assert_eq!(back.to_luma8(), g.to_luma8());
    }
}
