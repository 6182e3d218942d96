use std::path::Path;

use crate::error::{domain, Error, Result};

/// A float image with interleaved channels and values in `[0, 1]`.
///
/// Pixel `(x, y)` has its center at integer coordinates `(x, y)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f32>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize) -> Result<Self> {
        if width == 0 || height == 0 {
            return domain(format!("image dimensions must be positive, got {width}x{height}"));
        }
        if channels != 1 && channels != 3 {
            return domain(format!("unsupported channel count {channels}"));
        }
        Ok(Self {
            width,
            height,
            channels,
            data: vec![0.0; width * height * channels],
        })
    }

    pub fn from_vec(width: usize, height: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        let mut img = Self::new(width, height, channels)?;
        if data.len() != img.data.len() {
            return domain(format!(
                "pixel buffer has {} values, expected {}",
                data.len(),
                img.data.len()
            ));
        }
        img.data = data;
        Ok(img)
    }

    /// Loads a PNG, PGM or PPM file. 8- and 16-bit inputs are scaled to `[0, 1]`.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let dynamic = image::open(path).map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?;
        Ok(Self::from_dynamic(&dynamic))
    }

    pub fn from_dynamic(dynamic: &image::DynamicImage) -> Self {
        let (width, height) = (dynamic.width() as usize, dynamic.height() as usize);
        let gray = matches!(
            dynamic.color(),
            image::ColorType::L8 | image::ColorType::L16 | image::ColorType::La8 | image::ColorType::La16
        );
        if gray {
            let buf = dynamic.to_luma32f();
            Self {
                width,
                height,
                channels: 1,
                data: buf.into_raw(),
            }
        } else {
            let buf = dynamic.to_rgb32f();
            Self {
                width,
                height,
                channels: 3,
                data: buf.into_raw(),
            }
        }
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let bytes: Vec<u8> = self
            .data
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        let color = if self.channels == 1 {
            image::ExtendedColorType::L8
        } else {
            image::ExtendedColorType::Rgb8
        };
        image::save_buffer(path, &bytes, self.width as u32, self.height as u32, color).map_err(
            |source| Error::Image {
                path: path.to_path_buf(),
                source,
            },
        )
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, v: f32) {
        self.data[(y * self.width + x) * self.channels + c] = v;
    }

    pub fn to_rgb(&self) -> Image {
        if self.channels == 3 {
            return self.clone();
        }
        let data = self.data.iter().flat_map(|&v| [v, v, v]).collect();
        Image {
            width: self.width,
            height: self.height,
            channels: 3,
            data,
        }
    }

    pub fn flip_horizontal(&self) -> Image {
        let mut out = self.clone();
        for y in 0..self.height {
            for x in 0..self.width {
                for c in 0..self.channels {
                    out.set(self.width - 1 - x, y, c, self.get(x, y, c));
                }
            }
        }
        out
    }

    /// Bilinear sample with a symmetric (reflected) border.
    pub fn sample(&self, x: f64, y: f64, c: usize) -> f32 {
        let x0 = x.floor();
        let y0 = y.floor();
        let fx = (x - x0) as f32;
        let fy = (y - y0) as f32;
        let (x0, y0) = (x0 as i64, y0 as i64);
        let xa = reflect(x0, self.width);
        let xb = reflect(x0 + 1, self.width);
        let ya = reflect(y0, self.height);
        let yb = reflect(y0 + 1, self.height);
        let top = self.get(xa, ya, c) * (1.0 - fx) + self.get(xb, ya, c) * fx;
        let bottom = self.get(xa, yb, c) * (1.0 - fx) + self.get(xb, yb, c) * fx;
        top * (1.0 - fy) + bottom * fy
    }

    /// Resamples into a `width x height` image; `source` maps an output
    /// pixel center to a source-image coordinate.
    pub fn warp(
        &self,
        width: usize,
        height: usize,
        source: impl Fn(f64, f64) -> (f64, f64),
    ) -> Result<Image> {
        let mut out = Image::new(width, height, self.channels)?;
        for y in 0..height {
            for x in 0..width {
                let (sx, sy) = source(x as f64, y as f64);
                for c in 0..self.channels {
                    out.set(x, y, c, self.sample(sx, sy, c));
                }
            }
        }
        Ok(out)
    }

    /// Rotates about the image center, keeping the canvas size.
    ///
    /// Output pixel `p` takes the value at `R(degrees) (p - c) + c` of the
    /// input, where `c` is the image center; see [`rotate_point`].
    pub fn rotate(&self, degrees: f64) -> Image {
        if degrees == 0.0 {
            return self.clone();
        }
        let center = self.center();
        self.warp(self.width, self.height, |x, y| rotate_point((x, y), center, degrees))
            .expect("dimensions already validated")
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.width as f64 - 1.0) / 2.0, (self.height as f64 - 1.0) / 2.0)
    }

    /// Resizes by `scale` with a triangle filter; the filter widens when
    /// shrinking so that downsampling is antialiased. A scale of exactly 1
    /// returns an identical copy.
    pub fn resize(&self, scale: f64) -> Result<Image> {
        if !(scale > 0.0) || !scale.is_finite() {
            return domain(format!("invalid resize scale {scale}"));
        }
        if scale == 1.0 {
            return Ok(self.clone());
        }
        let new_w = ((self.width as f64) * scale).round().max(1.0) as usize;
        let new_h = ((self.height as f64) * scale).round().max(1.0) as usize;
        let tmp = resample_axis(self, new_w, scale, true);
        Ok(resample_axis(&tmp, new_h, scale, false))
    }
}

/// Maps a point through a rotation of `degrees` about `center`.
pub fn rotate_point(p: (f64, f64), center: (f64, f64), degrees: f64) -> (f64, f64) {
    let (s, c) = degrees.to_radians().sin_cos();
    let dx = p.0 - center.0;
    let dy = p.1 - center.1;
    (c * dx - s * dy + center.0, s * dx + c * dy + center.1)
}

fn reflect(i: i64, n: usize) -> usize {
    let n = n as i64;
    let period = 2 * n;
    let mut m = i.rem_euclid(period);
    if m >= n {
        m = period - 1 - m;
    }
    m as usize
}

fn resample_axis(src: &Image, new_len: usize, scale: f64, horizontal: bool) -> Image {
    let (old_len, other) = if horizontal {
        (src.width, src.height)
    } else {
        (src.height, src.width)
    };
    let support = if scale < 1.0 { 1.0 / scale } else { 1.0 };
    // per output index: list of (source index, weight)
    let taps: Vec<Vec<(usize, f32)>> = (0..new_len)
        .map(|o| {
            let center = (o as f64 + 0.5) / scale - 0.5;
            let lo = (center - support).floor() as i64;
            let hi = (center + support).ceil() as i64;
            let mut taps = Vec::new();
            let mut total = 0.0;
            for i in lo..=hi {
                let w = (1.0 - ((i as f64 - center) / support).abs()).max(0.0);
                if w > 0.0 {
                    taps.push((reflect(i, old_len), w));
                    total += w;
                }
            }
            taps.into_iter()
                .map(|(i, w)| (i, (w / total) as f32))
                .collect()
        })
        .collect();
    let (w, h) = if horizontal {
        (new_len, other)
    } else {
        (other, new_len)
    };
    let mut out = Image {
        width: w,
        height: h,
        channels: src.channels,
        data: vec![0.0; w * h * src.channels],
    };
    for j in 0..other {
        for (o, taps) in taps.iter().enumerate() {
            for c in 0..src.channels {
                let mut acc = 0.0f32;
                for &(i, wt) in taps {
                    let v = if horizontal { src.get(i, j, c) } else { src.get(j, i, c) };
                    acc += v * wt;
                }
                if horizontal {
                    out.set(o, j, c, acc);
                } else {
                    out.set(j, o, c, acc);
                }
            }
        }
    }
    out
}
