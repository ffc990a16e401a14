use std::fs;
use std::io::Write;
use std::path::Path;

use crate::tensor::{Scalar, Tensor};

use super::ImageError;

/// Planar float image, `channels x height x width`, values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl Image {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self, ImageError> {
        if !(channels == 1 || channels == 3) {
            return Err(ImageError::Channels(channels));
        }
        if height == 0 || width == 0 {
            return Err(ImageError::Malformed(format!("empty image {width}x{height}")));
        }
        if data.len() != channels * height * width {
            return Err(ImageError::Truncated {
                expected: channels * height * width,
                found: data.len(),
            });
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: f32) -> Self {
        Self::new(channels, height, width, vec![value; channels * height * width]).expect("valid dimensions")
    }

    /// Builds an image from `f(channel, y, x)`.
    pub fn from_fn(channels: usize, height: usize, width: usize, mut f: impl FnMut(usize, usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(channels * height * width);
        for c in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    data.push(f(c, y, x));
                }
            }
        }
        Self::new(channels, height, width, data).expect("valid dimensions")
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn plane_mut(&mut self, c: usize) -> &mut [f32] {
        let n = self.height * self.width;
        &mut self.data[c * n..(c + 1) * n]
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn clamp(&mut self) {
        for v in &mut self.data {
            *v = v.clamp(0.0, 1.0);
        }
    }

    pub fn to_tensor<T: Scalar>(&self) -> Tensor<T> {
        Tensor::new(
            [self.channels, self.height, self.width],
            self.data.iter().map(|&v| T::from_f64(v as f64)).collect(),
        )
        .expect("image dimensions are positive")
    }

    /// Exports a `[C, H, W]` tensor, clamping values into `[0, 1]`.
    pub fn from_tensor<T: Scalar>(t: &Tensor<T>) -> Result<Self, ImageError> {
        let &[c, h, w] = t.shape() else {
            return Err(ImageError::Malformed(format!("tensor shape {:?} is not [C, H, W]", t.shape())));
        };
        let data = t.data().iter().map(|v| (v.as_f64() as f32).clamp(0.0, 1.0)).collect();
        Self::new(c, h, w, data)
    }

    /// 8-bit samples, planar. Rounds half away from zero after clamping.
    pub fn to_u8_planar(&self) -> Vec<u8> {
        self.data.iter().map(|&v| quantize(v)).collect()
    }

    pub fn from_u8_planar(channels: usize, height: usize, width: usize, bytes: &[u8]) -> Result<Self, ImageError> {
        Self::new(channels, height, width, bytes.iter().map(|&b| b as f32 / 255.0).collect())
    }

    /// 8-bit samples, interleaved (`RGBRGB...`) row-major.
    pub fn to_u8_interleaved(&self) -> Vec<u8> {
        let n = self.height * self.width;
        let mut out = vec![0u8; n * self.channels];
        for c in 0..self.channels {
            for (i, &v) in self.plane(c).iter().enumerate() {
                out[i * self.channels + c] = quantize(v);
            }
        }
        out
    }

    pub fn from_u8_interleaved(channels: usize, height: usize, width: usize, bytes: &[u8]) -> Result<Self, ImageError> {
        if bytes.len() != channels * height * width {
            return Err(ImageError::Truncated {
                expected: channels * height * width,
                found: bytes.len(),
            });
        }
        let n = height * width;
        let mut data = vec![0.0f32; bytes.len()];
        for (i, px) in bytes.chunks_exact(channels).enumerate() {
            for (c, &b) in px.iter().enumerate() {
                data[c * n + i] = b as f32 / 255.0;
            }
        }
        Self::new(channels, height, width, data)
    }

    /// Rounds every sample onto the 8-bit grid.
    pub fn quantized(&self) -> Self {
        Self::from_u8_planar(self.channels, self.height, self.width, &self.to_u8_planar()).expect("same dimensions")
    }

    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> Result<Self, ImageError> {
        if top + height > self.height || left + width > self.width || height == 0 || width == 0 {
            return Err(ImageError::Malformed(format!(
                "crop {width}x{height}+{left}+{top} outside {}x{}",
                self.width, self.height
            )));
        }
        Ok(Self::from_fn(self.channels, height, width, |c, y, x| self.get(c, top + y, left + x)))
    }

    pub fn flip_horizontal(&self) -> Self {
        Self::from_fn(self.channels, self.height, self.width, |c, y, x| self.get(c, y, self.width - 1 - x))
    }

    /// Rotates counter-clockwise by `quarter_turns * 90` degrees.
    pub fn rot90(&self, quarter_turns: usize) -> Self {
        let (h, w) = (self.height, self.width);
        match quarter_turns % 4 {
            0 => self.clone(),
            1 => Self::from_fn(self.channels, w, h, |c, y, x| self.get(c, x, w - 1 - y)),
            2 => Self::from_fn(self.channels, h, w, |c, y, x| self.get(c, h - 1 - y, w - 1 - x)),
            _ => Self::from_fn(self.channels, w, h, |c, y, x| self.get(c, h - 1 - x, y)),
        }
    }
}

fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Reads a binary PPM (`P6`, 3 channels) or PGM (`P5`, 1 channel) with maxval 255.
pub fn load_ppm(path: impl AsRef<Path>) -> Result<Image, ImageError> {
    decode_ppm(&fs::read(path)?)
}

pub fn save_ppm(image: &Image, path: impl AsRef<Path>) -> Result<(), ImageError> {
    let mut f = fs::File::create(path)?;
    f.write_all(&encode_ppm(image))?;
    Ok(())
}

pub fn encode_ppm(image: &Image) -> Vec<u8> {
    let magic = if image.channels() == 3 { "P6" } else { "P5" };
    let mut out = format!("{magic}\n{} {}\n255\n", image.width(), image.height()).into_bytes();
    out.extend(image.to_u8_interleaved());
    out
}

pub fn decode_ppm(bytes: &[u8]) -> Result<Image, ImageError> {
    let mut pos = 0;
    let magic = header_token(bytes, &mut pos)?;
    let channels = match magic.as_str() {
        "P6" => 3,
        "P5" => 1,
        other => return Err(ImageError::Malformed(format!("unsupported magic {other:?}"))),
    };
    let width = header_number(bytes, &mut pos, "width")?;
    let height = header_number(bytes, &mut pos, "height")?;
    let maxval = header_number(bytes, &mut pos, "maxval")?;
    if maxval != 255 {
        return Err(ImageError::UnsupportedMaxval(maxval));
    }
    // Exactly one whitespace byte separates the header from the raster.
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(ImageError::Malformed("missing whitespace after maxval".into())),
    }
    if width == 0 || height == 0 {
        return Err(ImageError::Malformed(format!("empty image {width}x{height}")));
    }
    let expected = width * height * channels;
    let payload = &bytes[pos..];
    if payload.len() < expected {
        return Err(ImageError::Truncated {
            expected,
            found: payload.len(),
        });
    }
    Image::from_u8_interleaved(channels, height, width, &payload[..expected])
}

fn header_token(bytes: &[u8], pos: &mut usize) -> Result<String, ImageError> {
    loop {
        match bytes.get(*pos) {
            None => return Err(ImageError::Malformed("unexpected end of header".into())),
            Some(b'#') => {
                while let Some(&b) = bytes.get(*pos) {
                    *pos += 1;
                    if b == b'\n' {
                        break;
                    }
                }
            }
            Some(b) if b.is_ascii_whitespace() => *pos += 1,
            Some(_) => break,
        }
    }
    let start = *pos;
    while let Some(b) = bytes.get(*pos) {
        if b.is_ascii_whitespace() || *b == b'#' {
            break;
        }
        *pos += 1;
    }
    Ok(String::from_utf8_lossy(&bytes[start..*pos]).into_owned())
}

fn header_number(bytes: &[u8], pos: &mut usize, field: &str) -> Result<usize, ImageError> {
    let tok = header_token(bytes, pos)?;
    tok.parse()
        .map_err(|_| ImageError::Malformed(format!("invalid {field} {tok:?}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn white_pixel() {
        let img = decode_ppm(b"P6\n1 1\n255\n\xff\xff\xff").unwrap();
        assert_eq!(img.dims(), (3, 1, 1));
        assert_eq!(img.data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn p6_header_dimensions() {
        let img = decode_ppm(b"P6\n2 1\n255\n\x01\x02\x03\x04\x05\x06").unwrap();
        assert_eq!(img.dims(), (3, 1, 2));
        assert_eq!(img.to_u8_planar(), vec![1, 4, 2, 5, 3, 6]);
    }

    #[test]
    fn comments_and_pgm() {
        let img = decode_ppm(b"P5 # gray\n# another\n2 2 255\n\x00\x40\x80\xff").unwrap();
        assert_eq!(img.dims(), (1, 2, 2));
        assert_eq!(img.get(0, 1, 1), 1.0);
    }

    #[test]
    fn header_errors() {
        assert!(matches!(decode_ppm(b"P3\n1 1\n255\n"), Err(ImageError::Malformed(_))));
        assert!(matches!(decode_ppm(b"P6\n1 1\n65535\n\0\0"), Err(ImageError::UnsupportedMaxval(65535))));
        assert!(matches!(
            decode_ppm(b"P6\n2 2\n255\n\0\0\0"),
            Err(ImageError::Truncated { expected: 12, found: 3 })
        ));
        assert!(matches!(decode_ppm(b"P6\nx 1\n255\n"), Err(ImageError::Malformed(_))));
        assert!(matches!(decode_ppm(b"P6\n1"), Err(ImageError::Malformed(_))));
    }

    #[test]
    fn every_byte_survives_float_conversion() {
        let bytes: Vec<u8> = (0..=255).collect();
        let img = Image::from_u8_planar(1, 16, 16, &bytes).unwrap();
        assert_eq!(img.to_u8_planar(), bytes);
        let ppm = encode_ppm(&img);
        assert_eq!(encode_ppm(&decode_ppm(&ppm).unwrap()), ppm);
    }

    #[test]
    fn dihedral_ops() {
        let img = Image::from_fn(1, 2, 3, |_, y, x| (y * 3 + x) as f32);
        // [[0 1 2], [3 4 5]] rotated counter-clockwise -> [[2 5], [1 4], [0 3]]
        assert_eq!(img.rot90(1).data(), &[2.0, 5.0, 1.0, 4.0, 0.0, 3.0]);
        assert_eq!(img.rot90(2).data(), &[5.0, 4.0, 3.0, 2.0, 1.0, 0.0]);
        assert_eq!(img.rot90(3).data(), &[3.0, 0.0, 4.0, 1.0, 5.0, 2.0]);
        assert_eq!(img.rot90(1).rot90(3), img);
        assert_eq!(img.flip_horizontal().data(), &[2.0, 1.0, 0.0, 5.0, 4.0, 3.0]);
        assert_eq!(img.crop(1, 1, 1, 2).unwrap().data(), &[4.0, 5.0]);
        assert!(img.crop(1, 1, 2, 2).is_err());
    }
}
