//! RGB rasters, marker rendering and PNG I/O.
//!
//! Rendering is integer-only and deterministic: the same raster, points and
//! style always produce the same bytes.

use std::io::{BufReader, Cursor};
use std::path::Path;

use base64::Engine as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Point;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Rgb(pub [u8; 3]);

impl Rgb {
    pub const BLACK: Rgb = Rgb([0, 0, 0]);
    pub const WHITE: Rgb = Rgb([255, 255, 255]);
    pub const BROWN: Rgb = Rgb([139, 69, 19]);
}

/// Row-major 8-bit RGB image.
#[derive(Clone, PartialEq, Eq)]
pub struct Raster {
    width: u32,
    height: u32,
    pixels: Vec<u8>,
}

impl std::fmt::Debug for Raster {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Raster")
            .field("width", &self.width)
            .field("height", &self.height)
            .finish_non_exhaustive()
    }
}

impl Raster {
    pub fn new(width: u32, height: u32, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid("raster dimensions must be at least 1x1"));
        }
        let expected = width as usize * height as usize * 3;
        if pixels.len() != expected {
            return Err(Error::invalid(format!(
                "raster byte count {} does not match {}x{}x3",
                pixels.len(),
                width,
                height
            )));
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: u32, height: u32, color: Rgb) -> Result<Self> {
        let n = width as usize * height as usize;
        Self::new(width, height, color.0.repeat(n))
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn get(&self, x: u32, y: u32) -> Rgb {
        let i = self.offset(x, y);
        Rgb([self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]])
    }

    pub fn put(&mut self, x: u32, y: u32, color: Rgb) {
        let i = self.offset(x, y);
        self.pixels[i..i + 3].copy_from_slice(&color.0);
    }

    fn offset(&self, x: u32, y: u32) -> usize {
        debug_assert!(x < self.width && y < self.height);
        (y as usize * self.width as usize + x as usize) * 3
    }

    /// Writes `color` at a signed position, ignoring anything off-canvas.
    fn put_clipped(&mut self, x: i64, y: i64, color: Rgb) {
        if x >= 0 && y >= 0 && x < i64::from(self.width) && y < i64::from(self.height) {
            self.put(x as u32, y as u32, color);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MarkerStyle {
    pub radius_px: u32,
    pub fill: Rgb,
    pub outline: Rgb,
    pub outline_px: u32,
    /// Turn index drawn to the right of the marker.
    pub label: Option<u32>,
}

impl Default for MarkerStyle {
    fn default() -> Self {
        Self {
            radius_px: 8,
            fill: Rgb::BROWN,
            outline: Rgb::WHITE,
            outline_px: 2,
            label: None,
        }
    }
}

impl MarkerStyle {
    pub fn validate(&self) -> Result<()> {
        if self.radius_px < 1 {
            return Err(Error::invalid("marker radius must be at least 1 px"));
        }
        Ok(())
    }

    pub fn with_label(&self, label: u32) -> Self {
        Self {
            label: Some(label),
            ..self.clone()
        }
    }

    /// Horizontal and vertical reach of a marker (disc, outline, label)
    /// around its center, in pixels: `(left, right, up, down)`.
    pub fn extent(&self) -> (u32, u32, u32, u32) {
        let body = self.radius_px + self.outline_px;
        match self.label {
            None => (body, body, body, body),
            Some(label) => {
                let (w, h) = label_size(label);
                let right = body + LABEL_GAP + w - 1;
                let half = h / 2;
                (body, right, body.max(half), body.max(h - half - 1))
            }
        }
    }
}

/// Draws one marker per point on a copy of `img`.
pub fn render_markers(img: &Raster, points: &[Point], style: &MarkerStyle) -> Raster {
    let mut out = img.clone();
    draw_markers(&mut out, points, style);
    out
}

/// In-place variant of [`render_markers`].
pub fn draw_markers(img: &mut Raster, points: &[Point], style: &MarkerStyle) {
    for p in points {
        let (cx, cy) = p.to_pixel(img.width, img.height);
        draw_marker(img, i64::from(cx), i64::from(cy), style);
    }
}

fn draw_marker(img: &mut Raster, cx: i64, cy: i64, style: &MarkerStyle) {
    let r = i64::from(style.radius_px);
    let outer = r + i64::from(style.outline_px);
    let (r2, outer2) = (r * r, outer * outer);
    for dy in -outer..=outer {
        for dx in -outer..=outer {
            let d2 = dx * dx + dy * dy;
            if d2 <= r2 {
                img.put_clipped(cx + dx, cy + dy, style.fill);
            } else if d2 <= outer2 {
                img.put_clipped(cx + dx, cy + dy, style.outline);
            }
        }
    }
    if let Some(label) = style.label {
        let x0 = cx + outer + i64::from(LABEL_GAP);
        let (_, h) = label_size(label);
        let y0 = cy - i64::from(h / 2);
        draw_label(img, x0, y0, label, style);
    }
}

const GLYPH_W: u32 = 3;
const GLYPH_H: u32 = 5;
const LABEL_SCALE: u32 = 2;
const LABEL_PAD: u32 = 1;
const LABEL_GAP: u32 = 2;

// 3x5 digit glyphs, one row per entry, MSB = leftmost column.
const DIGITS: [[u8; 5]; 10] = [
    [0b111, 0b101, 0b101, 0b101, 0b111],
    [0b010, 0b110, 0b010, 0b010, 0b111],
    [0b111, 0b001, 0b111, 0b100, 0b111],
    [0b111, 0b001, 0b111, 0b001, 0b111],
    [0b101, 0b101, 0b111, 0b001, 0b001],
    [0b111, 0b100, 0b111, 0b001, 0b111],
    [0b111, 0b100, 0b111, 0b101, 0b111],
    [0b111, 0b001, 0b010, 0b010, 0b010],
    [0b111, 0b101, 0b111, 0b101, 0b111],
    [0b111, 0b101, 0b111, 0b001, 0b111],
];

fn label_digits(label: u32) -> Vec<usize> {
    label
        .to_string()
        .bytes()
        .map(|b| usize::from(b - b'0'))
        .collect()
}

/// Pixel size of a rendered label box.
fn label_size(label: u32) -> (u32, u32) {
    let n = label_digits(label).len() as u32;
    let w = n * (GLYPH_W + 1) * LABEL_SCALE - LABEL_SCALE + 2 * LABEL_PAD;
    let h = GLYPH_H * LABEL_SCALE + 2 * LABEL_PAD;
    (w, h)
}

fn draw_label(img: &mut Raster, x0: i64, y0: i64, label: u32, style: &MarkerStyle) {
    let (w, h) = label_size(label);
    for y in 0..i64::from(h) {
        for x in 0..i64::from(w) {
            img.put_clipped(x0 + x, y0 + y, style.fill);
        }
    }
    let s = i64::from(LABEL_SCALE);
    let pad = i64::from(LABEL_PAD);
    for (k, digit) in label_digits(label).into_iter().enumerate() {
        let gx = x0 + pad + k as i64 * i64::from(GLYPH_W + 1) * s;
        for (row, bits) in DIGITS[digit].iter().enumerate() {
            for col in 0..GLYPH_W {
                if bits & (1 << (GLYPH_W - 1 - col)) != 0 {
                    for sy in 0..s {
                        for sx in 0..s {
                            img.put_clipped(
                                gx + i64::from(col) * s + sx,
                                y0 + pad + row as i64 * s + sy,
                                style.outline,
                            );
                        }
                    }
                }
            }
        }
    }
}

/// Encodes a raster as an 8-bit RGB PNG.
pub fn encode_png(img: &Raster) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut buf, img.width, img.height);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc
            .write_header()
            .map_err(|e| Error::invalid(format!("png encode: {e}")))?;
        writer
            .write_image_data(&img.pixels)
            .map_err(|e| Error::invalid(format!("png encode: {e}")))?;
    }
    Ok(buf)
}

/// Decodes PNG bytes into an RGB raster. `origin` only labels errors.
pub fn decode_png(bytes: &[u8], origin: &Path) -> Result<Raster> {
    if !bytes.starts_with(b"\x89PNG\r\n\x1a\n") {
        if let Some(kind) = foreign_image_kind(bytes) {
            return Err(Error::UnsupportedFormat {
                path: origin.to_path_buf(),
                reason: format!("{kind} images are not supported, expected PNG"),
            });
        }
        return Err(Error::CorruptStream {
            path: origin.to_path_buf(),
            reason: "missing PNG signature".into(),
        });
    }
    let corrupt = |e: png::DecodingError| Error::CorruptStream {
        path: origin.to_path_buf(),
        reason: e.to_string(),
    };
    let mut decoder = png::Decoder::new(BufReader::new(Cursor::new(bytes)));
    decoder.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
    let mut reader = decoder.read_info().map_err(corrupt)?;
    let size = reader.output_buffer_size().ok_or_else(|| Error::UnsupportedFormat {
        path: origin.to_path_buf(),
        reason: "image too large".into(),
    })?;
    let mut buf = vec![0u8; size];
    let info = reader.next_frame(&mut buf).map_err(corrupt)?;
    buf.truncate(info.buffer_size());
    let pixels: Vec<u8> = match info.color_type {
        png::ColorType::Rgb => buf,
        png::ColorType::Rgba => buf
            .chunks_exact(4)
            .flat_map(|c| [c[0], c[1], c[2]])
            .collect(),
        png::ColorType::Grayscale => buf.iter().flat_map(|&g| [g, g, g]).collect(),
        png::ColorType::GrayscaleAlpha => buf
            .chunks_exact(2)
            .flat_map(|c| [c[0], c[0], c[0]])
            .collect(),
        other => {
            return Err(Error::UnsupportedFormat {
                path: origin.to_path_buf(),
                reason: format!("color type {other:?}"),
            })
        }
    };
    Raster::new(info.width, info.height, pixels)
}

fn foreign_image_kind(bytes: &[u8]) -> Option<&'static str> {
    if bytes.starts_with(&[0xFF, 0xD8, 0xFF]) {
        Some("JPEG")
    } else if bytes.starts_with(b"GIF8") {
        Some("GIF")
    } else if bytes.starts_with(b"BM") {
        Some("BMP")
    } else if bytes.len() >= 12 && &bytes[0..4] == b"RIFF" && &bytes[8..12] == b"WEBP" {
        Some("WebP")
    } else {
        None
    }
}

pub fn load_raster(path: impl AsRef<Path>) -> Result<Raster> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
        _ => Error::Io(e),
    })?;
    decode_png(&bytes, path)
}

pub fn save_raster(img: &Raster, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, encode_png(img)?)?;
    Ok(())
}

/// `data:image/png;base64,...` URL for chat requests.
pub fn to_data_url(img: &Raster) -> Result<String> {
    let png = encode_png(img)?;
    Ok(format!(
        "data:image/png;base64,{}",
        base64::engine::general_purpose::STANDARD.encode(png)
    ))
}

/// Inverse of [`to_data_url`].
pub fn from_data_url(url: &str) -> Result<Raster> {
    let payload = url
        .strip_prefix("data:image/png;base64,")
        .ok_or_else(|| Error::invalid("not a base64 PNG data URL"))?;
    let bytes = base64::engine::general_purpose::STANDARD
        .decode(payload)
        .map_err(|e| Error::invalid(format!("base64: {e}")))?;
    decode_png(&bytes, Path::new("<data-url>"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn black(w: u32, h: u32) -> Raster {
        Raster::filled(w, h, Rgb::BLACK).unwrap()
    }

    #[test]
    fn raster_invariants() {
        assert!(Raster::new(0, 1, vec![]).is_err());
        assert!(Raster::new(2, 2, vec![0; 11]).is_err());
        assert!(Raster::new(2, 2, vec![0; 12]).is_ok());
    }

    #[test]
    fn center_pixel_takes_fill() {
        let img = black(101, 101);
        let out = render_markers(&img, &[Point::new(50.0, 50.0)], &MarkerStyle::default());
        assert_eq!(out.get(50, 50), Rgb::BROWN);
        assert_eq!(out.width(), 101);
        assert_eq!(out.height(), 101);
        // outline ring just past the radius
        assert_eq!(out.get(59, 50), Rgb::WHITE);
        assert_eq!(out.get(61, 50), Rgb::BLACK);
        // input untouched
        assert_eq!(img.get(50, 50), Rgb::BLACK);
    }

    #[test]
    fn overdraw_is_idempotent() {
        let img = black(64, 48);
        let style = MarkerStyle::default().with_label(2);
        let p = Point::new(30.0, 70.0);
        let once = render_markers(&img, &[p], &style);
        let twice = render_markers(&img, &[p, p], &style);
        assert_eq!(once, twice);
        assert_eq!(render_markers(&once, &[p], &style), once);
    }

    #[test]
    fn markers_clip_at_edges() {
        let img = black(20, 20);
        let out = render_markers(&img, &[Point::new(0.0, 100.0)], &MarkerStyle::default());
        assert_eq!(out.get(0, 19), Rgb::BROWN);
    }

    #[test]
    fn label_stays_within_extent() {
        let img = black(200, 200);
        let style = MarkerStyle::default().with_label(12);
        let out = render_markers(&img, &[Point::new(50.0, 50.0)], &style);
        let (cx, cy) = Point::new(50.0, 50.0).to_pixel(200, 200);
        let (l, r, u, d) = style.extent();
        let mut label_seen = false;
        for y in 0..200 {
            for x in 0..200 {
                if out.get(x, y) != Rgb::BLACK {
                    assert!(x + l >= cx && x <= cx + r, "x={x}");
                    assert!(y + u >= cy && y <= cy + d, "y={y}");
                    if x > cx + style.radius_px + style.outline_px {
                        label_seen = true;
                    }
                }
            }
        }
        assert!(label_seen);
    }

    #[test]
    fn png_round_trip() {
        let img = Raster::new(2, 2, (0..12).map(|v| v * 20).collect()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.png");
        save_raster(&img, &path).unwrap();
        assert_eq!(load_raster(&path).unwrap(), img);
        assert_eq!(from_data_url(&to_data_url(&img).unwrap()).unwrap(), img);
    }

    #[test]
    fn load_errors_are_distinct() {
        let dir = tempfile::tempdir().unwrap();
        let missing = dir.path().join("nope.png");
        assert!(matches!(load_raster(&missing), Err(Error::MissingFile(_))));

        let text = dir.path().join("notes.txt");
        std::fs::write(&text, "hello, not an image").unwrap();
        assert!(matches!(load_raster(&text), Err(Error::CorruptStream { .. })));

        let jpeg = dir.path().join("photo.jpg");
        std::fs::write(&jpeg, [0xFF, 0xD8, 0xFF, 0xE0, 0, 0x10]).unwrap();
        assert!(matches!(load_raster(&jpeg), Err(Error::UnsupportedFormat { .. })));

        // valid signature, truncated body
        let trunc = dir.path().join("trunc.png");
        let mut bytes = encode_png(&black(4, 4)).unwrap();
        bytes.truncate(20);
        std::fs::write(&trunc, bytes).unwrap();
        assert!(matches!(load_raster(&trunc), Err(Error::CorruptStream { .. })));
    }
}
