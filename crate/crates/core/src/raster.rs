//! Hard-edged rasterization of [`ArmShape`]s and binary PPM/PGM I/O.
//!
//! Intensities are `f32` in `[0, 1]`. Files store 8-bit samples quantized
//! with round-half-up, `byte = floor(v * 255 + 0.5)`.

use std::fs;
use std::path::{Path, PathBuf};

use crate::arm_sim::{ArmShape, CameraConfig, Segment};
use crate::nn::Tensor;

#[derive(Debug, thiserror::Error)]
pub enum RasterError {
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("unsupported maxval {0} (only 255 is accepted)")]
    UnsupportedMaxval(u32),
    #[error("truncated payload: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("image dimensions must be positive")]
    EmptyImage,
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Provenance {
    Synthetic,
    Ingested,
    Augmented,
}

/// RGB image, `(height, width, 3)`, values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub data: Tensor<f32>,
    pub provenance: Provenance,
}

impl Image {
    pub fn filled(width: usize, height: usize, value: f32, provenance: Provenance) -> Self {
        Image {
            data: Tensor::full(&[height, width, 3], value),
            provenance,
        }
    }

    pub fn from_tensor(data: Tensor<f32>, provenance: Provenance) -> Self {
        assert!(data.shape().len() == 3 && data.shape()[2] == 3, "image tensor must be (H, W, 3)");
        Image { data, provenance }
    }

    pub fn height(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.data.shape()[1]
    }

    pub fn pixel(&self, row: usize, col: usize) -> [f32; 3] {
        let i = (row * self.width() + col) * 3;
        let d = self.data.data();
        [d[i], d[i + 1], d[i + 2]]
    }

    pub fn set_pixel(&mut self, row: usize, col: usize, v: [f32; 3]) {
        let i = (row * self.width() + col) * 3;
        self.data.data_mut()[i..i + 3].copy_from_slice(&v);
    }
}

/// Single-channel image, `(height, width)`.
#[derive(Clone, Debug, PartialEq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

/// Shades and stroke widths used by [`render`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RenderStyle {
    pub backbone_thickness: f64,
    pub backbone_shade: f32,
    pub disk_shade: f32,
    pub tendon_shade: f32,
    pub tendon_thickness: f64,
    pub context_shade: f32,
}

impl Default for RenderStyle {
    fn default() -> Self {
        RenderStyle {
            backbone_thickness: 3.0,
            backbone_shade: 0.08,
            disk_shade: 0.95,
            tendon_shade: 0.3,
            tendon_thickness: 1.0,
            context_shade: 0.4,
        }
    }
}

pub fn render(shape: &ArmShape, cam: &CameraConfig) -> Image {
    render_with(shape, cam, &RenderStyle::default())
}

/// Draw order: scene context, disks, tendons, then the backbone on top.
pub fn render_with(shape: &ArmShape, cam: &CameraConfig, style: &RenderStyle) -> Image {
    let mut img = Image::filled(
        cam.image_width,
        cam.image_height,
        cam.background_shade.clamp(0.0, 1.0) as f32,
        Provenance::Synthetic,
    );
    for s in &shape.context {
        stroke(&mut img, s, style.context_shade);
    }
    for s in &shape.disk_segments {
        stroke(&mut img, s, style.disk_shade);
    }
    for line in &shape.tendon_polylines {
        polyline(&mut img, line, style.tendon_thickness, style.tendon_shade);
    }
    polyline(&mut img, &shape.backbone_points, style.backbone_thickness, style.backbone_shade);
    img
}

fn polyline(img: &mut Image, pts: &[[f64; 2]], thickness: f64, shade: f32) {
    for w in pts.windows(2) {
        stroke(img, &Segment { a: w[0], b: w[1], thickness }, shade);
    }
}

/// Fills every pixel whose centre lies within `thickness / 2` of the segment.
fn stroke(img: &mut Image, seg: &Segment, shade: f32) {
    let r = seg.thickness / 2.0;
    let shade = shade.clamp(0.0, 1.0);
    let (w, h) = (img.width() as f64, img.height() as f64);
    let [ax, ay] = seg.a;
    let [bx, by] = seg.b;
    if ![ax, ay, bx, by, r].iter().all(|v| v.is_finite()) {
        return;
    }
    let x0 = (ax.min(bx) - r - 1.0).floor().max(0.0);
    let x1 = (ax.max(bx) + r + 1.0).ceil().min(w);
    let y0 = (ay.min(by) - r - 1.0).floor().max(0.0);
    let y1 = (ay.max(by) + r + 1.0).ceil().min(h);
    if x0 >= x1 || y0 >= y1 {
        return;
    }
    let (dx, dy) = (bx - ax, by - ay);
    let len2 = dx * dx + dy * dy;
    for row in y0 as usize..y1 as usize {
        for col in x0 as usize..x1 as usize {
            let (px, py) = (col as f64 + 0.5, row as f64 + 0.5);
            let t = if len2 > 0.0 {
                (((px - ax) * dx + (py - ay) * dy) / len2).clamp(0.0, 1.0)
            } else {
                0.0
            };
            let (cx, cy) = (ax + t * dx - px, ay + t * dy - py);
            if cx * cx + cy * cy <= r * r {
                img.set_pixel(row, col, [shade; 3]);
            }
        }
    }
}

/// Nearest-neighbour resize: output `(i, j)` takes input
/// `(floor(i * H / h), floor(j * W / w))`.
pub fn resize_nearest(img: &Image, width: usize, height: usize) -> Image {
    assert!(width >= 1 && height >= 1, "target size must be positive");
    let (sh, sw) = (img.height(), img.width());
    if sh == height && sw == width {
        return img.clone();
    }
    let src = img.data.data();
    let mut out = Vec::with_capacity(width * height * 3);
    for i in 0..height {
        let si = i * sh / height;
        for j in 0..width {
            let sj = j * sw / width;
            let k = (si * sw + sj) * 3;
            out.extend_from_slice(&src[k..k + 3]);
        }
    }
    Image {
        data: Tensor::from_vec(&[height, width, 3], out).expect("resize shape"),
        provenance: img.provenance,
    }
}

pub fn quantize(v: f32) -> u8 {
    (v as f64 * 255.0 + 0.5).floor().clamp(0.0, 255.0) as u8
}

pub fn dequantize(b: u8) -> f32 {
    b as f32 / 255.0
}

pub fn encode_ppm(img: &Image) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend(img.data.data().iter().map(|&v| quantize(v)));
    out
}

pub fn encode_pgm(img: &GrayImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend(img.data.iter().map(|&v| quantize(v)));
    out
}

struct Header {
    width: usize,
    height: usize,
    offset: usize,
}

fn parse_header(buf: &[u8], magic: &[u8; 2]) -> Result<Header, RasterError> {
    if buf.len() < 2 || &buf[..2] != magic {
        return Err(RasterError::MalformedHeader(format!(
            "expected magic {}",
            String::from_utf8_lossy(magic)
        )));
    }
    let mut pos = 2;
    let mut fields = [0u32; 3];
    for (n, field) in fields.iter_mut().enumerate() {
        // whitespace and comments
        loop {
            match buf.get(pos) {
                Some(c) if c.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while buf.get(pos).is_some_and(|&c| c != b'\n') {
                        pos += 1;
                    }
                }
                _ => break,
            }
        }
        let start = pos;
        while buf.get(pos).is_some_and(|c| c.is_ascii_digit()) {
            pos += 1;
        }
        if start == pos {
            return Err(RasterError::MalformedHeader(format!("missing header field {}", n + 1)));
        }
        *field = std::str::from_utf8(&buf[start..pos])
            .unwrap()
            .parse()
            .map_err(|_| RasterError::MalformedHeader("header value out of range".into()))?;
    }
    match buf.get(pos) {
        Some(c) if c.is_ascii_whitespace() => pos += 1,
        _ => return Err(RasterError::MalformedHeader("no separator before payload".into())),
    }
    let [width, height, maxval] = fields;
    if maxval != 255 {
        return Err(RasterError::UnsupportedMaxval(maxval));
    }
    if width == 0 || height == 0 {
        return Err(RasterError::EmptyImage);
    }
    Ok(Header {
        width: width as usize,
        height: height as usize,
        offset: pos,
    })
}

fn payload<'a>(buf: &'a [u8], h: &Header, channels: usize) -> Result<&'a [u8], RasterError> {
    let expected = h.width * h.height * channels;
    let found = buf.len() - h.offset;
    if found < expected {
        return Err(RasterError::Truncated { expected, found });
    }
    Ok(&buf[h.offset..h.offset + expected])
}

pub fn decode_ppm(buf: &[u8]) -> Result<Image, RasterError> {
    let h = parse_header(buf, b"P6")?;
    let data = payload(buf, &h, 3)?.iter().map(|&b| dequantize(b)).collect();
    Ok(Image {
        data: Tensor::from_vec(&[h.height, h.width, 3], data).expect("ppm shape"),
        provenance: Provenance::Ingested,
    })
}

pub fn decode_pgm(buf: &[u8]) -> Result<GrayImage, RasterError> {
    let h = parse_header(buf, b"P5")?;
    let data = payload(buf, &h, 1)?.iter().map(|&b| dequantize(b)).collect();
    Ok(GrayImage {
        width: h.width,
        height: h.height,
        data,
    })
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> RasterError + '_ {
    move |source| RasterError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn write_ppm(img: &Image, path: &Path) -> Result<(), RasterError> {
    fs::write(path, encode_ppm(img)).map_err(io_err(path))
}

pub fn read_ppm(path: &Path) -> Result<Image, RasterError> {
    decode_ppm(&fs::read(path).map_err(io_err(path))?)
}

pub fn write_pgm(img: &GrayImage, path: &Path) -> Result<(), RasterError> {
    fs::write(path, encode_pgm(img)).map_err(io_err(path))
}

pub fn read_pgm(path: &Path) -> Result<GrayImage, RasterError> {
    decode_pgm(&fs::read(path).map_err(io_err(path))?)
}

/// Reads only the `(width, height)` of a PPM file.
pub fn ppm_dimensions(path: &Path) -> Result<(usize, usize), RasterError> {
    let buf = fs::read(path).map_err(io_err(path))?;
    let h = parse_header(&buf, b"P6")?;
    Ok((h.width, h.height))
}
