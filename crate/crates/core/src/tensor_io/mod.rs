//! Grid value types and their file formats.
//!
//! Every grid is stored planar: channel `c`, row `y`, column `x` lives at
//! `data[(c * height + y) * width + x]`. Pixel centers sit at integer
//! coordinates and a coordinate pair `(x, y)` is `(column, row)`. Flow
//! vectors are displacements in pixels with `u` pointing right and `v`
//! pointing down.

mod flo;
mod fmap;
mod png;
mod resize;

pub use flo::{read_flo, write_flo, FLO_MAGIC, UNKNOWN_FLOW_THRESHOLD};
pub use fmap::{read_fmap, write_fmap, FMAP_HEADER_LEN, FMAP_MAGIC};
pub use png::{read_png, write_heatmap_png, write_png};
pub use resize::{downscale_area, resize_flow};

use crate::error::{Error, Result};

/// A stack of equally sized planes of `f64` values.
#[derive(Debug, Clone, PartialEq)]
pub struct Planes {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Planes {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(Error::InvalidDimensions(format!(
                "{channels}x{height}x{width} has a zero extent"
            )));
        }
        let expected = channels
            .checked_mul(height)
            .and_then(|n| n.checked_mul(width))
            .ok_or_else(|| Error::InvalidDimensions("element count overflows".into()))?;
        if data.len() != expected {
            return Err(Error::DimensionMismatch(format!(
                "{channels}x{height}x{width} needs {expected} values, got {}",
                data.len()
            )));
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteValue { index });
        }
        Ok(Self { channels, height, width, data })
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: f64) -> Result<Self> {
        Self::new(channels, height, width, vec![value; channels * height * width])
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Result<Self> {
        Self::filled(channels, height, width, 0.0)
    }

    pub fn from_fn(
        channels: usize,
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(channels * height * width);
        for c in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    data.push(f(c, y, x));
                }
            }
        }
        Self::new(channels, height, width, data)
    }

    /// Built by kernels whose output is finite by construction.
    pub(crate) fn from_raw(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), channels * height * width);
        Self { channels, height, width, data }
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

    pub fn plane_len(&self) -> usize {
        self.height * self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn plane(&self, c: usize) -> &[f64] {
        let n = self.plane_len();
        &self.data[c * n..(c + 1) * n]
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn same_grid(&self, other: &Planes) -> bool {
        self.height == other.height && self.width == other.width
    }

    pub(crate) fn map(&self, f: impl Fn(f64) -> f64) -> Planes {
        Planes::from_raw(
            self.channels,
            self.height,
            self.width,
            self.data.iter().map(|&v| f(v)).collect(),
        )
    }
}

pub(crate) fn check_same_grid(a: &Planes, b: &Planes, what: &str) -> Result<()> {
    if a.same_grid(b) {
        Ok(())
    } else {
        Err(Error::DimensionMismatch(format!(
            "{what}: {}x{} vs {}x{}",
            a.height(),
            a.width(),
            b.height(),
            b.width()
        )))
    }
}

/// Common access to the planar storage behind every grid kind, so the warp
/// kernels can operate on images, flows and scalar maps alike.
pub trait Planar: Sized {
    fn planes(&self) -> &Planes;

    /// Rebuild a value of the same kind around new planes with the same
    /// channel count.
    fn with_planes(&self, planes: Planes) -> Self;

    fn height(&self) -> usize {
        self.planes().height()
    }

    fn width(&self) -> usize {
        self.planes().width()
    }
}

/// An image with 1 or 3 channels and values nominally in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image(Planes);

impl Image {
    pub fn new(planes: Planes) -> Result<Self> {
        match planes.channels() {
            1 | 3 => Ok(Self(planes)),
            c => Err(Error::InvalidDimensions(format!(
                "image must have 1 or 3 channels, got {c}"
            ))),
        }
    }

    pub fn from_fn(
        channels: usize,
        height: usize,
        width: usize,
        f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        Self::new(Planes::from_fn(channels, height, width, f)?)
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: f64) -> Result<Self> {
        Self::new(Planes::filled(channels, height, width, value)?)
    }

    pub fn channels(&self) -> usize {
        self.0.channels()
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.0.get(c, y, x)
    }
}

impl Planar for Image {
    fn planes(&self) -> &Planes {
        &self.0
    }

    fn with_planes(&self, planes: Planes) -> Self {
        Self(planes)
    }
}

/// Per-pixel displacement field with planes `u` (x, right) and `v` (y, down).
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField(Planes);

impl FlowField {
    pub fn new(planes: Planes) -> Result<Self> {
        if planes.channels() != 2 {
            return Err(Error::InvalidDimensions(format!(
                "flow must have 2 channels, got {}",
                planes.channels()
            )));
        }
        Ok(Self(planes))
    }

    pub fn from_uv(height: usize, width: usize, mut u: Vec<f64>, v: Vec<f64>) -> Result<Self> {
        if u.len() != v.len() {
            return Err(Error::DimensionMismatch("u and v planes differ in length".into()));
        }
        u.extend(v);
        Self::new(Planes::new(2, height, width, u)?)
    }

    pub fn constant(height: usize, width: usize, u: f64, v: f64) -> Result<Self> {
        let n = height * width;
        Self::from_uv(height, width, vec![u; n], vec![v; n])
    }

    pub fn zeros(height: usize, width: usize) -> Result<Self> {
        Self::constant(height, width, 0.0, 0.0)
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize) -> (f64, f64),
    ) -> Result<Self> {
        let n = height * width;
        let mut u = Vec::with_capacity(n);
        let mut v = Vec::with_capacity(n);
        for y in 0..height {
            for x in 0..width {
                let (a, b) = f(y, x);
                u.push(a);
                v.push(b);
            }
        }
        Self::from_uv(height, width, u, v)
    }

    pub fn u(&self) -> &[f64] {
        self.0.plane(0)
    }

    pub fn v(&self) -> &[f64] {
        self.0.plane(1)
    }

    /// Displacement at row-major index `i`.
    #[inline]
    pub fn at(&self, i: usize) -> (f64, f64) {
        (self.u()[i], self.v()[i])
    }

    pub fn scaled(&self, factor: f64) -> FlowField {
        Self(self.0.map(|v| v * factor))
    }

    pub fn add(&self, other: &FlowField) -> Result<FlowField> {
        check_same_grid(&self.0, &other.0, "flow addition")?;
        let data = self.0.data().iter().zip(other.0.data()).map(|(a, b)| a + b).collect();
        Ok(Self(Planes::from_raw(2, self.height(), self.width(), data)))
    }

    pub fn sub(&self, other: &FlowField) -> Result<FlowField> {
        self.add(&other.scaled(-1.0))
    }

    /// Per-pixel Euclidean magnitudes in row-major order.
    pub fn magnitudes(&self) -> Vec<f64> {
        self.u().iter().zip(self.v()).map(|(u, v)| u.hypot(*v)).collect()
    }
}

impl Planar for FlowField {
    fn planes(&self) -> &Planes {
        &self.0
    }

    fn with_planes(&self, planes: Planes) -> Self {
        Self(planes)
    }
}

/// Single-plane map: difference maps, hole masks, fusion maps, splat weights.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarMap(Planes);

impl ScalarMap {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        Ok(Self(Planes::new(1, height, width, data)?))
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Result<Self> {
        Ok(Self(Planes::filled(1, height, width, value)?))
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        Ok(Self(Planes::from_fn(1, height, width, |_, y, x| f(y, x))?))
    }

    pub fn from_planes(planes: Planes) -> Result<Self> {
        if planes.channels() != 1 {
            return Err(Error::InvalidDimensions(format!(
                "scalar map must have 1 channel, got {}",
                planes.channels()
            )));
        }
        Ok(Self(planes))
    }

    pub(crate) fn from_raw(height: usize, width: usize, data: Vec<f64>) -> Self {
        Self(Planes::from_raw(1, height, width, data))
    }

    pub fn values(&self) -> &[f64] {
        self.0.data()
    }

    pub fn sum(&self) -> f64 {
        self.values().iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.values().len() as f64
    }

    pub fn max(&self) -> f64 {
        self.values().iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

impl Planar for ScalarMap {
    fn planes(&self) -> &Planes {
        &self.0
    }

    fn with_planes(&self, planes: Planes) -> Self {
        Self(planes)
    }
}

/// C-channel descriptor grid at resolution `H/2^i x W/2^i`; remembers `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    planes: Planes,
    scale_exponent: u8,
}

impl FeatureMap {
    pub fn new(planes: Planes, scale_exponent: u8) -> Self {
        Self { planes, scale_exponent }
    }

    pub fn channels(&self) -> usize {
        self.planes.channels()
    }

    pub fn scale_exponent(&self) -> u8 {
        self.scale_exponent
    }
}

impl Planar for FeatureMap {
    fn planes(&self) -> &Planes {
        &self.planes
    }

    fn with_planes(&self, planes: Planes) -> Self {
        Self { planes, scale_exponent: self.scale_exponent }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn planes_reject_bad_shapes() {
        assert!(matches!(Planes::new(1, 0, 3, vec![]), Err(Error::InvalidDimensions(_))));
        assert!(matches!(Planes::new(1, 2, 2, vec![0.0; 3]), Err(Error::DimensionMismatch(_))));
        assert!(matches!(
            Planes::new(1, 1, 2, vec![0.0, f64::NAN]),
            Err(Error::NonFiniteValue { index: 1 })
        ));
    }

    #[test]
    fn planar_indexing() {
        let p = Planes::from_fn(2, 2, 3, |c, y, x| (c * 100 + y * 10 + x) as f64).unwrap();
        assert_eq!(p.get(1, 1, 2), 112.0);
        assert_eq!(p.plane(1)[5], 112.0);
    }

    #[test]
    fn image_channel_count() {
        assert!(Image::filled(2, 2, 2, 0.0).is_err());
        assert!(Image::filled(3, 2, 2, 0.0).is_ok());
    }

    #[test]
    fn flow_arithmetic() {
        let a = FlowField::constant(2, 2, 1.0, 2.0).unwrap();
        let b = FlowField::constant(2, 2, 0.5, -1.0).unwrap();
        let s = a.add(&b).unwrap();
        assert_eq!(s.at(3), (1.5, 1.0));
        assert_eq!(a.sub(&a).unwrap(), FlowField::zeros(2, 2).unwrap());
        assert_eq!(FlowField::constant(1, 1, 3.0, 4.0).unwrap().magnitudes(), vec![5.0]);
    }
}
