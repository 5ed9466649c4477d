//! Dense H×W×C grids (channels last) and the view/image types built on them.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Which branch of the two-branch model an input belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum ViewId {
    Ground,
    Satellite,
}

impl ViewId {
    pub const BOTH: [ViewId; 2] = [ViewId::Ground, ViewId::Satellite];

    pub fn as_str(self) -> &'static str {
        match self {
            ViewId::Ground => "ground",
            ViewId::Satellite => "satellite",
        }
    }
}

impl fmt::Display for ViewId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl core::str::FromStr for ViewId {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ground" | "g" => Ok(ViewId::Ground),
            "satellite" | "sat" | "s" => Ok(ViewId::Satellite),
            other => Err(Error::parameter(format!("unknown view `{other}`"))),
        }
    }
}

/// Row-major `height × width × channels` buffer; index `(y * width + x) * channels + c`.
#[derive(Clone, PartialEq)]
pub struct Grid<T> {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<T>,
}

impl<T: fmt::Debug> fmt::Debug for Grid<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Grid")
            .field("shape", &(self.height, self.width, self.channels))
            .field("data", &self.data)
            .finish()
    }
}

impl<T: Scalar> Grid<T> {
    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self::filled(height, width, channels, T::zero())
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: T) -> Self {
        Grid {
            height,
            width,
            channels,
            data: vec![value; height * width * channels],
        }
    }

    pub fn from_vec(height: usize, width: usize, channels: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != height * width * channels {
            return Err(Error::config(format!(
                "grid {height}x{width}x{channels} needs {} values, got {}",
                height * width * channels,
                data.len()
            )));
        }
        Ok(Grid {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn from_fn(height: usize, width: usize, channels: usize, mut f: impl FnMut(usize, usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(height * width * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(y, x, c));
                }
            }
        }
        Grid {
            height,
            width,
            channels,
            data,
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.height, self.width, self.channels)
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }
    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }
    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }
    /// `(height, width, channels)`
    #[inline]
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }
    #[inline]
    pub fn spatial(&self) -> usize {
        self.height * self.width
    }
    #[inline]
    pub fn as_slice(&self) -> &[T] {
        &self.data
    }
    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }
    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn index(&self, y: usize, x: usize, c: usize) -> usize {
        (y * self.width + x) * self.channels + c
    }
    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> T {
        self.data[self.index(y, x, c)]
    }
    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, v: T) {
        let i = self.index(y, x, c);
        self.data[i] = v;
    }

    /// The `channels` values stored at one spatial position.
    #[inline]
    pub fn pixel(&self, y: usize, x: usize) -> &[T] {
        let start = (y * self.width + x) * self.channels;
        &self.data[start..start + self.channels]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Grid {
            height: self.height,
            width: self.width,
            channels: self.channels,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Values of one channel in spatial order.
    pub fn channel(&self, c: usize) -> Vec<T> {
        self.data.iter().skip(c).step_by(self.channels).copied().collect()
    }

    pub fn add_assign(&mut self, other: &Self) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + *b;
        }
    }

    pub fn convert<U: Scalar>(&self) -> Grid<U> {
        Grid {
            height: self.height,
            width: self.width,
            channels: self.channels,
            data: self.data.iter().map(|v| U::cast(v.widen())).collect(),
        }
    }
}

/// Activation grid produced by one encoder stage of one view.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureGrid<T> {
    /// 1-based stage index.
    pub level: usize,
    pub view: ViewId,
    pub grid: Grid<T>,
}

/// RGB image with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor(Grid<f32>);

impl ImageTensor {
    pub fn new(grid: Grid<f32>) -> Result<Self> {
        if grid.channels() != 3 {
            return Err(Error::config(format!(
                "images have 3 channels, got {}",
                grid.channels()
            )));
        }
        if !grid.is_finite() {
            return Err(Error::numeric("image contains non-finite values"));
        }
        Ok(ImageTensor(grid))
    }

    pub fn from_vec(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        Self::new(Grid::from_vec(height, width, 3, data)?)
    }

    pub fn height(&self) -> usize {
        self.0.height()
    }
    pub fn width(&self) -> usize {
        self.0.width()
    }
    pub fn grid(&self) -> &Grid<f32> {
        &self.0
    }
    pub fn into_grid(self) -> Grid<f32> {
        self.0
    }
}
