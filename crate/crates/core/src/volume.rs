//! Volume and mask containers.
//!
//! All volumes are stored in C order. For [`DwiVolume`] the b-value axis is
//! the slowest, followed by z, y, x. Values are held as `f64` in memory and
//! quantized to `f32` only when written to disk (see [`crate::io`]).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Strictly increasing list of non-negative b-values in s/mm².
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct BValueList(Vec<f64>);

impl BValueList {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::validation("b-value list is empty"));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::validation(format!(
                "b-values must be finite and non-negative, got {v}"
            )));
        }
        if values.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::validation(format!(
                "b-values must be strictly increasing, got {values:?}"
            )));
        }
        Ok(BValueList(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Exact-match lookup.
    pub fn index_of(&self, b: f64) -> Option<usize> {
        self.0.iter().position(|&v| v == b)
    }
}

impl TryFrom<Vec<f64>> for BValueList {
    type Error = Error;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        BValueList::new(values)
    }
}

impl From<BValueList> for Vec<f64> {
    fn from(b: BValueList) -> Self {
        b.0
    }
}

/// Spatial extent `(nz, ny, nx)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape3 {
    pub nz: usize,
    pub ny: usize,
    pub nx: usize,
}

impl Shape3 {
    pub fn new(nz: usize, ny: usize, nx: usize) -> Result<Self> {
        if nz == 0 || ny == 0 || nx == 0 {
            return Err(Error::validation(format!(
                "shape dimensions must be positive, got ({nz}, {ny}, {nx})"
            )));
        }
        Ok(Shape3 { nz, ny, nx })
    }

    pub fn len(&self) -> usize {
        self.nz * self.ny * self.nx
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn slice_len(&self) -> usize {
        self.ny * self.nx
    }

    #[inline]
    pub fn index(&self, z: usize, y: usize, x: usize) -> usize {
        (z * self.ny + y) * self.nx + x
    }

    pub fn as_array(&self) -> [usize; 3] {
        [self.nz, self.ny, self.nx]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Unit {
    Signal,
    AdcMm2PerS,
    Dimensionless,
}

impl Unit {
    pub fn as_str(&self) -> &'static str {
        match self {
            Unit::Signal => "signal",
            Unit::AdcMm2PerS => "adc_mm2_per_s",
            Unit::Dimensionless => "dimensionless",
        }
    }
}

fn check_finite(data: &[f64], what: &str) -> Result<()> {
    match data.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(Error::validation(format!(
            "{what} has non-finite value {} at index {i}",
            data[i]
        ))),
        None => Ok(()),
    }
}

/// 3-D float map: ADC, single-b DWI, CDIs output.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarVolume {
    shape: Shape3,
    unit: Unit,
    data: Vec<f64>,
}

impl ScalarVolume {
    pub fn new(shape: Shape3, unit: Unit, data: Vec<f64>) -> Result<Self> {
        if data.len() != shape.len() {
            return Err(Error::validation(format!(
                "scalar volume data length {} does not match shape {:?}",
                data.len(),
                shape.as_array()
            )));
        }
        check_finite(&data, "scalar volume")?;
        Ok(ScalarVolume { shape, unit, data })
    }

    pub fn filled(shape: Shape3, unit: Unit, value: f64) -> Result<Self> {
        ScalarVolume::new(shape, unit, vec![value; shape.len()])
    }

    pub fn shape(&self) -> Shape3 {
        self.shape
    }

    pub fn unit(&self) -> Unit {
        self.unit
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, z: usize, y: usize, x: usize) -> f64 {
        self.data[self.shape.index(z, y, x)]
    }

    pub fn slice(&self, z: usize) -> &[f64] {
        let n = self.shape.slice_len();
        &self.data[z * n..(z + 1) * n]
    }
}

/// 3-D binary map. Values are 0 or 1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskVolume {
    shape: Shape3,
    data: Vec<u8>,
}

impl MaskVolume {
    pub fn new(shape: Shape3, data: Vec<u8>) -> Result<Self> {
        if data.len() != shape.len() {
            return Err(Error::validation(format!(
                "mask data length {} does not match shape {:?}",
                data.len(),
                shape.as_array()
            )));
        }
        if let Some(v) = data.iter().find(|&&v| v > 1) {
            return Err(Error::validation(format!(
                "mask values must be 0 or 1, found {v}"
            )));
        }
        Ok(MaskVolume { shape, data })
    }

    pub fn zeros(shape: Shape3) -> Self {
        MaskVolume {
            shape,
            data: vec![0; shape.len()],
        }
    }

    pub fn from_fn(shape: Shape3, mut f: impl FnMut(usize, usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(shape.len());
        for z in 0..shape.nz {
            for y in 0..shape.ny {
                for x in 0..shape.nx {
                    data.push(f(z, y, x) as u8);
                }
            }
        }
        MaskVolume { shape, data }
    }

    pub fn shape(&self) -> Shape3 {
        self.shape
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    #[inline]
    pub fn is_set(&self, i: usize) -> bool {
        self.data[i] != 0
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }

    /// True when every set voxel of `self` is also set in `other`.
    pub fn is_subset_of(&self, other: &MaskVolume) -> bool {
        self.shape == other.shape
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(&a, &b)| a == 0 || b != 0)
    }

    /// Dice overlap `2|A∩B| / (|A|+|B|)`. Two empty masks give 1.
    pub fn dice(&self, other: &MaskVolume) -> Result<f64> {
        if self.shape != other.shape {
            return Err(Error::validation("dice: mask shapes differ"));
        }
        let (mut inter, mut total) = (0usize, 0usize);
        for (&a, &b) in self.data.iter().zip(&other.data) {
            inter += (a != 0 && b != 0) as usize;
            total += (a != 0) as usize + (b != 0) as usize;
        }
        if total == 0 {
            return Ok(1.0);
        }
        Ok(2.0 * inter as f64 / total as f64)
    }
}

/// Multi-b-value diffusion-weighted acquisition indexed `(b, z, y, x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DwiVolume {
    bvalues: BValueList,
    shape: Shape3,
    data: Vec<f64>,
}

impl DwiVolume {
    pub fn new(bvalues: BValueList, shape: Shape3, data: Vec<f64>) -> Result<Self> {
        let expected = bvalues.len() * shape.len();
        if data.len() != expected {
            return Err(Error::validation(format!(
                "dwi data length {} does not match {} b-values x shape {:?}",
                data.len(),
                bvalues.len(),
                shape.as_array()
            )));
        }
        check_finite(&data, "dwi volume")?;
        Ok(DwiVolume {
            bvalues,
            shape,
            data,
        })
    }

    /// Stack equally shaped 3-D signal maps along the b axis.
    pub fn from_slabs(bvalues: BValueList, slabs: Vec<Vec<f64>>, shape: Shape3) -> Result<Self> {
        if slabs.len() != bvalues.len() {
            return Err(Error::validation(format!(
                "{} slabs for {} b-values",
                slabs.len(),
                bvalues.len()
            )));
        }
        let data = slabs.concat();
        DwiVolume::new(bvalues, shape, data)
    }

    pub fn bvalues(&self) -> &BValueList {
        &self.bvalues
    }

    pub fn shape(&self) -> Shape3 {
        self.shape
    }

    pub fn nb(&self) -> usize {
        self.bvalues.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Signals of b-index `ib` as a contiguous `(z, y, x)` block.
    pub fn slab(&self, ib: usize) -> &[f64] {
        let n = self.shape.len();
        &self.data[ib * n..(ib + 1) * n]
    }

    pub fn get(&self, ib: usize, z: usize, y: usize, x: usize) -> f64 {
        self.data[ib * self.shape.len() + self.shape.index(z, y, x)]
    }

    /// The 3-D volume acquired at b-value `b` (exact match).
    pub fn extract_b_slice(&self, b: f64) -> Result<ScalarVolume> {
        let ib = self
            .bvalues
            .index_of(b)
            .ok_or_else(|| Error::BValueNotFound {
                requested: b,
                available: self.bvalues.values().to_vec(),
            })?;
        Ok(ScalarVolume {
            shape: self.shape,
            unit: Unit::Signal,
            data: self.slab(ib).to_vec(),
        })
    }

    /// Signal at the lowest b-value, used as the anatomical reference.
    pub fn lowest_b_slab(&self) -> ScalarVolume {
        ScalarVolume {
            shape: self.shape,
            unit: Unit::Signal,
            data: self.slab(0).to_vec(),
        }
    }
}

/// Any of the three on-disk volume kinds.
#[derive(Debug, Clone, PartialEq)]
pub enum Volume {
    Dwi(DwiVolume),
    Scalar(ScalarVolume),
    Mask(MaskVolume),
}

impl Volume {
    pub fn kind(&self) -> &'static str {
        match self {
            Volume::Dwi(_) => "dwi",
            Volume::Scalar(_) => "scalar",
            Volume::Mask(_) => "mask",
        }
    }

    pub fn into_dwi(self) -> Result<DwiVolume> {
        match self {
            Volume::Dwi(v) => Ok(v),
            other => Err(Error::validation(format!(
                "expected a dwi volume, found {}",
                other.kind()
            ))),
        }
    }

    pub fn into_scalar(self) -> Result<ScalarVolume> {
        match self {
            Volume::Scalar(v) => Ok(v),
            other => Err(Error::validation(format!(
                "expected a scalar volume, found {}",
                other.kind()
            ))),
        }
    }

    pub fn into_mask(self) -> Result<MaskVolume> {
        match self {
            Volume::Mask(v) => Ok(v),
            other => Err(Error::validation(format!(
                "expected a mask volume, found {}",
                other.kind()
            ))),
        }
    }
}

impl From<DwiVolume> for Volume {
    fn from(v: DwiVolume) -> Self {
        Volume::Dwi(v)
    }
}

impl From<ScalarVolume> for Volume {
    fn from(v: ScalarVolume) -> Self {
        Volume::Scalar(v)
    }
}

impl From<MaskVolume> for Volume {
    fn from(v: MaskVolume) -> Self {
        Volume::Mask(v)
    }
}
