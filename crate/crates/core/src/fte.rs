//! Frame type embedder: one-hot frame-type maps and the type-bias
//! embedding added to refiner tokens.
//!
//! The embedder is a single fixed 3x3x3 convolution from the three type
//! channels `(I, P, MV)` to `EMBED_DIM` outputs. The shipped kernel is
//! `W[e][c][kt][kh][kw] = A[e][c] * TEMPORAL_TAPS[kt] / 9`: spatially uniform,
//! temporally weighted toward the centre frame so that frames of different
//! types receive different vectors. Row 0 of `A` selects the MV channel and
//! serves as the per-type refinement gain.

use crate::bytes::{Reader, Writer};
use crate::conv::Conv3d;
use crate::error::{Error, Result};
use crate::schedule::{FrameType, GopSchedule};

pub const EMBED_DIM: usize = 8;
pub const TYPE_CHANNELS: usize = 3;
const MAGIC: &[u8; 4] = b"SITW";
const VERSION: u32 = 1;
pub const TEMPORAL_TAPS: [f32; 3] = [0.2, 0.6, 0.2];

/// Mixing matrix of the default kernel, rows = embedding components,
/// columns = `(I, P, MV)`.
const DEFAULT_MIX: [[f32; 3]; EMBED_DIM] = [
    [0.0, 0.0, 1.0],
    [1.0, 0.0, 0.0],
    [0.0, 1.0, 0.0],
    [1.0, -1.0, 0.0],
    [0.5, 0.5, -1.0],
    [-1.0, 0.5, 0.5],
    [0.25, -0.5, 0.75],
    [1.0, 1.0, 1.0],
];

/// One-hot type map of shape `(T, 3, H, W)`; spatially constant per frame,
/// so only the per-frame type is stored.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TypeMap {
    types: Vec<FrameType>,
    height: usize,
    width: usize,
}

impl TypeMap {
    pub fn from_types(types: Vec<FrameType>, height: usize, width: usize) -> Self {
        Self { types, height, width }
    }

    pub fn frames(&self) -> usize {
        self.types.len()
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn types(&self) -> &[FrameType] {
        &self.types
    }

    /// Channel index of a type: I = 0, P = 1, MV = 2.
    pub fn channel(ty: FrameType) -> usize {
        ty.code() as usize
    }

    /// `M[t][c][y][x]` with a 0-based frame index.
    pub fn get(&self, t: usize, c: usize, _y: usize, _x: usize) -> f32 {
        (Self::channel(self.types[t]) == c) as u8 as f32
    }

    /// Dense `[c][t][y][x]` volume at an arbitrary spatial size.
    pub fn dense(&self, height: usize, width: usize) -> Vec<f32> {
        let t = self.frames();
        let mut out = vec![0.0; TYPE_CHANNELS * t * height * width];
        for (ti, &ty) in self.types.iter().enumerate() {
            let c = Self::channel(ty);
            let start = (c * t + ti) * height * width;
            out[start..start + height * width].fill(1.0);
        }
        out
    }
}

pub fn build_type_map(sched: &GopSchedule, height: usize, width: usize) -> TypeMap {
    TypeMap::from_types(sched.types().to_vec(), height, width)
}

/// Fixed embedder weights.
#[derive(Debug, Clone, PartialEq)]
pub struct FteWeights {
    conv: Conv3d,
}

impl FteWeights {
    pub fn new(conv: Conv3d) -> Result<Self> {
        if conv.in_channels != TYPE_CHANNELS {
            return Err(Error::Shape(format!("embedder takes {TYPE_CHANNELS} inputs, kernel has {}", conv.in_channels)));
        }
        Ok(Self { conv })
    }

    /// The shipped kernel.
    pub fn default_kernel() -> Self {
        let mut weights = Vec::with_capacity(EMBED_DIM * TYPE_CHANNELS * 27);
        for row in DEFAULT_MIX {
            for a in row {
                for tap in TEMPORAL_TAPS {
                    weights.extend(std::iter::repeat_n(a * tap / 9.0, 9));
                }
            }
        }
        let conv = Conv3d::new(EMBED_DIM, TYPE_CHANNELS, (3, 3, 3), weights, vec![0.0; EMBED_DIM]).expect("valid default");
        Self { conv }
    }

    /// All-zero kernel; embeds every schedule to zero.
    pub fn zeros() -> Self {
        let conv = Conv3d::new(EMBED_DIM, TYPE_CHANNELS, (3, 3, 3), vec![0.0; EMBED_DIM * 81], vec![0.0; EMBED_DIM])
            .expect("valid zeros");
        Self { conv }
    }

    pub fn dim(&self) -> usize {
        self.conv.out_channels
    }

    pub fn conv(&self) -> &Conv3d {
        &self.conv
    }

    /// `"SITW"`, `u32` version, then the convolution record.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.bytes(MAGIC).u32(VERSION);
        self.conv.write(&mut w);
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        if r.take(4)? != MAGIC {
            return Err(Error::Malformed("missing SITW magic".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Malformed(format!("SITW version {version}")));
        }
        let conv = Conv3d::read(&mut r)?;
        r.expect_end()?;
        Self::new(conv)
    }
}

/// Type-bias embedding on a token grid, `[t][ty][tx][e]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TypeEmbedding {
    pub grid: (usize, usize, usize),
    pub dim: usize,
    pub data: Vec<f32>,
}

impl TypeEmbedding {
    pub fn token(&self, t: usize, y: usize, x: usize) -> &[f32] {
        let (_, gh, gw) = self.grid;
        let i = ((t * gh + y) * gw + x) * self.dim;
        &self.data[i..i + self.dim]
    }
}

/// Convolves the type map and average-pools it onto `grid = (T, gh, gw)`.
///
/// The map is spatially constant per frame and the convolution pads by
/// replication, so convolving at token resolution and pooling afterwards give
/// the same result; the convolution therefore runs directly on the token grid.
pub fn embed_types(map: &TypeMap, grid: (usize, usize, usize), weights: &FteWeights) -> Result<TypeEmbedding> {
    let (gt, gh, gw) = grid;
    if gt != map.frames() || gh == 0 || gw == 0 || !map.height().is_multiple_of(gh) || !map.width().is_multiple_of(gw) {
        return Err(Error::Shape(format!(
            "token grid {grid:?} does not tile a {}x{}x{} type map",
            map.frames(),
            map.height(),
            map.width()
        )));
    }
    let conv = weights.conv.apply(&map.dense(gh, gw), grid)?;
    let e = weights.dim();
    let cells = gt * gh * gw;
    let mut data = vec![0.0; cells * e];
    for k in 0..e {
        for p in 0..cells {
            data[p * e + k] = conv[k * cells + p];
        }
    }
    Ok(TypeEmbedding { grid, dim: e, data })
}

/// Reference path: convolve at full map resolution, then average-pool.
pub fn embed_types_full(map: &TypeMap, grid: (usize, usize, usize), weights: &FteWeights) -> Result<TypeEmbedding> {
    let (gt, gh, gw) = grid;
    let (t, h, w) = (map.frames(), map.height(), map.width());
    if gt != t || gh == 0 || gw == 0 || h % gh != 0 || w % gw != 0 {
        return Err(Error::Shape(format!("token grid {grid:?} does not tile the map")));
    }
    let conv = weights.conv.apply(&map.dense(h, w), (t, h, w))?;
    let (ph, pw) = (h / gh, w / gw);
    let e = weights.dim();
    let mut data = vec![0.0; gt * gh * gw * e];
    for k in 0..e {
        for ti in 0..t {
            for y in 0..gh {
                for x in 0..gw {
                    let mut s = 0.0f64;
                    for yy in y * ph..(y + 1) * ph {
                        for xx in x * pw..(x + 1) * pw {
                            s += conv[((k * t + ti) * h + yy) * w + xx] as f64;
                        }
                    }
                    data[((ti * gh + y) * gw + x) * e + k] = (s / (ph * pw) as f64) as f32;
                }
            }
        }
    }
    Ok(TypeEmbedding { grid, dim: e, data })
}
