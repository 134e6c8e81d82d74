//! Layer GEMM decomposition into mesh-sized tiles, single-tile offload and
//! conv lowering via im2col.

use serde::{Deserialize, Serialize};

use crate::fault::{FaultSpec, InjectionRecord};
use crate::matrix::{MatI32, MatI8};
use crate::mesh::{matmul_tile, new_mesh, MeshConfig, TileJob};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GemmShape {
    pub m: usize,
    pub k: usize,
    pub n: usize,
}

impl GemmShape {
    pub fn new(m: usize, k: usize, n: usize) -> Result<Self> {
        if m == 0 || k == 0 || n == 0 {
            return Err(Error::Shape(format!("gemm {m}x{k}x{n} has an empty dimension")));
        }
        Ok(Self { m, k, n })
    }
}

/// Block coordinates of one dim×dim×dim tile.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TileCoord {
    pub mi: usize,
    pub ki: usize,
    pub ni: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TilePlan {
    pub shape: GemmShape,
    pub dim: usize,
    pub tiles: Vec<TileCoord>,
    pub padded_m: usize,
    pub padded_k: usize,
    pub padded_n: usize,
}

impl TilePlan {
    pub fn len(&self) -> usize {
        self.tiles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tiles.is_empty()
    }

    pub fn blocks(&self) -> (usize, usize, usize) {
        (self.padded_m / self.dim, self.padded_k / self.dim, self.padded_n / self.dim)
    }

    pub fn contains(&self, t: TileCoord) -> bool {
        let (bm, bk, bn) = self.blocks();
        t.mi < bm && t.ki < bk && t.ni < bn
    }

    /// Rows and columns of output block (mi, ni) that fall inside the
    /// unpadded GEMM.
    pub fn effective(&self, t: TileCoord) -> (usize, usize) {
        let rows = self.shape.m.saturating_sub(t.mi * self.dim).min(self.dim);
        let cols = self.shape.n.saturating_sub(t.ni * self.dim).min(self.dim);
        (rows, cols)
    }
}

/// Pads M, K, N up to multiples of `dim` and lists tiles in (mi, ni, ki)
/// order, so the K-blocks of one output tile are adjacent.
pub fn plan_tiles(shape: GemmShape, dim: usize) -> Result<TilePlan> {
    if dim == 0 {
        return Err(Error::Config("tile dim must be at least 1".into()));
    }
    GemmShape::new(shape.m, shape.k, shape.n)?;
    let up = |x: usize| x.div_ceil(dim) * dim;
    let (pm, pk, pn) = (up(shape.m), up(shape.k), up(shape.n));
    let mut tiles = Vec::with_capacity((pm / dim) * (pk / dim) * (pn / dim));
    for mi in 0..pm / dim {
        for ni in 0..pn / dim {
            for ki in 0..pk / dim {
                tiles.push(TileCoord { mi, ki, ni });
            }
        }
    }
    Ok(TilePlan { shape, dim, tiles, padded_m: pm, padded_k: pk, padded_n: pn })
}

/// Geometry of a single-image 2-D convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvGeom {
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    /// Output height and width. Errors unless both divide exactly.
    pub fn out_hw(&self) -> Result<(usize, usize)> {
        if self.stride == 0 {
            return Err(Error::Shape("stride must be positive".into()));
        }
        let side = |n: usize, k: usize, what: &str| {
            let span = n + 2 * self.pad;
            if k == 0 || k > span {
                return Err(Error::Shape(format!("kernel {what} {k} does not fit padded input {span}")));
            }
            if !(span - k).is_multiple_of(self.stride) {
                return Err(Error::Shape(format!(
                    "{what}: ({n} + 2*{} - {k}) is not a multiple of stride {}",
                    self.pad, self.stride
                )));
            }
            Ok((span - k) / self.stride + 1)
        };
        Ok((side(self.h, self.kh, "height")?, side(self.w, self.kw, "width")?))
    }

    pub fn patch_len(&self) -> usize {
        self.c_in * self.kh * self.kw
    }
}

/// Lowers a C×H×W tensor (flat, channel-major) into a
/// (C·kh·kw) × (H_out·W_out) matrix. Row index is (c, dy, dx) with c
/// outermost; column index is the row-major output pixel.
pub fn im2col(input: &[i8], g: &ConvGeom) -> Result<MatI8> {
    if input.len() != g.c_in * g.h * g.w {
        return Err(Error::Shape(format!(
            "input has {} elements, expected {}x{}x{}",
            input.len(),
            g.c_in,
            g.h,
            g.w
        )));
    }
    let (ho, wo) = g.out_hw()?;
    let mut out = MatI8::zeros(g.patch_len(), ho * wo);
    let cols = ho * wo;
    let data = out.as_mut_slice();
    for c in 0..g.c_in {
        for dy in 0..g.kh {
            for dx in 0..g.kw {
                let row = (c * g.kh + dy) * g.kw + dx;
                for oy in 0..ho {
                    let y = (oy * g.stride + dy) as isize - g.pad as isize;
                    if y < 0 || y >= g.h as isize {
                        continue;
                    }
                    for ox in 0..wo {
                        let x = (ox * g.stride + dx) as isize - g.pad as isize;
                        if x < 0 || x >= g.w as isize {
                            continue;
                        }
                        data[row * cols + oy * wo + ox] = input[(c * g.h + y as usize) * g.w + x as usize];
                    }
                }
            }
        }
    }
    Ok(out)
}

fn check_gemm(a: &MatI8, b: &MatI8, bias: &MatI32) -> Result<()> {
    if a.cols() != b.rows() || bias.rows() != a.rows() || bias.cols() != b.cols() {
        return Err(Error::Dimension(format!(
            "A {}x{}, B {}x{}, bias {}x{}",
            a.rows(),
            a.cols(),
            b.rows(),
            b.cols(),
            bias.rows(),
            bias.cols()
        )));
    }
    Ok(())
}

/// C = A·B + bias with 32-bit wrapping accumulation.
pub fn reference_gemm(a: &MatI8, b: &MatI8, bias: &MatI32) -> Result<MatI32> {
    check_gemm(a, b, bias)?;
    let (m, k, n) = (a.rows(), a.cols(), b.cols());
    let mut c = bias.clone();
    let (av, bv) = (a.as_slice(), b.as_slice());
    let cv = c.as_mut_slice();
    for i in 0..m {
        let crow = &mut cv[i * n..(i + 1) * n];
        for kk in 0..k {
            let x = av[i * k + kk] as i32;
            if x == 0 {
                continue;
            }
            for (cj, &bj) in crow.iter_mut().zip(&bv[kk * n..(kk + 1) * n]) {
                *cj = cj.wrapping_add(x * bj as i32);
            }
        }
    }
    Ok(c)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OffloadResult {
    pub c: MatI32,
    pub injected_tile: TileCoord,
    /// Clean and mesh-computed output of the injected tile, cropped to the
    /// unpadded region.
    pub tile_golden: MatI32,
    pub tile_faulty: MatI32,
    pub exposed: bool,
    pub cycles_used: u64,
    pub injections: Vec<InjectionRecord>,
}

/// Runs one GEMM with tile `tile` on a fresh mesh and everything else in
/// software. The tile's D operand is the bias block plus the partial sum of
/// the K-blocks before it.
pub fn offload_gemm(
    a: &MatI8,
    b: &MatI8,
    bias: &MatI32,
    config: &MeshConfig,
    tile: TileCoord,
    faults: &[FaultSpec],
) -> Result<OffloadResult> {
    check_gemm(a, b, bias)?;
    let dim = config.dim();
    let plan = plan_tiles(GemmShape::new(a.rows(), a.cols(), b.cols())?, dim)?;
    if !plan.contains(tile) {
        return Err(Error::Dimension(format!("tile {tile:?} is outside the plan {:?}", plan.blocks())));
    }
    let golden = reference_gemm(a, b, bias)?;
    let (r0, c0, k0) = (tile.mi * dim, tile.ni * dim, tile.ki * dim);

    let mut d = bias.block(r0, c0, dim, dim);
    for ki in 0..tile.ki {
        d = reference_gemm(&a.block(r0, ki * dim, dim, dim), &b.block(ki * dim, c0, dim, dim), &d)?;
    }
    let job = TileJob::new(a.block(r0, k0, dim, dim), b.block(k0, c0, dim, dim), d);
    let tile_clean = reference_gemm(&job.a, &job.b, &job.d)?;
    let mut mesh = new_mesh(*config)?;
    let out = matmul_tile(&mut mesh, &job, faults)?;

    let (er, ec) = plan.effective(tile);
    let tile_golden = tile_clean.block(0, 0, er, ec);
    let tile_faulty = out.c.block(0, 0, er, ec);
    let exposed = tile_golden != tile_faulty;

    let mut c = golden;
    if exposed {
        for r in 0..er {
            for col in 0..ec {
                let delta = tile_faulty.get(r, col).wrapping_sub(tile_golden.get(r, col));
                let v = c.get(r0 + r, c0 + col).wrapping_add(delta);
                c.set(r0 + r, c0 + col, v);
            }
        }
    }
    Ok(OffloadResult {
        c,
        injected_tile: tile,
        tile_golden,
        tile_faulty,
        exposed,
        cycles_used: out.cycles_used,
        injections: out.injections,
    })
}
