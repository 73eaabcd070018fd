//! Deformable-attention gather: bilinear samples of an `H x W x C` feature map
//! at `point + offset` for every query and head, with coordinates clamped to
//! the map. `x` indexes columns (width) and `y` rows (height).

use crate::counter;
use crate::error::{Error, Result};
use crate::qcore::{rshift_rne, FixedTensor, RealTensor};

/// Fractional bits of the interpolation weights on the fixed path (U1.15).
pub const WEIGHT_FRAC: u32 = 15;

#[derive(Debug, Clone, PartialEq)]
pub struct GatherSpec {
    pub heads: usize,
    /// One `[x, y]` reference point per query.
    pub points: Vec<[f64; 2]>,
    /// `[dx, dy]` per query and head, query-major.
    pub offsets: Vec<[f64; 2]>,
}

impl GatherSpec {
    pub fn queries(&self) -> usize {
        self.points.len()
    }

    fn validate(&self) -> Result<()> {
        if self.heads == 0 {
            return Err(Error::InvalidParams("gather needs at least one head".into()));
        }
        if self.offsets.len() != self.points.len() * self.heads {
            return Err(Error::ShapeMismatch {
                expected: vec![self.points.len(), self.heads],
                got: vec![self.offsets.len()],
            });
        }
        if self.points.iter().chain(&self.offsets).flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParams("gather coordinates must be finite".into()));
        }
        Ok(())
    }

    /// Clamped sample coordinates, query-major then head.
    fn samples(&self, h: usize, w: usize) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.points.iter().enumerate().flat_map(move |(qi, p)| {
            (0..self.heads).map(move |hd| {
                let o = self.offsets[qi * self.heads + hd];
                (
                    (p[0] + o[0]).clamp(0.0, (w - 1) as f64),
                    (p[1] + o[1]).clamp(0.0, (h - 1) as f64),
                )
            })
        })
    }
}

fn map_dims(shape: &[usize]) -> Result<(usize, usize, usize)> {
    match shape {
        &[h, w, c] if h > 0 && w > 0 && c > 0 => Ok((h, w, c)),
        _ => Err(Error::InvalidParams(format!("feature map must be H x W x C, got {shape:?}"))),
    }
}

/// Corner indices and fractional parts for a clamped coordinate.
fn corners(s: f64, extent: usize) -> (usize, usize, f64) {
    let i0 = (s.floor() as usize).min(extent - 1);
    let i1 = (i0 + 1).min(extent - 1);
    (i0, i1, s - i0 as f64)
}

/// Multiplies per sample: four corner weights plus four per channel.
fn count(spec: &GatherSpec, c: usize) {
    counter::add((spec.queries() * spec.heads * (4 + 4 * c)) as u64);
}

/// Real-arithmetic gather; output is `queries x heads x C`.
pub fn deformable_gather(feature: &RealTensor, spec: &GatherSpec) -> Result<RealTensor> {
    spec.validate()?;
    let (h, w, c) = map_dims(feature.shape())?;
    let f = feature.values();
    let mut out = Vec::with_capacity(spec.queries() * spec.heads * c);
    for (sx, sy) in spec.samples(h, w) {
        let (x0, x1, fx) = corners(sx, w);
        let (y0, y1, fy) = corners(sy, h);
        let taps = [
            ((1.0 - fx) * (1.0 - fy), y0 * w + x0),
            (fx * (1.0 - fy), y0 * w + x1),
            ((1.0 - fx) * fy, y1 * w + x0),
            (fx * fy, y1 * w + x1),
        ];
        for ch in 0..c {
            out.push(taps.iter().map(|&(wt, px)| wt * f[px * c + ch]).sum());
        }
    }
    count(spec, c);
    RealTensor::new(vec![spec.queries(), spec.heads, c], out)
}

/// Fixed-point gather: interpolation weights quantized to U1.15 (the four
/// corner weights sum to exactly 1), products accumulated exactly and rounded
/// once into the feature map's format.
pub fn deformable_gather_fixed(feature: &FixedTensor, spec: &GatherSpec) -> Result<FixedTensor> {
    spec.validate()?;
    let (h, w, c) = map_dims(feature.shape())?;
    let f = feature.raw();
    let one = 1i64 << WEIGHT_FRAC;
    let quant = |frac: f64| ((frac * one as f64).round_ties_even() as i64).clamp(0, one);
    let mut out = Vec::with_capacity(spec.queries() * spec.heads * c);
    for (sx, sy) in spec.samples(h, w) {
        let (x0, x1, fx) = corners(sx, w);
        let (y0, y1, fy) = corners(sy, h);
        let (wx, wy) = (quant(fx), quant(fy));
        let taps = [
            ((one - wx) * (one - wy), y0 * w + x0),
            (wx * (one - wy), y0 * w + x1),
            ((one - wx) * wy, y1 * w + x0),
            (wx * wy, y1 * w + x1),
        ];
        for ch in 0..c {
            let acc: i128 = taps.iter().map(|&(wt, px)| wt as i128 * f[px * c + ch] as i128).sum();
            out.push(rshift_rne(acc, 2 * WEIGHT_FRAC) as i64);
        }
    }
    count(spec, c);
    // A convex combination of in-range values stays in range.
    FixedTensor::new(vec![spec.queries(), spec.heads, c], feature.format(), feature.params(), out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qcore::q;

    fn map() -> RealTensor {
        // 2 x 3 x 2: channel 0 = 10 * y + x, channel 1 = -(value).
        let v: Vec<f64> = (0..2)
            .flat_map(|y| (0..3).flat_map(move |x| [(10 * y + x) as f64, -((10 * y + x) as f64)]))
            .collect();
        RealTensor::new(vec![2, 3, 2], v).unwrap()
    }

    fn spec(points: Vec<[f64; 2]>, offsets: Vec<[f64; 2]>, heads: usize) -> GatherSpec {
        GatherSpec { heads, points, offsets }
    }

    #[test]
    fn pixel_centers() {
        let s = spec(vec![[2.0, 1.0], [0.0, 0.0]], vec![[0.0; 2]; 2], 1);
        let out = deformable_gather(&map(), &s).unwrap();
        assert_eq!(out.values(), &[12.0, -12.0, 0.0, 0.0]);
    }

    #[test]
    fn midpoint_is_mean() {
        let s = spec(vec![[0.0, 0.0]], vec![[0.5, 0.5]], 1);
        let out = deformable_gather(&map(), &s).unwrap();
        assert_eq!(out.values()[0], (0.0 + 1.0 + 10.0 + 11.0) / 4.0);
    }

    #[test]
    fn clamps_to_bounds() {
        let s = spec(vec![[1.0, 1.0]], vec![[100.0, -100.0], [-7.5, 9.0]], 2);
        let out = deformable_gather(&map(), &s).unwrap();
        assert_eq!(out.shape(), &[1, 2, 2]);
        assert_eq!(out.values()[0], 2.0);
        assert_eq!(out.values()[2], 10.0);
    }

    #[test]
    fn fixed_exact_on_integral_points() {
        let raw: Vec<i64> = (0..12).map(|i| i * 37 - 200).collect();
        let fm = FixedTensor::with_format(vec![2, 3, 2], q("S7.8"), raw.clone()).unwrap();
        let s = spec(vec![[1.0, 0.0], [2.0, 1.0]], vec![[0.0; 2]; 2], 1);
        let out = deformable_gather_fixed(&fm, &s).unwrap();
        assert_eq!(out.raw(), &[raw[2], raw[3], raw[10], raw[11]]);
    }

    #[test]
    fn rejects_bad_specs() {
        let s = spec(vec![[0.0, 0.0]], vec![[0.0; 2]; 3], 2);
        assert!(deformable_gather(&map(), &s).is_err());
        let s = spec(vec![[f64::NAN, 0.0]], vec![[0.0; 2]], 1);
        assert!(deformable_gather(&map(), &s).is_err());
        let flat = RealTensor::new(vec![6], vec![0.0; 6]).unwrap();
        assert!(deformable_gather(&flat, &spec(vec![], vec![], 1)).is_err());
    }
}
