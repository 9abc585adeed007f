use std::ops::Range;

use rand::Rng;

use super::SequencePair;
use crate::error::{Error, Result};
use crate::geometry::ShiftVector;
use crate::image::{Image, BACKGROUND};

/// Frames per downstream clip.
pub const CLIP_LEN: usize = 16;

/// Everything one training sample needs.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingTuple {
    pub iv_k: Image,
    pub iw_k: Image,
    pub iv_m: Image,
    pub iw_n: Image,
    pub aug_v: Image,
    pub aug_w: Image,
    pub c1: ShiftVector,
    pub c2: ShiftVector,
    pub k: usize,
    pub m: usize,
    pub n: usize,
    pub flip_applied: bool,
}

/// Samples rotation-source frames, independent shifts in `[-W/4, W/4]` and
/// one flip decision shared by all six images.
///
/// Draw order: m, n, c1.dx, c1.dy, c2.dx, c2.dy, flip.
pub fn make_training_tuple<R: Rng + ?Sized>(pair: &SequencePair<'_>, k: usize, rng: &mut R) -> Result<TrainingTuple> {
    let len = pair.len();
    if pair.view_w.len() != len {
        return Err(Error::invalid(format!("sequence {} has unequal view lengths", pair.scene_id)));
    }
    if k >= len {
        return Err(Error::invalid(format!("frame {k} out of range for {len}-frame sequence {}", pair.scene_id)));
    }
    let m = rng.random_range(0..len);
    let n = rng.random_range(0..len);
    let iv_k = pair.view_v[k].load()?;
    let bound_x = (iv_k.width() / 4) as i32;
    let bound_y = (iv_k.height() / 4) as i32;
    let mut shift = || ShiftVector::new(rng.random_range(-bound_x..=bound_x), rng.random_range(-bound_y..=bound_y));
    let c1 = shift();
    let c2 = shift();
    let flip = rng.random_bool(0.5);
    let prep = |im: &Image| if flip { im.flipped_horizontal() } else { im.clone() };
    let iv_k = prep(&iv_k);
    let iw_k = prep(&*pair.view_w[k].load()?);
    let iv_m = prep(&*pair.view_v[m].load()?);
    let iw_n = prep(&*pair.view_w[n].load()?);
    let aug_v = iv_k.shifted(c1.dx, c1.dy, BACKGROUND);
    let aug_w = iw_k.shifted(c2.dx, c2.dy, BACKGROUND);
    Ok(TrainingTuple { iv_k, iw_k, iv_m, iw_n, aug_v, aug_w, c1, c2, k, m, n, flip_applied: flip })
}

/// One random index per each of 16 contiguous segments of `[0, len)`.
///
/// For `len >= 16` the segments are disjoint, so indices strictly increase.
/// Shorter sequences share frames between neighbouring segments.
pub fn subsample_16<R: Rng + ?Sized>(len: usize, rng: &mut R) -> Result<Vec<usize>> {
    if len == 0 {
        return Err(Error::invalid("cannot subsample an empty sequence"));
    }
    Ok((0..CLIP_LEN)
        .map(|i| {
            let (lo, hi) = if len >= CLIP_LEN {
                (i * len / CLIP_LEN, (i + 1) * len / CLIP_LEN)
            } else {
                // Rounded linspace boundaries, each segment at least one frame.
                let lo = ((i * len) as f64 / CLIP_LEN as f64).round() as usize;
                let hi = (((i + 1) * len) as f64 / CLIP_LEN as f64).round() as usize;
                (lo.min(len - 1), hi.max(lo + 1).min(len))
            };
            rng.random_range(lo..hi.max(lo + 1))
        })
        .collect())
}

/// Non-overlapping 16-frame clips; the trailing remainder is dropped.
pub fn clip_split_16(len: usize) -> Result<Vec<Range<usize>>> {
    if len < CLIP_LEN {
        return Err(Error::invalid(format!("sequence of {len} frames is shorter than one {CLIP_LEN}-frame clip")));
    }
    Ok((0..len / CLIP_LEN).map(|c| c * CLIP_LEN..(c + 1) * CLIP_LEN).collect())
}
