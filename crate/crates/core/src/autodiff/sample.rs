//! Bilinear sampling with clamp-to-edge borders.
//!
//! Sample positions are continuous `(x, y)` pixel coordinates. A coordinate
//! outside `[0, W-1] x [0, H-1]` is clamped before interpolation and receives
//! zero coordinate gradient along the clamped axis.

use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy)]
struct Axis<S> {
    lo: usize,
    hi: usize,
    frac: S,
    inside: bool,
}

#[inline]
fn axis<S: Scalar>(c: S, size: usize) -> Axis<S> {
    let max = S::from_usize(size - 1).unwrap();
    let inside = c >= S::zero() && c <= max;
    let cc = if c.is_nan() { S::zero() } else { c.max(S::zero()).min(max) };
    let lo = cc.floor().to_usize().unwrap_or(0).min(size - 1);
    let hi = (lo + 1).min(size - 1);
    Axis {
        lo,
        hi,
        frac: cc - S::from_usize(lo).unwrap(),
        inside,
    }
}

#[inline]
fn lerp<S: Scalar>(a: S, b: S, w: S) -> S {
    if w == S::zero() {
        a
    } else {
        a + w * (b - a)
    }
}

/// `image` is `H x W x C`; `coords` is `OH x OW x 2`. Returns `OH x OW x C`.
pub fn forward<S: Scalar>(
    image: &[S],
    (h, w, c): (usize, usize, usize),
    coords: &[S],
) -> Vec<S> {
    let n_out = coords.len() / 2;
    let mut out = vec![S::zero(); n_out * c];
    for p in 0..n_out {
        let ax = axis(coords[2 * p], w);
        let ay = axis(coords[2 * p + 1], h);
        let at = |y: usize, x: usize| (y * w + x) * c;
        let (o00, o01, o10, o11) = (at(ay.lo, ax.lo), at(ay.lo, ax.hi), at(ay.hi, ax.lo), at(ay.hi, ax.hi));
        for ch in 0..c {
            let top = lerp(image[o00 + ch], image[o01 + ch], ax.frac);
            let bot = lerp(image[o10 + ch], image[o11 + ch], ax.frac);
            out[p * c + ch] = lerp(top, bot, ay.frac);
        }
    }
    out
}

/// Returns `(d_image, d_coords)` for the requested operands.
pub fn backward<S: Scalar>(
    image: &[S],
    (h, w, c): (usize, usize, usize),
    coords: &[S],
    grad_out: &[S],
    want_image: bool,
    want_coords: bool,
) -> (Option<Vec<S>>, Option<Vec<S>>) {
    let n_out = coords.len() / 2;
    let mut d_image = want_image.then(|| vec![S::zero(); image.len()]);
    let mut d_coords = want_coords.then(|| vec![S::zero(); coords.len()]);
    let one = S::one();
    for p in 0..n_out {
        let ax = axis(coords[2 * p], w);
        let ay = axis(coords[2 * p + 1], h);
        let at = |y: usize, x: usize| (y * w + x) * c;
        let (o00, o01, o10, o11) = (at(ay.lo, ax.lo), at(ay.lo, ax.hi), at(ay.hi, ax.lo), at(ay.hi, ax.hi));
        let (wx, wy) = (ax.frac, ay.frac);
        let mut gx = S::zero();
        let mut gy = S::zero();
        for ch in 0..c {
            let g = grad_out[p * c + ch];
            if let Some(di) = d_image.as_mut() {
                di[o00 + ch] = di[o00 + ch] + g * (one - wx) * (one - wy);
                di[o01 + ch] = di[o01 + ch] + g * wx * (one - wy);
                di[o10 + ch] = di[o10 + ch] + g * (one - wx) * wy;
                di[o11 + ch] = di[o11 + ch] + g * wx * wy;
            }
            if want_coords {
                let (v00, v01, v10, v11) = (image[o00 + ch], image[o01 + ch], image[o10 + ch], image[o11 + ch]);
                let top = v00 + wx * (v01 - v00);
                let bot = v10 + wx * (v11 - v10);
                gx = gx + g * ((v01 - v00) + wy * ((v11 - v10) - (v01 - v00)));
                gy = gy + g * (bot - top);
            }
        }
        if let Some(dc) = d_coords.as_mut() {
            if ax.inside {
                dc[2 * p] = gx;
            }
            if ay.inside {
                dc[2 * p + 1] = gy;
            }
        }
    }
    (d_image, d_coords)
}

/// Identity sampling grid `(x, y)` for an `h x w` lattice.
pub fn identity_grid<S: Scalar>(h: usize, w: usize) -> Vec<S> {
    let mut grid = Vec::with_capacity(h * w * 2);
    for y in 0..h {
        for x in 0..w {
            grid.push(S::from_usize(x).unwrap());
            grid.push(S::from_usize(y).unwrap());
        }
    }
    grid
}

/// Backward warp of an `H x W x C` image by an `H x W x 2` pixel displacement field.
pub fn warp<S: Scalar>(image: &[S], dims: (usize, usize, usize), flow: &[S]) -> Vec<S> {
    let (h, w, _) = dims;
    let mut coords = identity_grid::<S>(h, w);
    for (c, &f) in coords.iter_mut().zip(flow) {
        *c = *c + f;
    }
    forward(image, dims, &coords)
}
