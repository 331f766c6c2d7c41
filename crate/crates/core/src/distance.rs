//! Exact Euclidean distance transforms on 2D/3D grids (separable lower
//! envelope of parabolas).

use crate::types::Shape;

const FAR: f64 = 1e20;

/// Clamp for signed distances when a mask is empty or full.
pub const SIGNED_DISTANCE_LIMIT: f64 = 1e6;

fn dt1d(f: &[f64], out: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let n = f.len();
    let mut k = 0usize;
    v[0] = 0;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in 1..n {
        let qf = q as f64;
        let mut s;
        loop {
            let p = v[k] as f64;
            s = ((f[q] + qf * qf) - (f[v[k]] + p * p)) / (2.0 * qf - 2.0 * p);
            // z[0] is -inf, so k never underflows
            if s <= z[k] {
                k -= 1;
            } else {
                break;
            }
        }
        k += 1;
        v[k] = q;
        z[k] = s;
        z[k + 1] = f64::INFINITY;
    }
    k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        let qf = q as f64;
        while z[k + 1] < qf {
            k += 1;
        }
        let d = qf - v[k] as f64;
        *o = d * d + f[v[k]];
    }
}

/// Squared distance from every voxel to the nearest voxel where `feature`
/// is true. Returns values of order 1e20 when there is no feature.
pub fn squared_edt(shape: &Shape, feature: impl Fn(usize) -> bool) -> Vec<f64> {
    let mut d: Vec<f64> = (0..shape.len()).map(|i| if feature(i) { 0.0 } else { FAR }).collect();
    let dims = shape.dims();
    for axis in 0..dims.len() {
        let n = dims[axis];
        let outer: usize = dims[..axis].iter().product();
        let inner: usize = dims[axis + 1..].iter().product();
        let (mut line, mut out) = (vec![0.0; n], vec![0.0; n]);
        let (mut v, mut z) = (vec![0usize; n], vec![0.0; n + 1]);
        for o in 0..outer {
            for i in 0..inner {
                let base = o * n * inner + i;
                for k in 0..n {
                    line[k] = d[base + k * inner];
                }
                dt1d(&line, &mut out, &mut v, &mut z);
                for k in 0..n {
                    d[base + k * inner] = out[k].min(FAR);
                }
            }
        }
    }
    d
}

/// Signed distance to a binary mask boundary, positive inside. Boundaries
/// sit half a voxel beyond the outermost voxel centers, so values are never
/// zero: the innermost border voxel gets +0.5, its outside neighbor -0.5.
pub fn signed_distance(shape: &Shape, mask: &[u8]) -> Vec<f64> {
    let to_inside = squared_edt(shape, |i| mask[i] != 0);
    let to_outside = squared_edt(shape, |i| mask[i] == 0);
    mask.iter()
        .enumerate()
        .map(|(i, &m)| {
            let s = if m != 0 { to_outside[i].sqrt() - 0.5 } else { 0.5 - to_inside[i].sqrt() };
            s.clamp(-SIGNED_DISTANCE_LIMIT, SIGNED_DISTANCE_LIMIT)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute(shape: &Shape, mask: &[u8], want: u8) -> Vec<f64> {
        (0..shape.len())
            .map(|i| {
                let a = shape.unravel(i);
                (0..shape.len())
                    .filter(|&j| mask[j] == want)
                    .map(|j| {
                        let b = shape.unravel(j);
                        (0..3).map(|k| (a[k] as f64 - b[k] as f64).powi(2)).sum::<f64>()
                    })
                    .fold(FAR, f64::min)
            })
            .collect()
    }

    #[test]
    fn matches_brute_force() {
        let shape = Shape::new(&[6, 7, 5]).unwrap();
        let mask: Vec<u8> = (0..shape.len()).map(|i| u8::from((i * 37 + 11) % 13 < 2)).collect();
        assert_eq!(squared_edt(&shape, |i| mask[i] == 1), brute(&shape, &mask, 1));
    }

    #[test]
    fn signed_distance_1d_profile() {
        let shape = Shape::new(&[1, 7]).unwrap();
        let sd = signed_distance(&shape, &[0, 0, 1, 1, 1, 0, 0]);
        assert_eq!(sd, vec![-1.5, -0.5, 0.5, 1.5, 0.5, -0.5, -1.5]);
    }

    #[test]
    fn empty_mask_is_far_outside() {
        let shape = Shape::new(&[3, 3]).unwrap();
        assert!(signed_distance(&shape, &[0; 9]).iter().all(|&d| d == -SIGNED_DISTANCE_LIMIT));
    }
}
