//! Exact Euclidean distance transform on dense 3-D lattices.
//!
//! Separable lower-envelope-of-parabolas transform (one pass per axis). All
//! intermediate values are sums of squared integers, so results are exact in
//! f64 for any lattice that fits in memory.

/// Sentinel standing in for "no feature on this line" during the passes.
const FAR: f64 = 1e20;

/// Squared distance from every cell to the nearest `true` cell, in cell
/// units. Cells are indexed x-fastest: `x + dx * (y + dy * z)`.
/// Returns `f64::INFINITY` everywhere when the mask is empty.
pub fn squared_edt(mask: &[bool], dims: [usize; 3]) -> Vec<f64> {
    let n = dims[0] * dims[1] * dims[2];
    assert_eq!(mask.len(), n, "mask length does not match dims");
    let mut field: Vec<f64> = mask.iter().map(|&m| if m { 0.0 } else { FAR }).collect();
    if n == 0 {
        return field;
    }

    let maxd = dims.iter().copied().max().unwrap_or(0);
    let mut line = vec![0.0; maxd];
    let mut out = vec![0.0; maxd];
    let mut v = vec![0usize; maxd];
    let mut z = vec![0.0; maxd + 1];

    let strides = [1, dims[0], dims[0] * dims[1]];
    for axis in 0..3 {
        let len = dims[axis];
        let stride = strides[axis];
        let (o1, o2) = match axis {
            0 => (1, 2),
            1 => (0, 2),
            _ => (0, 1),
        };
        for b in 0..dims[o2] {
            for a in 0..dims[o1] {
                let base = a * strides[o1] + b * strides[o2];
                for i in 0..len {
                    line[i] = field[base + i * stride];
                }
                envelope_1d(&line[..len], &mut out[..len], &mut v, &mut z);
                for i in 0..len {
                    field[base + i * stride] = out[i];
                }
            }
        }
    }

    for f in &mut field {
        if *f >= FAR * 0.5 {
            *f = f64::INFINITY;
        }
    }
    field
}

fn envelope_1d(f: &[f64], d: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let n = f.len();
    let mut k = 0usize;
    v[0] = 0;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in 1..n {
        let fq = f[q] + (q * q) as f64;
        let intersect = |p: usize| (fq - (f[p] + (p * p) as f64)) / (2.0 * q as f64 - 2.0 * p as f64);
        let mut s = intersect(v[k]);
        // z[0] is -inf, so k never underflows.
        while s <= z[k] {
            k -= 1;
            s = intersect(v[k]);
        }
        k += 1;
        v[k] = q;
        z[k] = s;
        z[k + 1] = f64::INFINITY;
    }
    k = 0;
    for q in 0..n {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let p = v[k];
        let dq = q as f64 - p as f64;
        d[q] = dq * dq + f[p];
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn brute(mask: &[bool], dims: [usize; 3]) -> Vec<f64> {
        let coords = |i: usize| {
            let x = i % dims[0];
            let y = (i / dims[0]) % dims[1];
            let z = i / (dims[0] * dims[1]);
            [x as f64, y as f64, z as f64]
        };
        (0..mask.len())
            .map(|i| {
                let p = coords(i);
                mask.iter()
                    .enumerate()
                    .filter(|(_, &m)| m)
                    .map(|(j, _)| {
                        let q = coords(j);
                        (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2)
                    })
                    .fold(f64::INFINITY, f64::min)
            })
            .collect()
    }

    #[test]
    fn empty_mask_is_infinite() {
        let d = squared_edt(&[false; 8], [2, 2, 2]);
        assert!(d.iter().all(|v| v.is_infinite()));
    }

    #[test]
    fn single_feature_distances() {
        let dims = [5, 4, 3];
        let mut mask = vec![false; 60];
        mask[2 + 5 * (1 + 4 * 1)] = true;
        assert_eq!(squared_edt(&mask, dims), brute(&mask, dims));
    }

    proptest! {
        #[test]
        fn matches_brute_force(
            dx in 1usize..7, dy in 1usize..7, dz in 1usize..7,
            bits in proptest::collection::vec(any::<u8>(), 343)
        ) {
            let dims = [dx, dy, dz];
            let n = dx * dy * dz;
            let mask: Vec<bool> = bits[..n].iter().map(|b| *b < 40).collect();
            prop_assert_eq!(squared_edt(&mask, dims), brute(&mask, dims));
        }
    }
}
