//! Deterministic 3D value noise used for surface albedo.
//!
//! Textures must be evaluable at any continuous surface point (so different
//! views shade the same world point identically), smooth enough for
//! gradient-based matching, and fully reproducible from a seed. Lattice
//! value noise with a C2 fade satisfies all three.

use nalgebra::Vector3;

/// splitmix64-style finalizer over the seed and lattice coordinates,
/// mapped to [0, 1).
fn lattice(seed: u64, ix: i64, iy: i64, iz: i64) -> f64 {
    let mut h = seed
        .wrapping_add((ix as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add((iy as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F))
        .wrapping_add((iz as u64).wrapping_mul(0x1656_67B1_9E37_79F9));
    h ^= h >> 30;
    h = h.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    h ^= h >> 27;
    h = h.wrapping_mul(0x94D0_49BB_1331_11EB);
    h ^= h >> 31;
    (h >> 11) as f64 / (1u64 << 53) as f64
}

/// Quintic fade: zero first and second derivatives at the cell borders.
fn fade(t: f64) -> f64 {
    t * t * t * (t * (t * 6.0 - 15.0) + 10.0)
}

/// Trilinearly faded lattice noise in [0, 1].
fn value_noise(seed: u64, x: f64, y: f64, z: f64) -> f64 {
    let (fx, fy, fz) = (x.floor(), y.floor(), z.floor());
    let (ix, iy, iz) = (fx as i64, fy as i64, fz as i64);
    let (tx, ty, tz) = (fade(x - fx), fade(y - fy), fade(z - fz));
    let mut corners = [0.0; 2];
    for (dz, slot) in corners.iter_mut().enumerate() {
        let mut rows = [0.0; 2];
        for (dy, row) in rows.iter_mut().enumerate() {
            let a = lattice(seed, ix, iy + dy as i64, iz + dz as i64);
            let b = lattice(seed, ix + 1, iy + dy as i64, iz + dz as i64);
            *row = a + (b - a) * tx;
        }
        *slot = rows[0] + (rows[1] - rows[0]) * ty;
    }
    corners[0] + (corners[1] - corners[0]) * tz
}

/// Octave sum over world position `p`, one noise cell per `scale` world
/// units, frequency doubling and amplitude halving per octave. Normalized
/// back to [0, 1].
pub(crate) fn fbm(seed: u64, p: &Vector3<f64>, scale: f64, octaves: usize) -> f64 {
    debug_assert!(scale > 0.0 && octaves >= 1);
    let q = p / scale;
    let mut sum = 0.0;
    let mut amp = 1.0;
    let mut norm = 0.0;
    let mut freq = 1.0;
    for o in 0..octaves {
        let s = seed ^ 0xD6E8_FEB8_6659_FD93u64.wrapping_mul(o as u64 + 1);
        sum += amp * value_noise(s, q.x * freq, q.y * freq, q.z * freq);
        norm += amp;
        amp *= 0.5;
        freq *= 2.0;
    }
    sum / norm
}
