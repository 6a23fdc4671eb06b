//! The fixed key hash shared by the concurrent table and the serial oracle.

/// 64-bit avalanche finalizer (MurmurHash3 `fmix64`).
#[inline]
pub fn mix64(mut x: u64) -> u64 {
    x ^= x >> 33;
    x = x.wrapping_mul(0xff51_afd7_ed55_8ccd);
    x ^= x >> 33;
    x = x.wrapping_mul(0xc4ce_b9fe_1a85_ec53);
    x ^= x >> 33;
    x
}

/// Home bucket of `key` in a table of `mask + 1` cells.
#[inline]
pub fn home_bucket(key: u64, mask: usize) -> usize {
    (mix64(key) as usize) & mask
}

/// Distance from `key`'s home bucket to `index`, modulo the capacity.
#[inline]
pub fn distance(key: u64, index: usize, mask: usize) -> usize {
    index.wrapping_sub(home_bucket(key, mask)) & mask
}

/// Smallest keys `>= from` whose home bucket is `bucket`; used to build
/// scripted layouts.
pub fn keys_with_home(bucket: usize, mask: usize, from: u64) -> impl Iterator<Item = u64> {
    (from.max(1)..).filter(move |&k| home_bucket(k, mask) == bucket)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mix64_reference_values() {
        assert_eq!(mix64(0), 0);
        // Reference outputs of MurmurHash3 fmix64.
        assert_eq!(mix64(1), 0xb456_bcfc_34c2_cb2c);
        assert_eq!(mix64(2), 0x3abf_2a20_6506_83e7);
    }

    #[test]
    fn distance_at_home_and_wrapping() {
        let mask = 7;
        let k5 = keys_with_home(5, mask, 1).next().unwrap();
        let k6 = keys_with_home(6, mask, 1).next().unwrap();
        assert_eq!(distance(k5, 5, mask), 0);
        assert_eq!(distance(k5, 7, mask), 2);
        assert_eq!(distance(k6, 1, mask), 3);
    }
}
