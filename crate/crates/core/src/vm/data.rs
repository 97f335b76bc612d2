//! Chaotic translation of data addresses at address-space granularity.

use crate::catmap::{permute, CatMapError, KeySet, Permutation};

use super::DATA_SIDE;

/// Maps a logical data address through the data key's permutation.
pub fn translate_data(addr: usize, data_key: &KeySet) -> Result<usize, CatMapError> {
    let perm = permute(data_key)?;
    if addr >= perm.len() {
        return Err(CatMapError::OutOfRange { addr, cells: perm.len() });
    }
    Ok(perm.get(addr))
}

/// Default data key: identity over the 64 x 64 data grid.
pub fn identity_data_key() -> KeySet {
    KeySet::identity(DATA_SIDE).expect("static key")
}

/// Fraction of logically adjacent address pairs `(a, a + 1)` whose physical
/// addresses differ by exactly one.
pub fn adjacency_preservation(perm: &Permutation) -> f64 {
    let pairs = perm.len().saturating_sub(1);
    if pairs == 0 {
        return 0.0;
    }
    let kept = (0..pairs).filter(|&a| perm.get(a).abs_diff(perm.get(a + 1)) == 1).count();
    kept as f64 / pairs as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catmap::{addr_from_2d, addr_to_2d, map_point};

    #[test]
    fn identity_key_is_transparent() {
        let key = identity_data_key();
        for a in [0, 1, 63, 64, 4095] {
            assert_eq!(translate_data(a, &key).unwrap(), a);
        }
        assert!(translate_data(4096, &key).is_err());
    }

    #[test]
    fn adjacency_matches_pair_scan() {
        let key = KeySet::new(2, 1, 1, 16).unwrap();
        // oracle: walk each logical pair through the point map directly
        let phys = |a: usize| addr_from_2d(map_point(addr_to_2d(a, 16).unwrap(), &key), 16);
        let kept = (0..255).filter(|&a| phys(a).abs_diff(phys(a + 1)) == 1).count();
        let want = kept as f64 / 255.0;
        assert_eq!(adjacency_preservation(&permute(&key).unwrap()), want);
        assert_eq!(adjacency_preservation(&Permutation::identity(256)), 1.0);
    }
}
