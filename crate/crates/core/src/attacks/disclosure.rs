use crate::catmap::{permute, KeySet};

use super::AttackError;

/// Simulates a contiguous dump of physical data memory and scores how much
/// program order it leaks.
///
/// The score is the fraction of physically adjacent word pairs in the dump
/// that are also logically adjacent. A dump with fewer than two words scores
/// 0.
pub fn disclosure_sim(data_key: &KeySet, start: usize, len: usize) -> Result<f64, AttackError> {
    let inv = permute(data_key).map_err(crate::transform::TransformError::from)?.inverse();
    let size = inv.len();
    if start.checked_add(len).is_none_or(|end| end > size) {
        return Err(AttackError::DumpRange { start, len, size });
    }
    if len < 2 {
        return Ok(0.0);
    }
    let kept = (start..start + len - 1).filter(|&a| inv.get(a).abs_diff(inv.get(a + 1)) == 1).count();
    Ok(kept as f64 / (len - 1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catmap::{addr_from_2d, addr_to_2d, map_point};

    #[test]
    fn identity_leaks_everything() {
        let key = KeySet::identity(16).unwrap();
        assert_eq!(disclosure_sim(&key, 0, 256).unwrap(), 1.0);
        assert_eq!(disclosure_sim(&key, 17, 9).unwrap(), 1.0);
    }

    #[test]
    fn single_word_scores_zero() {
        assert_eq!(disclosure_sim(&KeySet::new(2, 1, 1, 16).unwrap(), 3, 1).unwrap(), 0.0);
    }

    #[test]
    fn range_checked() {
        let key = KeySet::new(2, 1, 1, 16).unwrap();
        assert!(disclosure_sim(&key, 250, 7).is_err());
        assert!(disclosure_sim(&key, 250, 6).is_ok());
    }

    #[test]
    fn full_dump_matches_pair_enumeration() {
        let key = KeySet::new(2, 1, 1, 16).unwrap();
        let phys = |a: usize| addr_from_2d(map_point(addr_to_2d(a, 16).unwrap(), &key), 16);
        let pairs = (0..255).filter(|&a| phys(a).abs_diff(phys(a + 1)) == 1).count();
        assert_eq!(disclosure_sim(&key, 0, 256).unwrap(), pairs as f64 / 255.0);
    }
}
