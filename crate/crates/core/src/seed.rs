//! Deterministic sub-seeds for independent random streams.

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// Seed for stream `label`/`index` under `root`.
///
/// FNV-1a over the root, label, and index bytes, then a splitmix64 finalizer
/// so nearby indices land far apart.
pub fn derive_seed(root: u64, label: &str, index: u64) -> u64 {
    let mut h = FNV_OFFSET;
    for b in root
        .to_le_bytes()
        .iter()
        .chain(label.as_bytes())
        .chain(&index.to_le_bytes())
    {
        h ^= u64::from(*b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    h = (h ^ (h >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    h = (h ^ (h >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    h ^ (h >> 31)
}
