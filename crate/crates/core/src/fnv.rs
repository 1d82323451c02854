//! 64-bit FNV-1a over token ids in little-endian byte order.

use crate::Token;

const OFFSET_BASIS: u64 = 0xcbf2_9ce4_8422_2325;
const PRIME: u64 = 0x0000_0100_0000_01b3;

#[derive(Debug, Clone, Copy)]
pub struct Fnv1a(u64);

impl Default for Fnv1a {
    fn default() -> Self {
        Fnv1a(OFFSET_BASIS)
    }
}

impl Fnv1a {
    pub fn write(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 ^= u64::from(b);
            self.0 = self.0.wrapping_mul(PRIME);
        }
    }

    pub fn write_tokens(&mut self, tokens: &[Token]) {
        for t in tokens {
            self.write(&t.to_le_bytes());
        }
    }

    pub fn finish(self) -> u64 {
        self.0
    }
}

/// Hash of an n-gram key as used for bucket selection.
pub fn hash_tokens(tokens: &[Token]) -> u64 {
    let mut h = Fnv1a::default();
    h.write_tokens(tokens);
    h.finish()
}
