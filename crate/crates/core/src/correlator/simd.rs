//! Inner loop of the correlator: products of pixel rows accumulated in
//! 32-bit lanes.
//!
//! Each input word packs two 16-bit gray levels from consecutive frames,
//! so a single multiply-add covers two frame products.

pub(super) const LANES: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(super) enum Isa {
    Portable,
    #[cfg(target_arch = "x86_64")]
    Avx2,
    #[cfg(target_arch = "x86_64")]
    Avx512,
}

impl Isa {
    pub(super) fn detect() -> Self {
        #[cfg(target_arch = "x86_64")]
        {
            if std::arch::is_x86_feature_detected!("avx512f") && std::arch::is_x86_feature_detected!("avx512bw") {
                return Isa::Avx512;
            }
            if std::arch::is_x86_feature_detected!("avx2") {
                return Isa::Avx2;
            }
        }
        Isa::Portable
    }
}

#[inline(always)]
fn dot2(a: u32, b: u32) -> u32 {
    (a & 0xffff) * (b & 0xffff) + (a >> 16) * (b >> 16)
}

/// For every chunk `c` and shift `k < t.len() / chunks`:
/// `t[k * chunks + c][i] = sum over (pa, pb) in pairs of
/// dot2(words[pa + c * LANES + i], words[pb + c * LANES + k + i])`,
/// where `dot2` multiplies the low halves and the high halves of two words
/// and adds both products.
///
/// The caller guarantees every half is below `2^15` and that no lane
/// overflows.
pub(super) fn madd_pairs(isa: Isa, words: &[u32], pairs: &[(usize, usize)], chunks: usize, t: &mut [[u32; LANES]]) {
    let n_dx = t.len() / chunks;
    assert!(t.len() == n_dx * chunks && n_dx > 0);
    for &(pa, pb) in pairs {
        assert!(pa + chunks * LANES <= words.len() && pb + chunks * LANES + n_dx - 1 <= words.len());
    }
    match isa {
        Isa::Portable => madd_portable(words, pairs, chunks, t),
        // SAFETY: the variant is only constructed after feature detection,
        // and the asserts above keep every load in bounds.
        #[cfg(target_arch = "x86_64")]
        Isa::Avx2 | Isa::Avx512 => unsafe { x86::madd(isa, words, pairs, chunks, t) },
    }
}

fn madd_portable(words: &[u32], pairs: &[(usize, usize)], chunks: usize, t: &mut [[u32; LANES]]) {
    t.fill([0; LANES]);
    for &(pa, pb) in pairs {
        for (j, lanes) in t.iter_mut().enumerate() {
            let (k, c) = (j / chunks, j % chunks);
            let a = &words[pa + c * LANES..pa + (c + 1) * LANES];
            let b = &words[pb + c * LANES + k..pb + c * LANES + k + LANES];
            for ((t, &a), &b) in lanes.iter_mut().zip(a).zip(b) {
                *t = t.wrapping_add(dot2(a, b));
            }
        }
    }
}

#[cfg(target_arch = "x86_64")]
mod x86 {
    use std::arch::x86_64::*;

    use super::{Isa, LANES};

    /// Shifts kept in registers at once.
    const BLOCK: usize = 8;

    pub(super) unsafe fn madd(isa: Isa, words: &[u32], pairs: &[(usize, usize)], chunks: usize, t: &mut [[u32; LANES]]) {
        let n_dx = t.len() / chunks;
        for c in 0..chunks {
            let mut k0 = 0;
            while k0 < n_dx {
                let kb = (n_dx - k0).min(BLOCK);
                macro_rules! go {
                    ($($n:literal)*) => {
                        match kb {
                            $($n => match isa {
                                Isa::Avx512 => block512::<$n>(words, pairs, c, k0, chunks, t),
                                _ => block256::<$n>(words, pairs, c, k0, chunks, t),
                            },)*
                            _ => unreachable!(),
                        }
                    };
                }
                go!(1 2 3 4 5 6 7 8);
                k0 += kb;
            }
        }
    }

    #[target_feature(enable = "avx512f,avx512bw")]
    unsafe fn block512<const KB: usize>(
        words: &[u32],
        pairs: &[(usize, usize)],
        c: usize,
        k0: usize,
        chunks: usize,
        t: &mut [[u32; LANES]],
    ) {
        let w = words.as_ptr();
        let mut acc = [_mm512_setzero_si512(); KB];
        for &(pa, pb) in pairs {
            let a = _mm512_loadu_si512(w.add(pa + c * LANES).cast());
            let b = w.add(pb + c * LANES + k0);
            for (j, acc) in acc.iter_mut().enumerate() {
                *acc = _mm512_add_epi32(*acc, _mm512_madd_epi16(a, _mm512_loadu_si512(b.add(j).cast())));
            }
        }
        for (j, acc) in acc.iter().enumerate() {
            _mm512_storeu_si512(t[(k0 + j) * chunks + c].as_mut_ptr().cast(), *acc);
        }
    }

    #[target_feature(enable = "avx2")]
    unsafe fn block256<const KB: usize>(
        words: &[u32],
        pairs: &[(usize, usize)],
        c: usize,
        k0: usize,
        chunks: usize,
        t: &mut [[u32; LANES]],
    ) {
        let w = words.as_ptr();
        let mut lo = [_mm256_setzero_si256(); KB];
        let mut hi = [_mm256_setzero_si256(); KB];
        for &(pa, pb) in pairs {
            let a0 = _mm256_loadu_si256(w.add(pa + c * LANES).cast());
            let a1 = _mm256_loadu_si256(w.add(pa + c * LANES + 8).cast());
            let b = w.add(pb + c * LANES + k0);
            for j in 0..KB {
                lo[j] = _mm256_add_epi32(lo[j], _mm256_madd_epi16(a0, _mm256_loadu_si256(b.add(j).cast())));
                hi[j] = _mm256_add_epi32(hi[j], _mm256_madd_epi16(a1, _mm256_loadu_si256(b.add(j + 8).cast())));
            }
        }
        for j in 0..KB {
            let out = t[(k0 + j) * chunks + c].as_mut_ptr().cast::<__m256i>();
            _mm256_storeu_si256(out, lo[j]);
            _mm256_storeu_si256(out.add(1), hi[j]);
        }
    }
}
