//! Philox4x32-10 counter-based block function.
//!
//! Each call maps a 128-bit counter and a 64-bit key to 128 output bits. The
//! map is a bijection on the counter for a fixed key.

const M0: u32 = 0xD251_1F53;
const M1: u32 = 0xCD9E_8D57;
const W0: u32 = 0x9E37_79B9;
const W1: u32 = 0xBB67_AE85;

#[inline(always)]
fn mulhilo(a: u32, b: u32) -> (u32, u32) {
    let p = u64::from(a) * u64::from(b);
    ((p >> 32) as u32, p as u32)
}

#[inline(always)]
fn round(ctr: [u32; 4], key: [u32; 2]) -> [u32; 4] {
    let (hi0, lo0) = mulhilo(M0, ctr[0]);
    let (hi1, lo1) = mulhilo(M1, ctr[2]);
    [hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0]
}

#[inline(always)]
fn bump(key: [u32; 2]) -> [u32; 2] {
    [key[0].wrapping_add(W0), key[1].wrapping_add(W1)]
}

#[inline]
pub fn philox4x32_10(ctr: [u32; 4], k0: [u32; 2]) -> [u32; 4] {
    let k1 = bump(k0);
    let k2 = bump(k1);
    let k3 = bump(k2);
    let k4 = bump(k3);
    let k5 = bump(k4);
    let k6 = bump(k5);
    let k7 = bump(k6);
    let k8 = bump(k7);
    let k9 = bump(k8);
    let c = round(ctr, k0);
    let c = round(c, k1);
    let c = round(c, k2);
    let c = round(c, k3);
    let c = round(c, k4);
    let c = round(c, k5);
    let c = round(c, k6);
    let c = round(c, k7);
    let c = round(c, k8);
    round(c, k9)
}
