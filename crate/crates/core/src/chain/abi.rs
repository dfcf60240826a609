//! Minimal ABI encoding for the handful of read calls the client issues.

use crate::primitives::{Address, Selector, U256};

pub const BALANCE_OF: Selector = Selector([0x70, 0xa0, 0x82, 0x31]);
pub const GET_RESERVES: Selector = Selector([0x09, 0x02, 0xf1, 0xac]);
pub const TOKEN0: Selector = Selector([0x0d, 0xfe, 0x16, 0x81]);
pub const TOKEN1: Selector = Selector([0xd2, 0x12, 0x20, 0xa7]);
pub const SYMBOL: Selector = Selector([0x95, 0xd8, 0x9b, 0x41]);
pub const NAME: Selector = Selector([0x06, 0xfd, 0xde, 0x03]);
pub const DECIMALS: Selector = Selector([0x31, 0x3c, 0xe5, 0x67]);
pub const GET_PAIR: Selector = Selector([0xe6, 0xa4, 0x39, 0x05]);

/// `keccak256("Sync(uint112,uint112)")`, topic of reserve updates.
pub const SYNC_TOPIC: [u8; 32] = [
    0x1c, 0x41, 0x1e, 0x9a, 0x96, 0xe0, 0x71, 0x24, 0x1c, 0x2f, 0x21, 0xf7, 0x72, 0x6b, 0x17, 0xae, 0x89, 0xe3, 0xca,
    0xb4, 0xc7, 0x8b, 0xe5, 0x0e, 0x06, 0x2b, 0x03, 0xa9, 0xff, 0xfb, 0xba, 0xd1,
];

pub fn encode_call(selector: Selector, args: &[[u8; 32]]) -> Vec<u8> {
    let mut out = Vec::with_capacity(4 + 32 * args.len());
    out.extend_from_slice(&selector.0);
    for a in args {
        out.extend_from_slice(a);
    }
    out
}

pub fn balance_of_calldata(owner: Address) -> Vec<u8> {
    encode_call(BALANCE_OF, &[owner.to_word()])
}

pub fn uint_word(value: U256) -> [u8; 32] {
    let mut w = [0u8; 32];
    value.to_big_endian(&mut w);
    w
}

pub fn word(data: &[u8], index: usize) -> Option<[u8; 32]> {
    data.get(index * 32..index * 32 + 32)?.try_into().ok()
}

pub fn decode_uint(data: &[u8], index: usize) -> Option<U256> {
    word(data, index).map(|w| U256::from_big_endian(&w))
}

pub fn decode_address(data: &[u8], index: usize) -> Option<Address> {
    word(data, index).map(|w| Address::from_word(&w))
}

/// Decodes a return value that is either an ABI `string` or a `bytes32`
/// (older tokens). Invalid UTF-8 is replaced; trailing NULs are trimmed.
pub fn decode_text(data: &[u8]) -> Option<String> {
    let raw: &[u8] = if data.len() == 32 {
        data
    } else {
        let offset = decode_uint(data, 0)?;
        if offset > U256::from(data.len()) {
            return None;
        }
        let offset = offset.as_usize();
        let len = U256::from_big_endian(data.get(offset..offset + 32)?);
        if len > U256::from(data.len()) {
            return None;
        }
        data.get(offset + 32..offset + 32 + len.as_usize())?
    };
    let trimmed: &[u8] = match raw.iter().rposition(|b| *b != 0) {
        Some(end) => &raw[..=end],
        None => &[],
    };
    Some(String::from_utf8_lossy(trimmed).into_owned())
}

/// ABI encoding of a `string` return value.
pub fn encode_string(bytes: &[u8]) -> Vec<u8> {
    let mut out = uint_word(U256::from(32)).to_vec();
    out.extend_from_slice(&uint_word(U256::from(bytes.len())));
    out.extend_from_slice(bytes);
    let pad = (32 - bytes.len() % 32) % 32;
    out.extend(std::iter::repeat_n(0u8, pad));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::primitives::{decode_hex, keccak256};

    #[test]
    fn selectors_match_keccak() {
        for (sel, sig) in [
            (BALANCE_OF, "balanceOf(address)"),
            (GET_RESERVES, "getReserves()"),
            (TOKEN0, "token0()"),
            (TOKEN1, "token1()"),
            (SYMBOL, "symbol()"),
            (NAME, "name()"),
            (DECIMALS, "decimals()"),
            (GET_PAIR, "getPair(address,address)"),
        ] {
            assert_eq!(sel, Selector::of_signature(sig), "{sig}");
        }
        assert_eq!(SYNC_TOPIC, keccak256(b"Sync(uint112,uint112)"));
    }

    #[test]
    fn balance_of_layout() {
        // Expected bytes written out by hand from the ABI rule: selector,
        // 12 zero bytes, then the 20 address bytes.
        let owner: Address = "0x00000000219ab540356cbb839cbe05303d7705fa".parse().unwrap();
        let expected =
            decode_hex("0x70a0823100000000000000000000000000000000219ab540356cbb839cbe05303d7705fa").unwrap();
        let data = balance_of_calldata(owner);
        assert_eq!(data.len(), 36);
        assert_eq!(data, expected);
    }

    #[test]
    fn text_decoding_variants() {
        assert_eq!(decode_text(&encode_string(b"WETH")).as_deref(), Some("WETH"));
        let mut b32 = [0u8; 32];
        b32[..3].copy_from_slice(b"MKR");
        assert_eq!(decode_text(&b32).as_deref(), Some("MKR"));
        assert_eq!(decode_text(&encode_string(&[0x57, 0xff, 0x45])).as_deref(), Some("W\u{fffd}E"));
        assert_eq!(decode_text(&[1, 2, 3]), None);
        let long = encode_string(&[b'x'; 40]);
        assert_eq!(decode_text(&long).unwrap().len(), 40);
    }
}
