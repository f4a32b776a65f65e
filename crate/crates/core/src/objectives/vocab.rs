//! Ids `0` and `1` are pad and end-of-sequence, bytes occupy `2..258` and
//! the 100 sentinels follow at `258..358`.

pub const PAD_ID: u32 = 0;
pub const EOS_ID: u32 = 1;
/// Id of byte `0`.
pub const BYTE_OFFSET: u32 = 2;
pub const NUM_SENTINELS: u32 = 100;
pub const SENTINEL_BASE: u32 = BYTE_OFFSET + 256;
pub const VOCAB_SIZE: usize = (SENTINEL_BASE + NUM_SENTINELS) as usize;

pub fn sentinel(i: usize) -> u32 {
    assert!(i < NUM_SENTINELS as usize, "sentinel {i} out of range");
    SENTINEL_BASE + i as u32
}

pub fn sentinel_index(id: u32) -> Option<usize> {
    (SENTINEL_BASE..SENTINEL_BASE + NUM_SENTINELS)
        .contains(&id)
        .then(|| (id - SENTINEL_BASE) as usize)
}

pub fn byte_of(id: u32) -> Option<u8> {
    (BYTE_OFFSET..SENTINEL_BASE)
        .contains(&id)
        .then(|| (id - BYTE_OFFSET) as u8)
}

pub fn tokenize(text: &str) -> Vec<u32> {
    text.bytes().map(|b| u32::from(b) + BYTE_OFFSET).collect()
}

/// Text for `ids`. Specials become `[pad]`, `[eos]` and `[sentinel_N]`;
/// byte runs that are not valid UTF-8 are replaced lossily.
pub fn detokenize(ids: &[u32]) -> String {
    let mut out = String::new();
    let mut bytes = Vec::new();
    let flush = |bytes: &mut Vec<u8>, out: &mut String| {
        out.push_str(&String::from_utf8_lossy(bytes));
        bytes.clear();
    };
    for &id in ids {
        if let Some(b) = byte_of(id) {
            bytes.push(b);
            continue;
        }
        flush(&mut bytes, &mut out);
        match (id, sentinel_index(id)) {
            (PAD_ID, _) => out.push_str("[pad]"),
            (EOS_ID, _) => out.push_str("[eos]"),
            (_, Some(i)) => out.push_str(&format!("[sentinel_{i}]")),
            _ => out.push_str(&format!("[unk_{id}]")),
        }
    }
    flush(&mut bytes, &mut out);
    out
}
