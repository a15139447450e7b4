//! MQ135 analog channel: each sample is the converter count as a big-endian
//! u16, so converters up to 16 bits fit.

pub const SAMPLE_LEN: usize = 2;

pub fn encode(count: u16) -> [u8; SAMPLE_LEN] {
    count.to_be_bytes()
}

/// The most recent complete sample in a chunk, and whether the chunk held a
/// dangling partial sample.
pub fn last_sample(chunk: &[u8]) -> (Option<u16>, bool) {
    let ragged = !chunk.len().is_multiple_of(SAMPLE_LEN);
    let last = chunk
        .chunks_exact(SAMPLE_LEN)
        .last()
        .map(|c| u16::from_be_bytes([c[0], c[1]]));
    (last, ragged)
}
