//! Length-prefixed frames: a 4-byte big-endian payload length, then the payload.

use std::io::{self, Read, Write};

use thiserror::Error;

pub const MAX_FRAME: usize = 64 * 1024 * 1024;
pub const PREFIX_LEN: usize = 4;

#[derive(Debug, Error)]
pub enum FrameError {
    #[error("frame of {0} bytes exceeds the {MAX_FRAME} byte limit")]
    TooLarge(usize),
    #[error("stream ended inside a frame")]
    Truncated,
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Size on the wire of a frame carrying `payload_len` bytes.
pub fn frame_len(payload_len: usize) -> usize {
    PREFIX_LEN + payload_len
}

pub fn encode_frame(payload: &[u8]) -> Result<Vec<u8>, FrameError> {
    if payload.len() > MAX_FRAME {
        return Err(FrameError::TooLarge(payload.len()));
    }
    let mut out = Vec::with_capacity(frame_len(payload.len()));
    out.extend_from_slice(&(payload.len() as u32).to_be_bytes());
    out.extend_from_slice(payload);
    Ok(out)
}

/// Splits one frame off the front of `buf`, returning the payload and the
/// number of bytes consumed.
pub fn decode_frame(buf: &[u8]) -> Result<(&[u8], usize), FrameError> {
    let prefix: [u8; PREFIX_LEN] = buf
        .get(..PREFIX_LEN)
        .ok_or(FrameError::Truncated)?
        .try_into()
        .expect("slice has prefix length");
    let len = u32::from_be_bytes(prefix) as usize;
    if len > MAX_FRAME {
        return Err(FrameError::TooLarge(len));
    }
    let payload = buf.get(PREFIX_LEN..PREFIX_LEN + len).ok_or(FrameError::Truncated)?;
    Ok((payload, PREFIX_LEN + len))
}

pub fn write_frame(w: &mut impl Write, payload: &[u8]) -> Result<usize, FrameError> {
    let frame = encode_frame(payload)?;
    w.write_all(&frame)?;
    w.flush()?;
    Ok(frame.len())
}

/// Reads the next frame. `Ok(None)` on a clean end of stream between frames.
pub fn read_frame(r: &mut impl Read) -> Result<Option<Vec<u8>>, FrameError> {
    let mut prefix = [0u8; PREFIX_LEN];
    let mut filled = 0;
    while filled < PREFIX_LEN {
        match r.read(&mut prefix[filled..]) {
            Ok(0) if filled == 0 => return Ok(None),
            Ok(0) => return Err(FrameError::Truncated),
            Ok(n) => filled += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    let len = u32::from_be_bytes(prefix) as usize;
    if len > MAX_FRAME {
        return Err(FrameError::TooLarge(len));
    }
    let mut payload = vec![0u8; len];
    r.read_exact(&mut payload).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => FrameError::Truncated,
        _ => FrameError::Io(e),
    })?;
    Ok(Some(payload))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn prefix_is_big_endian_length() {
        assert_eq!(encode_frame(b"abc").unwrap(), [0, 0, 0, 3, b'a', b'b', b'c']);
        assert_eq!(encode_frame(b"").unwrap(), [0, 0, 0, 0]);
    }

    #[test]
    fn oversized_prefix_is_rejected_without_allocating() {
        let mut bad = (MAX_FRAME as u32 + 1).to_be_bytes().to_vec();
        bad.extend_from_slice(b"xx");
        assert!(matches!(read_frame(&mut &bad[..]), Err(FrameError::TooLarge(_))));
        assert!(matches!(decode_frame(&bad), Err(FrameError::TooLarge(_))));
    }

    #[test]
    fn truncation_is_detected() {
        let frame = encode_frame(b"hello").unwrap();
        assert!(matches!(read_frame(&mut &frame[..6]), Err(FrameError::Truncated)));
        assert!(matches!(read_frame(&mut &frame[..2]), Err(FrameError::Truncated)));
        assert!(read_frame(&mut &[][..]).unwrap().is_none());
    }

    #[test]
    fn consecutive_frames_stay_in_order() {
        let mut buf = Vec::new();
        write_frame(&mut buf, b"one").unwrap();
        write_frame(&mut buf, b"two").unwrap();
        let mut r = &buf[..];
        assert_eq!(read_frame(&mut r).unwrap().unwrap(), b"one");
        assert_eq!(read_frame(&mut r).unwrap().unwrap(), b"two");
        assert!(read_frame(&mut r).unwrap().is_none());
    }

    proptest! {
        #[test]
        fn frame_round_trip(payload in proptest::collection::vec(any::<u8>(), 0..4096)) {
            let frame = encode_frame(&payload).unwrap();
            prop_assert_eq!(frame.len(), frame_len(payload.len()));
            let (decoded, used) = decode_frame(&frame).unwrap();
            prop_assert_eq!(decoded, &payload[..]);
            prop_assert_eq!(used, frame.len());
            prop_assert_eq!(read_frame(&mut &frame[..]).unwrap().unwrap(), payload);
        }
    }
}
