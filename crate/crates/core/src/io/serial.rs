//! Byte-stream framing for serial links: `0xA5 | len | payload | xor(payload)`.

use serde::{Deserialize, Serialize};

use super::CodecError;

pub const FRAME_HEADER: u8 = 0xA5;
pub const MAX_PAYLOAD: usize = 255;

pub const STANDARD_BAUDS: &[u32] = &[
    1200, 2400, 4800, 9600, 19200, 38400, 57600, 115200, 230400, 460800, 921600,
];

/// Line settings. Defaults follow the reference serial echo program.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SerialConfig {
    pub port: String,
    pub speed: u32,
    pub databits: u8,
    pub stopbits: u8,
    /// 0 none, 1 odd, 2 even.
    pub parity: u8,
    pub buffer_size: usize,
}

impl Default for SerialConfig {
    fn default() -> Self {
        SerialConfig {
            port: "1".into(),
            speed: 38400,
            databits: 8,
            stopbits: 1,
            parity: 0,
            buffer_size: 512,
        }
    }
}

impl SerialConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !STANDARD_BAUDS.contains(&self.speed) {
            return Err(format!("speed {} is not a standard baud rate", self.speed));
        }
        if !(5..=8).contains(&self.databits) {
            return Err(format!("databits {} outside 5..=8", self.databits));
        }
        if !(1..=2).contains(&self.stopbits) {
            return Err(format!("stopbits {} outside 1..=2", self.stopbits));
        }
        if self.parity > 2 {
            return Err(format!("parity {} is not 0, 1 or 2", self.parity));
        }
        if self.buffer_size < 64 {
            return Err(format!("buffer_size {} is below 64", self.buffer_size));
        }
        Ok(())
    }
}

fn xor(bytes: &[u8]) -> u8 {
    bytes.iter().fold(0, |acc, b| acc ^ b)
}

pub fn serial_frame(payload: &[u8]) -> Result<Vec<u8>, CodecError> {
    if payload.len() > MAX_PAYLOAD {
        return Err(CodecError::PayloadTooLong(payload.len()));
    }
    let mut out = Vec::with_capacity(payload.len() + 3);
    out.push(FRAME_HEADER);
    out.push(payload.len() as u8);
    out.extend_from_slice(payload);
    out.push(xor(payload));
    Ok(out)
}

/// Incremental deframer with checksum-driven resynchronization.
///
/// While in sync a frame is accepted on its checksum alone. After a bad
/// header or checksum the deframer scans byte by byte for the next `0xA5`,
/// and only re-locks on a candidate that is itself followed by a header
/// byte (or by end of stream, see [`Deframer::finish`]). `corrupt_frames`
/// counts loss-of-sync episodes, so adjacent damaged frames count once.
#[derive(Debug, Clone)]
pub struct Deframer {
    buf: Vec<u8>,
    expected_len: Option<u8>,
    in_sync: bool,
    corrupt: u64,
}

impl Default for Deframer {
    fn default() -> Self {
        Deframer::new()
    }
}

impl Deframer {
    pub fn new() -> Self {
        Deframer {
            buf: Vec::new(),
            expected_len: None,
            in_sync: true,
            corrupt: 0,
        }
    }

    /// Rejects frames whose length byte differs from `len`.
    pub fn with_expected_len(len: u8) -> Self {
        Deframer {
            expected_len: Some(len),
            ..Deframer::new()
        }
    }

    pub fn corrupt_frames(&self) -> u64 {
        self.corrupt
    }

    pub fn in_sync(&self) -> bool {
        self.in_sync
    }

    /// Bytes held back waiting for the rest of a frame.
    pub fn pending(&self) -> usize {
        self.buf.len()
    }

    pub fn push(&mut self, bytes: &[u8]) -> Vec<Vec<u8>> {
        self.buf.extend_from_slice(bytes);
        self.drain(false)
    }

    /// Flushes at end of stream, resolving any candidate still waiting.
    pub fn finish(&mut self) -> Vec<Vec<u8>> {
        let out = self.drain(true);
        if !self.buf.is_empty() {
            self.lose_sync();
            self.buf.clear();
        }
        out
    }

    fn lose_sync(&mut self) {
        if self.in_sync {
            self.in_sync = false;
            self.corrupt += 1;
        }
    }

    fn drain(&mut self, eof: bool) -> Vec<Vec<u8>> {
        let mut out = Vec::new();
        let mut pos = 0;
        loop {
            match self.buf[pos..].iter().position(|&b| b == FRAME_HEADER) {
                None => {
                    if pos < self.buf.len() {
                        self.lose_sync();
                    }
                    pos = self.buf.len();
                    break;
                }
                Some(skip) => {
                    if skip > 0 {
                        self.lose_sync();
                    }
                    pos += skip;
                }
            }
            let rest = &self.buf[pos..];
            if rest.len() < 2 {
                if eof && !rest.is_empty() {
                    self.lose_sync();
                    pos = self.buf.len();
                }
                break;
            }
            let len = rest[1] as usize;
            if self.expected_len.is_some_and(|want| want as usize != len) {
                self.lose_sync();
                pos += 1;
                continue;
            }
            let total = len + 3;
            if rest.len() < total {
                if eof {
                    self.lose_sync();
                    pos += 1;
                    continue;
                }
                break;
            }
            let payload = &rest[2..2 + len];
            if xor(payload) != rest[2 + len] {
                self.lose_sync();
                pos += 1;
                continue;
            }
            if !self.in_sync {
                match rest.get(total) {
                    Some(&FRAME_HEADER) => {}
                    Some(_) => {
                        pos += 1;
                        continue;
                    }
                    None if eof => {}
                    None => break,
                }
            }
            out.push(payload.to_vec());
            self.in_sync = true;
            pos += total;
        }
        self.buf.drain(..pos);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn frame_examples() {
        assert_eq!(serial_frame(&[0x01, 0x02]).unwrap(), vec![0xA5, 0x02, 0x01, 0x02, 0x03]);
        assert_eq!(serial_frame(&[]).unwrap(), vec![0xA5, 0x00, 0x00]);
        assert_eq!(serial_frame(&[0u8; 256]), Err(CodecError::PayloadTooLong(256)));
        assert_eq!(serial_frame(&[7u8; 255]).unwrap().len(), 258);
    }

    #[test]
    fn back_to_back_frames() {
        let mut d = Deframer::new();
        let mut stream = serial_frame(b"abc").unwrap();
        stream.extend(serial_frame(b"de").unwrap());
        assert_eq!(d.push(&stream), vec![b"abc".to_vec(), b"de".to_vec()]);
        assert_eq!(d.corrupt_frames(), 0);
    }

    #[test]
    fn byte_at_a_time() {
        let mut d = Deframer::new();
        let stream = serial_frame(b"hello").unwrap();
        let mut got = Vec::new();
        for b in &stream {
            got.extend(d.push(&[*b]));
        }
        assert_eq!(got, vec![b"hello".to_vec()]);
    }

    #[test]
    fn garbage_between_frames() {
        let mut d = Deframer::new();
        let mut stream = serial_frame(&[1, 2]).unwrap();
        stream.extend([0x11, 0x22, 0x33]);
        stream.extend(serial_frame(&[3, 4]).unwrap());
        let mut got = d.push(&stream);
        got.extend(d.finish());
        assert_eq!(got, vec![vec![1, 2], vec![3, 4]]);
        assert!(d.corrupt_frames() >= 1);
    }

    #[test]
    fn bad_checksum_dropped() {
        let mut d = Deframer::new();
        let mut bad = serial_frame(&[9, 9, 9]).unwrap();
        *bad.last_mut().unwrap() ^= 0xFF;
        let mut stream = bad;
        stream.extend(serial_frame(&[5]).unwrap());
        stream.extend(serial_frame(&[6]).unwrap());
        let got = d.push(&stream);
        assert_eq!(got, vec![vec![5], vec![6]]);
        assert_eq!(d.corrupt_frames(), 1);
    }

    #[test]
    fn false_header_with_long_length_resolved_at_eof() {
        let mut d = Deframer::new();
        let mut stream = vec![0xA5, 0xF0, 0x00];
        stream.extend(serial_frame(&[1]).unwrap());
        assert!(d.push(&stream).is_empty());
        assert_eq!(d.finish(), vec![vec![1]]);
    }

    #[test]
    fn expected_length_rejects_other_sizes() {
        let mut d = Deframer::with_expected_len(2);
        let mut stream = serial_frame(&[1, 2, 3]).unwrap();
        stream.extend(serial_frame(&[4, 5]).unwrap());
        let mut got = d.push(&stream);
        got.extend(d.finish());
        assert_eq!(got, vec![vec![4, 5]]);
        assert_eq!(d.corrupt_frames(), 1);
    }

    #[test]
    fn serial_defaults() {
        let c = SerialConfig::default();
        assert_eq!((c.speed, c.databits, c.stopbits, c.parity, c.buffer_size), (38400, 8, 1, 0, 512));
        assert!(c.validate().is_ok());
        assert!(SerialConfig { speed: 12345, ..c.clone() }.validate().is_err());
        assert!(SerialConfig { buffer_size: 32, ..c }.validate().is_err());
    }

    proptest! {
        #[test]
        fn recovers_every_frame_after_last_garbage(
            prefix in prop::collection::vec(prop::collection::vec(any::<u8>(), 0..40), 0..5),
            garbage in prop::collection::vec(prop::collection::vec(any::<u8>(), 1..20), 0..5),
            tail in prop::collection::vec(prop::collection::vec(any::<u8>(), 0..40), 1..6),
            chunk in 1usize..64,
        ) {
            let mut stream = Vec::new();
            for (i, p) in prefix.iter().enumerate() {
                stream.extend(serial_frame(p).unwrap());
                if let Some(g) = garbage.get(i) {
                    stream.extend(g);
                }
            }
            for g in garbage.iter().skip(prefix.len()) {
                stream.extend(g);
            }
            for p in &tail {
                stream.extend(serial_frame(p).unwrap());
            }
            let mut d = Deframer::new();
            let mut got = Vec::new();
            for c in stream.chunks(chunk) {
                got.extend(d.push(c));
            }
            got.extend(d.finish());
            prop_assert!(got.len() >= tail.len());
            prop_assert_eq!(&got[got.len() - tail.len()..], &tail[..]);
        }
    }
}
