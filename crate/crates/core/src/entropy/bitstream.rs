//! The `.mdn` file: a 19-byte header followed by four length-prefixed chunks
//! (ModeNet hyper, ModeNet main, CodecNet hyper, CodecNet main).

use super::EntropyError;

pub const MAGIC: &[u8; 4] = b"MDN1";
pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 19;
pub const CHUNKS: usize = 4;

pub const FLAG_MODENET: u8 = 1;
pub const FLAG_CONTEXT: u8 = 2;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Header {
    pub version: u8,
    /// 0 image, 1 difference, 2 conditional.
    pub codec_config: u8,
    pub flags: u8,
    pub width: u16,
    pub height: u16,
    pub model_hash: [u8; 8],
}

impl Header {
    pub fn modenet_present(&self) -> bool {
        self.flags & FLAG_MODENET != 0
    }

    pub fn context_model(&self) -> bool {
        self.flags & FLAG_CONTEXT != 0
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Bitstream {
    pub header: Header,
    pub chunks: [Vec<u8>; CHUNKS],
}

fn bad(msg: impl Into<String>) -> EntropyError {
    EntropyError::Bitstream(msg.into())
}

impl Bitstream {
    pub fn to_bytes(&self) -> Result<Vec<u8>, EntropyError> {
        let h = &self.header;
        let mut out = Vec::with_capacity(self.byte_len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&[h.version, h.codec_config, h.flags]);
        out.extend_from_slice(&h.width.to_be_bytes());
        out.extend_from_slice(&h.height.to_be_bytes());
        out.extend_from_slice(&h.model_hash);
        for c in &self.chunks {
            let n = u32::try_from(c.len()).map_err(|_| bad("chunk larger than 4 GiB"))?;
            out.extend_from_slice(&n.to_be_bytes());
            out.extend_from_slice(c);
        }
        Ok(out)
    }

    /// Serialized size in bytes.
    pub fn byte_len(&self) -> usize {
        HEADER_LEN + self.chunks.iter().map(|c| 4 + c.len()).sum::<usize>()
    }

    /// Bits after the fixed header (chunk lengths included) per pixel of the
    /// original frame.
    pub fn bpp(&self) -> f64 {
        let px = self.header.width as f64 * self.header.height as f64;
        (self.byte_len() - HEADER_LEN) as f64 * 8.0 / px
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, EntropyError> {
        if bytes.len() < HEADER_LEN {
            return Err(bad("shorter than the header"));
        }
        if &bytes[..4] != MAGIC {
            return Err(bad("bad magic"));
        }
        let header = Header {
            version: bytes[4],
            codec_config: bytes[5],
            flags: bytes[6],
            width: u16::from_be_bytes([bytes[7], bytes[8]]),
            height: u16::from_be_bytes([bytes[9], bytes[10]]),
            model_hash: bytes[11..19].try_into().unwrap(),
        };
        if header.version != VERSION {
            return Err(bad(format!("unsupported version {}", header.version)));
        }
        if header.codec_config > 2 {
            return Err(bad(format!("unknown codec config {}", header.codec_config)));
        }
        if header.flags & !(FLAG_MODENET | FLAG_CONTEXT) != 0 {
            return Err(bad(format!("unknown flag bits {:#04x}", header.flags)));
        }
        if header.width == 0 || header.height == 0 {
            return Err(bad("zero frame dimension"));
        }
        let mut pos = HEADER_LEN;
        let mut chunks: [Vec<u8>; CHUNKS] = Default::default();
        for (i, chunk) in chunks.iter_mut().enumerate() {
            let len_bytes = bytes.get(pos..pos + 4).ok_or_else(|| bad(format!("chunk {i} length missing")))?;
            let n = u32::from_be_bytes(len_bytes.try_into().unwrap()) as usize;
            pos += 4;
            let data = bytes.get(pos..pos + n).ok_or_else(|| bad(format!("chunk {i} truncated")))?;
            *chunk = data.to_vec();
            pos += n;
        }
        if pos != bytes.len() {
            return Err(bad(format!("{} trailing bytes", bytes.len() - pos)));
        }
        Ok(Bitstream { header, chunks })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Bitstream {
        Bitstream {
            header: Header {
                version: VERSION,
                codec_config: 2,
                flags: FLAG_MODENET | FLAG_CONTEXT,
                width: 1280,
                height: 720,
                model_hash: [1, 2, 3, 4, 5, 6, 7, 8],
            },
            chunks: [vec![9; 3], vec![], vec![7; 10], vec![1]],
        }
    }

    #[test]
    fn round_trip() {
        let bs = sample();
        let bytes = bs.to_bytes().unwrap();
        assert_eq!(bytes.len(), bs.byte_len());
        assert_eq!(&bytes[..4], b"MDN1");
        assert_eq!(Bitstream::from_bytes(&bytes).unwrap(), bs);
        assert_eq!(bs.bpp(), (bytes.len() - HEADER_LEN) as f64 * 8.0 / (1280.0 * 720.0));
    }

    #[test]
    fn damage_is_detected() {
        let bytes = sample().to_bytes().unwrap();
        for cut in 0..bytes.len() {
            assert!(Bitstream::from_bytes(&bytes[..cut]).is_err());
        }
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(Bitstream::from_bytes(&extra).is_err());
        let mut flags = bytes;
        flags[6] = 0x80;
        assert!(Bitstream::from_bytes(&flags).is_err());
    }
}
