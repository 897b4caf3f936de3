use async_trait::async_trait;
use serde::{Deserialize, Serialize};

use super::LlmError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AudioFormat {
    Wav,
    Mp3,
}

impl AudioFormat {
    pub fn mime(self) -> &'static str {
        match self {
            AudioFormat::Wav => "audio/wav",
            AudioFormat::Mp3 => "audio/mpeg",
        }
    }

    pub fn extension(self) -> &'static str {
        match self {
            AudioFormat::Wav => "wav",
            AudioFormat::Mp3 => "mp3",
        }
    }

    /// Guesses the container from its leading bytes.
    pub fn sniff(bytes: &[u8]) -> Option<Self> {
        if bytes.len() >= 12 && &bytes[0..4] == b"RIFF" && &bytes[8..12] == b"WAVE" {
            Some(AudioFormat::Wav)
        } else if bytes.starts_with(b"ID3") || (bytes.len() >= 2 && bytes[0] == 0xFF && bytes[1] & 0xE0 == 0xE0) {
            Some(AudioFormat::Mp3)
        } else {
            None
        }
    }

    pub fn from_mime(mime: &str) -> Option<Self> {
        match mime.split(';').next()?.trim().to_ascii_lowercase().as_str() {
            "audio/wav" | "audio/wave" | "audio/x-wav" | "audio/vnd.wave" => Some(AudioFormat::Wav),
            "audio/mpeg" | "audio/mp3" => Some(AudioFormat::Mp3),
            _ => None,
        }
    }

    pub fn from_extension(ext: &str) -> Option<Self> {
        match ext.to_ascii_lowercase().as_str() {
            "wav" | "wave" => Some(AudioFormat::Wav),
            "mp3" => Some(AudioFormat::Mp3),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AudioClip {
    #[serde(with = "bytes_as_vec")]
    pub bytes: Vec<u8>,
    pub format: AudioFormat,
    pub duration_s: f64,
}

mod bytes_as_vec {
    use serde::{Deserialize, Deserializer, Serializer};
    pub fn serialize<S: Serializer>(b: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_bytes(b)
    }
    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        Vec::<u8>::deserialize(d)
    }
}

impl AudioClip {
    /// Wraps a payload, computing the duration where the container allows.
    pub fn new(bytes: Vec<u8>, format: AudioFormat) -> Result<Self, LlmError> {
        if bytes.is_empty() {
            return Err(LlmError::UnsupportedFormat("empty audio payload".into()));
        }
        let duration_s = match format {
            AudioFormat::Wav => wav_duration(&bytes).unwrap_or(0.0),
            AudioFormat::Mp3 => mp3_duration_estimate(&bytes).unwrap_or(0.0),
        };
        Ok(Self { bytes, format, duration_s })
    }
}

/// Duration of a PCM WAV payload from its `fmt ` and `data` chunks.
pub fn wav_duration(bytes: &[u8]) -> Option<f64> {
    if AudioFormat::sniff(bytes) != Some(AudioFormat::Wav) {
        return None;
    }
    let u32_at = |i: usize| -> Option<u32> {
        bytes.get(i..i + 4).map(|s| u32::from_le_bytes([s[0], s[1], s[2], s[3]]))
    };
    let mut pos = 12;
    let mut byte_rate = None;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = u32_at(pos + 4)? as usize;
        let body = pos + 8;
        if id == b"fmt " {
            byte_rate = u32_at(body + 8);
        } else if id == b"data" {
            let rate = byte_rate? as f64;
            if rate == 0.0 {
                return None;
            }
            // Streamed WAVs carry a placeholder size; trust the payload instead.
            let available = bytes.len() - body;
            let data_len = if size == 0 || size == u32::MAX as usize || size > available {
                available
            } else {
                size
            };
            return Some(data_len as f64 / rate);
        }
        pos = body + size + (size & 1);
    }
    None
}

/// Constant-bitrate estimate from the first MPEG-1 Layer III frame header.
pub fn mp3_duration_estimate(bytes: &[u8]) -> Option<f64> {
    const KBPS: [u32; 15] = [0, 32, 40, 48, 56, 64, 80, 96, 112, 128, 160, 192, 224, 256, 320];
    let mut start = 0;
    if bytes.starts_with(b"ID3") && bytes.len() >= 10 {
        let size = bytes[6..10].iter().fold(0usize, |acc, &b| (acc << 7) | (b & 0x7F) as usize);
        start = 10 + size;
    }
    let frame = bytes.get(start..)?;
    let sync = frame.windows(2).position(|w| w[0] == 0xFF && w[1] & 0xFE == 0xFA)?;
    let header = frame.get(sync + 2)?;
    let kbps = *KBPS.get((header >> 4) as usize)?;
    if kbps == 0 {
        return None;
    }
    Some((bytes.len() - start) as f64 * 8.0 / (kbps as f64 * 1000.0))
}

#[async_trait]
pub trait SpeechProvider: Send + Sync {
    fn name(&self) -> &str;

    async fn transcribe(&self, clip: &AudioClip) -> Result<String, LlmError>;

    async fn synthesize(&self, text: &str, voice: &str) -> Result<AudioClip, LlmError>;
}

/// Returns a fixed transcript and a one-byte sentinel clip.
#[derive(Debug, Clone)]
pub struct MockSpeech {
    pub transcript: String,
}

impl MockSpeech {
    pub const SENTINEL: u8 = 0x5A;

    pub fn new(transcript: impl Into<String>) -> Self {
        Self { transcript: transcript.into() }
    }
}

#[async_trait]
impl SpeechProvider for MockSpeech {
    fn name(&self) -> &str {
        "mock"
    }

    async fn transcribe(&self, clip: &AudioClip) -> Result<String, LlmError> {
        if clip.bytes.is_empty() {
            return Err(LlmError::UnsupportedFormat("empty audio payload".into()));
        }
        Ok(self.transcript.clone())
    }

    async fn synthesize(&self, text: &str, _voice: &str) -> Result<AudioClip, LlmError> {
        if text.trim().is_empty() {
            return Err(LlmError::EmptyText);
        }
        Ok(AudioClip {
            bytes: vec![Self::SENTINEL],
            format: AudioFormat::Wav,
            duration_s: 0.0,
        })
    }
}

#[cfg(test)]
pub(crate) fn silent_wav(seconds: f64) -> Vec<u8> {
    let sample_rate: u32 = 8000;
    let samples = (seconds * sample_rate as f64) as u32;
    let data_len = samples * 2;
    let mut out = Vec::new();
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len).to_le_bytes());
    out.extend_from_slice(b"WAVEfmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&sample_rate.to_le_bytes());
    out.extend_from_slice(&(sample_rate * 2).to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_len.to_le_bytes());
    out.resize(out.len() + data_len as usize, 0);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wav_duration_from_header() {
        let wav = silent_wav(1.5);
        assert_eq!(AudioFormat::sniff(&wav), Some(AudioFormat::Wav));
        let clip = AudioClip::new(wav, AudioFormat::Wav).unwrap();
        assert!((clip.duration_s - 1.5).abs() < 1e-9);
    }

    #[test]
    fn empty_payload_unsupported() {
        assert!(matches!(
            AudioClip::new(vec![], AudioFormat::Mp3),
            Err(LlmError::UnsupportedFormat(_))
        ));
    }

    #[test]
    fn mp3_estimate_uses_bitrate() {
        // MPEG-1 Layer III, 128 kbps, 44.1 kHz; 16000 bytes ≈ 1 s.
        let mut bytes = vec![0xFF, 0xFB, 0x90, 0x64];
        bytes.resize(16_000, 0);
        assert_eq!(AudioFormat::sniff(&bytes), Some(AudioFormat::Mp3));
        let d = mp3_duration_estimate(&bytes).unwrap();
        assert!((d - 1.0).abs() < 1e-9);
    }

    #[test]
    fn mime_and_extension_lookup() {
        assert_eq!(AudioFormat::from_mime("audio/x-wav"), Some(AudioFormat::Wav));
        assert_eq!(AudioFormat::from_mime("audio/mpeg; q=1"), Some(AudioFormat::Mp3));
        assert_eq!(AudioFormat::from_mime("video/mp4"), None);
        assert_eq!(AudioFormat::from_extension("MP3"), Some(AudioFormat::Mp3));
    }

    #[tokio::test]
    async fn mock_contract() {
        let s = MockSpeech::new("I have had this rash for a week");
        let clip = AudioClip::new(silent_wav(0.1), AudioFormat::Wav).unwrap();
        assert_eq!(s.transcribe(&clip).await.unwrap(), "I have had this rash for a week");
        let out = s.synthesize("hello", "alloy").await.unwrap();
        assert_eq!(out.bytes, vec![MockSpeech::SENTINEL]);
        assert!(matches!(s.synthesize("", "alloy").await, Err(LlmError::EmptyText)));
    }
}
