use std::io::Cursor;

pub const SAMPLE_RATE: u32 = 16_000;

/// Accepts only single-channel 16 kHz 16-bit PCM WAV.
pub fn check_wav(bytes: &[u8]) -> Result<(), String> {
    let reader = hound::WavReader::new(Cursor::new(bytes)).map_err(|e| format!("not a WAV file: {e}"))?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(format!("expected mono audio, got {} channels", spec.channels));
    }
    if spec.sample_rate != SAMPLE_RATE {
        return Err(format!("expected {SAMPLE_RATE} Hz audio, got {} Hz", spec.sample_rate));
    }
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err("expected 16-bit PCM samples".into());
    }
    if reader.duration() == 0 {
        return Err("audio contains no samples".into());
    }
    Ok(())
}

/// Best guess at a stored audio blob's media type.
pub fn content_type(bytes: &[u8]) -> &'static str {
    if bytes.starts_with(b"RIFF") {
        "audio/wav"
    } else if bytes.starts_with(b"ID3") || bytes.starts_with(&[0xff, 0xfb]) {
        "audio/mpeg"
    } else {
        "application/octet-stream"
    }
}

#[cfg(test)]
pub(crate) fn wav(channels: u16, rate: u32, samples: usize) -> Vec<u8> {
    let spec = hound::WavSpec {
        channels,
        sample_rate: rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut buf = Cursor::new(Vec::new());
    let mut w = hound::WavWriter::new(&mut buf, spec).unwrap();
    for i in 0..samples * channels as usize {
        w.write_sample((i % 100) as i16).unwrap();
    }
    w.finalize().unwrap();
    buf.into_inner()
}
