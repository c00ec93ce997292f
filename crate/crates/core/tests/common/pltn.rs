//! A minimal standalone `PLTN` reader with a bitwise CRC32, sharing no code
//! with the library.
#![allow(dead_code)]

pub fn crc32(bytes: &[u8]) -> u32 {
    let mut crc = 0xffff_ffffu32;
    for &b in bytes {
        crc ^= b as u32;
        for _ in 0..8 {
            crc = if crc & 1 != 0 { (crc >> 1) ^ 0xedb8_8320 } else { crc >> 1 };
        }
    }
    !crc
}

pub struct Decoded {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
    pub header: serde_json::Value,
    pub stored_crc: u32,
    pub computed_crc: u32,
}

pub fn decode(bytes: &[u8]) -> Result<Decoded, String> {
    if bytes.len() < 14 || &bytes[..4] != b"PLTN" {
        return Err("bad magic".into());
    }
    if u16::from_le_bytes([bytes[4], bytes[5]]) != 1 {
        return Err("bad version".into());
    }
    let hlen = u32::from_le_bytes(bytes[6..10].try_into().unwrap()) as usize;
    let header: serde_json::Value =
        serde_json::from_slice(bytes.get(10..10 + hlen).ok_or("short header")?).map_err(|e| e.to_string())?;
    let shape: Vec<usize> = header["shape"]
        .as_array()
        .ok_or("no shape")?
        .iter()
        .map(|v| v.as_u64().unwrap() as usize)
        .collect();
    let numel: usize = shape.iter().product();
    let start = 10 + hlen;
    let end = start + 4 * numel;
    if bytes.len() != end + 4 {
        return Err(format!("length {} but expected {}", bytes.len(), end + 4));
    }
    let data = bytes[start..end]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(Decoded {
        shape,
        data,
        header,
        stored_crc: u32::from_le_bytes(bytes[end..].try_into().unwrap()),
        computed_crc: crc32(&bytes[..end]),
    })
}
