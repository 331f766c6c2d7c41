//! NPY v1.0 arrays: little-endian, C order, `<f8` or `|u1`.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

const MAGIC: &[u8; 6] = b"\x93NUMPY";
const ALIGN: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub enum NpyData {
    F64(Vec<f64>),
    U8(Vec<u8>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct NpyArray {
    pub shape: Vec<usize>,
    pub data: NpyData,
}

impl NpyArray {
    pub fn len(&self) -> usize {
        match &self.data {
            NpyData::F64(v) => v.len(),
            NpyData::U8(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn into_f64(self) -> Result<(Vec<usize>, Vec<f64>)> {
        match self.data {
            NpyData::F64(v) => Ok((self.shape, v)),
            NpyData::U8(_) => Err(Error::DtypeUnsupported("expected float64 array, found uint8".into())),
        }
    }

    pub fn into_u8(self) -> Result<(Vec<usize>, Vec<u8>)> {
        match self.data {
            NpyData::U8(v) => Ok((self.shape, v)),
            NpyData::F64(_) => Err(Error::DtypeUnsupported("expected uint8 array, found float64".into())),
        }
    }
}

fn header(descr: &str, shape: &[usize]) -> Vec<u8> {
    let dims = match shape.len() {
        1 => format!("({},)", shape[0]),
        _ => format!("({})", shape.iter().map(|d| d.to_string()).collect::<Vec<_>>().join(", ")),
    };
    let mut dict = format!("{{'descr': '{descr}', 'fortran_order': False, 'shape': {dims}, }}");
    let unpadded = MAGIC.len() + 2 + 2 + dict.len() + 1;
    dict.push_str(&" ".repeat((ALIGN - unpadded % ALIGN) % ALIGN));
    dict.push('\n');
    let mut out = Vec::with_capacity(10 + dict.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&[1, 0]);
    out.extend_from_slice(&(dict.len() as u16).to_le_bytes());
    out.extend_from_slice(dict.as_bytes());
    out
}

fn check_len(shape: &[usize], n: usize) -> Result<()> {
    if shape.iter().product::<usize>() != n {
        return Err(Error::ShapeMismatch(format!("shape {shape:?} does not hold {n} elements")));
    }
    Ok(())
}

pub fn f64_to_bytes(shape: &[usize], data: &[f64]) -> Result<Vec<u8>> {
    check_len(shape, data.len())?;
    let mut out = header("<f8", shape);
    out.reserve(data.len() * 8);
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn u8_to_bytes(shape: &[usize], data: &[u8]) -> Result<Vec<u8>> {
    check_len(shape, data.len())?;
    let mut out = header("|u1", shape);
    out.extend_from_slice(data);
    Ok(out)
}

fn dict_value<'a>(dict: &'a str, key: &str) -> Result<&'a str> {
    let pat = format!("'{key}':");
    let start = dict
        .find(&pat)
        .ok_or_else(|| Error::Parse(format!("NPY header lacks '{key}'")))?
        + pat.len();
    let rest = dict[start..].trim_start();
    let end = if rest.starts_with('(') {
        rest.find(')').map(|i| i + 1)
    } else {
        rest.find([',', '}'])
    }
    .ok_or_else(|| Error::Parse(format!("NPY header value for '{key}' not terminated")))?;
    Ok(rest[..end].trim())
}

pub fn from_bytes(bytes: &[u8]) -> Result<NpyArray> {
    if bytes.len() < 10 || &bytes[..6] != MAGIC {
        return Err(Error::MagicMismatch);
    }
    let (major, minor) = (bytes[6], bytes[7]);
    let (hlen, hstart) = match major {
        1 => (u16::from_le_bytes([bytes[8], bytes[9]]) as usize, 10),
        2 | 3 if bytes.len() >= 12 => (u32::from_le_bytes([bytes[8], bytes[9], bytes[10], bytes[11]]) as usize, 12),
        _ => return Err(Error::DtypeUnsupported(format!("NPY version {major}.{minor}"))),
    };
    let body = hstart + hlen;
    if bytes.len() < body {
        return Err(Error::TruncatedFile(format!("header needs {body} bytes, file has {}", bytes.len())));
    }
    let dict = std::str::from_utf8(&bytes[hstart..body]).map_err(|_| Error::Parse("NPY header is not text".into()))?;
    let descr = dict_value(dict, "descr")?.trim_matches(|c| c == '\'' || c == '"');
    if dict_value(dict, "fortran_order")? != "False" {
        return Err(Error::DtypeUnsupported("Fortran-order arrays are not supported; save in C order".into()));
    }
    let dims = dict_value(dict, "shape")?;
    let shape: Vec<usize> = dims
        .trim_matches(|c| c == '(' || c == ')')
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse().map_err(|_| Error::Parse(format!("bad NPY dimension '{s}'"))))
        .collect::<Result<_>>()?;
    let n: usize = shape.iter().product();
    let payload = &bytes[body..];
    let width = match descr {
        "<f8" => 8,
        "|u1" | "<u1" | "u1" => 1,
        other => return Err(Error::DtypeUnsupported(format!("dtype '{other}'; only <f8 and |u1 are supported"))),
    };
    if payload.len() < n * width {
        return Err(Error::TruncatedFile(format!("expected {} data bytes, found {}", n * width, payload.len())));
    }
    let data = if width == 8 {
        NpyData::F64(
            payload[..n * 8]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
                .collect(),
        )
    } else {
        NpyData::U8(payload[..n].to_vec())
    };
    Ok(NpyArray { shape, data })
}

pub fn read_array(path: impl AsRef<Path>) -> Result<NpyArray> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes).map_err(|e| match e {
        Error::TruncatedFile(m) => Error::TruncatedFile(format!("{}: {m}", path.display())),
        Error::DtypeUnsupported(m) => Error::DtypeUnsupported(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn write_f64(path: impl AsRef<Path>, shape: &[usize], data: &[f64]) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, f64_to_bytes(shape, data)?).map_err(|e| Error::io(path, e))
}

pub fn write_u8(path: impl AsRef<Path>, shape: &[usize], data: &[u8]) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, u8_to_bytes(shape, data)?).map_err(|e| Error::io(path, e))
}
