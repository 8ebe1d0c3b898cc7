//! Binary containers: network checkpoints (with an optional SVM section) and
//! feature sequence files. All integers and floats are little-endian.

use std::io::{self, Read, Write};

use crate::error::{Error, Result};
use crate::gru::NetworkParams;
use crate::numeric::Matrix;
use crate::svm::{LinearSvm, PlattParams};

pub const CHECKPOINT_MAGIC: &[u8; 7] = b"GRUNET\0";
pub const CHECKPOINT_VERSION: u32 = 1;
pub const SVM_SECTION_TAG: &[u8; 4] = b"SVMC";
pub const SVM_SECTION_VERSION: u32 = 1;

pub const FEATSEQ_MAGIC: &[u8; 8] = b"FEATSEQ\0";
pub const FEATSEQ_VERSION: u32 = 1;

// Little-endian primitives shared with the tree format.

pub(crate) fn put_u8<W: Write>(w: &mut W, v: u8) -> io::Result<()> {
    w.write_all(&[v])
}

pub(crate) fn put_u32<W: Write>(w: &mut W, v: u32) -> io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

pub(crate) fn put_f64s<W: Write>(w: &mut W, vs: &[f64]) -> io::Result<()> {
    for v in vs {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub(crate) fn put_len<W: Write>(w: &mut W, n: usize, what: &'static str) -> Result<()> {
    let v = u32::try_from(n).map_err(|_| Error::format(what, format!("dimension {n} exceeds u32")))?;
    put_u32(w, v)?;
    Ok(())
}

fn truncated(what: &'static str, e: io::Error) -> Error {
    if e.kind() == io::ErrorKind::UnexpectedEof {
        Error::format(what, "truncated file")
    } else {
        Error::Io(e)
    }
}

pub(crate) fn get_u8<R: Read>(r: &mut R, what: &'static str) -> Result<u8> {
    let mut b = [0u8; 1];
    r.read_exact(&mut b).map_err(|e| truncated(what, e))?;
    Ok(b[0])
}

pub(crate) fn get_u32<R: Read>(r: &mut R, what: &'static str) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(|e| truncated(what, e))?;
    Ok(u32::from_le_bytes(b))
}

pub(crate) fn get_f64s<R: Read>(r: &mut R, out: &mut [f64], what: &'static str) -> Result<()> {
    let mut b = [0u8; 8];
    for v in out {
        r.read_exact(&mut b).map_err(|e| truncated(what, e))?;
        *v = f64::from_le_bytes(b);
    }
    Ok(())
}

pub(crate) fn expect_magic<R: Read>(r: &mut R, magic: &[u8], what: &'static str) -> Result<()> {
    let mut b = vec![0u8; magic.len()];
    r.read_exact(&mut b).map_err(|e| truncated(what, e))?;
    if b != magic {
        return Err(Error::format(what, format!("bad magic {b:?}")));
    }
    Ok(())
}

pub(crate) fn expect_version<R: Read>(r: &mut R, supported: u32, what: &'static str) -> Result<()> {
    let v = get_u32(r, what)?;
    if v != supported {
        return Err(Error::format(what, format!("unsupported version {v} (expected {supported})")));
    }
    Ok(())
}

/// SVM head trained on network outputs, with optional Platt calibration.
#[derive(Debug, Clone, PartialEq)]
pub struct Calibration {
    pub svm: LinearSvm,
    pub platt: Option<PlattParams>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: NetworkParams,
    pub calibration: Option<Calibration>,
}

const CKPT: &str = "checkpoint";

/// Tensors follow `NetworkParams::tensors`: per layer `W_xr, W_hr, b_r, W_xz,
/// W_hz, b_z, W_xh, W_hh, b_h`, then `W_hy, b_y`.
pub fn write_checkpoint<W: Write>(w: &mut W, ckpt: &Checkpoint) -> Result<()> {
    let p = &ckpt.params;
    p.check()?;
    w.write_all(CHECKPOINT_MAGIC)?;
    put_u32(w, CHECKPOINT_VERSION)?;
    for n in [p.input_dim(), p.hidden_dim(), p.num_layers(), p.num_classes()] {
        put_len(w, n, CKPT)?;
    }
    for t in p.tensors() {
        put_f64s(w, t)?;
    }
    if let Some(cal) = &ckpt.calibration {
        let svm = &cal.svm;
        w.write_all(SVM_SECTION_TAG)?;
        put_u32(w, SVM_SECTION_VERSION)?;
        put_len(w, svm.classes(), CKPT)?;
        put_len(w, svm.input_dim(), CKPT)?;
        put_f64s(w, &[svm.c_svm])?;
        put_f64s(w, svm.weights.data())?;
        put_f64s(w, &svm.biases)?;
        match &cal.platt {
            Some(pl) => {
                put_u8(w, 1)?;
                put_f64s(w, &pl.a)?;
                put_f64s(w, &pl.b)?;
            }
            None => put_u8(w, 0)?,
        }
    }
    Ok(())
}

pub fn read_checkpoint<R: Read>(r: &mut R) -> Result<Checkpoint> {
    expect_magic(r, CHECKPOINT_MAGIC, CKPT)?;
    expect_version(r, CHECKPOINT_VERSION, CKPT)?;
    let d = get_u32(r, CKPT)? as usize;
    let hidden = get_u32(r, CKPT)? as usize;
    let layers = get_u32(r, CKPT)? as usize;
    let classes = get_u32(r, CKPT)? as usize;
    if d == 0 || hidden == 0 || layers == 0 || classes == 0 {
        return Err(Error::format(CKPT, "zero dimension in header"));
    }
    let mut params = NetworkParams::zeros(d, hidden, layers, classes);
    for t in params.tensors_mut() {
        get_f64s(r, t, CKPT)?;
    }

    let mut tag = [0u8; 4];
    let got = read_fully(r, &mut tag)?;
    let calibration = match got {
        0 => None,
        4 if &tag == SVM_SECTION_TAG => Some(read_svm_section(r, classes)?),
        _ => return Err(Error::format(CKPT, "trailing bytes after network tensors")),
    };
    let mut probe = [0u8; 1];
    if read_fully(r, &mut probe)? != 0 {
        return Err(Error::format(CKPT, "trailing bytes after final section"));
    }
    Ok(Checkpoint {
        params,
        calibration,
    })
}

fn read_fully<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<usize> {
    let mut n = 0;
    while n < buf.len() {
        match r.read(&mut buf[n..]) {
            Ok(0) => break,
            Ok(k) => n += k,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    Ok(n)
}

fn read_svm_section<R: Read>(r: &mut R, net_classes: usize) -> Result<Calibration> {
    expect_version(r, SVM_SECTION_VERSION, CKPT)?;
    let classes = get_u32(r, CKPT)? as usize;
    let dim = get_u32(r, CKPT)? as usize;
    if classes != net_classes || dim != net_classes {
        return Err(Error::format(
            CKPT,
            format!("SVM section is {classes}x{dim}, network has {net_classes} outputs"),
        ));
    }
    let mut c_svm = [0.0];
    get_f64s(r, &mut c_svm, CKPT)?;
    let mut svm = LinearSvm::zeros(classes, dim, c_svm[0]);
    get_f64s(r, svm.weights.data_mut(), CKPT)?;
    get_f64s(r, &mut svm.biases, CKPT)?;
    let platt = match get_u8(r, CKPT)? {
        0 => None,
        1 => {
            let mut a = vec![0.0; classes];
            let mut b = vec![0.0; classes];
            get_f64s(r, &mut a, CKPT)?;
            get_f64s(r, &mut b, CKPT)?;
            Some(PlattParams { a, b })
        }
        f => return Err(Error::format(CKPT, format!("bad Platt flag {f}"))),
    };
    Ok(Calibration { svm, platt })
}

/// What a feature sequence file holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SeqKind {
    Gam,
    Mfcc,
    Log,
    LteGam,
    LteMfcc,
    LteLog,
    LteFused,
}

impl SeqKind {
    pub fn code(self) -> u8 {
        match self {
            SeqKind::Gam => 0,
            SeqKind::Mfcc => 1,
            SeqKind::Log => 2,
            SeqKind::LteGam => 10,
            SeqKind::LteMfcc => 11,
            SeqKind::LteLog => 12,
            SeqKind::LteFused => 13,
        }
    }

    pub fn from_code(c: u8) -> Option<Self> {
        Some(match c {
            0 => SeqKind::Gam,
            1 => SeqKind::Mfcc,
            2 => SeqKind::Log,
            10 => SeqKind::LteGam,
            11 => SeqKind::LteMfcc,
            12 => SeqKind::LteLog,
            13 => SeqKind::LteFused,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NoiseCondition {
    Raw,
    Denoised,
    /// Raw and denoised channels concatenated.
    Dual,
}

impl NoiseCondition {
    pub fn code(self) -> u8 {
        match self {
            NoiseCondition::Raw => 0,
            NoiseCondition::Denoised => 1,
            NoiseCondition::Dual => 2,
        }
    }

    pub fn from_code(c: u8) -> Option<Self> {
        Some(match c {
            0 => NoiseCondition::Raw,
            1 => NoiseCondition::Denoised,
            2 => NoiseCondition::Dual,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureFile {
    pub kind: SeqKind,
    pub noise: NoiseCondition,
    pub data: Matrix,
}

const FEAT: &str = "feature file";

/// Values are stored as `f32`; reading back yields the `f32`-rounded values.
pub fn write_featseq<W: Write>(w: &mut W, f: &FeatureFile) -> Result<()> {
    w.write_all(FEATSEQ_MAGIC)?;
    put_u32(w, FEATSEQ_VERSION)?;
    put_u8(w, f.kind.code())?;
    put_u8(w, f.noise.code())?;
    put_len(w, f.data.rows(), FEAT)?;
    put_len(w, f.data.cols(), FEAT)?;
    let mut buf = Vec::with_capacity(f.data.data().len() * 4);
    for &v in f.data.data() {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_featseq<R: Read>(r: &mut R) -> Result<FeatureFile> {
    expect_magic(r, FEATSEQ_MAGIC, FEAT)?;
    expect_version(r, FEATSEQ_VERSION, FEAT)?;
    let kc = get_u8(r, FEAT)?;
    let kind = SeqKind::from_code(kc).ok_or_else(|| Error::format(FEAT, format!("unknown kind code {kc}")))?;
    let nc = get_u8(r, FEAT)?;
    let noise =
        NoiseCondition::from_code(nc).ok_or_else(|| Error::format(FEAT, format!("unknown noise code {nc}")))?;
    let t = get_u32(r, FEAT)? as usize;
    let d = get_u32(r, FEAT)? as usize;
    let mut bytes = vec![0u8; t * d * 4];
    r.read_exact(&mut bytes).map_err(|e| truncated(FEAT, e))?;
    let data: Vec<f64> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    let mut probe = [0u8; 1];
    if read_fully(r, &mut probe)? != 0 {
        return Err(Error::format(FEAT, "trailing bytes after data"));
    }
    Ok(FeatureFile {
        kind,
        noise,
        data: Matrix::from_vec(t, d, data)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gru::init_network;
    use crate::numeric::SeededRng;

    fn sample_checkpoint(with_svm: bool, with_platt: bool) -> Checkpoint {
        let mut rng = SeededRng::new(9);
        let params = init_network(5, 3, 2, 4, &mut rng).unwrap();
        let calibration = with_svm.then(|| {
            let mut svm = LinearSvm::zeros(4, 4, 1.0);
            svm.weights.data_mut().iter_mut().for_each(|w| *w = rng.normal());
            svm.biases = vec![0.1, -0.2, 0.3, f64::MIN_POSITIVE];
            Calibration {
                svm,
                platt: with_platt.then(|| PlattParams {
                    a: vec![-1.5, -2.0, -0.5, -1e-9],
                    b: vec![0.0, 0.25, -0.125, 3.0],
                }),
            }
        });
        Checkpoint {
            params,
            calibration,
        }
    }

    fn roundtrip(c: &Checkpoint) -> (Vec<u8>, Checkpoint) {
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, c).unwrap();
        let back = read_checkpoint(&mut buf.as_slice()).unwrap();
        (buf, back)
    }

    #[test]
    fn checkpoint_roundtrip_is_bit_exact() {
        for (svm, platt) in [(false, false), (true, false), (true, true)] {
            let c = sample_checkpoint(svm, platt);
            let (buf, back) = roundtrip(&c);
            let bits = |p: &NetworkParams| p.flatten().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&c.params), bits(&back.params));
            assert_eq!(c, back);
            let mut again = Vec::new();
            write_checkpoint(&mut again, &back).unwrap();
            assert_eq!(buf, again);
        }
    }

    #[test]
    fn checkpoint_header_layout() {
        let c = sample_checkpoint(false, false);
        let (buf, _) = roundtrip(&c);
        assert_eq!(&buf[..7], b"GRUNET\0");
        assert_eq!(u32::from_le_bytes(buf[7..11].try_into().unwrap()), 1);
        let dims: Vec<u32> = buf[11..27]
            .chunks(4)
            .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        assert_eq!(dims, vec![5, 3, 2, 4]);
        assert_eq!(buf.len(), 27 + 8 * c.params.param_count());
        // first tensor is layer 0's W_xr
        let first = f64::from_le_bytes(buf[27..35].try_into().unwrap());
        assert_eq!(first.to_bits(), c.params.layers[0].w_xr.data()[0].to_bits());
    }

    #[test]
    fn checkpoint_rejects_corruption() {
        let c = sample_checkpoint(true, true);
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &c).unwrap();

        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(read_checkpoint(&mut bad.as_slice()), Err(Error::Format { .. })));

        let mut bad = buf.clone();
        bad[7] = 2;
        let err = read_checkpoint(&mut bad.as_slice()).unwrap_err();
        assert!(err.to_string().contains("version 2"), "{err}");

        let short = &buf[..buf.len() - 3];
        let err = read_checkpoint(&mut &short[..]).unwrap_err();
        assert!(err.to_string().contains("truncated"), "{err}");

        let mut long = buf.clone();
        long.push(0);
        assert!(matches!(read_checkpoint(&mut long.as_slice()), Err(Error::Format { .. })));
    }

    #[test]
    fn featseq_roundtrip_and_layout() {
        let data = Matrix::from_rows(&[[0.5, -1.25, 3.0], [1e-3, 2.0, -0.0]]).unwrap();
        let f = FeatureFile {
            kind: SeqKind::Mfcc,
            noise: NoiseCondition::Denoised,
            data,
        };
        let mut buf = Vec::new();
        write_featseq(&mut buf, &f).unwrap();
        assert_eq!(&buf[..8], b"FEATSEQ\0");
        assert_eq!(buf[12], 1);
        assert_eq!(buf[13], 1);
        assert_eq!(u32::from_le_bytes(buf[14..18].try_into().unwrap()), 2);
        assert_eq!(u32::from_le_bytes(buf[18..22].try_into().unwrap()), 3);
        assert_eq!(buf.len(), 22 + 6 * 4);
        let back = read_featseq(&mut buf.as_slice()).unwrap();
        assert_eq!(back.kind, SeqKind::Mfcc);
        assert_eq!(back.noise, NoiseCondition::Denoised);
        for (a, b) in f.data.data().iter().zip(back.data.data()) {
            assert_eq!((*a as f32) as f64, *b);
        }
    }

    #[test]
    fn featseq_rejects_unknown_codes() {
        let f = FeatureFile {
            kind: SeqKind::LteFused,
            noise: NoiseCondition::Dual,
            data: Matrix::zeros(1, 1),
        };
        let mut buf = Vec::new();
        write_featseq(&mut buf, &f).unwrap();
        let mut bad = buf.clone();
        bad[12] = 99;
        let err = read_featseq(&mut bad.as_slice()).unwrap_err();
        assert!(err.to_string().contains("kind code 99"), "{err}");
        let mut bad = buf;
        bad[13] = 7;
        assert!(read_featseq(&mut bad.as_slice()).is_err());
    }
}
