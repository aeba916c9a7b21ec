use std::path::Path;

use rulefuse_core::io::{load_any, load_nifti1, Volume};
use rulefuse_core::{Error, Grid};

struct Header {
    dim: [i16; 8],
    datatype: i16,
    bitpix: i16,
    pixdim: [f32; 3],
    vox_offset: f32,
    slope: f32,
    inter: f32,
    big_endian: bool,
}

impl Header {
    fn new(dims: [i16; 3], datatype: i16) -> Self {
        Self {
            dim: [3, dims[0], dims[1], dims[2], 1, 1, 1, 1],
            datatype,
            bitpix: if datatype == 2 { 8 } else { 32 },
            pixdim: [0.5, 0.75, 3.0],
            vox_offset: 352.0,
            slope: 0.0,
            inter: 0.0,
            big_endian: false,
        }
    }

    fn bytes(&self, payload: &[u8]) -> Vec<u8> {
        let mut b = vec![0u8; self.vox_offset as usize];
        let be = self.big_endian;
        let put = |b: &mut Vec<u8>, at: usize, v: &[u8]| b[at..at + v.len()].copy_from_slice(v);
        let i32b = |v: i32| if be { v.to_be_bytes() } else { v.to_le_bytes() };
        let i16b = |v: i16| if be { v.to_be_bytes() } else { v.to_le_bytes() };
        let f32b = |v: f32| if be { v.to_be_bytes() } else { v.to_le_bytes() };
        put(&mut b, 0, &i32b(348));
        for (k, d) in self.dim.iter().enumerate() {
            put(&mut b, 40 + 2 * k, &i16b(*d));
        }
        put(&mut b, 70, &i16b(self.datatype));
        put(&mut b, 72, &i16b(self.bitpix));
        put(&mut b, 76, &f32b(1.0));
        for (k, p) in self.pixdim.iter().enumerate() {
            put(&mut b, 80 + 4 * k, &f32b(*p));
        }
        put(&mut b, 108, &f32b(self.vox_offset));
        put(&mut b, 112, &f32b(self.slope));
        put(&mut b, 116, &f32b(self.inter));
        put(&mut b, 344, b"n+1\0");
        b.extend_from_slice(payload);
        b
    }
}

fn f32_payload(values: &[f32], big_endian: bool) -> Vec<u8> {
    values
        .iter()
        .flat_map(|v| if big_endian { v.to_be_bytes() } else { v.to_le_bytes() })
        .collect()
}

fn write(dir: &Path, name: &str, bytes: &[u8]) -> std::path::PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, bytes).unwrap();
    p
}

fn ramp() -> Vec<f32> {
    (0..64).map(|i| i as f32 / 63.0).collect()
}

#[test]
fn float32_little_endian() {
    let dir = tempfile::tempdir().unwrap();
    let h = Header::new([4, 4, 4], 16);
    let p = write(dir.path(), "ramp.nii", &h.bytes(&f32_payload(&ramp(), false)));
    let v = load_any(&p).unwrap().into_probability().unwrap();
    assert_eq!(v.dims().as_array(), [4, 4, 4]);
    assert_eq!(v.spacing().0, [0.5, 0.75, 3.0]);
    assert_eq!(v.get(1, 0, 0), f64::from(1.0f32 / 63.0));
    assert_eq!(v.get(3, 3, 3), 1.0);
}

#[test]
fn float32_big_endian_matches_little_endian() {
    let dir = tempfile::tempdir().unwrap();
    let mut h = Header::new([4, 4, 4], 16);
    let le = load_nifti1(write(dir.path(), "le.nii", &h.bytes(&f32_payload(&ramp(), false)))).unwrap();
    h.big_endian = true;
    let be = load_nifti1(write(dir.path(), "be.nii", &h.bytes(&f32_payload(&ramp(), true)))).unwrap();
    assert_eq!(le.into_probability().unwrap(), be.into_probability().unwrap());
}

#[test]
fn uint8_binary_loads_as_mask() {
    let dir = tempfile::tempdir().unwrap();
    let payload: Vec<u8> = (0..64).map(|i| u8::from(i % 3 == 0)).collect();
    let p = write(dir.path(), "mask.nii", &Header::new([4, 4, 4], 2).bytes(&payload));
    let Volume::Label(m) = load_nifti1(&p).unwrap() else {
        panic!("expected a label volume");
    };
    assert_eq!(m.count(), 22);
    assert!(m.get(0, 0, 0) && !m.get(1, 0, 0));
}

#[test]
fn uint8_with_scaling_becomes_probability() {
    let dir = tempfile::tempdir().unwrap();
    let mut h = Header::new([4, 4, 4], 2);
    h.slope = 1.0 / 255.0;
    let payload: Vec<u8> = (0..64).map(|i| (i * 4) as u8).collect();
    let v = load_nifti1(write(dir.path(), "scaled.nii", &h.bytes(&payload))).unwrap().into_probability().unwrap();
    assert!((v.get(1, 0, 0) - 4.0 * f64::from(1.0f32 / 255.0)).abs() < 1e-12);
}

#[test]
fn four_dimensional_series_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let mut h = Header::new([4, 4, 4], 16);
    h.dim = [4, 4, 4, 4, 2, 1, 1, 1];
    let p = write(dir.path(), "series.nii", &h.bytes(&f32_payload(&[0.0; 128], false)));
    assert!(matches!(load_nifti1(&p), Err(Error::UnsupportedFormat(_))));
}

#[test]
fn singleton_fourth_dimension_accepted() {
    let dir = tempfile::tempdir().unwrap();
    let mut h = Header::new([4, 4, 4], 16);
    h.dim = [4, 4, 4, 4, 1, 1, 1, 1];
    let p = write(dir.path(), "single.nii", &h.bytes(&f32_payload(&ramp(), false)));
    assert!(load_nifti1(&p).is_ok());
}

#[test]
fn unsupported_inputs_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let gz = write(dir.path(), "x.nii.gz", &[0x1f, 0x8b, 8, 0]);
    assert!(matches!(load_any(&gz), Err(Error::UnsupportedFormat(_))));

    let int16 = Header::new([4, 4, 4], 4).bytes(&[0; 128]);
    assert!(matches!(load_nifti1(write(dir.path(), "i16.nii", &int16)), Err(Error::UnsupportedFormat(_))));

    let mut bad_magic = Header::new([4, 4, 4], 16).bytes(&f32_payload(&ramp(), false));
    bad_magic[344..348].copy_from_slice(b"ni1\0");
    assert!(matches!(load_nifti1(write(dir.path(), "magic.nii", &bad_magic)), Err(Error::UnsupportedFormat(_))));

    let short = Header::new([4, 4, 4], 16).bytes(&f32_payload(&ramp()[..60], false));
    assert!(matches!(
        load_nifti1(write(dir.path(), "short.nii", &short)),
        Err(Error::PayloadLength { expected: 608, actual: 592, .. })
    ));
}

#[test]
fn out_of_range_float_values_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let mut values = ramp();
    values[5] = 1.5;
    let p = write(dir.path(), "hot.nii", &Header::new([4, 4, 4], 16).bytes(&f32_payload(&values, false)));
    assert!(load_nifti1(&p).is_err());
}
