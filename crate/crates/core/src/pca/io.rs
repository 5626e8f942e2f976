//! `DWFP` files: magic, `u32` version, `u64` n, d, k, then the mean, the
//! components (column-major) and the eigenvalues, all little-endian `f64`.

use std::path::Path;

use ndarray::{Array1, Array2, ShapeBuilder};

use super::PcaModel;
use crate::binio::{read_file, Reader, Writer};
use crate::Result;

const MAGIC: &[u8; 4] = b"DWFP";
const VERSION: u32 = 1;

pub fn save_pca(model: &PcaModel, path: &Path) -> Result<()> {
    let mut w = Writer::default();
    w.bytes(MAGIC);
    w.u32(VERSION);
    w.u64(model.n_samples as u64);
    w.u64(model.dim() as u64);
    w.u64(model.n_components() as u64);
    w.f64s(model.mean.as_slice().unwrap());
    for col in model.components.columns() {
        col.iter().for_each(|v| w.f64(*v));
    }
    w.f64s(&model.eigenvalues);
    w.save(path)
}

pub fn load_pca(path: &Path) -> Result<PcaModel> {
    let bytes = read_file(path)?;
    let mut r = Reader::new(path, &bytes);
    r.magic(MAGIC)?;
    r.version(VERSION)?;
    let n = r.u64("n")? as usize;
    let d = r.u64("d")? as usize;
    let k = r.u64("k")? as usize;
    let mean = Array1::from(r.f64s(d, "mean")?);
    let cols = r.f64s(d.saturating_mul(k), "components")?;
    let components = Array2::from_shape_vec((d, k).f(), cols).expect("length checked");
    let eigenvalues = r.f64s(k, "eigenvalues")?;
    r.finish()?;
    Ok(PcaModel {
        mean,
        components: components.as_standard_layout().to_owned(),
        total_variance: eigenvalues.iter().sum(),
        eigenvalues,
        n_samples: n,
    })
}
