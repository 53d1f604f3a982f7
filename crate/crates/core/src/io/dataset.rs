//! One directory per sample:
//!
//! ```text
//! left_t.ppm right_t.ppm left_t1.ppm right_t1.ppm
//! flow.flo d0.pfm d1.pfm valid.pgm            (pixels)
//! occ_rt.pgm occ_lt1.pgm occ_rt1.pgm          (optional)
//! bwd_flow.flo bwd_d0.pfm ... bwd_occ_rt1.pgm (optional, time-reversed truth)
//! ```

use std::path::{Path, PathBuf};

use super::{read_flo, read_pfm, read_pgm, read_ppm, write_flo, write_pfm, write_pgm, write_ppm};
use crate::error::{Error, Result};
use crate::flow::{OcclusionMap, SceneFlowField, D0, D1, FLOW_SCALE};
use crate::net::View;
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::train::{GroundTruth, Sample};

/// File names of the four input views.
pub struct SampleFiles;

impl SampleFiles {
    pub const IMAGES: [&'static str; 4] = ["left_t.ppm", "right_t.ppm", "left_t1.ppm", "right_t1.ppm"];
    pub const FLOW: &'static str = "flow.flo";
    pub const D0: &'static str = "d0.pfm";
    pub const D1: &'static str = "d1.pfm";
    pub const VALID: &'static str = "valid.pgm";

    pub fn occlusion(view: View) -> String {
        format!("occ_{}.pgm", view.tag())
    }
}

fn named(prefix: &str, name: &str) -> String {
    format!("{prefix}{name}")
}

fn save_truth<T: Scalar>(dir: &Path, prefix: &str, truth: &GroundTruth<T>) -> Result<()> {
    let px = truth.flow.scaled(FLOW_SCALE);
    write_flo(&dir.join(named(prefix, SampleFiles::FLOW)), &px.optical_flow())?;
    write_pfm(&dir.join(named(prefix, SampleFiles::D0)), &px.component(D0))?;
    write_pfm(&dir.join(named(prefix, SampleFiles::D1)), &px.component(D1))?;
    write_pgm(&dir.join(named(prefix, SampleFiles::VALID)), &truth.valid)?;
    if let Some(occ) = &truth.occlusion {
        for (view, map) in View::ALL.iter().zip(occ) {
            write_pgm(&dir.join(named(prefix, &SampleFiles::occlusion(*view))), map.tensor())?;
        }
    }
    Ok(())
}

fn load_truth<T: Scalar>(dir: &Path, prefix: &str) -> Result<GroundTruth<T>> {
    let flow: Tensor<T> = read_flo(&dir.join(named(prefix, SampleFiles::FLOW)))?;
    let d0: Tensor<T> = read_pfm(&dir.join(named(prefix, SampleFiles::D0)))?;
    let d1: Tensor<T> = read_pfm(&dir.join(named(prefix, SampleFiles::D1)))?;
    let all = Tensor::concat_channels(&[&flow, &d0, &d1])?;
    let flow = SceneFlowField::new(all)?.scaled(1.0 / FLOW_SCALE);
    let valid_path = dir.join(named(prefix, SampleFiles::VALID));
    let valid =
        if valid_path.exists() { read_pgm(&valid_path)?.map(|v| if v > T::of(0.5) { T::one() } else { T::zero() }) } else { Tensor::ones(flow.shape().with_channels(1)) };
    let occ_paths = View::ALL.map(|v| dir.join(named(prefix, &SampleFiles::occlusion(v))));
    let occlusion = if occ_paths.iter().all(|p| p.exists()) {
        let [a, b, c] = occ_paths.map(|p| read_pgm(&p).and_then(OcclusionMap::new));
        Some([a?, b?, c?])
    } else {
        None
    };
    Ok(GroundTruth { flow, valid, occlusion })
}

const BACKWARD_PREFIX: &str = "bwd_";

/// Writes `sample` (batch size 1) into `dir`, creating it if needed.
pub fn save_sample<T: Scalar>(dir: &Path, sample: &Sample<T>) -> Result<()> {
    if sample.shape().n != 1 {
        return Err(Error::invalid("save_sample", "only single samples can be saved"));
    }
    std::fs::create_dir_all(dir)?;
    for (name, im) in SampleFiles::IMAGES.iter().zip(&sample.images) {
        write_ppm(&dir.join(name), im)?;
    }
    save_truth(dir, "", &sample.truth)?;
    if let Some(b) = &sample.backward {
        save_truth(dir, BACKWARD_PREFIX, b)?;
    }
    Ok(())
}

pub fn load_sample<T: Scalar>(dir: &Path) -> Result<Sample<T>> {
    let [a, b, c, d] = SampleFiles::IMAGES.map(|name| read_ppm(&dir.join(name)));
    let images = [a?, b?, c?, d?];
    let truth = load_truth(dir, "")?;
    let backward = if dir.join(named(BACKWARD_PREFIX, SampleFiles::FLOW)).exists() { Some(load_truth(dir, BACKWARD_PREFIX)?) } else { None };
    let sample = Sample { images, truth, backward };
    sample.validate()?;
    Ok(sample)
}

/// Sample directories below `root`, sorted by name.
pub fn list_samples(root: &Path) -> Result<Vec<PathBuf>> {
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(root)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join(SampleFiles::IMAGES[0]).is_file())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(Error::Missing { kind: "samples in", name: root.display().to_string() });
    }
    Ok(dirs)
}
