//! Training-set export.
//!
//! Layout of a dataset directory:
//!
//! ```text
//! manifest.json     parameters, mean phantoms and a digest of samples.jsonl
//! samples.jsonl     one perturbed ellipse set per line
//! images/NNNNN.ctimg  optional rasterizations
//! ```

use std::fs;
use std::io::Write;

use anyhow::{Context, Result};
use ctlab_core::io::write_image;
use ctlab_core::phantom::{
    experimental_shepp_logan, rasterize, sample_dataset, standard_shepp_logan, EllipseSet, PerturbationConfig,
    PhantomLabel,
};
use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::{DatasetKind, Plan};
use crate::output::version;

pub const MANIFEST_FORMAT: &str = "ctlab-dataset/1";

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub format: &'static str,
    pub version: String,
    pub kind: DatasetKind,
    pub n: usize,
    pub seed: u64,
    pub perturbation: PerturbationConfig,
    pub mix_pi: f64,
    pub n_standard: usize,
    pub n_experimental: usize,
    pub standard_center: EllipseSet,
    pub experimental_center: EllipseSet,
    pub image_side: Option<usize>,
    pub pixel_size_mm: Option<f64>,
    pub samples_file: &'static str,
    pub samples_sha256: String,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Writes the dataset and returns the SHA-256 of the manifest bytes.
pub fn run_gen_dataset(plan: &Plan) -> Result<String> {
    let out = &plan.out;
    fs::create_dir_all(out).with_context(|| format!("cannot create {}", out.display()))?;
    let std_c = standard_shepp_logan();
    let exp_c = experimental_shepp_logan();
    let samples = sample_dataset(plan.dataset_n, &std_c, &exp_c, &plan.perturbation, plan.seed)?;

    let mut lines = Vec::new();
    for s in &samples {
        serde_json::to_writer(&mut lines, s)?;
        lines.push(b'\n');
    }
    fs::write(out.join("samples.jsonl"), &lines)?;

    let pixel = plan.dataset_image_side.map(|side| plan.geometry.pixel_size_for(side));
    if let (Some(side), Some(pixel)) = (plan.dataset_image_side, pixel) {
        let dir = out.join("images");
        fs::create_dir_all(&dir)?;
        samples.par_iter().try_for_each(|s| -> Result<()> {
            let img = rasterize(&s.phantom, side, pixel)?;
            write_image(&dir.join(format!("{:05}.ctimg", s.index)), &img)?;
            Ok(())
        })?;
    }

    let n_experimental = samples.iter().filter(|s| s.center == PhantomLabel::Experimental).count();
    let manifest = Manifest {
        format: MANIFEST_FORMAT,
        version: version(),
        kind: plan.dataset_kind,
        n: plan.dataset_n,
        seed: plan.seed,
        perturbation: plan.perturbation,
        mix_pi: plan.perturbation.mix_pi,
        n_standard: samples.len() - n_experimental,
        n_experimental,
        standard_center: std_c,
        experimental_center: exp_c,
        image_side: plan.dataset_image_side,
        pixel_size_mm: pixel,
        samples_file: "samples.jsonl",
        samples_sha256: hex(&Sha256::digest(&lines)),
    };
    let mut bytes = serde_json::to_vec_pretty(&manifest)?;
    bytes.push(b'\n');
    let mut f = fs::File::create(out.join("manifest.json"))?;
    f.write_all(&bytes)?;
    Ok(hex(&Sha256::digest(&bytes)))
}
