use nalgebra::DMatrix;
use rsm_core::gallery::{Gallery, ProbeSet};
use rsm_core::inference::{run_inference, Hyperparams, InferenceConfig};

fn main() {
    // overflow-scale dictionary drives the Gram matrix to infinity
    let a = DMatrix::from_element(2, 2, 1e308);
    let gallery = Gallery::build(a, &[1, 2]).unwrap();
    let probe = ProbeSet::new(DMatrix::from_element(2, 1, 1.0)).unwrap();
    let out = run_inference(&gallery, &probe, &Hyperparams::default(), &InferenceConfig::default(), None);
    println!("{out:?}");
}
