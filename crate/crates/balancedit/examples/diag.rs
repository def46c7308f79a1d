//! Scratch diagnostic: key geometry at the editable layer for a checkpoint.

use std::path::Path;

use balancedit::backbone::{BackboneModel, ImageFeature};
use balancedit::codebook::{compute_key, DistanceFn};
use balancedit::worldgen::read_suite;

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let model = BackboneModel::load(Path::new(&args[1])).unwrap();
    let suite = read_suite(Path::new(&args[2])).unwrap();
    let d = DistanceFn::Euclidean;

    let mut key_norms = Vec::new();
    let mut d_self = Vec::new(); // edit key -> in-scope image probe keys
    let mut d_unrel = Vec::new(); // edit key -> unrelated probe key
    let mut d_black = Vec::new(); // edit key -> black anchor key (same prompt)
    let mut d_loc = Vec::new(); // edit key -> locality probe keys

    for case in suite.cases.iter().take(20) {
        let k = compute_key(&model, &case.image, &case.prompt).unwrap();
        key_norms.push(norm(&k));
        for p in &case.image_probes {
            let kp = compute_key(&model, &p.image, &case.prompt).unwrap();
            d_self.push(d.distance(&k, &kp).unwrap());
        }
        let ku =
            compute_key(&model, &case.unrelated.image, &case.unrelated.prompt).unwrap();
        d_unrel.push(d.distance(&k, &ku).unwrap());
        let kb = compute_key(&model, &ImageFeature::black(model.config.d_img), &case.prompt)
            .unwrap();
        d_black.push(d.distance(&k, &kb).unwrap());
        for p in &case.locality_probes {
            let kl = compute_key(&model, &p.image, &p.prompt).unwrap();
            d_loc.push(d.distance(&k, &kl).unwrap());
        }
    }

    let stats = |name: &str, v: &mut Vec<f64>| {
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        println!(
            "{name:8} n={:3} min={:8.2} med={:8.2} mean={:8.2} max={:8.2}",
            v.len(),
            v[0],
            v[v.len() / 2],
            mean,
            v[v.len() - 1]
        );
    };
    stats("knorm", &mut key_norms);
    stats("d_self", &mut d_self);
    stats("d_loc", &mut d_loc);
    stats("d_unrel", &mut d_unrel);
    stats("d_black", &mut d_black);
}
