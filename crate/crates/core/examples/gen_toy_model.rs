//! Regenerates the bundled toy CNN and its golden fixture.
//!
//!     cargo run -p meshfi-core --example gen_toy_model -- crates/core/fixtures

use std::path::PathBuf;

use meshfi_core::qnn::{
    forward, gemm_operands, run_from, save_model, synthetic_input, LayerKind, LayerSpec, ModelSpec, QuantTensor,
    INPUT_SEED,
};
use meshfi_core::tiling::reference_gemm;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

const WEIGHT_SEED: u64 = 0x707C_0DE1;
const CALIB_SEED: u64 = 0xCA11_B8A7;
const CALIB_INPUTS: usize = 32;
const GOLDEN_INPUTS: usize = 16;

fn weights(rng: &mut ChaCha8Rng, n: usize) -> Vec<i8> {
    (0..n).map(|_| rng.gen_range(-127..=127)).collect()
}

fn accs(model: &ModelSpec, layer: usize, inputs: &[QuantTensor]) -> Vec<i32> {
    let mut out = Vec::new();
    for x in inputs {
        let act = run_from(&ModelSpec { layers: model.layers[..layer].to_vec(), ..model.clone() }, 0, x.clone(), None)
            .unwrap_or_else(|_| x.clone());
        let ops = gemm_operands(model, layer, &act).unwrap();
        out.extend_from_slice(reference_gemm(&ops.a, &ops.b, &ops.bias).unwrap().as_slice());
    }
    out
}

fn main() {
    let dir: PathBuf = std::env::args().nth(1).unwrap_or_else(|| "crates/core/fixtures".into()).into();
    std::fs::create_dir_all(&dir).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(WEIGHT_SEED);

    let mut model = ModelSpec {
        name: "toy-cnn".into(),
        input_shape: [1, 16, 16],
        input_scale: 1.0 / 127.0,
        num_classes: 10,
        layers: vec![
            LayerSpec::conv2d(1, 8, 3, 1, 1, weights(&mut rng, 8 * 9), 0.01, vec![0; 8], 1.0),
            LayerSpec::simple(LayerKind::ReLU),
            LayerSpec::pool(LayerKind::MaxPool2d, 2, 2),
            LayerSpec::conv2d(8, 16, 3, 1, 1, weights(&mut rng, 16 * 72), 0.01, vec![0; 16], 1.0),
            LayerSpec::simple(LayerKind::Flatten),
            LayerSpec::dense(1024, 10, weights(&mut rng, 10 * 1024), 0.01, vec![0; 10], 1.0),
        ],
    };

    // Calibration walks the GEMM layers in order so each one sees inputs
    // quantized with the already-fixed scales upstream.
    let calib: Vec<QuantTensor> = (0..CALIB_INPUTS).map(|i| synthetic_input(&model, CALIB_SEED, i)).collect();
    let mut in_scale = model.input_scale;
    for idx in model.gemm_layers() {
        let raw = accs(&model, idx, &calib);
        let n = raw.len() as f64;
        let mean = raw.iter().map(|&v| v as f64).sum::<f64>() / n;
        let sd = (raw.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n).sqrt();
        let span = (sd / 4.0).max(1.0) as i32;
        let m = model.layers[idx].bias.as_ref().unwrap().len();
        model.layers[idx].bias = Some((0..m).map(|_| rng.gen_range(-span..=span)).collect());

        let biased = accs(&model, idx, &calib);
        let peak = biased.iter().map(|&v| v.unsigned_abs()).max().unwrap().max(1) as f64;
        let w_scale = model.layers[idx].scale.unwrap();
        let out_scale = peak * in_scale * w_scale / 127.0;
        model.layers[idx].output_scale = Some(out_scale);
        in_scale = out_scale;
        println!("layer {idx}: acc sd {sd:.0}, peak {peak:.0}, output_scale {out_scale:.6e}");
    }
    model.validate().unwrap();
    save_model(&model, dir.join("toy_cnn.json")).unwrap();

    let mut golden = Vec::new();
    for id in 0..GOLDEN_INPUTS {
        let r = forward(&model, &synthetic_input(&model, INPUT_SEED, id), None).unwrap();
        println!("input {id}: top1 {} logits {:?}", r.top1, r.logits);
        golden.push(json!({ "id": id, "top1": r.top1, "logits": r.logits }));
    }
    let doc = json!({ "model": "toy_cnn.json", "input_seed": INPUT_SEED, "inputs": golden });
    std::fs::write(dir.join("golden.json"), serde_json::to_string_pretty(&doc).unwrap() + "\n").unwrap();
}
