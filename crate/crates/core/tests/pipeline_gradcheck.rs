//! Finite-difference check of the fully composed training pipeline:
//! estimator -> batched multi-frame filter -> inverse STFT -> SI-SDR
//! loss, at toy scale (K = 5 bins, L = 3, hidden 8, 20 frames).

use mfaes_core::estimator::{Estimator, EstimatorConfig};
use mfaes_core::nn::gradcheck::check_gradients;
use mfaes_core::nn::Graph;
use mfaes_core::rng;
use mfaes_core::stft::{analyze, StftConfig, WindowKind};
use mfaes_core::train::mfmvdr_scene_loss;
use mfaes_core::wav::Waveform;

#[test]
fn full_pipeline_gradients_match_finite_differences() {
    let stft = StftConfig { frame_len: 8, hop: 4, fft_size: 8, window: WindowKind::Hann };
    let frames = 20;
    let len = (frames - 1) * stft.hop + stft.frame_len;
    let mut rng = rng::rng_from_seed(4242);
    let mk_wav = |rng: &mut rand_chacha::ChaCha8Rng| {
        Waveform::new((0..len).map(|_| 0.4 * rng::normal::<f64>(rng)).collect(), 16_000).unwrap()
    };
    let mic = mk_wav(&mut rng);
    let far = mk_wav(&mut rng);
    let near = mk_wav(&mut rng);
    let noisy_spec = analyze(&mic, &stft).unwrap();
    let far_spec = analyze(&far, &stft).unwrap();

    let cfg = EstimatorConfig {
        filter_len: 3,
        num_bins: 5,
        shared_blocks: 2,
        task_blocks: 2,
        trunk_hidden: 8,
        cgru_hidden: 8,
        kernel: 3,
    };
    let mut model = Estimator::<f64>::new(cfg, 99).unwrap();
    // Perturb the zero-initialized head weights so every parameter sits
    // at a generic point (exact zeros hide sign errors behind symmetry).
    for entry in model.store.entries.iter_mut() {
        for v in entry.data.iter_mut() {
            *v += 0.05 * rng::normal::<f64>(&mut rng);
        }
    }

    let shapes: Vec<Vec<usize>> = model.store.entries.iter().map(|e| e.shape.clone()).collect();
    let mut params: Vec<Vec<f64>> = model.store.entries.iter().map(|e| e.data.clone()).collect();

    let near_samples = near.samples.clone();
    let eval = |model: &mut Estimator<f64>,
                vals: &[Vec<f64>],
                want: bool|
     -> (f64, Option<Vec<Vec<f64>>>) {
        for (entry, v) in model.store.entries.iter_mut().zip(vals.iter()) {
            entry.data = v.clone();
        }
        let mut g = Graph::new();
        let (loss, ids) =
            mfmvdr_scene_loss(&mut g, model, &noisy_spec, &far_spec, &near_samples, true)
                .unwrap();
        let v = g.scalar_value(loss);
        if !want {
            return (v, None);
        }
        let grads = g.backward(loss).unwrap();
        let out = ids
            .iter()
            .zip(shapes.iter())
            .map(|(id, s)| {
                grads
                    .get(*id)
                    .map(|x| x.to_vec())
                    .unwrap_or_else(|| vec![0.0; s.iter().product()])
            })
            .collect();
        (v, Some(out))
    };

    let (loss0, analytic) = eval(&mut model, &params, true);
    assert!(loss0.is_finite());
    let analytic = analytic.unwrap();
    let n_params: usize = params.iter().map(|p| p.len()).sum();
    println!("toy pipeline: {} parameters, loss {loss0:.4}", n_params);

    let report = check_gradients(
        &mut params,
        &analytic,
        |vals| {
            let mut m = model.clone();
            eval(&mut m, vals, false).0
        },
        1e-5,
        1e-7,
    );
    println!(
        "full-pipeline gradcheck: max rel err {:.3e} over {} elements (worst tensor {} elem {})",
        report.max_rel_err, report.checked, report.worst_tensor, report.worst_element
    );
    assert!(report.max_rel_err < 1e-3, "rel err {}", report.max_rel_err);
}
