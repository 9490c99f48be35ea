use qtune::codec::{analyze, dequantize, encode_measure, quantize_hard, read_jfif, reconstruct_real, write_jfif};
use qtune::dct::{fdct_block, idct_block};
use qtune::diffproxy::{backward, effective_table, forward, forward_coeffs, EffectiveTables, Mode};
use qtune::entropy::EstimatorSet;
use qtune::evaluation::{compare_curves, sweep};
use qtune::image::psnr;
use qtune::optimizer::{total_loss, LossContext, LossWeights, Relaxation, Sample};
use qtune::synth::{labeled_corpus, natural_corpus};
use qtune::taskloss::{train_toy_classifier, ClassifierTraining, LabeledImage};
use qtune::{Layout, QuantTableParams, Quality, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn q(v: u32) -> Quality {
    Quality::new(v).unwrap()
}

#[test]
fn dct_round_trip_is_exact_to_1e9() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..200 {
        let b: [f64; 64] = std::array::from_fn(|_| rng.gen_range(-128.0..128.0));
        let back = idct_block(&fdct_block(&b));
        let err = b.iter().zip(&back).map(|(a, c)| (a - c).abs()).fold(0.0, f64::max);
        assert!(err < 1e-9, "{err}");
    }
}

#[test]
fn quantizer_error_is_bounded_by_half_a_step() {
    let p = QuantTableParams::default();
    for img in natural_corpus(5, 32, 4) {
        let d = analyze(&img, Layout::Yuv420);
        for quality in [10, 50, 90] {
            let t = p.scale_table(q(quality));
            let back = dequantize(&quantize_hard(&d, &t), &t);
            for (c, (a, b)) in d.channels.iter().zip(&back.channels).enumerate() {
                let table = t.table(c > 0);
                for (ba, bb) in a.blocks.iter().zip(&b.blocks) {
                    for k in 0..64 {
                        assert!((ba[k] - bb[k]).abs() <= f64::from(table[k]) / 2.0 + 1e-9);
                    }
                }
            }
        }
    }
}

#[test]
fn file_size_identity_and_monotone_rate() {
    let p = QuantTableParams::default();
    let mut monotone = 0;
    let images = natural_corpus(30, 32, 8);
    for img in &images {
        let hi = encode_measure(img, &p, q(90), Layout::Yuv420).unwrap();
        let lo = encode_measure(img, &p, q(10), Layout::Yuv420).unwrap();
        for m in [&hi, &lo] {
            assert_eq!(m.bpp * img.pixels() as f64, 8.0 * m.file.bytes.len() as f64);
        }
        if hi.bpp >= lo.bpp {
            monotone += 1;
        }
    }
    assert!(monotone as f64 >= 0.99 * images.len() as f64);
}

#[test]
fn jfif_round_trip_in_both_layouts() {
    let img = natural_corpus(1, 40, 3).pop().unwrap();
    for layout in [Layout::Yuv420, Layout::Yuv444] {
        let t = QuantTableParams::default().scale_table(q(75));
        let coeffs = quantize_hard(&analyze(&img, layout), &t);
        let file = write_jfif(&t, &coeffs).unwrap();
        let back = read_jfif(&file.bytes).unwrap();
        assert_eq!(back.tables, t);
        assert_eq!(back.coeffs, coeffs);
    }
}

#[test]
fn proxy_hard_mode_matches_codec_above_80_db() {
    let p = QuantTableParams::default();
    for img in natural_corpus(4, 48, 6) {
        let out = forward(&img, &p, q(50), Layout::Yuv420, Mode::Hard);
        let m = encode_measure(&img, &p, q(50), Layout::Yuv420).unwrap();
        assert!(psnr(&out.reconstruction.to_rgb8(), &m.reconstruction) > 80.0);
    }
}

#[test]
fn hard_mode_equals_codec_with_integer_tables() {
    let img = natural_corpus(1, 32, 12).pop().unwrap();
    let d = analyze(&img, Layout::Yuv420);
    let t = QuantTableParams::default().scale_table(q(90));
    let proxy = forward_coeffs(&d, &EffectiveTables::identity(&t.to_params()), Mode::Hard).reconstruction;
    let codec = reconstruct_real(&quantize_hard(&d, &t), &t);
    for (a, b) in proxy.data.iter().zip(&codec.data) {
        assert!((a - b.clamp(0.0, 255.0)).abs() < 1e-6);
    }
}

#[test]
fn constant_gray_image_is_reproduced_for_any_table() {
    let img = RgbImage::from_fn(16, 16, |_, _| [128, 128, 128]).unwrap();
    let p = QuantTableParams::default().map(|v| v * 3.7);
    let out = forward(&img, &p, q(20), Layout::Yuv420, Mode::Soft);
    assert!(out.reconstruction.data.iter().all(|&v| (v - 128.0).abs() < 1e-9));
}

#[test]
fn coarser_tables_do_not_reduce_distortion() {
    let base = QuantTableParams::default();
    let coarse = base.map(|v| v * 10.0);
    let images = natural_corpus(20, 16, 21);
    let mut ok = 0;
    for img in &images {
        let x = img.to_real();
        let sse = |p: &QuantTableParams| {
            let r = forward(img, p, q(50), Layout::Yuv420, Mode::Soft).reconstruction;
            r.data.iter().zip(&x.data).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
        };
        if sse(&coarse) >= sse(&base) {
            ok += 1;
        }
    }
    assert!(ok >= 19, "{ok}/20");
}

#[test]
fn backward_is_linear_in_upstream_gradient() {
    let img = natural_corpus(1, 16, 2).pop().unwrap();
    let out = forward(&img, &QuantTableParams::default(), q(40), Layout::Yuv420, Mode::Soft);
    let mut g = img.to_real();
    for v in g.data.iter_mut() {
        *v -= 100.0;
    }
    let once = backward(&out.tape, Some(&g), None).unwrap();
    g.scale(2.0);
    let twice = backward(&out.tape, Some(&g), None).unwrap();
    for (a, b) in once.iter().zip(twice.iter()) {
        assert!((2.0 * a - b).abs() <= 1e-9 * b.abs().max(1.0));
    }
    let zero = backward(&out.tape, None, None).unwrap();
    assert!(zero.iter().all(|&v| v == 0.0));
}

#[test]
fn effective_table_examples() {
    let e = effective_table(&QuantTableParams::default(), q(90));
    assert!((e.tables.luma[0] - 3.2).abs() < 1e-12);
    assert!((e.jacobian.luma[0] - 0.2).abs() < 1e-12);
    assert_eq!(effective_table(&QuantTableParams::default(), q(50)).tables, QuantTableParams::default());
}

#[test]
fn batch_gradient_is_mean_of_per_image_gradients() {
    let samples: Vec<Sample> = natural_corpus(4, 16, 9).into_iter().map(|i| Sample::new(i, None, Layout::Yuv420)).collect();
    let set = EstimatorSet::default();
    let p = QuantTableParams::default();
    let ctx = LossContext {
        tables: &p,
        entropy: &set,
        weights: LossWeights::rate_distortion(),
        classifier: None,
        relaxation: Relaxation::Noise,
    };
    let grads: Vec<_> = samples
        .iter()
        .enumerate()
        .map(|(i, s)| total_loss(s, q(30), &ctx, Some(&mut ChaCha8Rng::seed_from_u64(i as u64))).unwrap().grad_p)
        .collect();
    let mean: Vec<f64> = (0..128).map(|k| grads.iter().map(|g| g.iter().nth(k).unwrap()).sum::<f64>() / 4.0).collect();
    let again: Vec<f64> = (0..128)
        .map(|k| grads.iter().fold(0.0, |a, g| a + g.iter().nth(k).unwrap() * 0.25))
        .collect();
    for (a, b) in mean.iter().zip(&again) {
        assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
    }
}

#[test]
fn sweep_is_deterministic_and_comparison_antisymmetric() {
    let samples: Vec<Sample> = natural_corpus(3, 32, 5).into_iter().map(|i| Sample::new(i, None, Layout::Yuv420)).collect();
    let qs = [20, 40, 60, 80];
    let a = sweep(&QuantTableParams::default(), &samples, &qs, None, None).unwrap();
    assert_eq!(a, sweep(&QuantTableParams::default(), &samples, &qs, None, None).unwrap());
    let b = sweep(&QuantTableParams::default().map(|v| (v * 0.8).max(1.0)), &samples, &qs, None, None).unwrap();
    let ab = compare_curves(&a, &b).unwrap();
    let ba = compare_curves(&b, &a).unwrap();
    assert_eq!(ab.psnr_at_bpp.grid, ba.psnr_at_bpp.grid);
    for (x, y) in ab.psnr_at_bpp.delta.iter().zip(&ba.psnr_at_bpp.delta) {
        assert!((x + y).abs() < 1e-9);
    }
}

#[test]
fn heavy_compression_costs_classifier_accuracy() {
    let fit = labeled_corpus(200, 32, 4, 31);
    let clf = train_toy_classifier(&fit, &ClassifierTraining { classes: 4, ..Default::default() }).unwrap();
    let test = labeled_corpus(200, 32, 4, 32);
    let clean = clf.accuracy(&test).unwrap();
    let compressed: Vec<LabeledImage> = test
        .iter()
        .map(|l| LabeledImage {
            image: encode_measure(&l.image, &QuantTableParams::default(), q(5), Layout::Yuv420).unwrap().reconstruction,
            label: l.label,
        })
        .collect();
    let heavy = clf.accuracy(&compressed).unwrap();
    assert!(clean >= 0.95, "{clean}");
    assert!(clean - heavy >= 0.05, "{clean} vs {heavy}");
}
