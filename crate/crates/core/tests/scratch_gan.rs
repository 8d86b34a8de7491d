use maskforge_core::detkit::{Detector, DetectorConfig};
use maskforge_core::imageio::{gen_synthetic_scene, BinaryMask, SceneConfig};
use maskforge_core::rng::{derive_seed, seeded};
use maskforge_core::sepgan::{predict_mask, train_sepgan, SepGanConfig};
use maskforge_core::{PairedSample, Scalar};

fn scenes(count: usize, seed: u64) -> Vec<PairedSample> {
    let config = SceneConfig::default();
    (0..count)
        .map(|i| gen_synthetic_scene(derive_seed(seed, i as u64), &config).unwrap())
        .collect()
}

#[test]
fn probe_gan_mask_quality() {
    let train = scenes(64, 100);
    let held_out = scenes(16, 200);
    let detector =
        Detector::<Scalar>::init(DetectorConfig::new(64, 3), &mut seeded(0)).unwrap();
    let batch: usize = std::env::var("GAN_BATCH").map(|v| v.parse().unwrap()).unwrap_or(8);
    let lr_d: f64 = std::env::var("GAN_LRD").map(|v| v.parse().unwrap()).unwrap_or(1e-3);
    let lr_g: f64 = std::env::var("GAN_LRG").map(|v| v.parse().unwrap()).unwrap_or(1e-3);
    println!("batch {batch} lr_d {lr_d} lr_g {lr_g}");
    let epochs: usize = std::env::var("GAN_EPOCHS").map(|v| v.parse().unwrap()).unwrap_or(20);
    let lambda: f64 = std::env::var("GAN_LAMBDA").map(|v| v.parse().unwrap()).unwrap_or(10.0);
    let config = SepGanConfig {
        seed: 7,
        batch_size: batch,
        lr_d,
        lr_g,
        epochs,
        lambda_p: lambda,
        ..SepGanConfig::default()
    };
    let start = std::time::Instant::now();
    let (generator, _disc, losses) = train_sepgan(&train, &detector, &config).unwrap();
    println!("GAN training: {:.1}s", start.elapsed().as_secs_f64());
    for (i, l) in losses.iter().enumerate() {
        if i % 4 == 0 || i == losses.len() - 1 {
            println!(
                "epoch {i:>2}  d {:.4}  g {:.4}  p {:.4}",
                l.l_gan_d, l.l_gan_g, l.l_perceptual
            );
        }
    }
    let mut total = 0.0;
    let mut pred_frac = 0.0;
    let mut gt_frac = 0.0;
    for (i, sample) in held_out.iter().enumerate() {
        let pred = predict_mask(&generator, sample.image()).unwrap();
        let iou = BinaryMask::iou(&pred, sample.mask());
        let img = sample.image();
        let m = sample.mask();
        let npx = (img.width() * img.height()) as f64;
        let fg = m.count_ones() as f64;
        let mut fg_sum = [0.0f64; 3];
        let mut bg_sum = [0.0f64; 3];
        for y in 0..img.height() {
            for x in 0..img.width() {
                for c in 0..3 {
                    if m.get(x, y) {
                        fg_sum[c] += img.get(x, y, c);
                    } else {
                        bg_sum[c] += img.get(x, y, c);
                    }
                }
            }
        }
        let contrast: f64 = (0..3)
            .map(|c| (fg_sum[c] / fg - bg_sum[c] / (npx - fg)).abs())
            .sum::<f64>()
            / 3.0;
        println!(
            "scene {i:2}  iou {:.3}  objs {}  gtfill {:.3}  contrast {:.3}",
            iou,
            sample.boxes().len(),
            fg / npx,
            contrast
        );
        total += iou;
        let n = pred.values().len() as f64;
        pred_frac += pred.values().iter().map(|&v| v as usize).sum::<usize>() as f64 / n;
        gt_frac += sample.mask().values().iter().map(|&v| v as usize).sum::<usize>() as f64 / n;
    }
    let k = held_out.len() as f64;
    println!(
        "held-out mean mask IoU: {:.4} (pred fill {:.3}, gt fill {:.3})",
        total / k,
        pred_frac / k,
        gt_frac / k
    );
    let sample = &held_out[0];
    let pred = predict_mask(&generator, sample.image()).unwrap();
    let gt = sample.mask();
    let (w, h) = (pred.width(), pred.height());
    println!("held_out[0]: pred | gt  (4x4 blocks, #=mostly on)");
    for by in 0..h / 4 {
        let mut left = String::new();
        let mut right = String::new();
        for bx in 0..w / 4 {
            let mut pc = 0;
            let mut gc = 0;
            for dy in 0..4 {
                for dx in 0..4 {
                    let i = (by * 4 + dy) * w + bx * 4 + dx;
                    pc += pred.values()[i] as usize;
                    gc += gt.values()[i] as usize;
                }
            }
            left.push(if pc >= 8 { '#' } else if pc >= 2 { '+' } else { '.' });
            right.push(if gc >= 8 { '#' } else if gc >= 2 { '+' } else { '.' });
        }
        println!("{left} | {right}");
    }
}
