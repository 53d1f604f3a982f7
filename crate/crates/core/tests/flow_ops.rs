mod common;

use common::{max_abs_diff, naive_cost, naive_sample};
use pwoc_core::flow::{
    apply_occlusion_mask, bilinear_sample, cost_volume_1d, cost_volume_2d, level_factor, warp_disparity_1d,
    warp_flow_2d, warp_flow_disparity_2d,
};
use pwoc_core::{Shape, Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn cost(reference: &Tensor<f32>, target: &Tensor<f32>, d_max: usize, two_d: bool) -> Tensor<f32> {
    let mut tape = Tape::new();
    let r = tape.constant(reference.clone());
    let t = tape.constant(target.clone());
    let v = if two_d { cost_volume_2d(&mut tape, r, t, d_max) } else { cost_volume_1d(&mut tape, r, t, d_max) };
    tape.value(v.unwrap()).clone()
}

#[test]
fn cost_volumes_match_naive_loops() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut instances = 0;
    for i in 0..24 {
        let d_max = [1, 2, 4][i % 3];
        let s = Shape::new(rng.random_range(1..3), rng.random_range(1..9), rng.random_range(1..8), rng.random_range(1..11));
        let a = Tensor::<f32>::uniform(s, -1.0, 1.0, &mut rng);
        let b = Tensor::<f32>::uniform(s, -1.0, 1.0, &mut rng);
        for two_d in [false, true] {
            let got = cost(&a, &b, d_max, two_d);
            let want = naive_cost(&a, &b, d_max, two_d);
            let err = max_abs_diff(&got, &want);
            assert!(err <= 1e-5, "instance {i} d_max {d_max} 2d {two_d}: {err}");
        }
        instances += 1;
    }
    assert!(instances >= 20);
}

#[test]
fn radius_four_has_nine_and_eighty_one_channels() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let s = Shape::new(1, 8, 6, 10);
    let a = Tensor::<f32>::uniform(s, -1.0, 1.0, &mut rng);
    let b = Tensor::<f32>::uniform(s, -1.0, 1.0, &mut rng);
    assert_eq!(cost(&a, &b, 4, false).shape(), Shape::new(1, 9, 6, 10));
    assert_eq!(cost(&a, &b, 4, true).shape(), Shape::new(1, 81, 6, 10));
}

#[test]
fn cost_channel_layout_by_hand() {
    // one-hot target at (x=3, y=1); reference all ones, two channels
    let s = Shape::new(1, 2, 3, 5);
    let a = Tensor::<f32>::ones(s);
    let b = Tensor::from_fn(s, |_, _, y, x| if (x, y) == (3, 1) { 1.0 } else { 0.0 });
    let one = cost(&a, &b, 2, false);
    // pixel (x=1, y=1) sees the hot spot at offset +2 -> channel 4
    assert_eq!(one.at(0, 4, 1, 1), 1.0);
    assert_eq!(one.at(0, 3, 1, 1), 0.0);
    let two = cost(&a, &b, 1, true);
    // pixel (x=2, y=2) sees it at (q0, q1) = (+1, -1) -> channel (1+1)*3 + (-1+1) = 6
    assert_eq!(two.at(0, 6, 2, 2), 1.0);
    assert_eq!(two.data().iter().filter(|&&v| v != 0.0).count(), 9);
    // offsets leaving the frame read zero
    assert_eq!(one.at(0, 0, 1, 0), 0.0);
}

#[test]
fn bilinear_half_pixel_shift_zero_fills_the_border() {
    let mut tape = Tape::<f64>::new();
    let s = Shape::new(1, 1, 1, 4);
    let f = tape.constant(Tensor::from_vec(s, vec![0.0, 1.0, 2.0, 3.0]).unwrap());
    let cx = tape.constant(Tensor::grid_x(s).map(|x| x - 0.5));
    let cy = tape.constant(Tensor::grid_y(s));
    let out = bilinear_sample(&mut tape, f, cx, cy).unwrap();
    assert_eq!(tape.value(out).data(), &[0.0, 0.5, 1.5, 2.5]);
}

fn warp1(values: &[f64], d_pixels: f64, level: u32) -> Vec<f64> {
    let s = Shape::new(1, 1, 1, values.len());
    let mut tape = Tape::<f64>::new();
    let f = tape.constant(Tensor::from_vec(s, values.to_vec()).unwrap());
    let d = tape.constant(Tensor::full(s, d_pixels / level_factor(level)));
    let out = warp_disparity_1d(&mut tape, f, d, level).unwrap();
    tape.value(out).data().to_vec()
}

#[test]
fn disparity_warp_shifts_along_the_row() {
    assert_eq!(warp1(&[0.0, 1.0, 2.0, 3.0], 1.0, 2), vec![0.0, 0.0, 1.0, 2.0]);
    let half = warp1(&[0.0, 1.0, 2.0, 3.0], 0.5, 3);
    assert_eq!(&half[1..], &[0.5, 1.5, 2.5]);
    assert_eq!(warp1(&[4.0, 5.0], 0.0, 6), vec![4.0, 5.0]);
}

#[test]
fn vertical_flow_warp_is_the_transposed_row_shift() {
    let s = Shape::new(1, 1, 4, 1);
    let level = 4;
    let mut tape = Tape::<f64>::new();
    let f = tape.constant(Tensor::from_vec(s, vec![0.0, 1.0, 2.0, 3.0]).unwrap());
    let u = Tensor::zeros(s);
    let v = Tensor::full(s, -1.0 / level_factor(level));
    let uv = tape.constant(Tensor::concat_channels(&[&u, &v]).unwrap());
    let out = warp_flow_2d(&mut tape, f, uv, level).unwrap();
    assert_eq!(tape.value(out).data(), &[0.0, 0.0, 1.0, 2.0]);
}

#[test]
fn flow_warp_matches_per_pixel_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for level in 2..=6 {
        let s = Shape::new(2, 3, 7, 9);
        let feat = Tensor::<f64>::uniform(s, -1.0, 1.0, &mut rng);
        let uv = Tensor::<f64>::uniform(s.with_channels(2), -0.3, 0.3, &mut rng);
        let d1 = Tensor::<f64>::uniform(s.with_channels(1), -0.2, 0.2, &mut rng);
        let a = level_factor(level);
        let mut tape = Tape::new();
        let (fv, uvv, dv) = (tape.constant(feat.clone()), tape.constant(uv.clone()), tape.constant(d1.clone()));
        let w2 = warp_flow_2d(&mut tape, fv, uvv, level).unwrap();
        let w3 = warp_flow_disparity_2d(&mut tape, fv, uvv, dv, level).unwrap();
        let want2 = Tensor::from_fn(s, |n, c, y, x| {
            naive_sample(&feat, n, c, x as f64 + a * uv.at(n, 0, y, x), y as f64 + a * uv.at(n, 1, y, x))
        });
        let want3 = Tensor::from_fn(s, |n, c, y, x| {
            let sx = x as f64 + a * (uv.at(n, 0, y, x) - d1.at(n, 0, y, x));
            naive_sample(&feat, n, c, sx, y as f64 + a * uv.at(n, 1, y, x))
        });
        assert!(max_abs_diff(tape.value(w2), &want2) <= 1e-6);
        assert!(max_abs_diff(tape.value(w3), &want3) <= 1e-6);
    }
}

#[test]
fn warp_reductions() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let s = Shape::new(1, 4, 8, 8);
    let g = s.with_channels(1);
    let level = 3;
    let feat = Tensor::<f64>::uniform(s, -1.0, 1.0, &mut rng);
    let uv = Tensor::<f64>::uniform(s.with_channels(2), -0.2, 0.2, &mut rng);
    let d = Tensor::<f64>::uniform(g, -0.2, 0.2, &mut rng);
    let mut tape = Tape::new();
    let f = tape.constant(feat.clone());
    let zero1 = tape.constant(Tensor::zeros(g));
    let zero2 = tape.constant(Tensor::zeros(s.with_channels(2)));
    let uvv = tape.constant(uv);
    let dv = tape.constant(d.clone());

    // zero displacement is the identity, bit for bit
    for out in [
        warp_disparity_1d(&mut tape, f, zero1, level).unwrap(),
        warp_flow_2d(&mut tape, f, zero2, level).unwrap(),
        warp_flow_disparity_2d(&mut tape, f, zero2, zero1, level).unwrap(),
    ] {
        assert_eq!(tape.value(out).data(), feat.data());
    }

    // no disparity: same as the optical flow warp
    let a = warp_flow_disparity_2d(&mut tape, f, uvv, zero1, level).unwrap();
    let b = warp_flow_2d(&mut tape, f, uvv, level).unwrap();
    assert_eq!(tape.value(a).data(), tape.value(b).data());

    // no flow: the disparity warp with d1 in place of d0
    let a = warp_flow_disparity_2d(&mut tape, f, zero2, dv, level).unwrap();
    let b = warp_disparity_1d(&mut tape, f, dv, level).unwrap();
    assert!(max_abs_diff(tape.value(a), tape.value(b)) <= 1e-12);

    // u = d1, v = 0 cancels
    let v0 = Tensor::zeros(g);
    let uv_eq = tape.constant(Tensor::concat_channels(&[&d, &v0]).unwrap());
    let out = warp_flow_disparity_2d(&mut tape, f, uv_eq, dv, level).unwrap();
    assert_eq!(tape.value(out).data(), feat.data());
    let one = 1.0 / level_factor(level);
    let uv_one = tape.constant(Tensor::concat_channels(&[&Tensor::full(g, one), &v0]).unwrap());
    let d_one = tape.constant(Tensor::full(g, one));
    let out = warp_flow_disparity_2d(&mut tape, f, uv_one, d_one, level).unwrap();
    assert_eq!(tape.value(out).data(), feat.data());
}

#[test]
fn occlusion_mask_scales_and_zeroes_costs() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let s = Shape::new(1, 5, 6, 7);
    let feat = Tensor::<f32>::uniform(s, -1.0, 1.0, &mut rng);
    let reference = Tensor::<f32>::uniform(s, -1.0, 1.0, &mut rng);
    let mut tape = Tape::new();
    let f = tape.constant(feat.clone());
    let r = tape.constant(reference);
    for (o, k) in [(1.0f32, 1.0f32), (0.5, 0.5), (0.0, 0.0)] {
        let occ = tape.constant(Tensor::full(s.with_channels(1), o));
        let m = apply_occlusion_mask(&mut tape, f, occ).unwrap();
        assert_eq!(tape.value(m).data(), feat.scaled(k).data());
        if o == 0.0 {
            for v in [cost_volume_1d(&mut tape, r, m, 4).unwrap(), cost_volume_2d(&mut tape, r, m, 4).unwrap()] {
                assert!(tape.value(v).data().iter().all(|&c| c == 0.0));
            }
        }
    }
    let bad = tape.constant(Tensor::zeros(Shape::new(1, 1, 6, 6)));
    assert!(apply_occlusion_mask(&mut tape, f, bad).is_err());
}
