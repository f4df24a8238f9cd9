use proptest::prelude::*;

use weavecount::dataset::{synth_fabric, WeaveParams};
use weavecount::freqcount::{fa_on_mask, ft_density, FtParams};
use weavecount::imgproc::GrayImage;
use weavecount::preprocess::{preprocess, PreprocessParams};

fn plaid(fx: f64, fy: f64, ax: f64, ay: f64, phase: f64) -> GrayImage {
    let tau = 2.0 * std::f64::consts::PI;
    GrayImage::from_fn(200, 200, 200.0, |x, y| {
        ax * (tau * fx * x as f64 / 200.0 + phase).cos() + ay * (tau * fy * y as f64 / 200.0 - phase).cos()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn plaid_tones_are_recovered(fx in 5.0f64..28.0, fy in 5.0f64..28.0, phase in 0.0f64..6.0) {
        let e = ft_density(&plaid(fx, fy, 1.0, 0.8, phase), &FtParams::default()).unwrap();
        prop_assert!((e.h.unwrap() - fx).abs() < 0.1, "{:?}", e);
        prop_assert!((e.v.unwrap() - fy).abs() < 0.1, "{:?}", e);
    }
}

#[test]
fn synthetic_fabric_and_its_mask() {
    let p = WeaveParams {
        h_density: 12.0,
        v_density: 9.0,
        ..WeaveParams::default()
    };
    let s = synth_fabric(&p, 200).unwrap();
    let img = preprocess(&s.image, &PreprocessParams::default()).unwrap();
    let ft = ft_density(&img, &FtParams::default()).unwrap();
    assert!((ft.h.unwrap() - 12.0).abs() < 0.3, "{ft:?}");
    assert!((ft.v.unwrap() - 9.0).abs() < 0.3, "{ft:?}");
    let fa = fa_on_mask(&s.mask.to_image(200.0), &FtParams::default()).unwrap();
    assert!((fa.h.unwrap() - 12.0).abs() < 0.3, "{fa:?}");
    assert!((fa.v.unwrap() - 9.0).abs() < 0.3, "{fa:?}");
}

#[test]
fn one_axis_only() {
    let e = ft_density(&plaid(11.0, 0.0, 1.0, 0.0, 0.2), &FtParams::default()).unwrap();
    assert!((e.h.unwrap() - 11.0).abs() < 0.1);
    assert_eq!(e.v, None);
}

#[test]
fn low_frequency_shading_does_not_mask_the_weave() {
    let tone = plaid(13.0, 9.0, 0.3, 0.3, 0.4);
    let shaded = GrayImage::from_fn(200, 200, 200.0, |x, y| {
        tone.get(x, y) + 2.0 * (std::f64::consts::PI * x as f64 / 200.0).sin() + 0.01 * y as f64
    });
    let e = ft_density(&shaded, &FtParams::default()).unwrap();
    assert!((e.h.unwrap() - 13.0).abs() < 0.1, "{e:?}");
    assert!((e.v.unwrap() - 9.0).abs() < 0.1, "{e:?}");
}
