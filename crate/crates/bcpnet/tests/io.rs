use bcpnet::io::{load_image, save_image, save_pnm};
use bcpnet_core::RasterImage;

fn write(dir: &tempfile::TempDir, name: &str, bytes: &[u8]) -> std::path::PathBuf {
    let p = dir.path().join(name);
    std::fs::write(&p, bytes).unwrap();
    p
}

#[test]
fn pgm_full_scale_loads_as_one() {
    let dir = tempfile::tempdir().unwrap();
    let mut bytes = b"P5\n4 2\n255\n".to_vec();
    bytes.extend([255u8; 8]);
    let img = load_image(write(&dir, "a.pgm", &bytes)).unwrap();
    assert_eq!((img.width(), img.height(), img.channels()), (4, 2, 1));
    assert!(img.data().iter().all(|&v| v == 1.0));
}

#[test]
fn ppm_zero_and_mid_values() {
    let dir = tempfile::tempdir().unwrap();
    let mut bytes = b"P6\n2 1\n255\n".to_vec();
    bytes.extend([0u8, 0, 0, 128, 128, 128]);
    let img = load_image(write(&dir, "a.ppm", &bytes)).unwrap();
    assert_eq!(img.channels(), 3);
    for c in 0..3 {
        assert_eq!(img.get(0, 0, c), 0.0);
        assert_eq!(img.get(0, 1, c), 128.0 / 255.0);
    }
}

#[test]
fn half_saves_as_128() {
    let dir = tempfile::tempdir().unwrap();
    let img = RasterImage::filled(3, 2, 1, 0.5).unwrap();
    let p = dir.path().join("h.pgm");
    save_pnm(&img, &p).unwrap();
    let bytes = std::fs::read(&p).unwrap();
    assert!(bytes.ends_with(&[128; 6]));
    let png = dir.path().join("h.png");
    save_image(&img, &png).unwrap();
    assert!(load_image(&png).unwrap().data().iter().all(|&v| v == 128.0 / 255.0));
}

#[test]
fn png_round_trip_within_one_level() {
    let dir = tempfile::tempdir().unwrap();
    for channels in [1, 3] {
        let img = RasterImage::from_fn(7, 5, channels, |r, c, ch| ((r * 7 + c) * 3 + ch) as f64 / 104.0).unwrap();
        let p = dir.path().join(format!("rt{channels}.png"));
        save_image(&img, &p).unwrap();
        let back = load_image(&p).unwrap();
        assert_eq!(back.channels(), channels);
        for (a, b) in img.data().iter().zip(back.data()) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-12);
        }
    }
}

#[test]
fn sixteen_bit_png_is_normalized() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("w.png");
    let buf = image::ImageBuffer::<image::Luma<u16>, _>::from_raw(2, 1, vec![65535u16, 32768]).unwrap();
    buf.save(&p).unwrap();
    let img = load_image(&p).unwrap();
    assert_eq!(img.data(), &[1.0, 32768.0 / 65535.0]);
}
