use hierdet::data::{
    ellipse_to_box, horizontal_flip, parse_fddb, parse_wider, random_crop_sample, resize_with_boxes, size_histogram,
    top_size_table, write_fddb, write_wider, AnnotatedImage, AugmentConfig, EllipseAnnotation, FddbRecord, WiderRecord,
};
use hierdet::geometry::BBox;
use hierdet::tensor::Tensor;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn face(w: f64, h: f64) -> BBox {
    BBox::new(0.0, 0.0, w, h)
}

/// 100 faces: 15 under 10 px, 61 in [10, 40), 24 at 40 px or more.
fn wider_like_fixture() -> Vec<BBox> {
    let mut v = Vec::new();
    for i in 0..15 {
        v.push(face(3.0 + (i % 6) as f64, 4.0));
    }
    for i in 0..61 {
        // width stays small so max(w, h) decides
        v.push(face(8.0, 10.0 + (i % 30) as f64));
    }
    for i in 0..24 {
        v.push(face(40.0 + 10.0 * i as f64, 30.0));
    }
    v
}

#[test]
fn engineered_fixture_reports_seventy_six_and_fifteen_percent() {
    let h = size_histogram(&wider_like_fixture());
    assert_eq!(h.total(), 100);
    assert_eq!(h.fractions[0], 0.15);
    assert_eq!((h.counts[0] + h.counts[1]) as f64 / h.total() as f64, 0.76);
}

#[test]
fn hand_counted_histogram() {
    // bucket edges are exclusive on the upper side
    let boxes = [
        face(9.99, 1.0),
        face(10.0, 1.0),
        face(1.0, 39.9),
        face(40.0, 40.0),
        face(91.0, 3.0),
        face(92.0, 3.0),
        face(191.0, 3.0),
        face(192.0, 3.0),
    ];
    let h = size_histogram(&boxes);
    assert_eq!(h.counts, [1, 2, 2, 2, 1]);
    assert_eq!(h.fractions, [0.125, 0.25, 0.25, 0.25, 0.125]);
    let csv = h.to_csv();
    assert!(csv.starts_with("bucket,count,fraction\n<10,1,0.125\n"));
}

#[test]
fn hand_counted_top_sizes() {
    let images = vec![
        (vec![face(5.0, 5.0), face(5.0, 5.0), face(20.0, 20.0)], (480, 640)),
        (vec![face(6.0, 6.0)], (720, 1024)),
        (vec![face(7.0, 7.0)], (300, 400)),
        (vec![face(8.0, 8.0)], (200, 200)),
    ];
    let rows = top_size_table(&images);
    let small: Vec<_> = rows.iter().filter(|r| r.bucket == 0).collect();
    assert_eq!(small.len(), 3);
    assert_eq!((small[0].height, small[0].width, small[0].percent), (480, 640, 40.0));
    // ties ordered by dimension ascending
    assert_eq!((small[1].height, small[1].width, small[1].percent), (200, 200, 20.0));
    assert_eq!((small[2].height, small[2].width), (300, 400));
    let mid: Vec<_> = rows.iter().filter(|r| r.bucket == 1).collect();
    assert_eq!(mid.len(), 1);
    assert_eq!(mid[0].percent, 100.0);
}

#[test]
fn box_file_round_trip_and_errors() {
    let text = "a/1.jpg\n2\n10 20 30 40 0 0 0 0 0 0\n1 2 3 4\nb/2.jpg\n0\n0 0 0 0 0 0 0 0 0 0\n";
    let recs = parse_wider(text).unwrap();
    assert_eq!(recs.len(), 2);
    assert_eq!(recs[0].boxes[0], BBox::new(10.0, 20.0, 40.0, 60.0));
    assert!(recs[1].boxes.is_empty());
    assert_eq!(parse_wider(&write_wider(&recs)).unwrap(), recs);
    let err = parse_wider("a.jpg\n1\n1 2 x 4\n").unwrap_err();
    assert!(matches!(err, hierdet::Error::Parse { line: 3, .. }), "{err}");
    assert!(parse_wider("a.jpg\n2\n1 2 3 4\n").is_err());
}

#[test]
fn ellipse_file_round_trip_and_box() {
    let recs = vec![FddbRecord {
        path: "img/a".into(),
        ellipses: vec![EllipseAnnotation {
            major: 20.0,
            minor: 10.0,
            angle: std::f64::consts::FRAC_PI_2,
            cx: 50.0,
            cy: 40.0,
            score: 1.0,
        }],
    }];
    let back = parse_fddb(&write_fddb(&recs)).unwrap();
    assert_eq!(back, recs);
    // major axis vertical: box is 2·minor wide and 2·major tall
    let b = ellipse_to_box(&recs[0].ellipses[0]);
    assert!((b.width() - 20.0).abs() < 1e-9 && (b.height() - 40.0).abs() < 1e-9);
    assert!(parse_fddb("img/a\n1\n5 10 0 1 1 1\n").is_err());
}

fn sample(w: usize, h: usize, boxes: Vec<BBox>) -> AnnotatedImage {
    let t = Tensor::from_fn(&[1, h, w], |i| ((i * 31) % 97) as f64 / 96.0);
    AnnotatedImage::new(t, boxes, "fixture").unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn crops_keep_a_face_and_stay_in_bounds(
        seed in 0u64..10_000,
        x in 0.0f64..80.0, y in 0.0f64..60.0, s in 8.0f64..40.0,
    ) {
        let img = sample(120, 100, vec![BBox::new(x, y, (x + s).min(120.0), (y + s).min(100.0))]);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let out = random_crop_sample(&img, &mut rng);
        prop_assert!(!out.boxes.is_empty());
        let (w, h) = (out.width() as f64, out.height() as f64);
        for b in &out.boxes {
            prop_assert!(b.x1 >= 0.0 && b.y1 >= 0.0 && b.x2 <= w && b.y2 <= h);
            prop_assert!(b.x2 > b.x1 && b.y2 > b.y1);
        }
    }

    #[test]
    fn flip_twice_is_identity(x in 0.0f64..60.0, w in 1.0f64..30.0) {
        let img = sample(90, 50, vec![BBox::new(x, 5.0, x + w, 20.0)]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let once = horizontal_flip(&img, 1.0, &mut rng);
        prop_assert!((once.boxes[0].x1 - (90.0 - x - w)).abs() < 1e-12);
        let twice = horizontal_flip(&once, 1.0, &mut rng);
        prop_assert_eq!(twice.image.data(), img.image.data());
        prop_assert!((twice.boxes[0].x1 - x).abs() < 1e-12);
    }

    #[test]
    fn resize_scales_boxes_by_axis_ratio(tw in 16usize..200, th in 16usize..200) {
        let img = sample(80, 60, vec![BBox::new(8.0, 6.0, 40.0, 30.0)]);
        let out = resize_with_boxes(&img, (tw, th));
        prop_assert_eq!(out.image.dims(), &[1, th, tw]);
        let (rx, ry) = (tw as f64 / 80.0, th as f64 / 60.0);
        let b = out.boxes[0];
        prop_assert!((b.x1 - 8.0 * rx).abs() < 1e-9 && (b.y2 - 30.0 * ry).abs() < 1e-9);
        prop_assert!(out.image.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn full_chain_yields_square_valid_samples(seed in 0u64..5000) {
        let img = sample(100, 70, vec![BBox::new(20.0, 10.0, 50.0, 45.0), BBox::new(60.0, 30.0, 75.0, 48.0)]);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let out = AugmentConfig::new(64).apply(&img, &mut rng);
        prop_assert_eq!(out.image.dims(), &[1, 64, 64]);
        prop_assert!(out.is_valid());
        prop_assert!(out.image.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }
}

#[test]
fn records_compare_by_value() {
    let r = WiderRecord {
        path: "p".into(),
        boxes: vec![],
    };
    assert_eq!(parse_wider(&write_wider(std::slice::from_ref(&r))).unwrap(), vec![r]);
}
