use std::path::Path;

use super::{load_image, AnnotatedImage};
use crate::error::{Error, Result};
use crate::geometry::BBox;

/// One record of a box annotation file: an image path and its faces.
#[derive(Clone, Debug, PartialEq)]
pub struct WiderRecord {
    pub path: String,
    pub boxes: Vec<BBox>,
}

fn parse_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        line,
        msg: msg.into(),
    }
}

/// Parse records of the form: path line, face-count line, then one
/// `x y w h [attributes…]` line per face. Trailing attribute fields are
/// ignored. A zero count may be followed by a single all-zero placeholder
/// line, which is skipped.
pub fn parse_wider(text: &str) -> Result<Vec<WiderRecord>> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty())
        .peekable();
    let mut out = Vec::new();
    while let Some((_, path)) = lines.next() {
        let (n_line, count) = lines
            .next()
            .ok_or_else(|| parse_err(text.lines().count(), format!("missing face count after `{path}`")))?;
        let count: usize = count
            .parse()
            .map_err(|_| parse_err(n_line, format!("expected a face count, got `{count}`")))?;
        let mut boxes = Vec::with_capacity(count);
        for _ in 0..count {
            let (ln, l) = lines
                .next()
                .ok_or_else(|| parse_err(n_line, format!("`{path}` declares {count} faces, file ended early")))?;
            let fields: Vec<f64> = l
                .split_whitespace()
                .take(4)
                .map(|f| f.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| parse_err(ln, format!("expected `x y w h`, got `{l}`")))?;
            if fields.len() < 4 || fields.iter().any(|v| !v.is_finite()) {
                return Err(parse_err(ln, format!("expected `x y w h`, got `{l}`")));
            }
            if fields[2] < 0.0 || fields[3] < 0.0 {
                return Err(parse_err(ln, "box width and height must be non-negative"));
            }
            boxes.push(BBox::from_xywh(fields[0], fields[1], fields[2], fields[3]));
        }
        if count == 0 {
            if let Some(&(_, l)) = lines.peek() {
                let zeros = l.split_whitespace().count() >= 4
                    && l.split_whitespace().all(|f| f.parse::<f64>() == Ok(0.0));
                if zeros {
                    lines.next();
                }
            }
        }
        out.push(WiderRecord {
            path: path.to_string(),
            boxes,
        });
    }
    Ok(out)
}

/// Width `w` with `x + w == x2` exactly, so that parsing restores `x2`.
fn exact_extent(x: f64, x2: f64) -> f64 {
    let mut w = x2 - x;
    for _ in 0..4 {
        let got = x + w;
        if got == x2 {
            break;
        }
        w = if got < x2 { w.next_up() } else { w.next_down() };
    }
    w
}

pub fn write_wider(records: &[WiderRecord]) -> String {
    let mut s = String::new();
    for r in records {
        s.push_str(&r.path);
        s.push('\n');
        s.push_str(&format!("{}\n", r.boxes.len()));
        for b in &r.boxes {
            let w = exact_extent(b.x1, b.x2);
            let h = exact_extent(b.y1, b.y2);
            s.push_str(&format!("{} {} {} {}\n", b.x1, b.y1, w, h));
        }
    }
    s
}

/// Load every record's image from `root`, clipping boxes to the image.
pub fn load_wider(records: &[WiderRecord], root: &Path, channels: usize) -> Result<Vec<AnnotatedImage>> {
    records
        .iter()
        .map(|r| {
            let image = load_image(&root.join(&r.path), channels)?;
            let mut a = AnnotatedImage::new(image, r.boxes.clone(), r.path.clone())?;
            a.clip_boxes();
            Ok(a)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn single_record() {
        let r = parse_wider("img.png\n1\n10 20 30 40\n").unwrap();
        assert_eq!(r.len(), 1);
        assert_eq!(r[0].boxes, vec![BBox::new(10.0, 20.0, 40.0, 60.0)]);
    }

    #[test]
    fn attributes_and_placeholders() {
        let plain = parse_wider("a.png\n1\n10 20 30 40\n").unwrap();
        let attrs = parse_wider("a.png\n1\n10 20 30 40 0 0 0 0 0 0\n").unwrap();
        assert_eq!(plain, attrs);
        let r = parse_wider("a.png\n0\n0 0 0 0 0 0 0 0 0 0\nb.png\n0\n").unwrap();
        assert_eq!(r.len(), 2);
        assert!(r.iter().all(|x| x.boxes.is_empty()));
    }

    #[test]
    fn errors_carry_line_numbers() {
        let e = parse_wider("a.png\n2\n1 2 3 4\n1 2 x 4\n").unwrap_err();
        assert!(matches!(e, Error::Parse { line: 4, .. }), "{e:?}");
        let e = parse_wider("a.png\nmany\n").unwrap_err();
        assert!(matches!(e, Error::Parse { line: 2, .. }));
    }

    proptest! {
        #[test]
        fn write_parse_round_trip(raw in proptest::collection::vec((0.0..500.0f64, 0.0..500.0f64, 0.1..200.0f64, 0.1..200.0f64), 0..6)) {
            let boxes: Vec<BBox> = raw.iter().map(|&(x, y, w, h)| BBox::new(x, y, x + w, y + h)).collect();
            let recs = vec![WiderRecord { path: "dir/img 1.png".into(), boxes }];
            let back = parse_wider(&write_wider(&recs)).unwrap();
            prop_assert_eq!(back, recs);
        }
    }
}
