use crate::error::{Error, Result};
use crate::geometry::BBox;

/// Elliptical face region. `angle` is the direction of the major axis from
/// the x-axis, radians.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EllipseAnnotation {
    pub major: f64,
    pub minor: f64,
    pub angle: f64,
    pub cx: f64,
    pub cy: f64,
    pub score: f64,
}

impl EllipseAnnotation {
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if !(self.minor > 0.0) {
            errs.push(format!("minor radius must be positive, got {}", self.minor));
        }
        if self.major < self.minor {
            errs.push(format!(
                "major radius {} is smaller than minor radius {}",
                self.major, self.minor
            ));
        }
        if ![self.angle, self.cx, self.cy, self.score].iter().all(|v| v.is_finite()) {
            errs.push("ellipse fields must be finite".into());
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(errs))
        }
    }

    /// Whether the point lies inside or on the ellipse.
    pub fn contains(&self, x: f64, y: f64) -> bool {
        let (s, c) = self.angle.sin_cos();
        let (dx, dy) = (x - self.cx, y - self.cy);
        let u = dx * c + dy * s;
        let v = -dx * s + dy * c;
        (u / self.major).powi(2) + (v / self.minor).powi(2) <= 1.0
    }

    /// Point on the boundary at parameter `t`.
    pub fn boundary_point(&self, t: f64) -> (f64, f64) {
        let (s, c) = self.angle.sin_cos();
        let (u, v) = (self.major * t.cos(), self.minor * t.sin());
        (self.cx + u * c - v * s, self.cy + u * s + v * c)
    }
}

/// Tight axis-aligned bounds of the rotated ellipse.
pub fn ellipse_to_box(e: &EllipseAnnotation) -> BBox {
    let (s, c) = e.angle.sin_cos();
    let (a2, b2) = (e.major * e.major, e.minor * e.minor);
    let hw = (a2 * c * c + b2 * s * s).sqrt();
    let hh = (a2 * s * s + b2 * c * c).sqrt();
    BBox::new(e.cx - hw, e.cy - hh, e.cx + hw, e.cy + hh)
}

#[derive(Clone, Debug, PartialEq)]
pub struct FddbRecord {
    pub path: String,
    pub ellipses: Vec<EllipseAnnotation>,
}

fn parse_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        line,
        msg: msg.into(),
    }
}

/// Parse ellipse annotations grouped per image: path line, face-count line,
/// then one `major minor angle cx cy score` line per face.
pub fn parse_fddb(text: &str) -> Result<Vec<FddbRecord>> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty());
    let mut out = Vec::new();
    while let Some((_, path)) = lines.next() {
        let (n_line, count) = lines
            .next()
            .ok_or_else(|| parse_err(text.lines().count(), format!("missing face count after `{path}`")))?;
        let count: usize = count
            .parse()
            .map_err(|_| parse_err(n_line, format!("expected a face count, got `{count}`")))?;
        let mut ellipses = Vec::with_capacity(count);
        for _ in 0..count {
            let (ln, l) = lines
                .next()
                .ok_or_else(|| parse_err(n_line, format!("`{path}` declares {count} faces, file ended early")))?;
            let fields: Vec<&str> = l.split_whitespace().collect();
            if fields.len() != 6 {
                return Err(parse_err(ln, format!("expected 6 fields, found {}", fields.len())));
            }
            let v: Vec<f64> = fields
                .iter()
                .map(|f| f.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| parse_err(ln, format!("non-numeric field in `{l}`")))?;
            let e = EllipseAnnotation {
                major: v[0],
                minor: v[1],
                angle: v[2],
                cx: v[3],
                cy: v[4],
                score: v[5],
            };
            e.validate().map_err(|err| match err {
                Error::Validation(msgs) => {
                    Error::Validation(msgs.into_iter().map(|m| format!("line {ln}: {m}")).collect())
                }
                other => other,
            })?;
            ellipses.push(e);
        }
        out.push(FddbRecord {
            path: path.to_string(),
            ellipses,
        });
    }
    Ok(out)
}

pub fn write_fddb(records: &[FddbRecord]) -> String {
    let mut s = String::new();
    for r in records {
        s.push_str(&format!("{}\n{}\n", r.path, r.ellipses.len()));
        for e in &r.ellipses {
            s.push_str(&format!(
                "{} {} {} {} {} {}\n",
                e.major, e.minor, e.angle, e.cx, e.cy, e.score
            ));
        }
    }
    s
}
