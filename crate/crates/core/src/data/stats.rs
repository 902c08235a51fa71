use std::collections::HashMap;

use crate::geometry::BBox;

/// Upper edges (exclusive) of the first four face-size buckets, pixels; the
/// fifth bucket is open-ended.
pub const SIZE_BUCKETS: [f64; 4] = [10.0, 40.0, 92.0, 192.0];

pub const BUCKET_LABELS: [&str; 5] = ["<10", "10-40", "40-92", "92-192", ">=192"];

/// Bucket index of a face whose size is `max(width, height)`.
pub fn size_bucket(b: &BBox) -> usize {
    let s = b.width().max(b.height());
    SIZE_BUCKETS.iter().position(|&e| s < e).unwrap_or(SIZE_BUCKETS.len())
}

#[derive(Clone, Debug, PartialEq)]
pub struct SizeHistogram {
    pub counts: [usize; 5],
    pub fractions: [f64; 5],
}

impl SizeHistogram {
    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    pub fn labels() -> [&'static str; 5] {
        BUCKET_LABELS
    }

    /// CSV rows `bucket,count,fraction` with a header.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("bucket,count,fraction\n");
        for i in 0..5 {
            s.push_str(&format!("{},{},{}\n", BUCKET_LABELS[i], self.counts[i], self.fractions[i]));
        }
        s
    }
}

pub fn size_histogram<'a>(boxes: impl IntoIterator<Item = &'a BBox>) -> SizeHistogram {
    let mut counts = [0usize; 5];
    for b in boxes {
        counts[size_bucket(b)] += 1;
    }
    let total: usize = counts.iter().sum();
    let fractions = counts.map(|c| if total == 0 { 0.0 } else { c as f64 / total as f64 });
    SizeHistogram { counts, fractions }
}

/// One of the most frequent image dimensions among faces of a size bucket.
#[derive(Clone, Debug, PartialEq)]
pub struct TopSizeRow {
    pub bucket: usize,
    pub rank: usize,
    pub height: usize,
    pub width: usize,
    /// Share of the bucket's faces found in images of this dimension.
    pub percent: f64,
}

/// For each size bucket, the three image dimensions `(H, W)` holding the most
/// faces of that bucket. Rows are ordered by bucket, then percentage
/// descending, ties by dimension ascending.
pub fn top_size_table(images: &[(Vec<BBox>, (usize, usize))]) -> Vec<TopSizeRow> {
    let mut per_bucket: Vec<HashMap<(usize, usize), usize>> = vec![HashMap::new(); 5];
    for (boxes, dims) in images {
        for b in boxes {
            *per_bucket[size_bucket(b)].entry(*dims).or_default() += 1;
        }
    }
    let mut rows = Vec::new();
    for (bucket, counts) in per_bucket.into_iter().enumerate() {
        let total: usize = counts.values().sum();
        let mut entries: Vec<((usize, usize), usize)> = counts.into_iter().collect();
        entries.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        for (rank, ((h, w), c)) in entries.into_iter().take(3).enumerate() {
            rows.push(TopSizeRow {
                bucket,
                rank: rank + 1,
                height: h,
                width: w,
                percent: 100.0 * c as f64 / total as f64,
            });
        }
    }
    rows
}

/// CSV rows `bucket,rank,height,width,percent` with a header.
pub fn top_size_csv(rows: &[TopSizeRow]) -> String {
    let mut s = String::from("bucket,rank,height,width,percent\n");
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{},{}\n",
            BUCKET_LABELS[r.bucket], r.rank, r.height, r.width, r.percent
        ));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sq(s: f64) -> BBox {
        BBox::new(0.0, 0.0, s, s)
    }

    #[test]
    fn buckets_by_max_dimension() {
        let h = size_histogram(&[sq(5.0), sq(50.0), sq(100.0)]);
        assert_eq!(h.counts, [1, 0, 1, 1, 0]);
        assert_eq!(size_bucket(&BBox::new(0.0, 0.0, 4.0, 12.0)), 1);
        assert_eq!(size_bucket(&sq(10.0)), 1);
        assert_eq!(size_bucket(&sq(192.0)), 4);
    }

    #[test]
    fn empty_histogram_reports_zero_fractions() {
        let h = size_histogram(&[]);
        assert_eq!(h.total(), 0);
        assert_eq!(h.fractions, [0.0; 5]);
    }

    #[test]
    fn table_percentages_and_order() {
        let imgs = vec![
            (vec![sq(20.0), sq(21.0)], (768, 1024)),
            (vec![sq(22.0)], (1024, 683)),
            (vec![sq(23.0)], (683, 1024)),
        ];
        let rows = top_size_table(&imgs);
        let got: Vec<(usize, usize, f64)> = rows.iter().map(|r| (r.height, r.width, r.percent)).collect();
        assert_eq!(got, vec![(768, 1024, 50.0), (683, 1024, 25.0), (1024, 683, 25.0)]);
        assert!(rows.iter().all(|r| r.bucket == 1));
    }
}
