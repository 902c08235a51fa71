//! Two-stage anchor matching, offset encoding and non-maximum suppression on
//! a hand-built scene.

use hierdet::geometry::{
    decode_offsets, encode_offsets, flatten_anchors, generate_anchors, match_anchors, nms, AnchorParams, BBox,
    Detection,
};

fn main() -> hierdet::Result<()> {
    let params = AnchorParams::from_receptive_fields(12.0, 40.0, 2, 64.0);
    let sets = vec![
        generate_anchors(0, (8, 8), (64.0, 64.0), &params)?,
        generate_anchors(1, (4, 4), (64.0, 64.0), &params)?,
    ];
    let anchors = flatten_anchors(&sets);
    let faces = vec![BBox::new(6.0, 8.0, 19.0, 22.0), BBox::new(30.0, 20.0, 62.0, 58.0)];
    let m = match_anchors(&sets, &faces, 0.5)?;
    println!("{} anchors, {} positives", anchors.len(), m.num_positive());
    for (i, j) in m.positives() {
        let t = encode_offsets(&faces[j].to_center(), &anchors[i].to_center())?;
        let back = decode_offsets(&t, &anchors[i].to_center(), None);
        println!(
            "anchor {i:3} -> face {j}, overlap {:.3}, offsets [{:+.3}, {:+.3}, {:+.3}, {:+.3}], decoded x1 {:.3}",
            m.overlaps[i], t[0], t[1], t[2], t[3], back.x1
        );
    }

    let dets: Vec<Detection> = [(0.9, 0.0), (0.8, 1.5), (0.7, 3.0), (0.6, 20.0)]
        .iter()
        .map(|&(score, dx)| Detection {
            bbox: BBox::new(10.0 + dx, 10.0, 30.0 + dx, 30.0),
            score,
            image_id: 0,
        })
        .collect();
    for d in nms(&dets, 0.45) {
        println!("kept score {:.1} at x1 {:.1}", d.score, d.bbox.x1);
    }
    Ok(())
}
