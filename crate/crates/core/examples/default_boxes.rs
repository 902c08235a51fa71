//! Default-box layout of the desk detector and the scale range of a
//! 512-pixel configuration.

use hierdet::geometry::{anchor_scale, generate_anchors, AnchorParams};
use hierdet::network::{FusionMode, NetworkSpec};

fn main() -> hierdet::Result<()> {
    let spec = NetworkSpec::desk(FusionMode::B);
    let sizes = spec.hierarchy_sizes()?;
    println!("desk input {}x{}", spec.input_size, spec.input_size);
    for (k, &n) in sizes.iter().enumerate() {
        let image = (spec.input_size as f64, spec.input_size as f64);
        let set = generate_anchors(k, (n, n), image, &spec.anchors)?;
        let first = set.boxes[0].to_center();
        println!(
            "hierarchy {k}: {n}x{n} cells, stride {:.0}, {} boxes/cell, {} boxes, side {:.2}px, first center ({:.1}, {:.1})",
            set.stride_w,
            set.per_cell(),
            set.len(),
            anchor_scale(k, &spec.anchors)?,
            first.cx,
            first.cy
        );
    }

    let wide = AnchorParams::from_receptive_fields(10.24, 30.72, 3, 512.0);
    let sides: Vec<String> = (0..3)
        .map(|k| anchor_scale(k, &wide).map(|s| format!("{s:.2}")))
        .collect::<hierdet::Result<_>>()?;
    println!("512px, three hierarchies: box sides {}", sides.join(", "));
    Ok(())
}
