//! Theoretical receptive fields of the VGG-16-shaped spec and effective
//! receptive fields of a freshly initialized desk network.

use hierdet::network::{build_network, FusionMode, NetworkSpec};
use hierdet::receptive_field::{erf_estimate, trf_compute, trf_table};

fn main() -> hierdet::Result<()> {
    println!("layer,trf,jump");
    for (name, st) in trf_table(&NetworkSpec::vgg16()) {
        println!("{name},{},{}", st.rf, st.jump);
    }

    let spec = NetworkSpec::desk(FusionMode::B);
    let model = build_network(&spec, 0)?;
    println!("\ndesk layer,trf,erf side (90% mass)");
    for layer in ["conv2_2", "conv3_2", "conv4_2"] {
        let trf = trf_compute(&spec, layer)?;
        let erf = erf_estimate(&model, layer, 0.9, 4, 7)?;
        println!("{layer},{},{}", trf.rf, erf.side);
    }
    Ok(())
}
