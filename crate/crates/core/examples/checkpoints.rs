//! Save a model, reload it, and show that a flipped byte is caught by the
//! checksum.

use hierdet::harness::{decode_checkpoint, encode_checkpoint, quantize, TrainState};
use hierdet::network::{build_network, FusionMode, NetworkSpec};

fn main() -> hierdet::Result<()> {
    let mut model = build_network(&NetworkSpec::desk(FusionMode::A), 11)?;
    quantize(&mut model);
    let state = TrainState::default();
    let bytes = encode_checkpoint(&model, &state);
    println!("{} parameters -> {} bytes", model.num_parameters(), bytes.len());

    let back = decode_checkpoint(&bytes)?;
    println!("reloaded: re-encoding identical = {}", encode_checkpoint(&back.model, &back.state) == bytes);

    let mut bad = bytes.clone();
    let mid = bad.len() / 2;
    bad[mid] ^= 1;
    match decode_checkpoint(&bad) {
        Err(e) => println!("corrupted copy rejected: {e}"),
        Ok(_) => println!("corrupted copy accepted"),
    }
    Ok(())
}
