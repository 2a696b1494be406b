//! Heatmaps and atom renderings from an existing checkpoint.
//!
//! ```text
//! cargo run --release --example export_visuals -- model.sdg out-dir
//! ```

use std::path::PathBuf;

use sdg::checkpoint::Checkpoint;
use sdg::commands::{cmd_export_atoms, cmd_export_heatmap, Selection};

fn main() -> sdg::Result<()> {
    let mut args = std::env::args().skip(1);
    let (Some(ckpt), Some(out)) = (args.next().map(PathBuf::from), args.next().map(PathBuf::from)) else {
        eprintln!("usage: export_visuals <checkpoint> <out-dir>");
        std::process::exit(2);
    };
    let c = Checkpoint::read(&ckpt)?;
    println!(
        "{} atoms, {} images, signal length {}, prior: {}",
        c.model.dictionary.atoms(),
        c.model.mixing.images(),
        c.signal_len,
        if c.prior.is_some() { "yes" } else { "no" }
    );
    let heat = cmd_export_heatmap(&ckpt, Selection::All, &out.join("heatmaps"))?;
    let atoms = cmd_export_atoms(&ckpt, &out.join("atoms"))?;
    println!("wrote {} heatmap files and {} atom files", heat.len(), atoms.len());
    Ok(())
}
