//! Base/detail decomposition, guided and fast guided filtering, and the
//! saliency map on a synthetic visible image.
//!
//! ```text
//! cargo run --release --example classical_filters -- [output dir]
//! ```

use std::path::PathBuf;

use cscfuse::imaging::{
    base_detail_split, fast_guided_filter, guided_filter, saliency_map, save_image, ColorSpace, ImagePlane,
};
use cscfuse::pipelines::synth_ivf_pair;

fn main() -> cscfuse::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map_or_else(|| std::env::temp_dir().join("cscfuse-filters"), PathBuf::from);
    std::fs::create_dir_all(&out).map_err(|e| cscfuse::Error::io(&out, e))?;

    let (infrared, visible) = synth_ivf_pair(4)?;
    let vis = visible.pixels();
    let (base, detail) = base_detail_split(vis, 5)?;
    let residual = base.add(&detail)?.max_abs_diff(vis)?;
    println!("base + detail reproduces the input to {residual:.1e}");

    let smooth = guided_filter(vis, vis, 8, 1e-2)?;
    for subsample in [2, 4] {
        let fast = fast_guided_filter(vis, vis, 8, 1e-2, subsample)?;
        println!(
            "fast guided filter (subsample {subsample}) differs from exact by {:.4}",
            fast.max_abs_diff(&smooth)?
        );
    }
    let transferred = guided_filter(infrared.pixels(), vis, 4, 1e-3)?;
    let saliency = saliency_map(infrared.pixels());

    for (name, t) in [
        ("visible", vis.clone()),
        ("base", base),
        ("detail", detail.map(|v| v + 0.5)),
        ("guided_self", smooth),
        ("guided_infrared", transferred),
        ("saliency", saliency),
    ] {
        let path = out.join(format!("{name}.png"));
        save_image(&ImagePlane::clamped(t, ColorSpace::Gray)?, &path)?;
        println!("wrote {}", path.display());
    }
    Ok(())
}
