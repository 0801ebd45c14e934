//! Segments a blob-world image with quickshift and SLIC and prints both label
//! maps.

use latent_anchors::cli::segment_image;
use latent_anchors::config::{RunConfig, SegmentationMethod};
use latent_anchors::dataio::gen_blob_world;
use latent_anchors::segmentation::SegmentMap;

fn show(seg: &SegmentMap) {
    const SYMBOLS: &[u8] = b"0123456789abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ";
    let (h, w) = seg.shape();
    for r in 0..h {
        let line: String = (0..w)
            .map(|c| SYMBOLS[seg.label(r, c) % SYMBOLS.len()] as char)
            .collect();
        println!("  {line}");
    }
}

fn main() -> latent_anchors::Result<()> {
    let index: usize = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(0);
    let ds = gen_blob_world(index + 1, 7)?;
    let x = &ds.images()[index];
    for r in 0..x.height() {
        let line: String = (0..x.width())
            .map(|c| b" .:-=+*#%@"[(x.get(r, c) * 9.0).round() as usize] as char)
            .collect();
        println!("  {line}");
    }
    for method in [SegmentationMethod::Quickshift, SegmentationMethod::Slic] {
        let mut cfg = RunConfig::desk();
        cfg.segmentation.method = method;
        let out = segment_image(x, &cfg.segmentation)?;
        println!(
            "{method:?}: {} segments, exact {}, max_dist {:?}",
            out.segmap.count(),
            out.sidecar.exact,
            out.sidecar.max_dist
        );
        show(&out.segmap);
    }
    Ok(())
}
