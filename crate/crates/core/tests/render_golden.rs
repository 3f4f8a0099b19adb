//! Grid rendering must stay byte-stable. Regenerate the golden file with
//! `NAPOOL_BLESS=1 cargo test --test render_golden` after an intended change.

mod common;

use common::{golden_records as records, golden_spec, GOLDEN_PPM};
use napool::harness::{render_grid, ChannelMode, GridSpec, Metric};

#[test]
fn rendered_grid_matches_golden_ppm() {
    let spec = golden_spec();
    let ppm = render_grid(&records(), &spec).unwrap().to_ppm();
    assert_eq!(ppm, render_grid(&records(), &spec).unwrap().to_ppm());

    let path = std::path::Path::new(GOLDEN_PPM);
    if std::env::var_os("NAPOOL_BLESS").is_some() {
        std::fs::write(path, &ppm).unwrap();
    }
    let golden = std::fs::read(path).expect("golden file present");
    assert_eq!(ppm, golden);

    // spot checks independent of the golden bytes: top-left block is the
    // largest lr at x = 8 (accuracies 4/36, 8/36, 12/36)
    let px = &ppm[b"P6\n8 6\n255\n".len()..][..3];
    assert_eq!(px, [28, 57, 85]);
}

#[test]
fn case_mode_golden_pixels() {
    let spec = GridSpec { mode: ChannelMode::CaseRgb, metric: Metric::Train, upscale: 1, lrs: vec![1e-2], xs: vec![8] };
    let recs: Vec<_> = records().into_iter().filter(|r| r.cell.lr == 1e-2 && r.cell.x == 8).collect();
    let img = render_grid(&recs, &spec).unwrap();
    // mean of (4, 8, 12)/36 = 8/36 -> 57; first channel constant 0.5 -> 128
    assert_eq!(img.pixel(0, 0), [57, 128, 198]);
}
