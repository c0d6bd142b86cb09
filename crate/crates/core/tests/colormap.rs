use warpkit::colormap::colorize;
use warpkit::grid::FeatureGrid;

#[test]
fn matches_reference_ramp() {
    let reference = image::open(concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures/viridis_ramp.png"))
        .unwrap()
        .into_rgb8();
    let (w, h) = reference.dimensions();
    let ramp = FeatureGrid::from_fn(w as usize, h as usize, 1, |c, _, px| px[0] = c as f64 / 255.0);
    let ours = colorize(&ramp, 0.0, 1.0);
    assert_eq!(ours.dimensions(), (w, h));
    for (x, y, px) in reference.enumerate_pixels() {
        assert_eq!(ours.get_pixel(x, y), px, "column {x} row {y}");
    }
}
