use std::path::PathBuf;

use psymetric_core::scale::load_scale;
use psymetric_core::variant::render_all;

fn data(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data").join(name)
}

#[test]
fn demo_scales_load_and_render() {
    let bfi = load_scale(data("demo_bfi.toml")).unwrap();
    assert_eq!(bfi.items.len(), 60);
    assert_eq!(render_all(&bfi).unwrap().len(), 4);

    let mbti = load_scale(data("demo_mbti.toml")).unwrap();
    assert_eq!(mbti.items.len(), 93);
    let counts: Vec<usize> = mbti.dimensions.iter().map(|d| mbti.items_in(&d.id).count()).collect();
    assert_eq!(counts, [21, 27, 23, 22]);
    assert_eq!(render_all(&mbti).unwrap().len(), 3);
}

#[test]
fn reversal_splits_each_dimension_evenly() {
    let bfi = load_scale(data("demo_bfi.toml")).unwrap();
    for d in &bfi.dimensions {
        let reversed = bfi.items_in(&d.id).filter(|i| i.is_reverse()).count();
        assert_eq!(reversed, 6, "{}", d.id);
    }
}
