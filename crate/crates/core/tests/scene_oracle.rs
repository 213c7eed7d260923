//! Re-runs the documented scene placement procedure from scratch and
//! compares per-instance pixel counts with the generator.

use std::collections::BTreeMap;

use evpan_core::synth::{generate_scene, SceneConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn oracle_instance_areas(cfg: &SceneConfig) -> BTreeMap<u32, usize> {
    let (h, w) = (cfg.height, cfg.width);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(0);
    for _ in 0..2 * cfg.n_stuff {
        let _: f64 = rng.random();
        let _: f64 = rng.random();
    }
    let side = |n: usize| {
        let lo = (n / 8).max(2).min(n);
        (lo, (n / 4).max(lo).min(n))
    };
    let (lw, hw) = side(w);
    let (lh, hh) = side(h);
    let mut owner = vec![0u32; h * w];
    let mut boxes: Vec<[usize; 4]> = vec![];
    let mut counters = vec![0u32; cfg.n_thing];
    for _ in 0..cfg.n_instances {
        let t = rng.random_range(0..cfg.n_thing);
        let ellipse: bool = rng.random();
        let mut chosen = None;
        for _ in 0..100 {
            let bw = rng.random_range(lw..=hw);
            let bh = rng.random_range(lh..=hh);
            let x0 = rng.random_range(0..=w - bw);
            let y0 = rng.random_range(0..=h - bh);
            let b = [x0, y0, x0 + bw, y0 + bh];
            let overlaps = boxes.iter().any(|o| b[0] < o[2] && o[0] < b[2] && b[1] < o[3] && o[1] < b[3]);
            if !overlaps {
                chosen = Some(b);
                break;
            }
        }
        let b = chosen.expect("placement succeeds for this configuration");
        boxes.push(b);
        counters[t] += 1;
        let id = (cfg.n_stuff + t) as u32 * 1000 + counters[t];
        let (cx, cy) = ((b[0] + b[2]) as f64 / 2.0, (b[1] + b[3]) as f64 / 2.0);
        let (rx, ry) = ((b[2] - b[0]) as f64 / 2.0, (b[3] - b[1]) as f64 / 2.0);
        for y in b[1]..b[3] {
            for x in b[0]..b[2] {
                let inside = ((x as f64 + 0.5 - cx) / rx).powi(2) + ((y as f64 + 0.5 - cy) / ry).powi(2) <= 1.0;
                if !ellipse || inside {
                    owner[y * w + x] = id;
                }
            }
        }
    }
    let mut areas = BTreeMap::new();
    for id in owner.into_iter().filter(|&id| id != 0) {
        *areas.entry(id).or_insert(0) += 1;
    }
    areas
}

fn generated_instance_areas(cfg: &SceneConfig) -> BTreeMap<u32, usize> {
    let (gt, _) = generate_scene(cfg).unwrap();
    let mut areas = BTreeMap::new();
    for &id in gt.data().iter().filter(|&&id| id % 1000 != 0) {
        *areas.entry(id).or_insert(0) += 1;
    }
    areas
}

#[test]
fn instance_areas_match_reference_placement() {
    let cfg = SceneConfig { height: 64, width: 64, n_stuff: 3, n_thing: 2, n_instances: 4, seed: 42, ..Default::default() };
    let want = oracle_instance_areas(&cfg);
    assert_eq!(want.len(), 4);
    assert_eq!(generated_instance_areas(&cfg), want);
}

#[test]
fn instance_areas_match_across_seeds_and_sizes() {
    for seed in 0..25 {
        let cfg = SceneConfig { height: 40 + seed as usize, width: 70, n_instances: 6, seed, ..Default::default() };
        assert_eq!(generated_instance_areas(&cfg), oracle_instance_areas(&cfg), "seed {seed}");
    }
}
