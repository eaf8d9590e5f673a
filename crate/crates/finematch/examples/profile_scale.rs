//! Scratch probe: threshold-accepting search for a zero-deviation selection.

use finematch::cli::TemplateArtifact;
use finematch::data::{load_csv, CategoryCounts, SchemaConfig};
use finematch::rng;

fn main() {
    let dir = std::env::args().nth(1).expect("usage: profile_scale DIR");
    let cfg = SchemaConfig::from_json_file(format!("{dir}/data/schema.json")).unwrap();
    let dataset = load_csv(format!("{dir}/data/dataset.csv"), &cfg).unwrap();
    let tpl_file = std::fs::File::open(format!("{dir}/tpl/template.json")).unwrap();
    let artifact: TemplateArtifact = serde_json::from_reader(tpl_file).unwrap();

    let schema = &dataset.schema;
    let n_flat = schema.total_categories();
    let n_cov = schema.n_covariates();
    let targets = CategoryCounts::from_profiles(schema, &artifact.profiles).flat();
    let t = artifact.template_size;

    for (name, indices) in dataset.levels() {
        let profiles = dataset.profiles(&indices);
        let l = profiles.len();
        let flats: Vec<Vec<usize>> = profiles
            .iter()
            .map(|x| {
                x.iter()
                    .enumerate()
                    .map(|(p, &k)| schema.flat_index(p, k as usize))
                    .collect()
            })
            .collect();

        let mut best_overall = u64::MAX;
        for restart in 0..8u64 {
            let mut rng = rng::stream(991, restart);
            let mut sel: Vec<usize> = rng::sample_without_replacement(&mut rng, l, t);
            let mut selected = vec![false; l];
            for &u in &sel {
                selected[u] = true;
            }
            let mut delta: Vec<i64> = targets.iter().map(|&n| -(n as i64)).collect();
            for &u in &sel {
                for &f in &flats[u] {
                    delta[f] += 1;
                }
            }
            let obj = |delta: &[i64]| -> i64 { delta.iter().map(|d| d.abs()).sum() };
            let mut cur = obj(&delta);
            let mut best = cur;
            let sweeps = 4_000_000u64;
            for step in 0..sweeps {
                // Threshold accepting: the allowed uphill move shrinks to zero.
                let threshold = (4 - (4 * step / sweeps) as i64).max(0);
                let si = rng::uniform_usize(&mut rng, t);
                let u = sel[si];
                let w = loop {
                    let w = rng::uniform_usize(&mut rng, l);
                    if !selected[w] {
                        break w;
                    }
                };
                let mut d = 0i64;
                for p in 0..n_cov {
                    let fu = flats[u][p];
                    let fw = flats[w][p];
                    if fu == fw {
                        continue;
                    }
                    d += (delta[fu] - 1).abs() - delta[fu].abs();
                    d += (delta[fw] + 1).abs() - delta[fw].abs();
                }
                if d <= threshold {
                    for p in 0..n_cov {
                        let fu = flats[u][p];
                        let fw = flats[w][p];
                        if fu != fw {
                            delta[fu] -= 1;
                            delta[fw] += 1;
                        }
                    }
                    selected[u] = false;
                    selected[w] = true;
                    sel[si] = w;
                    cur += d;
                    if cur < best {
                        best = cur;
                        if best == 0 {
                            break;
                        }
                    }
                }
            }
            best_overall = best_overall.min(best as u64);
            if best_overall == 0 {
                break;
            }
        }
        println!("{name}: best deviation {best_overall}");
    }
}
