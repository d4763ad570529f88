use std::fs;
use std::path::Path;

use xmf_core::data::MultimodalDataset;
use xmf_core::datagen::{export, generate, import, planted_loci, read_spec, GenSpec, CONTINUOUS_COLUMNS};
use xmf_core::error::Error;
use xmf_core::training::stratified_split;

fn spec(seed: u64, lambda: f64) -> GenSpec {
    GenSpec {
        snp_count: 100,
        image_size: 24,
        seed,
        interaction_strength: lambda,
        ..GenSpec::default()
    }
}

fn small(seed: u64) -> GenSpec {
    GenSpec {
        n_per_class: [6, 4, 4],
        snp_count: 25,
        image_size: 24,
        seed,
        ..GenSpec::default()
    }
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((
                    p.strip_prefix(dir).unwrap().display().to_string(),
                    fs::read(&p).unwrap(),
                ));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn same_seed_gives_identical_bytes() {
    let (a, b, c) = (
        tempfile::tempdir().unwrap(),
        tempfile::tempdir().unwrap(),
        tempfile::tempdir().unwrap(),
    );
    export(&generate(&small(4)).unwrap(), a.path(), Some(&small(4))).unwrap();
    export(&generate(&small(4)).unwrap(), b.path(), Some(&small(4))).unwrap();
    export(&generate(&small(5)).unwrap(), c.path(), Some(&small(5))).unwrap();
    assert_eq!(dir_bytes(a.path()), dir_bytes(b.path()));
    assert_ne!(dir_bytes(a.path()), dir_bytes(c.path()));
}

#[test]
fn export_import_identity() {
    let s = small(1);
    let d = generate(&s).unwrap();
    let dir = tempfile::tempdir().unwrap();
    export(&d, dir.path(), Some(&s)).unwrap();
    let back = import(dir.path()).unwrap();
    assert_eq!(back, d);
    for (x, y) in back.samples.iter().zip(&d.samples) {
        assert!(x
            .clinical
            .iter()
            .zip(&y.clinical)
            .all(|(a, b)| a.to_bits() == b.to_bits()));
    }
    assert_eq!(read_spec(dir.path()).unwrap(), Some(s));
}

#[test]
fn truncated_clinical_row_names_the_line() {
    let d = generate(&small(2)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    export(&d, dir.path(), None).unwrap();
    let path = dir.path().join("clinical.csv");
    let text = fs::read_to_string(&path).unwrap();
    let mut lines: Vec<String> = text.lines().map(str::to_string).collect();
    let cut = lines[3].rfind(',').unwrap();
    lines[3].truncate(cut);
    fs::write(&path, lines.join("\n") + "\n").unwrap();
    match import(dir.path()) {
        Err(Error::Parse { file, line, .. }) => {
            assert_eq!(file, "clinical.csv");
            assert_eq!(line, 4);
        }
        other => panic!("expected parse error, got {other:?}"),
    }
}

#[test]
fn missing_image_is_reported() {
    let d = generate(&small(3)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    export(&d, dir.path(), None).unwrap();
    let id = &d.samples[2].id;
    fs::remove_file(dir.path().join("images").join(format!("{id}_1.pgm"))).unwrap();
    let err = import(dir.path()).unwrap_err();
    assert!(err.to_string().contains(&format!("{id}_1.pgm")), "{err}");
}

#[test]
fn bad_genotype_is_a_parse_error() {
    let d = generate(&small(6)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    export(&d, dir.path(), None).unwrap();
    let path = dir.path().join("genetic.csv");
    let text = fs::read_to_string(&path).unwrap().replacen(",0", ",3", 1);
    fs::write(&path, text).unwrap();
    assert!(matches!(import(dir.path()), Err(Error::Parse { .. })));
}

#[test]
fn class_counts_and_ranges() {
    let d = generate(&spec(0, 1.0)).unwrap();
    assert_eq!(d.class_counts(), [455, 108, 97]);
    assert_eq!(d.len(), 660);
    assert!(d.samples.iter().all(|s| s.genetic.iter().all(|&g| g <= 2)));
    assert_eq!(d.samples[0].image.len(), 3 * 24 * 24);
}

#[test]
fn continuous_clinical_columns_are_standardised() {
    let d = generate(&spec(1, 0.5)).unwrap();
    let n = d.len() as f64;
    for j in 0..CONTINUOUS_COLUMNS {
        let mean = d.samples.iter().map(|s| s.clinical[j]).sum::<f64>() / n;
        let sd = (d.samples.iter().map(|s| (s.clinical[j] - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        assert!(mean.abs() < 0.05, "column {j}: mean {mean}");
        assert!((0.9..=1.1).contains(&sd), "column {j}: sd {sd}");
    }
}

/// Upper tail of the chi-square distribution with an even number of degrees
/// of freedom.
fn chi2_sf_even(x: f64, dof: usize) -> f64 {
    let h = x / 2.0;
    let mut term = 1.0;
    let mut sum = 1.0;
    for i in 1..dof / 2 {
        term *= h / i as f64;
        sum += term;
    }
    (-h).exp() * sum
}

#[test]
fn chi2_tail_oracle() {
    assert!((chi2_sf_even(5.991464547107979, 2) - 0.05).abs() < 1e-12);
    assert!((chi2_sf_even(9.487729036781154, 4) - 0.05).abs() < 1e-12);
}

#[test]
fn non_planted_loci_are_class_independent() {
    let s = spec(2, 1.0);
    let d = generate(&s).unwrap();
    let planted = planted_loci(&s);
    let mut tested = 0;
    let mut passed = 0;
    for j in (0..s.snp_count).filter(|j| !planted.contains(j)) {
        let mut t = [[0.0f64; 3]; 3];
        for smp in &d.samples {
            t[smp.label as usize][smp.genetic[j] as usize] += 1.0;
        }
        let cols: Vec<usize> = (0..3).filter(|&g| t.iter().map(|r| r[g]).sum::<f64>() > 0.0).collect();
        if cols.len() < 2 {
            continue;
        }
        let n: f64 = t.iter().flatten().sum();
        let mut x = 0.0;
        for r in &t {
            let rs: f64 = r.iter().sum();
            for &g in &cols {
                let cs: f64 = t.iter().map(|row| row[g]).sum();
                let e = rs * cs / n;
                x += (r[g] - e).powi(2) / e;
            }
        }
        tested += 1;
        if chi2_sf_even(x, 2 * (cols.len() - 1)) > 0.01 {
            passed += 1;
        }
    }
    assert!(tested >= 70);
    assert!(passed as f64 >= 0.95 * tested as f64, "{passed}/{tested}");
}

#[derive(Clone, Copy, PartialEq)]
enum View {
    Clinical,
    Genetic,
    Imaging,
}

/// 4×4 block means per image slice.
fn image_blocks(d: &MultimodalDataset, i: usize) -> Vec<f64> {
    let s = d.image_size;
    let b = s / 4;
    let smp = &d.samples[i];
    let mut out = Vec::with_capacity(48);
    for k in 0..3 {
        for by in 0..4 {
            for bx in 0..4 {
                let mut acc = 0.0;
                for r in by * b..(by + 1) * b {
                    for c in bx * b..(bx + 1) * b {
                        acc += smp.image_value(k * s * s + r * s + c);
                    }
                }
                out.push(acc / (b * b) as f64);
            }
        }
    }
    out
}

fn view_features(d: &MultimodalDataset, i: usize, v: View) -> Vec<f64> {
    let smp = &d.samples[i];
    match v {
        View::Clinical => smp.clinical.clone(),
        View::Genetic => smp.genetic.iter().map(|&g| f64::from(g) / 2.0).collect(),
        View::Imaging => image_blocks(d, i),
    }
}

/// Concatenated views; with `cross`, also every product of a clinical and an
/// image feature.
fn features(d: &MultimodalDataset, i: usize, views: &[View], cross: bool) -> Vec<f64> {
    let mut f: Vec<f64> = views.iter().flat_map(|&v| view_features(d, i, v)).collect();
    if cross {
        let c = view_features(d, i, View::Clinical);
        let m = view_features(d, i, View::Imaging);
        for a in &c {
            for b in &m {
                f.push(a * b);
            }
        }
    }
    f
}

/// L2-regularised multinomial logistic regression by full-batch gradient
/// descent on standardised features. Returns test-set macro-F1.
fn probe(x: &[Vec<f64>], y: &[usize], train: &[usize], test: &[usize], k: usize) -> f64 {
    let p = x[0].len();
    let mut mu = vec![0.0; p];
    let mut sd = vec![0.0; p];
    for &i in train {
        for j in 0..p {
            mu[j] += x[i][j];
        }
    }
    mu.iter_mut().for_each(|m| *m /= train.len() as f64);
    for &i in train {
        for j in 0..p {
            sd[j] += (x[i][j] - mu[j]).powi(2);
        }
    }
    sd.iter_mut()
        .for_each(|s| *s = (*s / train.len() as f64).sqrt().max(1e-9));
    let z = |i: usize| -> Vec<f64> { (0..p).map(|j| (x[i][j] - mu[j]) / sd[j]).collect() };
    let ztr: Vec<Vec<f64>> = train.iter().map(|&i| z(i)).collect();
    let mut w = vec![vec![0.0; p + 1]; k];
    let (lr, l2) = (0.5, 1e-3);
    let scores = |w: &[Vec<f64>], f: &[f64]| -> Vec<f64> {
        w.iter()
            .map(|wc| wc[p] + f.iter().zip(wc).map(|(a, b)| a * b).sum::<f64>())
            .collect()
    };
    for _ in 0..300 {
        let mut grad = vec![vec![0.0; p + 1]; k];
        for (f, &i) in ztr.iter().zip(train) {
            let s = scores(&w, f);
            let top = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = s.iter().map(|v| (v - top).exp()).collect();
            let tot: f64 = e.iter().sum();
            for c in 0..k {
                let g = e[c] / tot - f64::from(u8::from(y[i] == c));
                for j in 0..p {
                    grad[c][j] += g * f[j];
                }
                grad[c][p] += g;
            }
        }
        let n = train.len() as f64;
        for c in 0..k {
            for j in 0..=p {
                let reg = if j < p { l2 * w[c][j] } else { 0.0 };
                w[c][j] -= lr * (grad[c][j] / n + reg);
            }
        }
    }
    let mut cm = vec![vec![0usize; k]; k];
    for &i in test {
        let s = scores(&w, &z(i));
        let pred = (0..k).max_by(|&a, &b| s[a].total_cmp(&s[b])).unwrap();
        cm[y[i]][pred] += 1;
    }
    let f1s: Vec<f64> = (0..k)
        .map(|c| {
            let tp = cm[c][c] as f64;
            let fp: f64 = (0..k).filter(|&t| t != c).map(|t| cm[t][c] as f64).sum();
            let fneg: f64 = (0..k).filter(|&q| q != c).map(|q| cm[c][q] as f64).sum();
            if tp == 0.0 {
                0.0
            } else {
                2.0 * tp / (2.0 * tp + fp + fneg)
            }
        })
        .collect();
    f1s.iter().sum::<f64>() / k as f64
}

/// MCI-versus-CN samples of a stratified 70/30 split.
fn mci_cn(d: &MultimodalDataset, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let plan = stratified_split(&d.labels(), 0.3, seed).unwrap();
    let keep = |v: &[usize]| {
        v.iter()
            .copied()
            .filter(|&i| d.samples[i].label < 2)
            .collect::<Vec<_>>()
    };
    (keep(&plan.train), keep(&plan.test))
}

#[test]
fn full_interaction_hides_mci_from_single_views() {
    let d = generate(&spec(3, 1.0)).unwrap();
    let (train, test) = mci_cn(&d, 3);
    let y: Vec<usize> = d.samples.iter().map(|s| s.label as usize).collect();
    for v in [View::Clinical, View::Genetic, View::Imaging] {
        let x: Vec<Vec<f64>> = (0..d.len()).map(|i| features(&d, i, &[v], false)).collect();
        let f1 = probe(&x, &y, &train, &test, 2);
        assert!((0.3..=0.6).contains(&f1), "single view F1 {f1}");
    }
    let all = [View::Clinical, View::Genetic, View::Imaging];
    let x: Vec<Vec<f64>> = (0..d.len()).map(|i| features(&d, i, &all, true)).collect();
    let f1 = probe(&x, &y, &train, &test, 2);
    assert!(f1 > 0.8, "joint F1 {f1}");
}

#[test]
fn no_interaction_single_view_close_to_pairs() {
    let views = [View::Clinical, View::Genetic, View::Imaging];
    let pairs = [
        [View::Clinical, View::Genetic],
        [View::Genetic, View::Imaging],
        [View::Imaging, View::Clinical],
    ];
    let (mut single, mut pair) = (0.0, 0.0);
    for seed in 0..5 {
        let d = generate(&spec(10 + seed, 0.0)).unwrap();
        let y = d.labels();
        let plan = stratified_split(&y, 0.3, seed).unwrap();
        let score = |vs: &[View]| {
            let x: Vec<Vec<f64>> = (0..d.len()).map(|i| features(&d, i, vs, false)).collect();
            probe(&x, &y, &plan.train, &plan.test, 3)
        };
        single += views.iter().map(|&v| score(&[v])).fold(0.0, f64::max);
        pair += pairs.iter().map(|p| score(p)).fold(0.0, f64::max);
    }
    let (single, pair) = (single / 5.0, pair / 5.0);
    assert!(single >= pair - 0.05, "best single {single}, best pair {pair}");
}
