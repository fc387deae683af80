use super::*;
use crate::model::{SegNet, SegNetConfig};
use crate::style::{cpss_inter, GridSize};

fn small_spec() -> SceneSpec {
    SceneSpec {
        size: 32,
        ..SceneSpec::default()
    }
}

#[test]
fn identical_styles_give_identical_pixels() {
    let spec = small_spec();
    let mut twin = spec.domains[1].clone();
    twin.name = "twin".into();
    let (a, la) = render(&spec, &spec.domains[1], 77);
    let (b, lb) = render(&spec, &twin, 77);
    assert_eq!(a, b);
    assert_eq!(la, lb);
}

#[test]
fn labels_do_not_depend_on_style() {
    let spec = small_spec();
    let (_, reference) = render(&spec, &spec.domains[0], 5);
    for d in &spec.domains[1..] {
        let (img, lab) = render(&spec, d, 5);
        assert_eq!(lab, reference);
        assert!(img.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }
}

#[test]
fn every_pixel_has_a_class_and_all_classes_appear() {
    let spec = small_spec();
    let mut seen = [0usize; 6];
    for s in 0..50 {
        let (_, lab) = render_scene(&spec, s);
        for &l in lab.data() {
            assert!((l as usize) < 6);
            seen[l as usize] += 1;
        }
    }
    assert!(seen.iter().all(|&c| c > 0), "{seen:?}");
}

#[test]
fn spec_validation() {
    let mut spec = small_spec();
    spec.domains.retain(|d| d.role != Role::Open);
    assert!(matches!(spec.validate(), Err(Error::Config(_))));
    let mut spec = small_spec();
    spec.domains[2].name = "rainy".into();
    assert!(matches!(spec.validate(), Err(Error::Config(_))));
    assert!(SceneSpec::default().validate().is_ok());
}

#[test]
fn spec_json_roundtrip() {
    let spec = SceneSpec::default();
    let text = serde_json::to_string(&spec).unwrap();
    assert_eq!(serde_json::from_str::<SceneSpec>(&text).unwrap(), spec);
}

/// Leave-one-out 1-NN on per-image mean color.
#[test]
fn domains_separate_by_mean_color() {
    let spec = small_spec();
    let mut points = Vec::new();
    for (di, d) in spec.domains.iter().enumerate() {
        for i in 0..40 {
            let (img, _) = render(&spec, d, 1000 * di as u64 + i);
            let mean: Vec<f64> = (0..3)
                .map(|c| {
                    img.plane(0, c).iter().map(|&v| v as f64).sum::<f64>() / img.plane_len() as f64
                })
                .collect();
            points.push((di, mean));
        }
    }
    let mut correct = 0;
    for (i, (di, p)) in points.iter().enumerate() {
        let nearest = points
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != i)
            .min_by(|a, b| {
                let da: f64 = a.1 .1.iter().zip(p).map(|(x, y)| (x - y).powi(2)).sum();
                let db: f64 = b.1 .1.iter().zip(p).map(|(x, y)| (x - y).powi(2)).sum();
                da.total_cmp(&db)
            })
            .unwrap();
        correct += (nearest.1 .0 == *di) as usize;
    }
    let acc = correct as f64 / points.len() as f64;
    assert!(acc > 0.95, "1-NN accuracy {acc}");
}

fn generated(dir: &Path) -> Manifest {
    generate_domains(&small_spec(), dir, 3, DomainCounts { train: 3, test: 2 }).unwrap()
}

#[test]
fn generated_dataset_layout() {
    let dir = tempfile::tempdir().unwrap();
    let m = generated(dir.path());
    // 4 domains with train+test, open with test only.
    assert_eq!(m.samples.len(), 4 * 5 + 2);
    for s in &m.samples {
        let unlabeled = s.role == Role::Compound && s.split == Split::Train;
        assert_eq!(s.label.is_none(), unlabeled, "{s:?}");
        assert!(!(s.role == Role::Open && s.split == Split::Train));
    }
    let ds = DomainDataset::open(&dir.path().join(MANIFEST_NAME), AuditLog::new()).unwrap();
    ds.verify().unwrap();
    assert_eq!(Manifest::read(&dir.path().join(MANIFEST_NAME)).unwrap(), m);
    assert_eq!(ds.num_classes(), 6);
    assert_eq!(ds.domains().len(), 5);
}

#[test]
fn regeneration_is_bit_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let m = generated(a.path());
    generated(b.path());
    for s in &m.samples {
        let fa = fs::read(a.path().join(&s.image)).unwrap();
        let fb = fs::read(b.path().join(&s.image)).unwrap();
        assert_eq!(fa, fb);
    }
    assert_eq!(
        fs::read(a.path().join(MANIFEST_NAME)).unwrap(),
        fs::read(b.path().join(MANIFEST_NAME)).unwrap()
    );
}

#[test]
fn target_view_never_touches_source_files() {
    let dir = tempfile::tempdir().unwrap();
    let m = generated(dir.path());
    let audit = AuditLog::new();
    let ds = DomainDataset::open_target(&dir.path().join(MANIFEST_NAME), audit.clone()).unwrap();
    assert!(ds.entries().iter().all(|e| e.role != Role::Source));
    ds.verify().unwrap();
    let source: Vec<PathBuf> = m
        .samples
        .iter()
        .filter(|s| s.role == Role::Source)
        .map(|s| dir.path().join(&s.image))
        .collect();
    let opened = audit.paths();
    assert!(opened.len() > 1);
    assert!(opened.iter().all(|p| !source.contains(p)));
}

#[test]
fn missing_file_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let m = generated(dir.path());
    fs::remove_file(dir.path().join(&m.samples[0].image)).unwrap();
    let ds = DomainDataset::open(&dir.path().join(MANIFEST_NAME), AuditLog::new()).unwrap();
    assert!(matches!(ds.load(0, true), Err(Error::Io { .. })));
}

#[test]
fn kmeans_recovers_separated_clusters() {
    let mut rng = Rng::new(4, 0);
    let centers = [[0.0, 0.0], [10.0, 0.0], [0.0, 10.0]];
    let mut points = Vec::new();
    let mut truth = Vec::new();
    for i in 0..90 {
        let c = centers[i % 3];
        points.push(vec![c[0] + rng.normal(), c[1] + rng.normal()]);
        truth.push(i % 3);
    }
    let km = kmeans(&points, 3, 1).unwrap();
    assert!(adjusted_rand_index(&km.assignments, &truth) > 0.99);
    assert_eq!(kmeans(&points, 3, 1).unwrap(), km);
    let one = kmeans(&points, 1, 1).unwrap();
    assert!(one.assignments.iter().all(|&a| a == 0));
}

#[test]
fn kmeans_duplicate_clouds_and_degenerate_input() {
    let mut points = vec![vec![1.0, 1.0]; 10];
    points.extend(vec![vec![5.0, 5.0]; 10]);
    let km = kmeans(&points, 2, 0).unwrap();
    assert_ne!(km.assignments[0], km.assignments[10]);
    assert!(km.assignments[..10].iter().all(|&a| a == km.assignments[0]));
    assert!(km.assignments[10..]
        .iter()
        .all(|&a| a == km.assignments[10]));
    let same = vec![vec![2.0]; 5];
    let km = kmeans(&same, 3, 0).unwrap();
    assert!(km.iterations <= cluster::MAX_ITERS);
    assert!(matches!(kmeans(&same, 6, 0), Err(Error::Config(_))));
}

#[test]
fn ari_examples() {
    assert_eq!(adjusted_rand_index(&[0, 0, 1, 1], &[1, 1, 0, 0]), 1.0);
    assert!(adjusted_rand_index(&[0, 0, 1, 1], &[0, 1, 0, 1]) < 0.0);
}

#[test]
fn balanced_batches_cover_every_group() {
    let groups: Vec<usize> = (0..30).map(|i| i % 3).collect();
    let mut s = BatchSampler::balanced(&groups, 3, Rng::new(1, 0)).unwrap();
    for _ in 0..50 {
        let mut b: Vec<usize> = s.next_batch().iter().map(|&i| groups[i]).collect();
        b.sort();
        assert_eq!(b, vec![0, 1, 2]);
    }
    let mut s = BatchSampler::balanced(&groups, 4, Rng::new(1, 0)).unwrap();
    for _ in 0..50 {
        let b: Vec<usize> = s.next_batch().iter().map(|&i| groups[i]).collect();
        assert!((0..3).all(|g| b.contains(&g)));
    }
    assert!(matches!(
        BatchSampler::balanced(&groups, 2, Rng::new(1, 0)),
        Err(Error::Config(_))
    ));
}

#[test]
fn random_sampler_is_proportional_and_deterministic() {
    let groups: Vec<usize> = (0..100)
        .map(|i| {
            if i < 50 {
                0
            } else if i < 80 {
                1
            } else {
                2
            }
        })
        .collect();
    let mut s = BatchSampler::random(100, 4, Rng::new(2, 0)).unwrap();
    let mut counts = [0usize; 3];
    let draws = 100_000 / 4;
    for _ in 0..draws {
        for i in s.next_batch() {
            counts[groups[i]] += 1;
        }
    }
    for (c, want) in counts.iter().zip([0.5, 0.3, 0.2]) {
        assert!((*c as f64 / 100_000.0 - want).abs() < 0.02);
    }
    let mut a = BatchSampler::random(100, 4, Rng::new(9, 0)).unwrap();
    let mut b = BatchSampler::random(100, 4, Rng::new(9, 0)).unwrap();
    for _ in 0..100 {
        assert_eq!(a.next_batch(), b.next_batch());
    }
    assert_eq!(
        "oracle".parse::<SamplerMode>().unwrap(),
        SamplerMode::Oracle
    );
    assert!("x".parse::<SamplerMode>().is_err());
}

#[test]
fn style_embeddings() {
    let cfg = SegNetConfig {
        widths: vec![4, 8],
        ..SegNetConfig::default()
    };
    let net: SegNet<f32> = SegNet::new(cfg, &mut Rng::new(1, 0)).unwrap();
    let spec = small_spec();
    let (a, _) = render(&spec, &spec.domains[0], 1);
    let (b, _) = render(&spec, &spec.domains[2], 2);
    let both = Tensor::stack(&[&a, &a]).unwrap();
    let e = extract_style_embedding(&net, &both).unwrap();
    assert_eq!(e[0].len(), 8);
    assert_eq!(e[0], e[1]);
    assert!(e[0].0.iter().all(|v| v.is_finite()));
    let pair = Tensor::stack(&[&a, &b]).unwrap();
    let swapped = cpss_inter(&pair, GridSize::new(2, 2).unwrap(), &mut Rng::new(3, 0)).unwrap();
    let e2 = extract_style_embedding(&net, &swapped).unwrap();
    assert!((e2[0].norm() - e[0].norm()).abs() > 0.0);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("e.csv");
    export_embeddings_csv(&path, &[("a.sfot".into(), "source".into(), e[0].clone())]).unwrap();
    let text = fs::read_to_string(&path).unwrap();
    assert!(text.starts_with("path,domain,e0,e1,e2,e3,e4,e5,e6,e7\na.sfot,source,"));
}
