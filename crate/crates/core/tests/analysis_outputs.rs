//! Analysis tables from a small network, written out and parsed back.

use adnet::analysis::{
    activation_frequency, dendrite_responses, mean_off_diagonal, overlap, svg_heatmap,
    write_matrix_csv, ColorScale, DEFAULT_OVERLAP_THRESHOLD,
};
use adnet::context::ContextMode;
use adnet::harness::{init_network, ExperimentConfig};
use adnet::nn::Matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn setup() -> (
    adnet::model::Network<f64>,
    Vec<(Matrix<f64>, Option<Matrix<f64>>)>,
) {
    let mut cfg = ExperimentConfig::desk(4);
    cfg.model.hidden = vec![20, 16];
    cfg.model.density = 0.25;
    cfg.context.mode = ContextMode::Onehot;
    let net = init_network::<f64>(&cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let inputs = (0..4)
        .map(|t| {
            let x = Matrix::from_fn(30, 784, |_, _| rng.gen_range(-1.0..1.0));
            let c = Matrix::from_fn(30, 4, |_, j| f64::from(u8::from(j == t)));
            (x, Some(c))
        })
        .collect();
    (net, inputs)
}

#[test]
fn frequencies_sum_to_density() {
    let (net, inputs) = setup();
    let table = activation_frequency(&net, &inputs).unwrap();
    assert_eq!(table.samples, vec![30; 4]);
    for (l, freq) in table.layers.iter().enumerate() {
        let k = net.spec().k(l).unwrap() as f64;
        for row in freq.iter_rows() {
            assert!(row.iter().all(|&f| (0.0..=1.0).contains(&f)));
            // each sample has exactly k winners
            assert!((row.iter().sum::<f64>() - k).abs() < 1e-12);
        }
        let o = overlap(freq, DEFAULT_OVERLAP_THRESHOLD).unwrap();
        let m = mean_off_diagonal(&o);
        assert!((0.0..=1.0).contains(&m));
        for a in 0..4 {
            for b in 0..4 {
                assert_eq!(o[(a, b)], o[(b, a)]);
            }
        }
    }
}

#[test]
fn csv_round_trips_through_a_reader() {
    let (net, inputs) = setup();
    let freq = &activation_frequency(&net, &inputs).unwrap().layers[0];
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("freq.csv");
    let labels: Vec<String> = (0..freq.cols())
        .map(|i| format!("unit \"{i}\", col"))
        .collect();
    write_matrix_csv(&path, freq, "task", &labels).unwrap();
    let mut r = csv::Reader::from_path(&path).unwrap();
    let header: Vec<String> = r.headers().unwrap().iter().map(str::to_string).collect();
    assert_eq!(header[0], "task");
    assert_eq!(&header[1..], &labels[..]);
    for (t, rec) in r.records().enumerate() {
        let rec = rec.unwrap();
        assert_eq!(rec[0].parse::<usize>().unwrap(), t);
        for (c, v) in rec.iter().skip(1).enumerate() {
            assert_eq!(v.parse::<f64>().unwrap(), freq[(t, c)]);
        }
    }
}

#[test]
fn svg_is_well_formed_with_one_cell_per_entry() {
    let (net, _) = setup();
    let ctx = Matrix::from_fn(4, 4, |i, j| f64::from(u8::from(i == j)));
    let tables = dendrite_responses(&net, &ctx, 5).unwrap();
    assert_eq!(tables.len(), 2);
    let m = tables[1].as_matrix();
    let svg = svg_heatmap(
        &m,
        "responses <layer 1> & more",
        "task",
        "segment",
        ColorScale::default(),
    )
    .unwrap();
    let doc = roxmltree::Document::parse(&svg).unwrap();
    let root = doc.root_element();
    assert_eq!(root.tag_name().name(), "svg");
    let rects: Vec<_> = root.children().filter(|n| n.has_tag_name("rect")).collect();
    let legend = rects
        .iter()
        .filter(|n| n.attribute("class") == Some("legend"))
        .count();
    assert_eq!(legend, 2);
    assert_eq!(rects.len() - legend, m.rows() * m.cols());
    let texts: Vec<String> = root
        .children()
        .filter(|n| n.has_tag_name("text"))
        .filter_map(|n| n.text().map(str::to_string))
        .collect();
    assert!(texts.contains(&"responses <layer 1> & more".to_string()));
    assert!(texts.contains(&"task".to_string()) && texts.contains(&"segment".to_string()));
    assert!(
        texts.iter().any(|t| t.starts_with("max")) && texts.iter().any(|t| t.starts_with("min"))
    );
    for r in rects {
        let fill = r.attribute("fill").unwrap();
        assert!(fill.len() == 7 && fill.starts_with('#'), "{fill}");
    }
}
