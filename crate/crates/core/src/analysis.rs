//! Subnetwork analysis: per-task winner frequencies, dendritic segment
//! responses, winner-set overlap, and CSV/SVG emitters.

use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{Hidden, HiddenKind, Network};
use crate::nn::Matrix;
use crate::scalar::Scalar;

/// `freq[τ][i]`: fraction of task τ's inputs for which unit `i` was active,
/// for each hidden layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationFrequencyTable {
    pub layers: Vec<Matrix<f64>>,
    pub kinds: Vec<HiddenKind>,
    /// Inputs evaluated per task.
    pub samples: Vec<usize>,
}

/// Winner frequencies of every hidden layer. `inputs[τ]` holds task τ's
/// images and the context rows to present with them.
pub fn activation_frequency<T: Scalar>(
    net: &Network<T>,
    inputs: &[(Matrix<T>, Option<Matrix<T>>)],
) -> Result<ActivationFrequencyTable> {
    if inputs.is_empty() {
        return Err(Error::Empty("task list"));
    }
    let widths = &net.spec().hidden;
    let mut layers: Vec<Matrix<f64>> = widths
        .iter()
        .map(|&w| Matrix::zeros(inputs.len(), w))
        .collect();
    let mut samples = Vec::with_capacity(inputs.len());
    for (task, (x, ctx)) in inputs.iter().enumerate() {
        if x.rows() == 0 {
            return Err(Error::Empty("task inputs"));
        }
        let (_, active) = net.infer_traced(x, ctx.as_ref())?;
        for (l, act) in active.iter().enumerate() {
            let w = widths[l];
            let row = layers[l].row_mut(task);
            for sample in act.chunks(w) {
                for (f, &a) in row.iter_mut().zip(sample) {
                    if a {
                        *f += 1.0;
                    }
                }
            }
            row.iter_mut().for_each(|f| *f /= x.rows() as f64);
        }
        samples.push(x.rows());
    }
    Ok(ActivationFrequencyTable {
        layers,
        kinds: net.spec().kinds.clone(),
        samples,
    })
}

/// Raw segment responses `u_{n,j} · c_τ` of one dendritic layer.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DendriteResponseTable {
    pub layer: usize,
    pub neurons: usize,
    pub segments: usize,
    pub tasks: usize,
    /// Row-major `[neuron][segment][task]`.
    pub values: Vec<f64>,
}

impl DendriteResponseTable {
    pub fn get(&self, neuron: usize, segment: usize, task: usize) -> f64 {
        self.values[(neuron * self.segments + segment) * self.tasks + task]
    }

    /// `[neurons·segments × tasks]` view for heatmaps and CSV.
    pub fn as_matrix(&self) -> Matrix<f64> {
        Matrix::from_vec(
            self.neurons * self.segments,
            self.tasks,
            self.values.clone(),
        )
        .expect("values match the table shape")
    }

    /// Counts of positive, negative and zero responses.
    pub fn sign_counts(&self) -> (usize, usize, usize) {
        let pos = self.values.iter().filter(|&&v| v > 0.0).count();
        let neg = self.values.iter().filter(|&&v| v < 0.0).count();
        (pos, neg, self.values.len() - pos - neg)
    }
}

/// Responses of the first `neurons` neurons of every dendritic layer to each
/// row of `contexts`.
pub fn dendrite_responses<T: Scalar>(
    net: &Network<T>,
    contexts: &Matrix<T>,
    neurons: usize,
) -> Result<Vec<DendriteResponseTable>> {
    let mut out = Vec::new();
    for (l, layer) in net.hidden().iter().enumerate() {
        let Hidden::Dendritic(d) = layer else {
            continue;
        };
        let seg = d.segments();
        if contexts.cols() != seg.context_dim() {
            return Err(Error::shape(
                "dendrite_responses",
                seg.context_dim(),
                contexts.cols(),
            ));
        }
        let n = neurons.min(seg.neurons());
        let tasks = contexts.rows();
        let mut values = vec![0.0; n * seg.segments() * tasks];
        for (task, c) in contexts.iter_rows().enumerate() {
            for i in 0..n {
                for j in 0..seg.segments() {
                    let r: T = seg.segment(i, j).iter().zip(c).map(|(&u, &v)| u * v).sum();
                    values[(i * seg.segments() + j) * tasks + task] = r.as_f64();
                }
            }
        }
        out.push(DendriteResponseTable {
            layer: l,
            neurons: n,
            segments: seg.segments(),
            tasks,
            values,
        });
    }
    Ok(out)
}

pub const DEFAULT_OVERLAP_THRESHOLD: f64 = 0.2;

/// Jaccard overlap of thresholded winner sets `S_τ = {i : freq[τ,i] ≥ θ}`.
/// Pairs of empty sets score 0 off the diagonal; the diagonal is 1 for
/// non-empty sets.
pub fn overlap(freq: &Matrix<f64>, threshold: f64) -> Result<Matrix<f64>> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::OutOfRange {
            what: "overlap threshold",
            value: threshold.to_string(),
            range: "(0, 1)".into(),
        });
    }
    let sets: Vec<Vec<bool>> = freq
        .iter_rows()
        .map(|r| r.iter().map(|&f| f >= threshold).collect())
        .collect();
    let t = sets.len();
    Ok(Matrix::from_fn(t, t, |a, b| {
        let inter = sets[a]
            .iter()
            .zip(&sets[b])
            .filter(|(&x, &y)| x && y)
            .count();
        let union = sets[a]
            .iter()
            .zip(&sets[b])
            .filter(|(&x, &y)| x || y)
            .count();
        if union == 0 {
            0.0
        } else {
            inter as f64 / union as f64
        }
    }))
}

/// Mean of the off-diagonal entries of a square matrix (0 when 1×1).
pub fn mean_off_diagonal(m: &Matrix<f64>) -> f64 {
    let n = m.rows();
    if n < 2 {
        return 0.0;
    }
    let mut sum = 0.0;
    for a in 0..n {
        for b in 0..n {
            if a != b {
                sum += m[(a, b)];
            }
        }
    }
    sum / (n * (n - 1)) as f64
}

/// Writes a matrix as CSV with a header of column labels and a leading
/// row-label column.
pub fn write_matrix_csv(
    path: &Path,
    m: &Matrix<f64>,
    row_label: &str,
    col_labels: &[String],
) -> Result<()> {
    let csv_err = |e: csv::Error| Error::Config(format!("{}: {e}", path.display()));
    if col_labels.len() != m.cols() {
        return Err(Error::shape(
            "write_matrix_csv labels",
            m.cols(),
            col_labels.len(),
        ));
    }
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    let mut header = vec![row_label.to_string()];
    header.extend(col_labels.iter().cloned());
    w.write_record(&header).map_err(csv_err)?;
    for (r, row) in m.iter_rows().enumerate() {
        let mut rec = vec![r.to_string()];
        rec.extend(row.iter().map(f64::to_string));
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::file(path, e))
}

/// Linear map from value to color.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ColorScale {
    pub low: [u8; 3],
    pub high: [u8; 3],
}

impl Default for ColorScale {
    fn default() -> Self {
        ColorScale {
            low: [255, 255, 255],
            high: [8, 48, 107],
        }
    }
}

impl ColorScale {
    /// Color at `t ∈ [0, 1]`.
    pub fn at(&self, t: f64) -> [u8; 3] {
        let t = t.clamp(0.0, 1.0);
        std::array::from_fn(|i| {
            let (a, b) = (self.low[i] as f64, self.high[i] as f64);
            (a + (b - a) * t).round() as u8
        })
    }
}

fn hex(c: [u8; 3]) -> String {
    format!("#{:02x}{:02x}{:02x}", c[0], c[1], c[2])
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

const CELL: usize = 12;
const MARGIN: usize = 48;

/// Standalone SVG heatmap: one rect per cell, axis labels, and a min/max
/// legend.
pub fn svg_heatmap(
    m: &Matrix<f64>,
    title: &str,
    x_label: &str,
    y_label: &str,
    scale: ColorScale,
) -> Result<String> {
    if m.is_empty() {
        return Err(Error::Empty("heatmap matrix"));
    }
    m.check_finite("heatmap matrix")?;
    let (lo, hi) = m
        .as_slice()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| {
            (a.min(v), b.max(v))
        });
    let span = hi - lo;
    let (w, h) = (m.cols() * CELL, m.rows() * CELL);
    let (width, height) = (w + 2 * MARGIN + 80, h + 2 * MARGIN);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">"#
    );
    let _ = writeln!(
        s,
        r#"<text x="{MARGIN}" y="{}" font-family="sans-serif" font-size="14">{}</text>"#,
        MARGIN / 2,
        escape(title)
    );
    for (r, row) in m.iter_rows().enumerate() {
        for (c, &v) in row.iter().enumerate() {
            let t = if span > 0.0 { (v - lo) / span } else { 0.5 };
            let _ = writeln!(
                s,
                r#"<rect x="{}" y="{}" width="{CELL}" height="{CELL}" fill="{}"><title>{r},{c}: {v}</title></rect>"#,
                MARGIN + c * CELL,
                MARGIN + r * CELL,
                hex(scale.at(t))
            );
        }
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" font-family="sans-serif" font-size="12" text-anchor="middle">{}</text>"#,
        MARGIN + w / 2,
        MARGIN + h + 20,
        escape(x_label)
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" font-family="sans-serif" font-size="12" text-anchor="middle" transform="rotate(-90 {} {})">{}</text>"#,
        MARGIN - 12,
        MARGIN + h / 2,
        MARGIN - 12,
        MARGIN + h / 2,
        escape(y_label)
    );
    let lx = MARGIN + w + 20;
    for (i, (label, t)) in [("max", 1.0), ("min", 0.0)].into_iter().enumerate() {
        let value = if i == 0 { hi } else { lo };
        let y = MARGIN + i * 24;
        let _ = writeln!(
            s,
            r#"<rect class="legend" x="{lx}" y="{y}" width="{CELL}" height="{CELL}" fill="{}"/>"#,
            hex(scale.at(if span > 0.0 { t } else { 0.5 }))
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" font-family="sans-serif" font-size="11">{label} {value:.4}</text>"#,
            lx + CELL + 4,
            y + CELL - 2
        );
    }
    s.push_str("</svg>\n");
    Ok(s)
}

pub fn emit_svg_heatmap(
    m: &Matrix<f64>,
    path: &Path,
    title: &str,
    scale: ColorScale,
) -> Result<()> {
    let svg = svg_heatmap(m, title, "column", "row", scale)?;
    std::fs::write(path, svg).map_err(|e| Error::file(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dendrites::Gating;
    use crate::model::NetworkSpec;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn m(rows: &[Vec<f64>]) -> Matrix<f64> {
        Matrix::from_rows(rows).unwrap()
    }

    #[test]
    fn jaccard_arithmetic() {
        let f = m(&[vec![0.0, 1.0, 1.0, 0.0], vec![0.0, 0.0, 1.0, 1.0]]);
        let o = overlap(&f, 0.2).unwrap();
        assert_eq!(o[(0, 1)], 1.0 / 3.0);
        assert_eq!(o[(0, 0)], 1.0);
        assert_eq!(mean_off_diagonal(&o), 1.0 / 3.0);
    }

    #[test]
    fn identical_disjoint_and_empty_rows() {
        let f = m(&[
            vec![0.5, 0.5, 0.0],
            vec![0.5, 0.5, 0.0],
            vec![0.0, 0.0, 0.9],
            vec![0.0; 3],
        ]);
        let o = overlap(&f, 0.2).unwrap();
        assert_eq!(o[(0, 1)], 1.0);
        assert_eq!(o[(0, 2)], 0.0);
        assert_eq!(o[(3, 3)], 0.0);
        assert_eq!(o[(3, 0)], 0.0);
        assert!(overlap(&f, 1.0).is_err());
    }

    fn net(kinds: Vec<HiddenKind>, density: f64) -> Network<f64> {
        let spec = NetworkSpec {
            input_dim: 6,
            hidden: vec![10; kinds.len()],
            kinds,
            outputs: 3,
            segments: 3,
            context_dim: 4,
            input_context_dim: 0,
            density,
            ff_sparsity: 0.5,
            gating: Gating::AbsMax,
        };
        Network::init(&spec, &mut ChaCha8Rng::seed_from_u64(9)).unwrap()
    }

    #[test]
    fn frequencies_sum_to_k() {
        let n = net(vec![HiddenKind::Dendritic, HiddenKind::Kwta], 0.3);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let inputs: Vec<_> = (0..3)
            .map(|_| {
                (
                    Matrix::uniform(7, 6, 1.0, &mut rng),
                    Some(Matrix::uniform(7, 4, 1.0, &mut rng)),
                )
            })
            .collect();
        let t = activation_frequency(&n, &inputs).unwrap();
        for layer in &t.layers {
            for row in layer.iter_rows() {
                assert!((row.iter().sum::<f64>() - 3.0).abs() < 1e-12);
                assert!(row.iter().all(|&f| (0.0..=1.0).contains(&f)));
            }
        }
        assert_eq!(t.samples, vec![7; 3]);
    }

    #[test]
    fn full_width_means_everyone_wins() {
        let n = net(vec![HiddenKind::Kwta], 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let t = activation_frequency(&n, &[(Matrix::uniform(5, 6, 1.0, &mut rng), None)]).unwrap();
        assert!(t.layers[0].as_slice().iter().all(|&f| f == 1.0));
        assert!(activation_frequency(&n, &[(Matrix::zeros(0, 6), None)]).is_err());
    }

    #[test]
    fn onehot_responses_slice_segments() {
        let n = net(vec![HiddenKind::Dendritic], 0.3);
        let eye = Matrix::from_fn(4, 4, |r, c| if r == c { 1.0 } else { 0.0 });
        let t = &dendrite_responses(&n, &eye, 64).unwrap()[0];
        let Hidden::Dendritic(d) = &n.hidden()[0] else {
            unreachable!()
        };
        assert_eq!(t.neurons, 10);
        for i in 0..10 {
            for j in 0..3 {
                for task in 0..4 {
                    assert_eq!(t.get(i, j, task), d.segments().get(i, j, task));
                }
            }
        }
    }

    #[test]
    fn zero_segments_give_zero_table() {
        let n = net(vec![HiddenKind::Dendritic], 0.3);
        let mut zeroed = n.clone();
        let values: Vec<Vec<f64>> = n
            .tensors()
            .iter()
            .map(|t| {
                if t.name == "segments" {
                    vec![0.0; t.data.len()]
                } else {
                    t.data.to_vec()
                }
            })
            .collect();
        zeroed.load_tensors(&values).unwrap();
        let c = Matrix::uniform(2, 4, 1.0, &mut ChaCha8Rng::seed_from_u64(3));
        let t = &dendrite_responses(&zeroed, &c, 64).unwrap()[0];
        assert!(t.values.iter().all(|&v| v == 0.0));
        assert_eq!(t.sign_counts(), (0, 0, t.values.len()));
    }

    #[test]
    fn heatmap_cells_and_legend() {
        let s = svg_heatmap(
            &m(&[vec![0.0, 1.0], vec![2.0, 3.0]]),
            "t",
            "x",
            "y",
            ColorScale::default(),
        )
        .unwrap();
        let fills: std::collections::HashSet<&str> = s
            .lines()
            .filter(|l| l.starts_with("<rect x"))
            .filter_map(|l| l.split("fill=\"").nth(1)?.split('"').next())
            .collect();
        assert_eq!(fills.len(), 4);
        let one = svg_heatmap(&m(&[vec![0.7]]), "t", "x", "y", ColorScale::default()).unwrap();
        assert_eq!(one.matches("<rect x").count(), 1);
        assert!(one.contains("max 0.7000") && one.contains("min 0.7000"));
        assert!(svg_heatmap(&m(&[vec![f64::NAN]]), "t", "x", "y", ColorScale::default()).is_err());
    }

    #[test]
    fn csv_quotes_labels() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        write_matrix_csv(
            &p,
            &m(&[vec![0.5, 1.0]]),
            "task",
            &["a,b".into(), "c\"d".into()],
        )
        .unwrap();
        assert_eq!(
            std::fs::read_to_string(&p).unwrap(),
            "task,\"a,b\",\"c\"\"d\"\n0,0.5,1\n"
        );
    }
}
