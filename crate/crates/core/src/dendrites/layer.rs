use rand::Rng;
use serde::{Deserialize, Serialize};

use super::kwta::winners_of_row;
use super::segments::{DendriticSegments, Responses};
use crate::error::{Error, Result};
use crate::nn::{axpy, Linear, LinearGrads, Matrix};
use crate::scalar::{sigmoid, Scalar};

/// How the dendritic activation `d` is chosen among a neuron's segments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Gating {
    /// Segment with the largest `|response|`, sign kept.
    #[default]
    AbsMax,
    /// Segment with the largest response.
    Max,
}

impl Gating {
    /// Winning segment index; ties go to the lowest index.
    #[inline]
    pub fn select<T: Scalar>(self, responses: &[T]) -> usize {
        let key = |v: T| match self {
            Gating::AbsMax => v.abs(),
            Gating::Max => v,
        };
        let mut best = 0;
        for (j, &r) in responses.iter().enumerate().skip(1) {
            if key(r) > key(responses[best]) {
                best = j;
            }
        }
        best
    }

    /// Gap between the best and second-best selection keys.
    pub fn margin<T: Scalar>(self, responses: &[T]) -> Option<f64> {
        if responses.len() < 2 {
            return None;
        }
        let mut keys: Vec<f64> = responses
            .iter()
            .map(|&v| match self {
                Gating::AbsMax => v.abs().as_f64(),
                Gating::Max => v.as_f64(),
            })
            .collect();
        keys.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
        Some(keys[0] - keys[1])
    }
}

/// Result of modulating feedforward activations by the dendrites.
#[derive(Debug, Clone)]
pub struct Gated<T> {
    /// `ŷ = t̂ · σ(d)`.
    pub output: Matrix<T>,
    /// Winning segment per `(sample, neuron)`.
    pub winner: Vec<u32>,
    /// `σ(d)` per `(sample, neuron)`.
    pub factor: Matrix<T>,
}

/// Modulates `t_hat [batch × neurons]` by the selected segment responses.
pub fn gate<T: Scalar>(
    t_hat: &Matrix<T>,
    responses: &Responses<T>,
    mode: Gating,
) -> Result<Gated<T>> {
    if t_hat.rows() != responses.batch() || t_hat.cols() != responses.neurons() {
        return Err(Error::shape(
            "gate",
            format!("{}x{}", responses.batch(), responses.neurons()),
            format!("{}x{}", t_hat.rows(), t_hat.cols()),
        ));
    }
    let neurons = responses.neurons();
    let segments = responses.segments();
    // selection depends on the context only
    let per_context: Vec<(Vec<u32>, Vec<T>)> = (0..responses.distinct())
        .map(|u| {
            let vals = responses.unique_values(u);
            let mut win = Vec::with_capacity(neurons);
            let mut fac = Vec::with_capacity(neurons);
            for n in 0..neurons {
                let r = &vals[n * segments..(n + 1) * segments];
                let j = mode.select(r);
                win.push(j as u32);
                fac.push(sigmoid(r[j]));
            }
            (win, fac)
        })
        .collect();

    let mut output = Matrix::zeros(t_hat.rows(), neurons);
    let mut factor = Matrix::zeros(t_hat.rows(), neurons);
    let mut winner = Vec::with_capacity(t_hat.len());
    for s in 0..t_hat.rows() {
        let (win, fac) = &per_context[responses.unique_of(s)];
        winner.extend_from_slice(win);
        factor.row_mut(s).copy_from_slice(fac);
        for ((o, &t), &f) in output.row_mut(s).iter_mut().zip(t_hat.row(s)).zip(fac) {
            *o = t * f;
        }
    }
    Ok(Gated {
        output,
        winner,
        factor,
    })
}

/// A layer of Active Dendrites Neurons followed by k-winner-take-all.
#[derive(Debug, Clone)]
pub struct ActiveDendritesLayer<T> {
    ff: Linear<T>,
    dend: DendriticSegments<T>,
    gating: Gating,
    k: usize,
    cache: Option<ForwardRecord<T>>,
}

/// Compares parameters and configuration; the forward record is ignored.
impl<T: Scalar> PartialEq for ActiveDendritesLayer<T> {
    fn eq(&self, other: &Self) -> bool {
        self.ff == other.ff
            && self.dend == other.dend
            && self.gating == other.gating
            && self.k == other.k
    }
}

/// State recorded by a training forward pass.
#[derive(Debug, Clone)]
pub struct ForwardRecord<T> {
    pub x: Matrix<T>,
    pub contexts: Matrix<T>,
    pub t_hat: Matrix<T>,
    pub gated: Gated<T>,
    /// kWTA winner flags per `(sample, neuron)`.
    pub active: Vec<bool>,
    pub(crate) context_map: Vec<usize>,
    pub(crate) context_rows: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct AdlGrads<T> {
    pub ff: LinearGrads<T>,
    /// Same layout as the segment weights.
    pub segments: Vec<T>,
}

impl<T: Scalar> ActiveDendritesLayer<T> {
    pub fn new(
        ff: Linear<T>,
        dend: DendriticSegments<T>,
        gating: Gating,
        k: usize,
    ) -> Result<Self> {
        if ff.fan_out() != dend.neurons() {
            return Err(Error::shape(
                "ActiveDendritesLayer",
                ff.fan_out(),
                dend.neurons(),
            ));
        }
        if k == 0 || k > ff.fan_out() {
            return Err(Error::OutOfRange {
                what: "kWTA k",
                value: k.to_string(),
                range: format!("[1, {}]", ff.fan_out()),
            });
        }
        Ok(ActiveDendritesLayer {
            ff,
            dend,
            gating,
            k,
            cache: None,
        })
    }

    #[allow(clippy::too_many_arguments)]
    pub fn init<R: Rng + ?Sized>(
        fan_in: usize,
        neurons: usize,
        segments: usize,
        context_dim: usize,
        ff_sparsity: f64,
        gating: Gating,
        k: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let ff = Linear::init(fan_in, neurons, ff_sparsity, rng)?;
        let dend = DendriticSegments::init(neurons, segments, context_dim, rng)?;
        Self::new(ff, dend, gating, k)
    }

    pub fn ff(&self) -> &Linear<T> {
        &self.ff
    }

    pub fn segments(&self) -> &DendriticSegments<T> {
        &self.dend
    }

    pub fn gating(&self) -> Gating {
        self.gating
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn width(&self) -> usize {
        self.ff.fan_out()
    }

    pub(crate) fn parts_mut(&mut self) -> (&mut Linear<T>, &mut DendriticSegments<T>) {
        (&mut self.ff, &mut self.dend)
    }

    pub fn last_forward(&self) -> Option<&ForwardRecord<T>> {
        self.cache.as_ref()
    }

    pub fn clear_record(&mut self) {
        self.cache = None;
    }

    fn compute(
        &self,
        x: &Matrix<T>,
        contexts: &Matrix<T>,
    ) -> Result<(Matrix<T>, ForwardRecord<T>)> {
        if x.rows() != contexts.rows() {
            return Err(Error::shape("adl_forward batch", x.rows(), contexts.rows()));
        }
        let t_hat = self.ff.forward(x)?;
        let responses = self.dend.responses(contexts)?;
        let gated = gate(&t_hat, &responses, self.gating)?;
        let width = self.width();
        let mut out = Matrix::zeros(x.rows(), width);
        let mut active = vec![false; out.len()];
        let mut scratch = Vec::with_capacity(width);
        for s in 0..x.rows() {
            let row = gated.output.row(s);
            let act = &mut active[s * width..(s + 1) * width];
            winners_of_row(row, self.k, &mut scratch, act);
            for ((o, &v), &a) in out.row_mut(s).iter_mut().zip(row).zip(act.iter()) {
                if a {
                    *o = v;
                }
            }
        }
        let record = ForwardRecord {
            x: x.clone(),
            contexts: contexts.clone(),
            t_hat,
            gated,
            active,
            context_map: responses.sample_map().to_vec(),
            context_rows: responses.unique_rows().to_vec(),
        };
        Ok((out, record))
    }

    /// `kwta(gate(ff(x), responses(c)))`, recording what backward needs.
    pub fn forward(&mut self, x: &Matrix<T>, contexts: &Matrix<T>) -> Result<Matrix<T>> {
        let (out, record) = self.compute(x, contexts)?;
        self.cache = Some(record);
        Ok(out)
    }

    /// Forward pass without recording; returns the output and kWTA winner flags.
    pub fn infer(&self, x: &Matrix<T>, contexts: &Matrix<T>) -> Result<(Matrix<T>, Vec<bool>)> {
        let (out, record) = self.compute(x, contexts)?;
        Ok((out, record.active))
    }

    /// Gradients routed through kWTA winners and, per winner, the selected segment only.
    pub fn backward(&self, d_out: &Matrix<T>) -> Result<(Matrix<T>, AdlGrads<T>)> {
        let rec = self.cache.as_ref().ok_or(Error::NoForward)?;
        let width = self.width();
        if d_out.shape() != (rec.x.rows(), width) {
            return Err(Error::shape(
                "adl_backward",
                format!("{}x{width}", rec.x.rows()),
                format!("{}x{}", d_out.rows(), d_out.cols()),
            ));
        }
        let batch = rec.x.rows();
        let segments = self.dend.segments();
        let cdim = self.dend.context_dim();
        let mut d_t = Matrix::zeros(batch, width);
        // per distinct context: coefficient for each (neuron, segment)
        let mut d_seg_coeff = vec![vec![T::zero(); width * segments]; rec.context_rows.len()];
        for s in 0..batch {
            let coeff = &mut d_seg_coeff[rec.context_map[s]];
            for n in 0..width {
                let i = s * width + n;
                if !rec.active[i] {
                    continue;
                }
                let g = d_out[(s, n)];
                if g == T::zero() {
                    continue;
                }
                let f = rec.gated.factor[(s, n)];
                d_t[(s, n)] = g * f;
                let j = rec.gated.winner[i] as usize;
                coeff[n * segments + j] += g * rec.t_hat[(s, n)] * f * (T::one() - f);
            }
        }
        let (dx, ff) = self.ff.backward(&rec.x, &d_t)?;
        let mut d_u = vec![T::zero(); self.dend.len()];
        for (u, coeff) in d_seg_coeff.iter().enumerate() {
            let c = rec.contexts.row(rec.context_rows[u]);
            for (idx, &a) in coeff.iter().enumerate() {
                if a != T::zero() {
                    axpy(a, c, &mut d_u[idx * cdim..(idx + 1) * cdim]);
                }
            }
        }
        Ok((dx, AdlGrads { ff, segments: d_u }))
    }

    /// Gate factors `σ(d)` for each of a fixed set of context vectors,
    /// `[contexts × neurons]`.
    pub fn gate_factors(&self, contexts: &Matrix<T>) -> Result<Matrix<T>> {
        if contexts.cols() != self.dend.context_dim() {
            return Err(Error::shape(
                "gate_factors",
                self.dend.context_dim(),
                contexts.cols(),
            ));
        }
        let mut out = Matrix::zeros(contexts.rows(), self.width());
        let segs = self.dend.segments();
        for p in 0..contexts.rows() {
            let r = self.dend.respond(contexts.row(p));
            for (n, o) in out.row_mut(p).iter_mut().enumerate() {
                let rs = &r[n * segs..(n + 1) * segs];
                *o = sigmoid(rs[self.gating.select(rs)]);
            }
        }
        Ok(out)
    }

    /// Forward pass with the dendrites replaced by precomputed gate factors;
    /// `which[s]` picks the row of `factors` for sample `s`.
    pub fn infer_with_factors(
        &self,
        x: &Matrix<T>,
        factors: &Matrix<T>,
        which: &[usize],
    ) -> Result<(Matrix<T>, Vec<bool>)> {
        if which.len() != x.rows() || factors.cols() != self.width() {
            return Err(Error::shape("infer_with_factors", x.rows(), which.len()));
        }
        let width = self.width();
        let mut y = self.ff.forward(x)?;
        for (s, &p) in which.iter().enumerate() {
            if p >= factors.rows() {
                return Err(Error::OutOfRange {
                    what: "gate factor row",
                    value: p.to_string(),
                    range: format!("[0, {})", factors.rows()),
                });
            }
            for (v, &f) in y.row_mut(s).iter_mut().zip(factors.row(p)) {
                *v *= f;
            }
        }
        let mut active = vec![false; y.len()];
        let mut scratch = Vec::with_capacity(width);
        for s in 0..y.rows() {
            let act = &mut active[s * width..(s + 1) * width];
            winners_of_row(y.row(s), self.k, &mut scratch, act);
            for (v, &a) in y.row_mut(s).iter_mut().zip(act.iter()) {
                if !a {
                    *v = T::zero();
                }
            }
        }
        Ok((y, active))
    }

    /// Smallest kWTA gap and segment-selection gap at `(x, c)`.
    pub fn tie_margin(&self, x: &Matrix<T>, contexts: &Matrix<T>) -> Result<Option<f64>> {
        let t_hat = self.ff.forward(x)?;
        let responses = self.dend.responses(contexts)?;
        let gated = gate(&t_hat, &responses, self.gating)?;
        let mut margin: Option<f64> = super::kwta::kwta_margin(&gated.output, self.k);
        for s in 0..x.rows() {
            for n in 0..self.width() {
                if let Some(m) = self.gating.margin(responses.of(s, n)) {
                    margin = Some(margin.map_or(m, |cur| cur.min(m)));
                }
            }
        }
        Ok(margin)
    }

    pub fn param_count(&self) -> usize {
        self.ff.param_count() + self.dend.len()
    }

    pub fn cast<U: Scalar>(&self) -> ActiveDendritesLayer<U> {
        ActiveDendritesLayer {
            ff: self.ff.cast(),
            dend: self.dend.cast(),
            gating: self.gating,
            k: self.k,
            cache: None,
        }
    }
}
