//! The time-conditioned vector field `v(x, t [, class])`.
//!
//! ```text
//! t_embed = Linear(d_time) . GELU . Linear(d_time) (t)
//! input   = [x_t, t_embed, class_embed?]
//! trunk   = 3 x (Linear -> LayerNorm -> GELU -> Dropout), widths d_h, d_h/2, d_h
//! output  = Linear(d)
//! ```
//!
//! Parameters live in one flat `f64` vector; forward and backward passes
//! are written out by hand.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2, Axis};

use super::config::FlowConfig;
use crate::nn::{gelu, gelu_grad};
use crate::rng::{self, Rng};
use crate::{Error, Result};

const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq)]
struct Lin {
    w: usize,
    b: usize,
    out: usize,
    inp: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Norm {
    g: usize,
    b: usize,
    dim: usize,
}

#[derive(Debug, Clone, PartialEq)]
struct Layout {
    te1: Lin,
    te2: Lin,
    /// offset of the `num_classes x d_time` embedding table
    class: Option<usize>,
    trunk: [Lin; 4],
    norms: [Norm; 3],
    total: usize,
}

impl Layout {
    fn new(cfg: &FlowConfig) -> Self {
        let mut at = 0;
        let mut lin = |inp: usize, out: usize| {
            let l = Lin { w: at, b: at + out * inp, out, inp };
            at += out * inp + out;
            l
        };
        let dt = cfg.time_embed_dim;
        let te1 = lin(1, dt);
        let te2 = lin(dt, dt);
        let class = (cfg.num_classes > 0).then(|| {
            let off = at;
            at += cfg.num_classes * dt;
            off
        });
        let cond = if cfg.num_classes > 0 { 2 * dt } else { dt };
        let (d, h, h2) = (cfg.input_dim, cfg.hidden_dim, cfg.hidden_dim / 2);
        let mut layers = Vec::new();
        let mut norms = Vec::new();
        for (inp, out) in [(d + cond, h), (h, h2), (h2, h)] {
            let l = Lin { w: at, b: at + out * inp, out, inp };
            at += out * inp + out;
            layers.push(l);
            norms.push(Norm { g: at, b: at + out, dim: out });
            at += 2 * out;
        }
        let last = Lin { w: at, b: at + d * h, out: d, inp: h };
        at += d * h + d;
        Self {
            te1,
            te2,
            class,
            trunk: [layers[0], layers[1], layers[2], last],
            norms: [norms[0], norms[1], norms[2]],
            total: at,
        }
    }
}

fn weight(p: &[f64], l: Lin) -> ArrayView2<'_, f64> {
    ArrayView2::from_shape((l.out, l.inp), &p[l.w..l.w + l.out * l.inp]).unwrap()
}

fn bias(p: &[f64], l: Lin) -> ArrayView1<'_, f64> {
    ArrayView1::from(&p[l.b..l.b + l.out])
}

fn weight_mut(p: &mut [f64], l: Lin) -> ArrayViewMut2<'_, f64> {
    ArrayViewMut2::from_shape((l.out, l.inp), &mut p[l.w..l.w + l.out * l.inp]).unwrap()
}

fn bias_mut(p: &mut [f64], l: Lin) -> ArrayViewMut1<'_, f64> {
    ArrayViewMut1::from(&mut p[l.b..l.b + l.out])
}

fn linear(p: &[f64], l: Lin, x: &Array2<f64>) -> Array2<f64> {
    x.dot(&weight(p, l).t()) + bias(p, l)
}

/// Accumulate parameter gradients of an affine layer and return the input
/// gradient.
fn linear_backward(p: &[f64], g: &mut [f64], l: Lin, x: &Array2<f64>, dy: &Array2<f64>) -> Array2<f64> {
    weight_mut(g, l).scaled_add(1.0, &dy.t().dot(x));
    bias_mut(g, l).scaled_add(1.0, &dy.sum_axis(Axis(0)));
    dy.dot(&weight(p, l))
}

struct HiddenCache {
    input: Array2<f64>,
    xhat: Array2<f64>,
    inv_std: Array1<f64>,
    /// LayerNorm output before GELU
    pre: Array2<f64>,
    mask: Option<Array2<f64>>,
}

struct Cache {
    t: Array2<f64>,
    te_pre: Array2<f64>,
    te_hidden: Array2<f64>,
    classes: Option<Vec<usize>>,
    hidden: Vec<HiddenCache>,
    last_input: Array2<f64>,
}

/// A flow-matching vector field and its configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowModel {
    cfg: FlowConfig,
    layout: Layout,
    params: Vec<f64>,
}

impl FlowModel {
    /// Default affine init `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`, unit LayerNorm
    /// gains, standard-normal class embeddings.
    pub fn init(cfg: &FlowConfig, rng: &mut Rng) -> Result<Self> {
        cfg.validate()?;
        let layout = Layout::new(cfg);
        let mut params = vec![0.0; layout.total];
        let lins = [layout.te1, layout.te2].into_iter().chain(layout.trunk);
        for l in lins {
            let bound = 1.0 / (l.inp as f64).sqrt();
            for v in &mut params[l.w..l.b + l.out] {
                *v = (2.0 * rng::uniform(rng) - 1.0) * bound;
            }
        }
        for n in layout.norms {
            params[n.g..n.g + n.dim].fill(1.0);
        }
        if let Some(off) = layout.class {
            for v in &mut params[off..off + cfg.num_classes * cfg.time_embed_dim] {
                *v = rng::normal(rng);
            }
        }
        Ok(Self {
            cfg: cfg.clone(),
            layout,
            params,
        })
    }

    pub fn config(&self) -> &FlowConfig {
        &self.cfg
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn set_params(&mut self, params: Vec<f64>) -> Result<()> {
        if params.len() != self.layout.total {
            return Err(Error::Shape(format!(
                "flow model has {} parameters, got {}",
                self.layout.total,
                params.len()
            )));
        }
        self.params = params;
        Ok(())
    }

    pub(crate) fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub(crate) fn from_parts(cfg: FlowConfig, params: Vec<f64>) -> Result<Self> {
        cfg.validate()?;
        let layout = Layout::new(&cfg);
        let mut m = Self {
            cfg,
            layout,
            params: Vec::new(),
        };
        m.set_params(params)?;
        Ok(m)
    }

    fn check_inputs(&self, x: &Array2<f64>, t: &[f64], classes: Option<&[usize]>) -> Result<()> {
        if x.ncols() != self.cfg.input_dim || t.len() != x.nrows() {
            return Err(Error::Shape(format!(
                "flow input is {:?} with {} times, expected width {}",
                x.dim(),
                t.len(),
                self.cfg.input_dim
            )));
        }
        match (classes, self.cfg.num_classes) {
            (None, 0) => Ok(()),
            (Some(c), k) if k > 0 => {
                if c.len() != x.nrows() || c.iter().any(|&y| y >= k) {
                    return Err(Error::Argument(format!("class ids must be < {k}, one per row")));
                }
                Ok(())
            }
            (None, _) => Err(Error::Argument("conditional flow model needs class ids".into())),
            (Some(_), _) => Err(Error::Argument("unconditional flow model given class ids".into())),
        }
    }

    fn forward(
        &self,
        x: &Array2<f64>,
        t: &[f64],
        classes: Option<&[usize]>,
        masks: Option<&[Array2<f64>]>,
    ) -> (Array2<f64>, Cache) {
        let p = &self.params;
        let ly = &self.layout;
        let dt = self.cfg.time_embed_dim;
        let tcol = Array2::from_shape_vec((t.len(), 1), t.to_vec()).unwrap();
        let te_pre = linear(p, ly.te1, &tcol);
        let te_hidden = te_pre.mapv(gelu);
        let temb = linear(p, ly.te2, &te_hidden);
        let b = x.nrows();
        let width = ly.trunk[0].inp;
        let mut input = Array2::zeros((b, width));
        input.slice_mut(s![.., ..self.cfg.input_dim]).assign(x);
        input.slice_mut(s![.., self.cfg.input_dim..self.cfg.input_dim + dt]).assign(&temb);
        if let (Some(off), Some(cls)) = (ly.class, classes) {
            for (r, &c) in cls.iter().enumerate() {
                let row = ArrayView1::from(&p[off + c * dt..off + (c + 1) * dt]);
                input.slice_mut(s![r, self.cfg.input_dim + dt..]).assign(&row);
            }
        }
        let mut hidden = Vec::with_capacity(3);
        let mut h = input;
        for k in 0..3 {
            let z = linear(p, ly.trunk[k], &h);
            let n = ly.norms[k];
            let mut xhat = z;
            let mut inv_std = Array1::zeros(b);
            for (r, mut row) in xhat.rows_mut().into_iter().enumerate() {
                let mean = row.mean().unwrap();
                let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n.dim as f64;
                let is = 1.0 / (var + LN_EPS).sqrt();
                row.mapv_inplace(|v| (v - mean) * is);
                inv_std[r] = is;
            }
            let gamma = ArrayView1::from(&p[n.g..n.g + n.dim]);
            let beta = ArrayView1::from(&p[n.b..n.b + n.dim]);
            let pre = &xhat * &gamma + beta;
            let mut out = pre.mapv(gelu);
            let mask = masks.map(|m| m[k].clone());
            if let Some(m) = &mask {
                out *= m;
            }
            hidden.push(HiddenCache {
                input: h,
                xhat,
                inv_std,
                pre,
                mask,
            });
            h = out;
        }
        let y = linear(p, ly.trunk[3], &h);
        let cache = Cache {
            t: tcol,
            te_pre,
            te_hidden,
            classes: classes.map(|c| c.to_vec()),
            hidden,
            last_input: h,
        };
        (y, cache)
    }

    fn backward(&self, cache: &Cache, dy: &Array2<f64>) -> Vec<f64> {
        let p = &self.params;
        let ly = &self.layout;
        let mut g = vec![0.0; p.len()];
        let mut dh = linear_backward(p, &mut g, ly.trunk[3], &cache.last_input, dy);
        for k in (0..3).rev() {
            let hc = &cache.hidden[k];
            let n = ly.norms[k];
            if let Some(m) = &hc.mask {
                dh *= m;
            }
            let dpre = &dh * &hc.pre.mapv(gelu_grad);
            // LayerNorm
            ArrayViewMut1::from(&mut g[n.g..n.g + n.dim]).scaled_add(1.0, &(&dpre * &hc.xhat).sum_axis(Axis(0)));
            ArrayViewMut1::from(&mut g[n.b..n.b + n.dim]).scaled_add(1.0, &dpre.sum_axis(Axis(0)));
            let gamma = ArrayView1::from(&p[n.g..n.g + n.dim]);
            let dxhat = &dpre * &gamma;
            let mut dz = Array2::zeros(dxhat.dim());
            for r in 0..dxhat.nrows() {
                let dx = dxhat.row(r);
                let xh = hc.xhat.row(r);
                let m1 = dx.mean().unwrap();
                let m2 = (&dx * &xh).mean().unwrap();
                let is = hc.inv_std[r];
                dz.row_mut(r).assign(&((&dx - m1 - &(&xh * m2)) * is));
            }
            dh = linear_backward(p, &mut g, ly.trunk[k], &hc.input, &dz);
        }
        let d = self.cfg.input_dim;
        let dt = self.cfg.time_embed_dim;
        let dtemb = dh.slice(s![.., d..d + dt]).to_owned();
        if let (Some(off), Some(cls)) = (ly.class, &cache.classes) {
            for (r, &c) in cls.iter().enumerate() {
                let mut row = ArrayViewMut1::from(&mut g[off + c * dt..off + (c + 1) * dt]);
                row += &dh.slice(s![r, d + dt..]);
            }
        }
        let dhid = linear_backward(p, &mut g, ly.te2, &cache.te_hidden, &dtemb);
        let dpre = &dhid * &cache.te_pre.mapv(gelu_grad);
        linear_backward(p, &mut g, ly.te1, &cache.t, &dpre);
        g
    }

    /// Evaluation-mode velocity at `(x, t)` for every row of `x`.
    pub fn velocity(&self, x: &Array2<f64>, t: &[f64], classes: Option<&[usize]>) -> Result<Array2<f64>> {
        self.check_inputs(x, t, classes)?;
        Ok(self.forward(x, t, classes, None).0)
    }
}

/// Random draws of one flow-matching minibatch: times, source points,
/// interpolant noise and dropout masks.
#[derive(Debug, Clone)]
pub struct FmNoise {
    pub t: Vec<f64>,
    pub x0: Array2<f64>,
    pub eps: Array2<f64>,
    /// Inverted-dropout masks for the three hidden layers; empty when
    /// dropout is off.
    pub masks: Vec<Array2<f64>>,
}

impl FmNoise {
    pub fn draw(cfg: &FlowConfig, batch: usize, rng: &mut Rng) -> Self {
        use rand_distr::Distribution;
        let t = match cfg.time_dist {
            super::config::TimeDistribution::Uniform => (0..batch).map(|_| rng::uniform(rng)).collect(),
            super::config::TimeDistribution::Beta { a, b } => {
                let beta = rand_distr::Beta::new(a, b).expect("validated parameters");
                (0..batch).map(|_| beta.sample(rng)).collect()
            }
        };
        let d = cfg.input_dim;
        let x0 = Array2::from_shape_fn((batch, d), |_| rng::normal(rng) * cfg.source_std);
        let eps = Array2::from_shape_fn((batch, d), |_| rng::normal(rng) * cfg.sigma);
        let masks = if cfg.dropout > 0.0 {
            let keep = 1.0 - cfg.dropout;
            let h = cfg.hidden_dim;
            [h, h / 2, h]
                .iter()
                .map(|&w| Array2::from_shape_fn((batch, w), |_| if rng::uniform(rng) < keep { 1.0 / keep } else { 0.0 }))
                .collect()
        } else {
            Vec::new()
        };
        Self { t, x0, eps, masks }
    }
}

/// Flow-matching loss (mean squared error over all entries) and its
/// gradient with respect to the flat parameters.
pub fn fm_loss_and_grad(
    model: &FlowModel,
    x1: &Array2<f64>,
    classes: Option<&[usize]>,
    noise: &FmNoise,
) -> Result<(f64, Vec<f64>)> {
    model.check_inputs(x1, &noise.t, classes)?;
    if noise.x0.dim() != x1.dim() || noise.eps.dim() != x1.dim() {
        return Err(Error::Shape("noise draws do not match the batch".into()));
    }
    let t = Array1::from(noise.t.clone()).insert_axis(Axis(1));
    let xt = &noise.x0 * &(1.0 - &t) + x1 * &t + &noise.eps;
    let target = x1 - &noise.x0;
    let masks = (!noise.masks.is_empty()).then_some(noise.masks.as_slice());
    let (v, cache) = model.forward(&xt, &noise.t, classes, masks);
    let diff = &v - &target;
    let count = diff.len() as f64;
    let loss = diff.iter().map(|e| e * e).sum::<f64>() / count;
    let dv = diff * (2.0 / count);
    Ok((loss, model.backward(&cache, &dv)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(classes: usize, dropout: f64) -> FlowModel {
        let cfg = FlowConfig {
            time_embed_dim: 4,
            dropout,
            num_classes: classes,
            ..FlowConfig::new(4, 8)
        };
        FlowModel::init(&cfg, &mut rng::rng_from(3)).unwrap()
    }

    fn check_gradient(model: &FlowModel, classes: Option<&[usize]>) {
        let mut r = rng::rng_from(5);
        let x1 = Array2::from_shape_fn((3, 4), |_| rng::normal(&mut r));
        let noise = FmNoise::draw(model.config(), 3, &mut r);
        let (_, grad) = fm_loss_and_grad(model, &x1, classes, &noise).unwrap();
        let h = 1e-4;
        let mut worst = 0.0f64;
        for (i, g) in grad.iter().enumerate() {
            let mut plus = model.clone();
            plus.params_mut()[i] += h;
            let mut minus = model.clone();
            minus.params_mut()[i] -= h;
            let lp = fm_loss_and_grad(&plus, &x1, classes, &noise).unwrap().0;
            let lm = fm_loss_and_grad(&minus, &x1, classes, &noise).unwrap().0;
            let fd = (lp - lm) / (2.0 * h);
            let rel = (fd - g).abs() / fd.abs().max(g.abs()).max(1e-6);
            worst = worst.max(rel);
        }
        assert!(worst <= 1e-4, "worst relative gradient error {worst}");
    }

    #[test]
    fn gradient_matches_finite_differences() {
        check_gradient(&tiny(0, 0.0), None);
        check_gradient(&tiny(0, 0.3), None);
        check_gradient(&tiny(2, 0.0), Some(&[1, 0, 1]));
    }

    #[test]
    fn loss_is_positive_and_finite_at_init() {
        let m = tiny(0, 0.0);
        let mut r = rng::rng_from(1);
        let x1 = Array2::from_shape_fn((8, 4), |_| rng::normal(&mut r));
        let noise = FmNoise::draw(m.config(), 8, &mut r);
        let (loss, _) = fm_loss_and_grad(&m, &x1, None, &noise).unwrap();
        assert!(loss.is_finite() && loss > 0.0);
    }

    #[test]
    fn class_ids_are_checked() {
        let m = tiny(2, 0.0);
        let x = Array2::zeros((2, 4));
        assert!(m.velocity(&x, &[0.0, 1.0], None).is_err());
        assert!(m.velocity(&x, &[0.0, 1.0], Some(&[0, 2])).is_err());
        assert!(m.velocity(&x, &[0.0, 1.0], Some(&[0, 1])).is_ok());
        assert!(tiny(0, 0.0).velocity(&x, &[0.5], None).is_err());
    }
}
