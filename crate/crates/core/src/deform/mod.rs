//! Time-conditioned deformation of a canonical cloud.
//!
//! A multi-resolution HexPlane (six 2D feature grids over the axis pairs of
//! `(x, y, z, t)`) is sampled bilinearly, fused by element-wise product across
//! the six planes and concatenated across resolutions. A one-hidden-layer tanh
//! trunk feeds linear heads producing `(Δx, Δr, Δs)`, optionally `Δcolor`.
//! Heads start at zero, so a fresh field is the identity deformation.

mod checkpoint;
mod tv;

pub use checkpoint::{load_field, save_field};
pub use tv::{tv_backward, tv_loss};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::gaussian::{GaussianCloud, SH_C0};
use crate::render::CloudGradients;

/// Axis pairs of the six planes, indices into `(x, y, z, t)`.
pub const PLANE_AXES: [(usize, usize); 6] = [(0, 1), (0, 2), (1, 2), (0, 3), (1, 3), (2, 3)];
pub const PLANE_NAMES: [&str; 6] = ["xy", "xz", "yz", "xt", "yt", "zt"];

#[derive(Debug, Clone, PartialEq)]
pub struct FieldConfig {
    pub resolutions: Vec<usize>,
    /// Feature channels per plane cell.
    pub features: usize,
    pub hidden: usize,
    pub bbox_min: [f64; 3],
    pub bbox_max: [f64; 3],
    /// Adds a head that offsets the view-independent color.
    pub color_head: bool,
}

impl Default for FieldConfig {
    fn default() -> Self {
        Self {
            resolutions: vec![32, 64],
            features: 16,
            hidden: 64,
            bbox_min: [-1.0; 3],
            bbox_max: [1.0; 3],
            color_head: false,
        }
    }
}

impl FieldConfig {
    pub fn validate(&self) -> Result<()> {
        if self.resolutions.is_empty() || self.resolutions.iter().any(|&r| r < 2) {
            return Err(Error::InvalidParameter(
                "field needs at least one resolution, each >= 2".into(),
            ));
        }
        if self.features == 0 || self.hidden == 0 {
            return Err(Error::InvalidParameter("features and hidden must be positive".into()));
        }
        if (0..3).any(|a| !(self.bbox_max[a] > self.bbox_min[a])) {
            return Err(Error::InvalidParameter(format!(
                "empty field bbox {:?}..{:?}",
                self.bbox_min, self.bbox_max
            )));
        }
        Ok(())
    }

    pub fn encoding_len(&self) -> usize {
        self.features * self.resolutions.len()
    }

    fn head_outputs(&self) -> usize {
        if self.color_head {
            13
        } else {
            10
        }
    }
}

/// Offsets of each tensor inside the flat parameter vector. Grid cells come
/// first, then the MLP.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Layout {
    /// Per resolution and plane, the start of that grid.
    pub planes: Vec<[usize; 6]>,
    pub grid_len: usize,
    pub w1: usize,
    pub b1: usize,
    /// Stacked heads: rows 0..3 Δx, 3..7 Δr, 7..10 Δs, 10..13 Δcolor.
    pub wh: usize,
    pub bh: usize,
    pub total: usize,
}

impl Layout {
    fn new(c: &FieldConfig) -> Self {
        let mut off = 0;
        let mut planes = Vec::new();
        for &r in &c.resolutions {
            let mut starts = [0; 6];
            for s in &mut starts {
                *s = off;
                off += r * r * c.features;
            }
            planes.push(starts);
        }
        let grid_len = off;
        let input = c.encoding_len();
        let w1 = off;
        off += c.hidden * input;
        let b1 = off;
        off += c.hidden;
        let wh = off;
        off += c.head_outputs() * c.hidden;
        let bh = off;
        off += c.head_outputs();
        Self {
            planes,
            grid_len,
            w1,
            b1,
            wh,
            bh,
            total: off,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeformationField {
    config: FieldConfig,
    layout: Layout,
    params: Vec<f64>,
}

/// Same layout as the field's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldGradients {
    layout: Layout,
    pub values: Vec<f64>,
}

impl FieldGradients {
    pub fn zeros_like(field: &DeformationField) -> Self {
        Self {
            layout: field.layout.clone(),
            values: vec![0.0; field.layout.total],
        }
    }

    pub fn param(&self, i: usize) -> f64 {
        self.values[i]
    }

    pub fn grids(&self) -> &[f64] {
        &self.values[..self.layout.grid_len]
    }

    pub fn mlp(&self) -> &[f64] {
        &self.values[self.layout.grid_len..]
    }

    pub fn grids_mut(&mut self) -> &mut [f64] {
        &mut self.values[..self.layout.grid_len]
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

impl DeformationField {
    /// Grids drawn from `U[0.99, 1.01]`, trunk Xavier-uniform, heads zero.
    pub fn new(config: &FieldConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(config);
        let mut params = vec![0.0; layout.total];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for v in &mut params[..layout.grid_len] {
            *v = rng.gen_range(0.99..1.01);
        }
        let fan = (config.encoding_len() + config.hidden) as f64;
        let bound = (6.0 / fan).sqrt();
        for v in &mut params[layout.w1..layout.b1] {
            *v = rng.gen_range(-bound..bound);
        }
        Ok(Self {
            config: config.clone(),
            layout,
            params,
        })
    }

    pub fn config(&self) -> &FieldConfig {
        &self.config
    }

    pub fn param_count(&self) -> usize {
        self.layout.total
    }

    pub fn param(&self, i: usize) -> f64 {
        self.params[i]
    }

    pub fn set_param(&mut self, i: usize, v: f64) {
        self.params[i] = v;
    }

    pub fn grids(&self) -> &[f64] {
        &self.params[..self.layout.grid_len]
    }

    pub fn grids_mut(&mut self) -> &mut [f64] {
        let g = self.layout.grid_len;
        &mut self.params[..g]
    }

    pub fn mlp(&self) -> &[f64] {
        &self.params[self.layout.grid_len..]
    }

    pub fn mlp_mut(&mut self) -> &mut [f64] {
        let g = self.layout.grid_len;
        &mut self.params[g..]
    }

    /// One plane's cells, `[v][u][feature]` with `u` along the first axis of the pair.
    pub fn plane(&self, resolution_idx: usize, plane: usize) -> &[f64] {
        let r = self.config.resolutions[resolution_idx];
        let s = self.layout.planes[resolution_idx][plane];
        &self.params[s..s + r * r * self.config.features]
    }

    pub fn plane_mut(&mut self, resolution_idx: usize, plane: usize) -> &mut [f64] {
        let r = self.config.resolutions[resolution_idx];
        let s = self.layout.planes[resolution_idx][plane];
        &mut self.params[s..s + r * r * self.config.features]
    }

    /// Bias of the `Δx` head; with zero head weights it is the constant offset.
    pub fn position_bias_mut(&mut self) -> &mut [f64] {
        let b = self.layout.bh;
        &mut self.params[b..b + 3]
    }

    /// True when every head weight and bias is exactly zero.
    pub fn is_identity(&self) -> bool {
        self.params[self.layout.wh..].iter().all(|&v| v == 0.0)
    }

    pub fn check_finite(&self) -> Result<()> {
        match self.params.iter().position(|v| !v.is_finite()) {
            None => Ok(()),
            Some(i) => Err(Error::InvalidState(format!(
                "deformation field parameter {i} is not finite"
            ))),
        }
    }

    /// Gives every parameter, heads included, a random non-trivial value so
    /// gradient audits exercise all paths.
    pub fn randomize_for_audit(&mut self, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xa0d17);
        let g = self.layout.grid_len;
        for v in &mut self.params[..g] {
            *v = rng.gen_range(0.5..1.5);
        }
        for v in &mut self.params[g..] {
            *v = rng.gen_range(-0.6..0.6);
        }
    }

    /// Normalized `(x̂, ŷ, ẑ, t)` in `[0,1]⁴` plus `dx̂/dx` (zero where clamped).
    fn normalized(&self, p: &[f64; 3], t: f64) -> ([f64; 4], [f64; 3]) {
        let mut u = [0.0; 4];
        let mut du = [0.0; 3];
        for a in 0..3 {
            let ext = self.config.bbox_max[a] - self.config.bbox_min[a];
            let raw = (p[a] - self.config.bbox_min[a]) / ext;
            if raw > 0.0 && raw < 1.0 {
                du[a] = 1.0 / ext;
            }
            u[a] = raw.clamp(0.0, 1.0);
        }
        u[3] = t.clamp(0.0, 1.0);
        (u, du)
    }
}

/// Bilinear sampling footprint of one plane.
#[derive(Clone, Copy)]
struct Footprint {
    base: usize,
    res: usize,
    i0: usize,
    j0: usize,
    fu: f64,
    fv: f64,
}

fn footprint(base: usize, res: usize, u: f64, v: f64) -> Footprint {
    let gu = u * (res - 1) as f64;
    let gv = v * (res - 1) as f64;
    let i0 = (gu.floor() as usize).min(res - 2);
    let j0 = (gv.floor() as usize).min(res - 2);
    Footprint {
        base,
        res,
        i0,
        j0,
        fu: gu - i0 as f64,
        fv: gv - j0 as f64,
    }
}

impl Footprint {
    #[inline]
    fn corners(&self, feat: usize) -> [usize; 4] {
        let cell = |i: usize, j: usize| self.base + (j * self.res + i) * feat;
        [
            cell(self.i0, self.j0),
            cell(self.i0 + 1, self.j0),
            cell(self.i0, self.j0 + 1),
            cell(self.i0 + 1, self.j0 + 1),
        ]
    }

    #[inline]
    fn weights(&self) -> [f64; 4] {
        let (fu, fv) = (self.fu, self.fv);
        [(1.0 - fu) * (1.0 - fv), fu * (1.0 - fv), (1.0 - fu) * fv, fu * fv]
    }
}

/// Everything the backward pass needs from one query.
struct Encoded {
    feature: Vec<f64>,
    /// Per resolution and plane: sampled feature vector.
    samples: Vec<[Vec<f64>; 6]>,
    footprints: Vec<[Footprint; 6]>,
    coord_scale: [f64; 3],
}

fn encode(field: &DeformationField, p: &[f64; 3], t: f64) -> Encoded {
    let cfg = &field.config;
    let nf = cfg.features;
    let (u, coord_scale) = field.normalized(p, t);
    let mut feature = Vec::with_capacity(cfg.encoding_len());
    let mut samples = Vec::with_capacity(cfg.resolutions.len());
    let mut footprints = Vec::with_capacity(cfg.resolutions.len());
    for (ri, &res) in cfg.resolutions.iter().enumerate() {
        let fps: [Footprint; 6] = std::array::from_fn(|pl| {
            let (a, b) = PLANE_AXES[pl];
            footprint(field.layout.planes[ri][pl], res, u[a], u[b])
        });
        let smp: [Vec<f64>; 6] = std::array::from_fn(|pl| {
            let fp = &fps[pl];
            let c = fp.corners(nf);
            let w = fp.weights();
            (0..nf)
                .map(|f| {
                    w[0] * field.params[c[0] + f]
                        + w[1] * field.params[c[1] + f]
                        + w[2] * field.params[c[2] + f]
                        + w[3] * field.params[c[3] + f]
                })
                .collect()
        });
        for f in 0..nf {
            feature.push(smp.iter().map(|s| s[f]).product());
        }
        samples.push(smp);
        footprints.push(fps);
    }
    Encoded {
        feature,
        samples,
        footprints,
        coord_scale,
    }
}

/// HexPlane feature of `position` at time `t` (length `features × resolutions`).
/// Positions outside the box are clamped to its faces; `t` is clamped to `[0,1]`.
pub fn hexplane_encode(field: &DeformationField, position: &[f64; 3], t: f64) -> Vec<f64> {
    encode(field, position, t).feature
}

/// Hidden activations of the MLP; the backward pass recomputes the heads from them.
fn mlp_hidden(field: &DeformationField, feature: &[f64]) -> Vec<f64> {
    let cfg = &field.config;
    let l = &field.layout;
    let input = cfg.encoding_len();
    let p = &field.params;
    (0..cfg.hidden)
        .map(|h| {
            let row = &p[l.w1 + h * input..l.w1 + (h + 1) * input];
            let z = p[l.b1 + h] + row.iter().zip(feature).map(|(a, b)| a * b).sum::<f64>();
            z.tanh()
        })
        .collect()
}

/// Per-Gaussian offsets `(Δx, Δr, Δs[, Δcolor])` at time `t`.
pub fn deformation_at(field: &DeformationField, position: &[f64; 3], t: f64) -> Vec<f64> {
    let mut scratch = Scratch::new(&field.config);
    let mut out = vec![0.0; field.config.head_outputs()];
    deformation_into(field, position, t, &mut scratch, &mut out);
    out
}

/// Reusable buffers for the allocation-free forward query.
struct Scratch {
    feature: Vec<f64>,
    hidden: Vec<f64>,
}

impl Scratch {
    fn new(cfg: &FieldConfig) -> Self {
        Self {
            feature: vec![0.0; cfg.encoding_len()],
            hidden: vec![0.0; cfg.hidden],
        }
    }
}

/// Same arithmetic as `encode` followed by the MLP, without keeping the
/// intermediate values the backward pass needs.
fn deformation_into(field: &DeformationField, p: &[f64; 3], t: f64, s: &mut Scratch, out: &mut [f64]) {
    let cfg = &field.config;
    let nf = cfg.features;
    let prm = &field.params;
    let (u, _) = field.normalized(p, t);
    for (ri, &res) in cfg.resolutions.iter().enumerate() {
        let feat = &mut s.feature[ri * nf..(ri + 1) * nf];
        feat.fill(1.0);
        for (pl, &(a, b)) in PLANE_AXES.iter().enumerate() {
            let fp = footprint(field.layout.planes[ri][pl], res, u[a], u[b]);
            let c = fp.corners(nf);
            let w = fp.weights();
            for (f, v) in feat.iter_mut().enumerate() {
                *v *= w[0] * prm[c[0] + f] + w[1] * prm[c[1] + f] + w[2] * prm[c[2] + f] + w[3] * prm[c[3] + f];
            }
        }
    }
    let l = &field.layout;
    let input = cfg.encoding_len();
    for (h, z) in s.hidden.iter_mut().enumerate() {
        let row = &prm[l.w1 + h * input..l.w1 + (h + 1) * input];
        *z = (prm[l.b1 + h] + row.iter().zip(&s.feature).map(|(a, b)| a * b).sum::<f64>()).tanh();
    }
    for (o, v) in out.iter_mut().enumerate() {
        let row = &prm[l.wh + o * cfg.hidden..l.wh + (o + 1) * cfg.hidden];
        *v = prm[l.bh + o] + row.iter().zip(&s.hidden).map(|(a, b)| a * b).sum::<f64>();
    }
}

fn check_time(t: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::InvalidParameter(format!("time {t} outside [0, 1]")));
    }
    Ok(())
}

/// Deformed copy of `cloud` at time `t`: `(x + Δx, r + Δr, s + Δs)`, with the
/// rotation offset added to the raw quaternion. Opacity passes through, and so
/// does color unless the field has a color head.
pub fn deform(cloud: &GaussianCloud, t: f64, field: &DeformationField) -> Result<GaussianCloud> {
    check_time(t)?;
    field.check_finite()?;
    let mut out = cloud.clone();
    if field.is_identity() {
        return Ok(out);
    }
    let k = cloud.sh_per_channel();
    let n_out = field.config.head_outputs();
    let mut deltas = vec![0.0; cloud.len() * n_out];
    deltas
        .par_chunks_mut(n_out)
        .enumerate()
        .for_each_init(|| Scratch::new(&field.config), |s, (i, d)| {
            deformation_into(field, &cloud.means[i], t, s, d)
        });
    for (i, d) in deltas.chunks_exact(n_out).enumerate() {
        for a in 0..3 {
            out.means[i][a] += d[a];
            out.log_scales[i][a] += d[7 + a];
        }
        for a in 0..4 {
            out.rotations[i][a] += d[3 + a];
        }
        if field.config.color_head {
            let sh = out.sh_mut(i);
            for c in 0..3 {
                sh[c * k] += d[10 + c] / SH_C0;
            }
        }
    }
    Ok(out)
}

/// Backward of [`deform`].
///
/// `grad_deformed` holds gradients w.r.t. the deformed cloud. Returns the
/// field gradients and the total gradient w.r.t. the input means (the direct
/// path plus the chain through the encoder). Rotation, scale, opacity and
/// color gradients pass through unchanged and are left to the caller.
pub fn field_backward(
    field: &DeformationField,
    cloud: &GaussianCloud,
    t: f64,
    grad_deformed: &CloudGradients,
) -> Result<(FieldGradients, Vec<[f64; 3]>)> {
    check_time(t)?;
    field.check_finite()?;
    if grad_deformed.means.len() != cloud.len() {
        return Err(Error::Contract(format!(
            "gradient for {} Gaussians, cloud has {}",
            grad_deformed.means.len(),
            cloud.len()
        )));
    }
    let mut grads = FieldGradients::zeros_like(field);
    let mut mean_grads = grad_deformed.means.clone();
    let cfg = &field.config;
    let l = &field.layout;
    let p = &field.params;
    let nf = cfg.features;
    let input = cfg.encoding_len();
    let n_out = cfg.head_outputs();
    let k = cloud.sh_per_channel();
    let g = &mut grads.values;

    let mut upstream = vec![0.0; n_out];
    let mut d_hidden = vec![0.0; cfg.hidden];
    let mut d_feature = vec![0.0; input];
    for i in 0..cloud.len() {
        let gm = grad_deformed.means[i];
        let gr = grad_deformed.rotations[i];
        let gs = grad_deformed.log_scales[i];
        upstream[..3].copy_from_slice(&gm);
        upstream[3..7].copy_from_slice(&gr);
        upstream[7..10].copy_from_slice(&gs);
        if cfg.color_head {
            let sh = &grad_deformed.sh_coeffs[i * 3 * k..(i + 1) * 3 * k];
            for c in 0..3 {
                upstream[10 + c] = sh[c * k] / SH_C0;
            }
        }
        if upstream.iter().all(|&v| v == 0.0) {
            continue;
        }
        let enc = encode(field, &cloud.means[i], t);
        let hidden = mlp_hidden(field, &enc.feature);

        // Heads.
        d_hidden.fill(0.0);
        for o in 0..n_out {
            let go = upstream[o];
            if go == 0.0 {
                continue;
            }
            g[l.bh + o] += go;
            let row = l.wh + o * cfg.hidden;
            for h in 0..cfg.hidden {
                g[row + h] += go * hidden[h];
                d_hidden[h] += go * p[row + h];
            }
        }
        // Trunk.
        d_feature.fill(0.0);
        for h in 0..cfg.hidden {
            let dz = d_hidden[h] * (1.0 - hidden[h] * hidden[h]);
            if dz == 0.0 {
                continue;
            }
            g[l.b1 + h] += dz;
            let row = l.w1 + h * input;
            for j in 0..input {
                g[row + j] += dz * enc.feature[j];
                d_feature[j] += dz * p[row + j];
            }
        }
        // Hadamard fusion and bilinear sampling.
        let mut d_coord = [0.0; 3];
        for (ri, &res) in cfg.resolutions.iter().enumerate() {
            let smp = &enc.samples[ri];
            let scale = (res - 1) as f64;
            for pl in 0..6 {
                let fp = &enc.footprints[ri][pl];
                let c = fp.corners(nf);
                let w = fp.weights();
                let (a, b) = PLANE_AXES[pl];
                for f in 0..nf {
                    let df = d_feature[ri * nf + f];
                    if df == 0.0 {
                        continue;
                    }
                    let others: f64 = (0..6).filter(|&q| q != pl).map(|q| smp[q][f]).product();
                    let ds = df * others;
                    for corner in 0..4 {
                        g[c[corner] + f] += ds * w[corner];
                    }
                    let (v00, v10, v01, v11) =
                        (p[c[0] + f], p[c[1] + f], p[c[2] + f], p[c[3] + f]);
                    let d_u = scale * ((1.0 - fp.fv) * (v10 - v00) + fp.fv * (v11 - v01));
                    let d_v = scale * ((1.0 - fp.fu) * (v01 - v00) + fp.fu * (v11 - v10));
                    if a < 3 {
                        d_coord[a] += ds * d_u;
                    }
                    if b < 3 {
                        d_coord[b] += ds * d_v;
                    }
                }
            }
        }
        for a in 0..3 {
            mean_grads[i][a] += d_coord[a] * enc.coord_scale[a];
        }
    }
    Ok((grads, mean_grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audit::{audit_field, audit_field_cloud, field_gradcheck};
    use crate::gaussian::{normalize_quat, Gaussian};

    fn tiny_config() -> FieldConfig {
        FieldConfig {
            resolutions: vec![4, 6],
            features: 3,
            hidden: 5,
            ..FieldConfig::default()
        }
    }

    fn cloud(n: usize) -> GaussianCloud {
        audit_field_cloud(9, n)
    }

    #[test]
    fn ones_encode_to_ones() {
        let mut f = DeformationField::new(&tiny_config(), 0).unwrap();
        f.grids_mut().fill(1.0);
        let e = hexplane_encode(&f, &[0.3, -0.2, 0.9], 0.4);
        assert_eq!(e, vec![1.0; 6]);
    }

    #[test]
    fn node_query_is_product_of_node_values() {
        let cfg = FieldConfig {
            resolutions: vec![3],
            features: 2,
            hidden: 4,
            ..FieldConfig::default()
        };
        let f = DeformationField::new(&cfg, 5).unwrap();
        // x=0 -> u=0.5 -> node 1; y=-1 -> node 0; z=1 -> node 2; t=0.5 -> node 1
        let node = [1usize, 0, 2, 1];
        let e = hexplane_encode(&f, &[0.0, -1.0, 1.0], 0.5);
        for feat in 0..2 {
            let mut want = 1.0;
            for (pl, &(a, b)) in PLANE_AXES.iter().enumerate() {
                want *= f.plane(0, pl)[(node[b] * 3 + node[a]) * 2 + feat];
            }
            assert!((e[feat] - want).abs() < 1e-15);
        }
    }

    #[test]
    fn zeroed_plane_absorbs() {
        let mut f = DeformationField::new(&tiny_config(), 1).unwrap();
        for r in 0..2 {
            f.plane_mut(r, 4).fill(0.0);
        }
        for q in [[0.0, 0.0, 0.0], [0.9, -0.3, 0.2], [-2.0, 5.0, 0.0]] {
            assert!(hexplane_encode(&f, &q, 0.7).iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn fresh_field_is_identity() {
        let f = DeformationField::new(&tiny_config(), 2).unwrap();
        let c = cloud(7);
        for t in [0.0, 0.3, 1.0] {
            assert_eq!(deform(&c, t, &f).unwrap(), c);
        }
    }

    #[test]
    fn constant_shift_from_bias() {
        let mut f = DeformationField::new(&tiny_config(), 2).unwrap();
        f.position_bias_mut()[0] = 0.1;
        let c = cloud(5);
        let d = deform(&c, 0.5, &f).unwrap();
        for i in 0..c.len() {
            assert_eq!(d.means[i], [c.means[i][0] + 0.1, c.means[i][1], c.means[i][2]]);
            assert_eq!(d.rotations[i], c.rotations[i]);
            let a = normalize_quat(&d.rotations[i]).unwrap().0;
            let b = normalize_quat(&c.rotations[i]).unwrap().0;
            assert_eq!(a, b);
        }
    }

    #[test]
    fn rejects_out_of_range_time_and_nan() {
        let mut f = DeformationField::new(&tiny_config(), 2).unwrap();
        assert!(deform(&cloud(2), 1.5, &f).is_err());
        f.set_param(3, f64::NAN);
        assert!(matches!(deform(&cloud(2), 0.5, &f), Err(Error::InvalidState(_))));
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let mut f = audit_field(4);
        f.randomize_for_audit(4);
        let c = cloud(5);
        let (g, m) = field_backward(&f, &c, 0.3, &CloudGradients::zeros_like(&c)).unwrap();
        assert!(g.values.iter().all(|&v| v == 0.0));
        assert!(m.iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn small_field_gradcheck() {
        let f = audit_field(11);
        let c = cloud(5);
        let report = field_gradcheck(&f, &c, 0.37, 11).unwrap();
        assert!(report.passed(), "{:?}", &report.failures[..report.failures.len().min(5)]);
    }

    #[test]
    fn untouched_cells_have_zero_gradient() {
        let f = audit_field(3);
        let mut c = GaussianCloud::new(0).unwrap();
        // one Gaussian in the lower corner cell of every spatial plane
        c.push(Gaussian {
            mean: [-0.95, -0.95, -0.95],
            rotation: [1.0, 0.0, 0.0, 0.0],
            log_scale: [0.0; 3],
            opacity_logit: 0.0,
            sh: vec![0.0; 3],
        })
        .unwrap();
        let mut up = CloudGradients::zeros_like(&c);
        up.means[0] = [1.0, -0.5, 0.25];
        let (g, _) = field_backward(&f, &c, 0.05, &up).unwrap();
        let res = 4;
        let nf = 2;
        for pl in 0..6 {
            let start = f.layout.planes[0][pl];
            for j in 0..res {
                for i in 0..res {
                    let touched = i <= 1 && j <= 1;
                    for feat in 0..nf {
                        let v = g.values[start + (j * res + i) * nf + feat];
                        if !touched {
                            assert_eq!(v, 0.0, "plane {pl} cell ({i},{j})");
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn encode_is_lipschitz_in_time() {
        let f = DeformationField::new(&FieldConfig::default(), 8).unwrap();
        let eps = 1e-4;
        // Bound: each plane sample moves by at most (res-1)·max|Δcell|·eps and the
        // product of six near-one factors amplifies that by at most ~6·1.01⁵.
        let max_res = 64.0 - 1.0;
        let lip = 6.0 * 1.01f64.powi(5) * max_res * 0.02;
        for k in 0..20 {
            let p = [-0.8 + 0.08 * k as f64, 0.1, 0.4];
            let t = 0.05 * k as f64;
            let a = hexplane_encode(&f, &p, t);
            let b = hexplane_encode(&f, &p, t + eps);
            let d = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
            assert!(d <= lip * eps, "step {k}: {d}");
        }
    }
}
