//! The DeepONet surrogate: branch net over sensor values, trunk net over
//! ambient locations, predictions as their inner product plus a bias.

use std::io::{Read as _, Write as _};
use std::path::Path;

use ndarray::{Array2, Array4, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{MolError, Result};

use super::mlp::{Activation, Mlp, MlpCache};

/// Branch configuration. The convolutional variant mirrors the two-layer
/// F=3, S=2 stack with 16 and 32 channels; the default is a dense stack.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BranchArch {
    Mlp { hidden: Vec<usize> },
    Conv { rows: usize, cols: usize },
}

impl Default for BranchArch {
    fn default() -> Self {
        BranchArch::Mlp {
            hidden: vec![128, 128],
        }
    }
}

const CONV_FILTER: usize = 3;
const CONV_STRIDE: usize = 2;
const CONV_CHANNELS: [usize; 2] = [16, 32];

fn conv_out(side: usize) -> usize {
    if side < CONV_FILTER {
        return 0;
    }
    (side - CONV_FILTER) / CONV_STRIDE + 1
}

/// Two valid-padding convolutions with ReLU, then a dense map to width p.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvBranch {
    pub rows: usize,
    pub cols: usize,
    pub p: usize,
}

pub struct ConvCache {
    input: Array4<f64>,       // batch x 1 x rows x cols
    pre1: Array4<f64>,        // batch x 16 x r1 x c1
    act1: Array4<f64>,
    pre2: Array4<f64>,        // batch x 32 x r2 x c2
    flat: Array2<f64>,        // batch x (32 r2 c2)
}

impl ConvBranch {
    fn dims(&self) -> ((usize, usize), (usize, usize)) {
        let r1 = conv_out(self.rows);
        let c1 = conv_out(self.cols);
        (( r1, c1), (conv_out(r1), conv_out(c1)))
    }

    fn n_params(&self) -> usize {
        let ((_, _), (r2, c2)) = self.dims();
        let conv1 = CONV_CHANNELS[0] * CONV_FILTER * CONV_FILTER + CONV_CHANNELS[0];
        let conv2 =
            CONV_CHANNELS[1] * CONV_CHANNELS[0] * CONV_FILTER * CONV_FILTER + CONV_CHANNELS[1];
        let flat = CONV_CHANNELS[1] * r2 * c2;
        conv1 + conv2 + flat * self.p + self.p
    }

    fn init_params(&self, params: &mut [f64], rng: &mut ChaCha8Rng) {
        use rand::Rng;
        assert_eq!(params.len(), self.n_params());
        let ((_, _), (r2, c2)) = self.dims();
        let mut off = 0;
        let mut glorot = |params: &mut [f64], fan_in: usize, fan_out: usize, count: usize,
                          off: &mut usize| {
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for p in params[*off..*off + count].iter_mut() {
                *p = limit * (2.0 * rng.random::<f64>() - 1.0);
            }
            *off += count;
        };
        let f2 = CONV_FILTER * CONV_FILTER;
        glorot(params, f2, CONV_CHANNELS[0] * f2, CONV_CHANNELS[0] * f2, &mut off);
        for p in params[off..off + CONV_CHANNELS[0]].iter_mut() {
            *p = 0.0;
        }
        off += CONV_CHANNELS[0];
        glorot(
            params,
            CONV_CHANNELS[0] * f2,
            CONV_CHANNELS[1] * f2,
            CONV_CHANNELS[1] * CONV_CHANNELS[0] * f2,
            &mut off,
        );
        for p in params[off..off + CONV_CHANNELS[1]].iter_mut() {
            *p = 0.0;
        }
        off += CONV_CHANNELS[1];
        let flat = CONV_CHANNELS[1] * r2 * c2;
        glorot(params, flat, self.p, flat * self.p, &mut off);
        for p in params[off..off + self.p].iter_mut() {
            *p = 0.0;
        }
    }

    fn split_params<'a>(
        &self,
        params: &'a [f64],
    ) -> (&'a [f64], &'a [f64], &'a [f64], &'a [f64], &'a [f64], &'a [f64]) {
        let ((_, _), (r2, c2)) = self.dims();
        let f2 = CONV_FILTER * CONV_FILTER;
        let w1 = CONV_CHANNELS[0] * f2;
        let w2 = CONV_CHANNELS[1] * CONV_CHANNELS[0] * f2;
        let flat = CONV_CHANNELS[1] * r2 * c2;
        let mut off = 0;
        let take = |off: &mut usize, len: usize| {
            let s = &params[*off..*off + len];
            *off += len;
            s
        };
        let a = take(&mut off, w1);
        let b = take(&mut off, CONV_CHANNELS[0]);
        let c = take(&mut off, w2);
        let d = take(&mut off, CONV_CHANNELS[1]);
        let e = take(&mut off, flat * self.p);
        let f = take(&mut off, self.p);
        (a, b, c, d, e, f)
    }

    fn forward(&self, params: &[f64], x: &Array2<f64>) -> (Array2<f64>, ConvCache) {
        let batch = x.nrows();
        assert_eq!(x.ncols(), self.rows * self.cols);
        let ((r1, c1), (r2, c2)) = self.dims();
        let (w1, b1, w2, b2, wd, bd) = self.split_params(params);
        let input = Array4::from_shape_fn((batch, 1, self.rows, self.cols), |(k, _, i, j)| {
            x[[k, i * self.cols + j]]
        });
        let mut pre1 = Array4::zeros((batch, CONV_CHANNELS[0], r1, c1));
        for k in 0..batch {
            for ch in 0..CONV_CHANNELS[0] {
                for i in 0..r1 {
                    for j in 0..c1 {
                        let mut acc = b1[ch];
                        for fi in 0..CONV_FILTER {
                            for fj in 0..CONV_FILTER {
                                acc += w1[ch * 9 + fi * 3 + fj]
                                    * input[[k, 0, i * CONV_STRIDE + fi, j * CONV_STRIDE + fj]];
                            }
                        }
                        pre1[[k, ch, i, j]] = acc;
                    }
                }
            }
        }
        let act1 = pre1.mapv(|v| v.max(0.0));
        let mut pre2 = Array4::zeros((batch, CONV_CHANNELS[1], r2, c2));
        for k in 0..batch {
            for ch in 0..CONV_CHANNELS[1] {
                for i in 0..r2 {
                    for j in 0..c2 {
                        let mut acc = b2[ch];
                        for ci in 0..CONV_CHANNELS[0] {
                            for fi in 0..CONV_FILTER {
                                for fj in 0..CONV_FILTER {
                                    acc += w2[((ch * CONV_CHANNELS[0]) + ci) * 9 + fi * 3 + fj]
                                        * act1
                                            [[k, ci, i * CONV_STRIDE + fi, j * CONV_STRIDE + fj]];
                                }
                            }
                        }
                        pre2[[k, ch, i, j]] = acc;
                    }
                }
            }
        }
        let act2 = pre2.mapv(|v| v.max(0.0));
        let flat_len = CONV_CHANNELS[1] * r2 * c2;
        let flat = Array2::from_shape_fn((batch, flat_len), |(k, idx)| {
            let ch = idx / (r2 * c2);
            let rem = idx % (r2 * c2);
            act2[[k, ch, rem / c2, rem % c2]]
        });
        let wd_m = ndarray::ArrayView2::from_shape((flat_len, self.p), wd).unwrap();
        let mut out = flat.dot(&wd_m);
        for mut row in out.rows_mut() {
            for (v, &b) in row.iter_mut().zip(bd) {
                *v += b;
            }
        }
        (
            out,
            ConvCache {
                input,
                pre1,
                act1,
                pre2,
                flat,
            },
        )
    }

    fn backward(
        &self,
        params: &[f64],
        cache: &ConvCache,
        d_out: &Array2<f64>,
        grad: &mut [f64],
    ) {
        let batch = d_out.nrows();
        let ((r1, c1), (r2, c2)) = self.dims();
        let f2 = CONV_FILTER * CONV_FILTER;
        let w1_len = CONV_CHANNELS[0] * f2;
        let w2_len = CONV_CHANNELS[1] * CONV_CHANNELS[0] * f2;
        let flat_len = CONV_CHANNELS[1] * r2 * c2;
        let (_, _, w2, _, wd, _) = self.split_params(params);
        let (gw1, rest) = grad.split_at_mut(w1_len);
        let (gb1, rest) = rest.split_at_mut(CONV_CHANNELS[0]);
        let (gw2, rest) = rest.split_at_mut(w2_len);
        let (gb2, rest) = rest.split_at_mut(CONV_CHANNELS[1]);
        let (gwd, gbd) = rest.split_at_mut(flat_len * self.p);

        // Dense head.
        let wd_m = ndarray::ArrayView2::from_shape((flat_len, self.p), wd).unwrap();
        let dwd = cache.flat.t().dot(d_out);
        for (slot, &g) in gwd.iter_mut().zip(dwd.iter()) {
            *slot += g;
        }
        for (slot, &g) in gbd.iter_mut().zip(d_out.sum_axis(Axis(0)).iter()) {
            *slot += g;
        }
        let dflat = d_out.dot(&wd_m.t());
        // Through ReLU 2 into conv2.
        let mut dact2 = Array4::zeros((batch, CONV_CHANNELS[1], r2, c2));
        for k in 0..batch {
            for idx in 0..flat_len {
                let ch = idx / (r2 * c2);
                let rem = idx % (r2 * c2);
                dact2[[k, ch, rem / c2, rem % c2]] = dflat[[k, idx]];
            }
        }
        let mut dact1: Array4<f64> = Array4::zeros((batch, CONV_CHANNELS[0], r1, c1));
        for k in 0..batch {
            for ch in 0..CONV_CHANNELS[1] {
                for i in 0..r2 {
                    for j in 0..c2 {
                        if cache.pre2[[k, ch, i, j]] <= 0.0 {
                            continue;
                        }
                        let d = dact2[[k, ch, i, j]];
                        gb2[ch] += d;
                        for ci in 0..CONV_CHANNELS[0] {
                            for fi in 0..CONV_FILTER {
                                for fj in 0..CONV_FILTER {
                                    let (ii, jj) = (i * CONV_STRIDE + fi, j * CONV_STRIDE + fj);
                                    let widx = ((ch * CONV_CHANNELS[0]) + ci) * 9 + fi * 3 + fj;
                                    gw2[widx] += d * cache.act1[[k, ci, ii, jj]];
                                    dact1[[k, ci, ii, jj]] += d * w2[widx];
                                }
                            }
                        }
                    }
                }
            }
        }
        for k in 0..batch {
            for ch in 0..CONV_CHANNELS[0] {
                for i in 0..r1 {
                    for j in 0..c1 {
                        if cache.pre1[[k, ch, i, j]] <= 0.0 {
                            continue;
                        }
                        let d = dact1[[k, ch, i, j]];
                        gb1[ch] += d;
                        for fi in 0..CONV_FILTER {
                            for fj in 0..CONV_FILTER {
                                gw1[ch * 9 + fi * 3 + fj] += d
                                    * cache.input
                                        [[k, 0, i * CONV_STRIDE + fi, j * CONV_STRIDE + fj]];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Branch network: dense stack or the minimal convolutional variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BranchNet {
    Mlp(Mlp),
    Conv(ConvBranch),
}

impl BranchNet {
    fn n_params(&self) -> usize {
        match self {
            BranchNet::Mlp(m) => m.n_params(),
            BranchNet::Conv(c) => c.n_params(),
        }
    }
}

pub enum BranchCache {
    Mlp(MlpCache),
    Conv(ConvCache),
}

/// Architecture + flat parameter vector. The layout is
/// `[branch params | trunk params | b0]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeepONetModel {
    pub branch: BranchNet,
    pub trunk: Mlp,
    pub p: usize,
    pub m: usize,
    pub seed: u64,
    pub params: Vec<f64>,
}

pub const DEFAULT_LATENT_WIDTH: usize = 32;
pub const DEFAULT_TRUNK_WIDTH: usize = 32;
pub const DEFAULT_TRUNK_DEPTH: usize = 3;

impl DeepONetModel {
    /// Build and Glorot-initialize a model for `m` sensors with latent
    /// width `p`.
    pub fn new(m: usize, p: usize, arch: &BranchArch, seed: u64) -> Result<DeepONetModel> {
        let branch = match arch {
            BranchArch::Mlp { hidden } => {
                let mut sizes = vec![m];
                sizes.extend_from_slice(hidden);
                sizes.push(p);
                BranchNet::Mlp(Mlp::new(sizes, Activation::Relu)?)
            }
            BranchArch::Conv { rows, cols } => {
                if rows * cols != m {
                    return Err(MolError::Shape(format!(
                        "conv branch grid {rows}x{cols} does not match m = {m}"
                    )));
                }
                if conv_out(conv_out(*rows)) == 0 || conv_out(conv_out(*cols)) == 0 {
                    return Err(MolError::Parameter(format!(
                        "sensor grid {rows}x{cols} too small for two stride-2 convolutions"
                    )));
                }
                BranchNet::Conv(ConvBranch {
                    rows: *rows,
                    cols: *cols,
                    p,
                })
            }
        };
        let mut trunk_sizes = vec![3];
        trunk_sizes.extend(std::iter::repeat(DEFAULT_TRUNK_WIDTH).take(DEFAULT_TRUNK_DEPTH));
        trunk_sizes.push(p);
        let trunk = Mlp::new(trunk_sizes, Activation::Gelu)?;
        let n_params = branch.n_params() + trunk.n_params() + 1;
        let mut params = vec![0.0; n_params];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        match &branch {
            BranchNet::Mlp(mlp) => mlp.init_params(&mut params[..mlp.n_params()], &mut rng),
            BranchNet::Conv(c) => c.init_params(&mut params[..c.n_params()], &mut rng),
        }
        let b_len = branch.n_params();
        let t_len = trunk.n_params();
        trunk.init_params(&mut params[b_len..b_len + t_len], &mut rng);
        params[n_params - 1] = 0.0;
        Ok(DeepONetModel {
            branch,
            trunk,
            p,
            m,
            seed,
            params,
        })
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    fn branch_len(&self) -> usize {
        self.branch.n_params()
    }

    pub fn b0(&self) -> f64 {
        self.params[self.params.len() - 1]
    }

    /// Branch outputs for a batch of sensor vectors (`K x m` -> `K x p`).
    pub fn branch_forward(&self, kappa_sensors: &Array2<f64>) -> (Array2<f64>, BranchCache) {
        self.branch_forward_with(&self.params, kappa_sensors)
    }

    pub fn branch_forward_with(
        &self,
        params: &[f64],
        kappa_sensors: &Array2<f64>,
    ) -> (Array2<f64>, BranchCache) {
        let bp = &params[..self.branch_len()];
        match &self.branch {
            BranchNet::Mlp(mlp) => {
                let (out, cache) = mlp.forward(bp, kappa_sensors);
                (out, BranchCache::Mlp(cache))
            }
            BranchNet::Conv(c) => {
                let (out, cache) = c.forward(bp, kappa_sensors);
                (out, BranchCache::Conv(cache))
            }
        }
    }

    /// Trunk outputs for a batch of ambient locations (`N x 3` -> `N x p`).
    pub fn trunk_forward(&self, locations: &Array2<f64>) -> (Array2<f64>, MlpCache) {
        self.trunk_forward_with(&self.params, locations)
    }

    pub fn trunk_forward_with(
        &self,
        params: &[f64],
        locations: &Array2<f64>,
    ) -> (Array2<f64>, MlpCache) {
        let b_len = self.branch_len();
        let tp = &params[b_len..b_len + self.trunk.n_params()];
        self.trunk.forward(tp, locations)
    }

    /// Predictions for every (kappa sample, location) pair:
    /// `pred[k][i] = sum_p B[k][p] T[i][p] + b0`, shape `K x N`.
    pub fn predict(&self, kappa_sensors: &Array2<f64>, locations: &Array2<f64>) -> Result<Array2<f64>> {
        if kappa_sensors.ncols() != self.m {
            return Err(MolError::Shape(format!(
                "sensor batch has {} columns, model expects {}",
                kappa_sensors.ncols(),
                self.m
            )));
        }
        if locations.ncols() != 3 {
            return Err(MolError::Shape(format!(
                "locations need 3 columns, got {}",
                locations.ncols()
            )));
        }
        let (b, _) = self.branch_forward(kappa_sensors);
        let (t, _) = self.trunk_forward(locations);
        Ok(b.dot(&t.t()) + self.b0())
    }

    /// Backpropagate dLoss/dPred through both subnetworks; accumulates into
    /// `grad` (same layout as `params`).
    #[allow(clippy::too_many_arguments)]
    pub fn backward(
        &self,
        params: &[f64],
        branch_out: &Array2<f64>,
        branch_cache: &BranchCache,
        trunk_out: &Array2<f64>,
        trunk_cache: &MlpCache,
        d_pred: &Array2<f64>,
        grad: &mut [f64],
    ) {
        let b_len = self.branch_len();
        let t_len = self.trunk.n_params();
        let d_branch = d_pred.dot(trunk_out);
        let d_trunk = d_pred.t().dot(branch_out);
        match (&self.branch, branch_cache) {
            (BranchNet::Mlp(mlp), BranchCache::Mlp(cache)) => {
                mlp.backward(&params[..b_len], cache, &d_branch, &mut grad[..b_len]);
            }
            (BranchNet::Conv(c), BranchCache::Conv(cache)) => {
                c.backward(&params[..b_len], cache, &d_branch, &mut grad[..b_len]);
            }
            _ => unreachable!("cache kind matches branch kind"),
        }
        self.trunk.backward(
            &params[b_len..b_len + t_len],
            trunk_cache,
            &d_trunk,
            &mut grad[b_len..b_len + t_len],
        );
        let n = grad.len();
        grad[n - 1] += d_pred.sum();
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointHeader {
    branch: BranchNet,
    trunk: Mlp,
    p: usize,
    m: usize,
    seed: u64,
    n_params: usize,
}

/// One-line JSON header, newline, then the parameters as little-endian f64.
pub fn save_checkpoint(model: &DeepONetModel, path: &Path) -> Result<()> {
    let header = CheckpointHeader {
        branch: model.branch.clone(),
        trunk: model.trunk.clone(),
        p: model.p,
        m: model.m,
        seed: model.seed,
        n_params: model.params.len(),
    };
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    serde_json::to_writer(&mut out, &header)?;
    out.write_all(b"\n")?;
    for v in &model.params {
        out.write_all(&v.to_le_bytes())?;
    }
    out.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<DeepONetModel> {
    let mut file = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut header_bytes = Vec::new();
    let mut byte = [0u8; 1];
    loop {
        file.read_exact(&mut byte).map_err(|_| {
            MolError::Parameter(format!("{}: missing checkpoint header", path.display()))
        })?;
        if byte[0] == b'\n' {
            break;
        }
        header_bytes.push(byte[0]);
    }
    let header: CheckpointHeader = serde_json::from_slice(&header_bytes)?;
    let mut blob = Vec::new();
    file.read_to_end(&mut blob)?;
    if blob.len() != header.n_params * 8 {
        return Err(MolError::Shape(format!(
            "{}: parameter blob has {} bytes, header says {}",
            path.display(),
            blob.len(),
            header.n_params * 8
        )));
    }
    let params: Vec<f64> = blob
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(DeepONetModel {
        branch: header.branch,
        trunk: header.trunk,
        p: header.p,
        m: header.m,
        seed: header.seed,
        params,
    })
}
