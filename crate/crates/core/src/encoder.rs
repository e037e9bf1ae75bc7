//! Per-ROI feature extraction: every ROI's series is encoded independently with shared
//! weights, so permuting ROIs permutes the rows of the output.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::Mlp;
use crate::numerics::{Prng, Tensor, Var};
use crate::params::{Bindings, ParamId, ParamStore};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderKind {
    #[default]
    Cnn,
    Gru,
}

impl EncoderKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Cnn => "cnn",
            Self::Gru => "gru",
        }
    }
}

impl std::str::FromStr for EncoderKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "cnn" => Ok(Self::Cnn),
            "gru" => Ok(Self::Gru),
            other => Err(format!("unknown encoder variant '{other}'")),
        }
    }
}

/// How the per-window bi-GRU states combine into one ROI representation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WindowAggregation {
    #[default]
    Mean,
    Last,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    pub variant: EncoderKind,
    /// Feature size `o` of each encoded ROI.
    pub out_dim: usize,
    pub mlp_hidden: usize,
    pub cnn_channels: Vec<usize>,
    pub cnn_kernel: usize,
    pub pool: usize,
    /// Window size `τ`.
    pub gru_window: usize,
    pub gru_layers: usize,
    /// Hidden size per direction.
    pub gru_hidden: usize,
    pub window_aggregation: WindowAggregation,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            variant: EncoderKind::Cnn,
            out_dim: 8,
            mlp_hidden: 32,
            cnn_channels: vec![32, 32, 16],
            cnn_kernel: 16,
            pool: 4,
            gru_window: 16,
            gru_layers: 3,
            gru_hidden: 16,
            window_aggregation: WindowAggregation::Mean,
        }
    }
}

impl EncoderConfig {
    /// Sequence length after each valid convolution, then after pooling.
    pub fn cnn_lengths(&self, t: usize) -> Result<(Vec<usize>, usize)> {
        let mut len = t;
        let mut trace = Vec::with_capacity(self.cnn_channels.len());
        for (i, _) in self.cnn_channels.iter().enumerate() {
            if self.cnn_kernel == 0 || len < self.cnn_kernel {
                return Err(Error::Config(format!(
                    "series of length {t} too short: conv layer {} sees length {len} < kernel {}",
                    i + 1,
                    self.cnn_kernel
                )));
            }
            len = len - self.cnn_kernel + 1;
            trace.push(len);
        }
        if self.pool == 0 || len < self.pool {
            return Err(Error::Config(format!(
                "series of length {t} too short: pooling window {} exceeds length {len}",
                self.pool
            )));
        }
        Ok((trace, len / self.pool))
    }

    /// Number of windows `⌈t / τ⌉`.
    pub fn gru_windows(&self, t: usize) -> Result<usize> {
        if self.gru_window == 0 || t < self.gru_window {
            return Err(Error::Config(format!(
                "series of length {t} shorter than window {}",
                self.gru_window
            )));
        }
        Ok(t.div_ceil(self.gru_window))
    }

    pub fn validate(&self, t: usize) -> Result<()> {
        if self.out_dim == 0 || self.mlp_hidden == 0 {
            return Err(Error::Config("encoder widths must be positive".into()));
        }
        match self.variant {
            EncoderKind::Cnn => {
                if self.cnn_channels.is_empty() || self.cnn_channels.contains(&0) {
                    return Err(Error::Config("cnn needs at least one positive channel width".into()));
                }
                self.cnn_lengths(t).map(|_| ())
            }
            EncoderKind::Gru => {
                if self.gru_layers == 0 || self.gru_hidden == 0 {
                    return Err(Error::Config("gru needs positive layer count and hidden size".into()));
                }
                self.gru_windows(t).map(|_| ())
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
struct GruDirection {
    w_ih: ParamId,
    w_hh: ParamId,
    b_ih: ParamId,
    b_hh: ParamId,
}

#[derive(Clone, Debug, PartialEq)]
enum Arch {
    Cnn { convs: Vec<(ParamId, ParamId)> },
    Gru { layers: Vec<[GruDirection; 2]> },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Encoder {
    config: EncoderConfig,
    t: usize,
    arch: Arch,
    head: Mlp,
}

impl Encoder {
    /// Registers the encoder's weights under `prefix` for series of length `t`.
    pub fn new(config: &EncoderConfig, t: usize, store: &mut ParamStore, prefix: &str, rng: &mut Prng) -> Result<Self> {
        config.validate(t)?;
        let (arch, flat_dim) = match config.variant {
            EncoderKind::Cnn => {
                let k = config.cnn_kernel;
                let mut cin = 1;
                let mut convs = Vec::new();
                for (i, &cout) in config.cnn_channels.iter().enumerate() {
                    let w = store.add_glorot(
                        format!("{prefix}.conv{i}.weight"),
                        &[cout, cin, k],
                        cin * k,
                        cout * k,
                        rng,
                    );
                    let b = store.add_zeros(format!("{prefix}.conv{i}.bias"), &[cout]);
                    convs.push((w, b));
                    cin = cout;
                }
                let (_, pooled) = config.cnn_lengths(t)?;
                (Arch::Cnn { convs }, cin * pooled)
            }
            EncoderKind::Gru => {
                let h = config.gru_hidden;
                let mut layers = Vec::new();
                let mut input = 1;
                for l in 0..config.gru_layers {
                    let mut dir = |d: &str, rng: &mut Prng| GruDirection {
                        w_ih: store.add_glorot(format!("{prefix}.gru{l}.{d}.w_ih"), &[input, 3 * h], input, 3 * h, rng),
                        w_hh: store.add_glorot(format!("{prefix}.gru{l}.{d}.w_hh"), &[h, 3 * h], h, 3 * h, rng),
                        b_ih: store.add_zeros(format!("{prefix}.gru{l}.{d}.b_ih"), &[3 * h]),
                        b_hh: store.add_zeros(format!("{prefix}.gru{l}.{d}.b_hh"), &[3 * h]),
                    };
                    let fwd = dir("fwd", rng);
                    let bwd = dir("bwd", rng);
                    layers.push([fwd, bwd]);
                    input = 2 * h;
                }
                (Arch::Gru { layers }, 2 * h)
            }
        };
        let head = Mlp::new(
            store,
            &format!("{prefix}.mlp"),
            &[flat_dim, config.mlp_hidden, config.out_dim],
            rng,
        );
        Ok(Self {
            config: config.clone(),
            t,
            arch,
            head,
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn out_dim(&self) -> usize {
        self.config.out_dim
    }

    /// Encodes every row of `series[N×t]` into `[N×o]`.
    pub fn encode<'t>(&self, b: &Bindings<'_, 't>, series: &Tensor) -> Result<Var<'t>> {
        let (n, t) = series.dims2()?;
        if t != self.t {
            return Err(Error::shape(
                "encode",
                format!("encoder built for length {}, got {t}", self.t),
            ));
        }
        let features = match &self.arch {
            Arch::Cnn { convs } => self.cnn_features(b, series, n, convs)?,
            Arch::Gru { layers } => self.gru_features(b, series, n, layers)?,
        };
        self.head.forward(b, features)
    }

    fn cnn_features<'t>(
        &self,
        b: &Bindings<'_, 't>,
        series: &Tensor,
        n: usize,
        convs: &[(ParamId, ParamId)],
    ) -> Result<Var<'t>> {
        let tape = b.tape();
        let mut h = tape.constant(series.clone().reshaped([n, 1, self.t])?);
        for &(w, bias) in convs {
            h = h.conv1d(b.get(w)?, b.get(bias)?)?.relu();
        }
        let pooled = h.maxpool1d(self.config.pool)?;
        let width = pooled.value().numel() / n;
        pooled.reshape([n, width])
    }

    fn gru_features<'t>(
        &self,
        b: &Bindings<'_, 't>,
        series: &Tensor,
        n: usize,
        layers: &[[GruDirection; 2]],
    ) -> Result<Var<'t>> {
        let tape = b.tape();
        let tau = self.config.gru_window;
        let z = self.config.gru_windows(self.t)?;
        let seqs = n * z;
        // step s of every window, sequences ordered (row, window); the tail is zero-padded
        let mut steps: Vec<Var<'t>> = (0..tau)
            .map(|s| {
                let mut col = vec![0.0; seqs];
                for r in 0..n {
                    for w in 0..z {
                        let pos = w * tau + s;
                        if pos < self.t {
                            col[r * z + w] = series.at(r, pos);
                        }
                    }
                }
                tape.constant(Tensor::from_parts(vec![seqs, 1], col))
            })
            .collect();
        let h = self.config.gru_hidden;
        let mut finals = (steps[0], steps[0]);
        for [fwd, bwd] in layers {
            let (out_f, last_f) = run_direction(b, fwd, &steps, h, false)?;
            let (out_b, last_b) = run_direction(b, bwd, &steps, h, true)?;
            steps = out_f
                .iter()
                .zip(&out_b)
                .map(|(f, bk)| Var::concat_cols(&[*f, *bk]))
                .collect::<Result<_>>()?;
            finals = (last_f, last_b);
        }
        let per_window = Var::concat_cols(&[finals.0, finals.1])?;
        match self.config.window_aggregation {
            WindowAggregation::Mean => per_window.group_mean_rows(z),
            WindowAggregation::Last => {
                let w = 2 * h;
                per_window
                    .reshape([n, z * w])?
                    .slice_cols((z - 1) * w, z * w)
            }
        }
    }
}

/// One GRU direction over `steps`; returns per-step outputs in input order and the
/// state after the last processed step.
fn run_direction<'t>(
    b: &Bindings<'_, 't>,
    p: &GruDirection,
    steps: &[Var<'t>],
    h: usize,
    reverse: bool,
) -> Result<(Vec<Var<'t>>, Var<'t>)> {
    let tape = b.tape();
    let rows = steps[0].value().rows();
    let (w_ih, w_hh, b_ih, b_hh) = (b.get(p.w_ih)?, b.get(p.w_hh)?, b.get(p.b_ih)?, b.get(p.b_hh)?);
    let mut state = tape.constant(Tensor::zeros([rows, h]));
    let mut outputs = vec![state; steps.len()];
    let order: Vec<usize> = if reverse {
        (0..steps.len()).rev().collect()
    } else {
        (0..steps.len()).collect()
    };
    for s in order {
        let gi = steps[s].matmul(w_ih)?.add_row_bias(b_ih)?;
        let gh = state.matmul(w_hh)?.add_row_bias(b_hh)?;
        let reset = gi.slice_cols(0, h)?.add(gh.slice_cols(0, h)?)?.sigmoid();
        let update = gi.slice_cols(h, 2 * h)?.add(gh.slice_cols(h, 2 * h)?)?.sigmoid();
        let cand = gi
            .slice_cols(2 * h, 3 * h)?
            .add(reset.mul(gh.slice_cols(2 * h, 3 * h)?)?)?
            .tanh();
        // h' = (1 − u)·n + u·h = n + u·(h − n)
        state = cand.add(update.mul(state.sub(cand)?)?)?;
        outputs[s] = state;
    }
    Ok((outputs, state))
}
