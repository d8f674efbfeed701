use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Bound, ModelError, TrainOptions, TrainOutcome, TrainStatus};
use crate::nn::{init, Adam, AdamState, BatchNormMode, RunningStats, Tape, Var};
use crate::params::ModelParams;
use crate::tensor::Tensor;

/// Channels of the convolutional autoencoder.
pub const CNN_CHANNELS: usize = 8;
const KERNEL: usize = 3;
const PADDING: usize = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum AeVariant {
    Fc,
    Cnn,
    Lstm,
}

impl AeVariant {
    pub fn name(self) -> &'static str {
        match self {
            AeVariant::Fc => "FC",
            AeVariant::Cnn => "CNN",
            AeVariant::Lstm => "LSTM",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AutoencoderSpec {
    pub variant: AeVariant,
    /// Raw features per sample.
    pub input_dim: usize,
    /// Representation size; the encoder cell's hidden size for the LSTM variant.
    pub repr_dim: usize,
}

impl AutoencoderSpec {
    pub fn new(variant: AeVariant, input_dim: usize, repr_dim: usize) -> Self {
        Self {
            variant,
            input_dim,
            repr_dim,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.repr_dim == 0 || self.repr_dim >= self.input_dim {
            return Err(ModelError::InvalidSpec(format!(
                "representation size {} must satisfy 1 <= d < {} input features",
                self.repr_dim, self.input_dim
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Autoencoder {
    spec: AutoencoderSpec,
    params: ModelParams,
}

impl Autoencoder {
    /// Freshly initialized autoencoder; identical seeds give identical weights.
    pub fn build(spec: AutoencoderSpec, seed: u64) -> Result<Self, ModelError> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(Self {
            spec,
            params: Self::layout(&spec, &mut rng),
        })
    }

    /// Wraps existing parameters, checking names and shapes against `spec`.
    pub fn from_params(spec: AutoencoderSpec, params: ModelParams) -> Result<Self, ModelError> {
        let template = Self::layout(&spec, &mut ChaCha8Rng::seed_from_u64(0));
        if !template.same_layout(&params) {
            return Err(ModelError::Layout(format!(
                "{} autoencoder {}→{}",
                spec.variant.name(),
                spec.input_dim,
                spec.repr_dim
            )));
        }
        Ok(Self { spec, params })
    }

    fn layout<R: Rng>(spec: &AutoencoderSpec, rng: &mut R) -> ModelParams {
        let (nf, d) = (spec.input_dim, spec.repr_dim);
        let mut p = ModelParams::new();
        match spec.variant {
            AeVariant::Fc => {
                p.trainable("enc.w", init::dense(d, nf, rng));
                p.trainable("enc.b", Tensor::zeros(&[d]));
                p.trainable("dec.w", init::dense(nf, d, rng));
                p.trainable("dec.b", Tensor::zeros(&[nf]));
            }
            AeVariant::Cnn => {
                let flat = CNN_CHANNELS * nf;
                p.trainable("enc.conv.w", init::conv(CNN_CHANNELS, 1, KERNEL, rng));
                p.trainable("enc.conv.b", Tensor::zeros(&[CNN_CHANNELS]));
                p.trainable("enc.bn.gamma", Tensor::full(&[CNN_CHANNELS], 1.0));
                p.trainable("enc.bn.beta", Tensor::zeros(&[CNN_CHANNELS]));
                let rs = RunningStats::<f32>::new(CNN_CHANNELS);
                p.buffer("enc.bn.running_mean", rs.mean);
                p.buffer("enc.bn.running_var", rs.var);
                p.trainable("enc.fc.w", init::dense(d, flat, rng));
                p.trainable("enc.fc.b", Tensor::zeros(&[d]));
                p.trainable("dec.fc.w", init::dense(flat, d, rng));
                p.trainable("dec.fc.b", Tensor::zeros(&[flat]));
                p.trainable("dec.deconv.w", init::conv(CNN_CHANNELS, 1, KERNEL, rng));
                p.trainable("dec.deconv.b", Tensor::zeros(&[1]));
            }
            AeVariant::Lstm => {
                p.push_lstm("enc.lstm", init::lstm_cell(nf, d, rng));
                p.push_lstm("dec.lstm", init::lstm_cell(d, nf, rng));
            }
        }
        p
    }

    pub fn spec(&self) -> &AutoencoderSpec {
        &self.spec
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn into_params(self) -> ModelParams {
        self.params
    }

    fn check_features(&self, x: &Tensor, want: usize) -> Result<(), ModelError> {
        if x.rank() != 2 || x.cols() != want {
            return Err(ModelError::FeatureDim {
                expected: want,
                got: if x.rank() == 2 { x.cols() } else { x.len() },
            });
        }
        Ok(())
    }

    fn running_stats(&self) -> RunningStats {
        RunningStats {
            mean: self.params.expect("enc.bn.running_mean").clone(),
            var: self.params.expect("enc.bn.running_var").clone(),
        }
    }

    /// Row-wise encoder of the FC and CNN variants: `[rows, N^f] → [rows, d]`.
    pub(crate) fn encode_rows(
        &self,
        tape: &mut Tape,
        b: &Bound,
        x: Var,
        mode: BatchNormMode,
        running: &mut RunningStats,
    ) -> Result<Var, ModelError> {
        let p = &self.params;
        let rows = tape.value(x).rows();
        let nf = self.spec.input_dim;
        Ok(match self.spec.variant {
            AeVariant::Fc => {
                let z = tape.linear(x, b.var(p, "enc.w"), Some(b.var(p, "enc.b")))?;
                tape.tanh(z)
            }
            AeVariant::Cnn => {
                let x3 = tape.reshape(x, &[rows, 1, nf])?;
                let c = tape.conv1d(
                    x3,
                    b.var(p, "enc.conv.w"),
                    Some(b.var(p, "enc.conv.b")),
                    PADDING,
                )?;
                let n = tape.batchnorm(
                    c,
                    b.var(p, "enc.bn.gamma"),
                    b.var(p, "enc.bn.beta"),
                    running,
                    mode,
                )?;
                let r = tape.relu(n);
                let flat = tape.reshape(r, &[rows, CNN_CHANNELS * nf])?;
                tape.linear(flat, b.var(p, "enc.fc.w"), Some(b.var(p, "enc.fc.b")))?
            }
            AeVariant::Lstm => unreachable!("LSTM autoencoder encodes sequences"),
        })
    }

    /// Row-wise decoder of the FC and CNN variants: `[rows, d] → [rows, N^f]`.
    pub(crate) fn decode_rows(&self, tape: &mut Tape, b: &Bound, h: Var) -> Result<Var, ModelError> {
        let p = &self.params;
        let rows = tape.value(h).rows();
        let nf = self.spec.input_dim;
        Ok(match self.spec.variant {
            AeVariant::Fc => tape.linear(h, b.var(p, "dec.w"), Some(b.var(p, "dec.b")))?,
            AeVariant::Cnn => {
                let z = tape.linear(h, b.var(p, "dec.fc.w"), Some(b.var(p, "dec.fc.b")))?;
                let z3 = tape.reshape(z, &[rows, CNN_CHANNELS, nf])?;
                let y = tape.conv1d_transpose(
                    z3,
                    b.var(p, "dec.deconv.w"),
                    Some(b.var(p, "dec.deconv.b")),
                    PADDING,
                )?;
                tape.reshape(y, &[rows, nf])?
            }
            AeVariant::Lstm => unreachable!("LSTM autoencoder decodes sequences"),
        })
    }

    /// Runs the encoder cell over `steps` (each `[batch, N^f]`) from a zero
    /// state and returns every hidden state.
    pub(crate) fn encode_steps(
        &self,
        tape: &mut Tape,
        b: &Bound,
        steps: &[Var],
    ) -> Result<Vec<Var>, ModelError> {
        let cell = b.lstm(&self.params, "enc.lstm");
        run_cell(tape, &cell, steps, self.spec.repr_dim)
    }

    /// Feeds `h_final` to the decoder cell `len` times; the hidden states are
    /// the reconstruction of the window in reverse order.
    pub(crate) fn decode_steps(
        &self,
        tape: &mut Tape,
        b: &Bound,
        h_final: Var,
        len: usize,
    ) -> Result<Vec<Var>, ModelError> {
        let cell = b.lstm(&self.params, "dec.lstm");
        run_cell(tape, &cell, &vec![h_final; len], self.spec.input_dim)
    }

    /// Representations of a window `[L, N^f] → [L, d]`.
    ///
    /// FC and CNN encode each row on its own. The LSTM variant runs its cell
    /// across the window and emits the hidden state after every step, so row
    /// `t` represents sample `t` in the context of the samples before it.
    pub fn encode(&self, window: &Tensor) -> Result<Tensor, ModelError> {
        self.check_features(window, self.spec.input_dim)?;
        if window.rows() == 0 {
            return Err(ModelError::EmptyData);
        }
        let mut tape = Tape::new();
        let b = Bound::bind(&mut tape, &self.params);
        match self.spec.variant {
            AeVariant::Lstm => {
                let steps = row_constants(&mut tape, window);
                let hs = self.encode_steps(&mut tape, &b, &steps)?;
                Ok(stack_rows(&tape, &hs))
            }
            _ => {
                let x = tape.constant(window.clone());
                let mut rs = match self.spec.variant {
                    AeVariant::Cnn => self.running_stats(),
                    _ => RunningStats::new(0),
                };
                let h = self.encode_rows(&mut tape, &b, x, BatchNormMode::Eval, &mut rs)?;
                Ok(tape.value(h).clone())
            }
        }
    }

    /// Reconstruction from representations `[L, d] → [L, N^f]`.
    ///
    /// For the LSTM variant only the last row of `h` is used: it is repeated
    /// `L` times and the decoder output is the window in reverse order.
    pub fn decode(&self, h: &Tensor) -> Result<Tensor, ModelError> {
        self.check_features(h, self.spec.repr_dim)?;
        if h.rows() == 0 {
            return Err(ModelError::EmptyData);
        }
        let mut tape = Tape::new();
        let b = Bound::bind(&mut tape, &self.params);
        match self.spec.variant {
            AeVariant::Lstm => {
                let last = h.slice_rows(h.rows() - 1, h.rows());
                let hv = tape.constant(last);
                let outs = self.decode_steps(&mut tape, &b, hv, h.rows())?;
                Ok(stack_rows(&tape, &outs))
            }
            _ => {
                let hv = tape.constant(h.clone());
                let y = self.decode_rows(&mut tape, &b, hv)?;
                Ok(tape.value(y).clone())
            }
        }
    }

    /// What the decoder output is compared against: the window itself, or
    /// the window in reverse order for the LSTM variant.
    pub fn reconstruction_target(&self, window: &Tensor) -> Tensor {
        match self.spec.variant {
            AeVariant::Lstm => reversed_rows(window),
            _ => window.clone(),
        }
    }

    /// MSE between `decode(encode(window))` and the reconstruction target.
    pub fn reconstruction_loss(&self, window: &Tensor) -> Result<f32, ModelError> {
        let rec = self.decode(&self.encode(window)?)?;
        Ok(crate::nn::mse_loss(&rec, &self.reconstruction_target(window))?)
    }

    /// Unsupervised local training on an unlabelled stream `[N, N^f]`.
    ///
    /// Runs `epochs` epochs of Adam on the reconstruction MSE using batches
    /// drawn by the bagging policy from `rng`. `self` is left untouched.
    pub fn train_locally<R: Rng + ?Sized>(
        &self,
        data: &Tensor,
        opts: &TrainOptions,
        rng: &mut R,
    ) -> Result<TrainOutcome<Self>, ModelError> {
        opts.policy.validate()?;
        if self.spec.variant == AeVariant::Cnn && opts.policy.batch_min < 2 {
            return Err(ModelError::InvalidSpec(
                "convolutional autoencoder needs batches of at least 2 windows".into(),
            ));
        }
        if data.is_empty() || data.rows() == 0 {
            log::warn!("local training skipped: no unlabelled samples");
            return Ok(TrainOutcome {
                model: self.clone(),
                epoch_losses: Vec::new(),
                status: TrainStatus::SkippedEmpty,
            });
        }
        self.check_features(data, self.spec.input_dim)?;
        let mut model = self.clone();
        let adam = Adam::new(opts.lr);
        let mut state = AdamState::new();
        let mut epoch_losses = Vec::with_capacity(opts.epochs);
        for _ in 0..opts.epochs {
            let plans = opts.policy.sample_epoch(data.rows(), rng);
            let mut total = 0.0f64;
            for plan in &plans {
                let mut tape = Tape::new();
                let b = Bound::bind(&mut tape, &model.params);
                let mut running = None;
                let loss = match model.spec.variant {
                    AeVariant::Lstm => {
                        let steps: Vec<Var> = (0..plan.seq_len)
                            .map(|t| tape.constant(data.gather_rows(&plan.step_indices(t))))
                            .collect();
                        let hs = model.encode_steps(&mut tape, &b, &steps)?;
                        let outs =
                            model.decode_steps(&mut tape, &b, *hs.last().expect("seq_len >= 1"), plan.seq_len)?;
                        let mut acc = None;
                        for (t, out) in outs.iter().enumerate() {
                            let l = tape.mse(*out, steps[plan.seq_len - 1 - t])?;
                            acc = Some(match acc {
                                None => l,
                                Some(a) => tape.add(a, l)?,
                            });
                        }
                        tape.scale(acc.expect("seq_len >= 1"), 1.0 / plan.seq_len as f32)
                    }
                    variant => {
                        let x = tape.constant(data.gather_rows(&plan.row_indices()));
                        let mut rs = match variant {
                            AeVariant::Cnn => model.running_stats(),
                            _ => RunningStats::new(0),
                        };
                        let h = model.encode_rows(&mut tape, &b, x, BatchNormMode::Train, &mut rs)?;
                        let y = model.decode_rows(&mut tape, &b, h)?;
                        running = (variant == AeVariant::Cnn).then_some(rs);
                        tape.mse(y, x)?
                    }
                };
                total += f64::from(tape.value(loss).item());
                let grads = tape.backward(loss)?;
                b.apply(&mut model.params, &grads, &adam, &mut state)?;
                if let Some(rs) = running {
                    *model.params.get_mut("enc.bn.running_mean").expect("cnn layout") = rs.mean;
                    *model.params.get_mut("enc.bn.running_var").expect("cnn layout") = rs.var;
                }
            }
            epoch_losses.push((total / plans.len().max(1) as f64) as f32);
        }
        Ok(TrainOutcome {
            model,
            epoch_losses,
            status: TrainStatus::Trained,
        })
    }
}

/// Runs an LSTM cell from a zero state over `steps`, returning hidden states.
pub(crate) fn run_cell(
    tape: &mut Tape,
    cell: &crate::nn::LstmVars,
    steps: &[Var],
    hidden: usize,
) -> Result<Vec<Var>, ModelError> {
    let Some(first) = steps.first() else {
        return Ok(Vec::new());
    };
    let batch = tape.value(*first).rows();
    let mut h = tape.constant(Tensor::zeros(&[batch, hidden]));
    let mut c = tape.constant(Tensor::zeros(&[batch, hidden]));
    let mut out = Vec::with_capacity(steps.len());
    for &x in steps {
        (h, c) = tape.lstm_step(x, h, c, cell)?;
        out.push(h);
    }
    Ok(out)
}

/// One `[1, cols]` constant per row of `m`.
pub(crate) fn row_constants(tape: &mut Tape, m: &Tensor) -> Vec<Var> {
    (0..m.rows())
        .map(|r| tape.constant(m.slice_rows(r, r + 1)))
        .collect()
}

/// Concatenates `[batch, cols]` step outputs into `[steps·batch, cols]`.
pub(crate) fn stack_rows(tape: &Tape, vars: &[Var]) -> Tensor {
    let cols = vars.first().map_or(0, |v| tape.value(*v).cols());
    let mut data = Vec::new();
    let mut rows = 0;
    for v in vars {
        let t = tape.value(*v);
        rows += t.rows();
        data.extend_from_slice(t.data());
    }
    Tensor::new(vec![rows, cols], data).expect("uniform step shapes")
}

pub(crate) fn reversed_rows(m: &Tensor) -> Tensor {
    let idx: Vec<usize> = (0..m.rows()).rev().collect();
    m.gather_rows(&idx)
}
