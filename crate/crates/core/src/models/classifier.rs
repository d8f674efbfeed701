use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::autoencoder::{row_constants, run_cell, stack_rows};
use super::{Bound, ModelError, TrainOptions, TrainOutcome, TrainStatus};
use crate::nn::{init, Adam, AdamState, Tape, Var};
use crate::params::ModelParams;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum ClassifierHead {
    /// LSTM cell whose hidden states feed a dense layer and a softmax.
    Lstm,
    /// Dense layer and softmax applied to each step independently.
    Softmax,
}

impl ClassifierHead {
    pub fn name(self) -> &'static str {
        match self {
            ClassifierHead::Lstm => "LSTM",
            ClassifierHead::Softmax => "SOFTMAX",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassifierSpec {
    pub head: ClassifierHead,
    pub input_dim: usize,
    pub num_classes: usize,
    /// Hidden size of the LSTM head; ignored by the softmax head.
    pub hidden_dim: usize,
}

impl ClassifierSpec {
    pub fn softmax(input_dim: usize, num_classes: usize) -> Self {
        Self {
            head: ClassifierHead::Softmax,
            input_dim,
            num_classes,
            hidden_dim: 0,
        }
    }

    /// LSTM head; the hidden size defaults to the input size.
    pub fn lstm(input_dim: usize, num_classes: usize) -> Self {
        Self {
            head: ClassifierHead::Lstm,
            input_dim,
            num_classes,
            hidden_dim: input_dim,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.num_classes < 2 {
            return Err(ModelError::InvalidSpec(format!(
                "a classifier needs at least 2 classes, got {}",
                self.num_classes
            )));
        }
        if self.input_dim == 0 || (self.head == ClassifierHead::Lstm && self.hidden_dim == 0) {
            return Err(ModelError::InvalidSpec(
                "classifier input and hidden sizes must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(row: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq)]
pub struct Classifier {
    spec: ClassifierSpec,
    params: ModelParams,
}

impl Classifier {
    pub fn build(spec: ClassifierSpec, seed: u64) -> Result<Self, ModelError> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(Self {
            spec,
            params: Self::layout(&spec, &mut rng),
        })
    }

    pub fn from_params(spec: ClassifierSpec, params: ModelParams) -> Result<Self, ModelError> {
        let template = Self::layout(&spec, &mut ChaCha8Rng::seed_from_u64(0));
        if !template.same_layout(&params) {
            return Err(ModelError::Layout(format!(
                "{} classifier {}→{}",
                spec.head.name(),
                spec.input_dim,
                spec.num_classes
            )));
        }
        Ok(Self { spec, params })
    }

    fn layout<R: Rng>(spec: &ClassifierSpec, rng: &mut R) -> ModelParams {
        let mut p = ModelParams::new();
        let fc_in = match spec.head {
            ClassifierHead::Softmax => spec.input_dim,
            ClassifierHead::Lstm => {
                p.push_lstm("lstm", init::lstm_cell(spec.input_dim, spec.hidden_dim, rng));
                spec.hidden_dim
            }
        };
        p.trainable("fc.w", init::dense(spec.num_classes, fc_in, rng));
        p.trainable("fc.b", Tensor::zeros(&[spec.num_classes]));
        p
    }

    pub fn spec(&self) -> &ClassifierSpec {
        &self.spec
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn into_params(self) -> ModelParams {
        self.params
    }

    /// Class probabilities for each step of each input, in step order.
    ///
    /// `steps` are `[batch, input_dim]` (LSTM head, state carried across
    /// steps) or a single `[rows, input_dim]` matrix (softmax head).
    pub(crate) fn probs_on_tape(
        &self,
        tape: &mut Tape,
        b: &Bound,
        steps: &[Var],
    ) -> Result<Vec<Var>, ModelError> {
        let p = &self.params;
        let (w, bias) = (b.var(p, "fc.w"), b.var(p, "fc.b"));
        let hs = match self.spec.head {
            ClassifierHead::Lstm => {
                let cell = b.lstm(p, "lstm");
                run_cell(tape, &cell, steps, self.spec.hidden_dim)?
            }
            ClassifierHead::Softmax => steps.to_vec(),
        };
        hs.into_iter()
            .map(|h| {
                let z = tape.linear(h, w, Some(bias))?;
                Ok(tape.softmax(z))
            })
            .collect()
    }

    fn check_input(&self, reps: &Tensor) -> Result<(), ModelError> {
        if reps.rank() != 2 || reps.cols() != self.spec.input_dim {
            return Err(ModelError::FeatureDim {
                expected: self.spec.input_dim,
                got: if reps.rank() == 2 { reps.cols() } else { reps.len() },
            });
        }
        Ok(())
    }

    /// Per-step class probabilities `[L, classes]` for a window `[L, input_dim]`.
    pub fn predict_proba(&self, reps: &Tensor) -> Result<Tensor, ModelError> {
        self.check_input(reps)?;
        if reps.rows() == 0 {
            return Ok(Tensor::zeros(&[0, self.spec.num_classes]));
        }
        let mut tape = Tape::new();
        let b = Bound::bind(&mut tape, &self.params);
        let steps = match self.spec.head {
            ClassifierHead::Lstm => row_constants(&mut tape, reps),
            ClassifierHead::Softmax => vec![tape.constant(reps.clone())],
        };
        let probs = self.probs_on_tape(&mut tape, &b, &steps)?;
        Ok(stack_rows(&tape, &probs))
    }

    /// Most probable class at every step; ties go to the lowest class index.
    pub fn classify(&self, reps: &Tensor) -> Result<Vec<usize>, ModelError> {
        let p = self.predict_proba(reps)?;
        Ok((0..p.rows()).map(|r| argmax(p.row(r))).collect())
    }

    /// Supervised training with cross-entropy on per-step labels.
    ///
    /// `self` is left untouched; the trained copy is returned.
    pub fn train<R: Rng + ?Sized>(
        &self,
        reps: &Tensor,
        labels: &[usize],
        opts: &TrainOptions,
        rng: &mut R,
    ) -> Result<TrainOutcome<Self>, ModelError> {
        opts.policy.validate()?;
        self.check_input(reps)?;
        if reps.rows() == 0 {
            return Err(ModelError::EmptyData);
        }
        if labels.len() != reps.rows() {
            return Err(ModelError::Nn(crate::nn::NnError::Shape {
                op: "train_classifier",
                left: reps.shape().to_vec(),
                right: vec![labels.len()],
            }));
        }
        if let Some((row, &label)) = labels
            .iter()
            .enumerate()
            .find(|(_, &l)| l >= self.spec.num_classes)
        {
            return Err(ModelError::LabelOutOfRange {
                row,
                label,
                classes: self.spec.num_classes,
            });
        }
        let mut model = self.clone();
        let adam = Adam::new(opts.lr);
        let mut state = AdamState::new();
        let mut epoch_losses = Vec::with_capacity(opts.epochs);
        for _ in 0..opts.epochs {
            let plans = opts.policy.sample_epoch(reps.rows(), rng);
            let mut total = 0.0f64;
            for plan in &plans {
                let mut tape = Tape::new();
                let b = Bound::bind(&mut tape, &model.params);
                let loss = match model.spec.head {
                    ClassifierHead::Lstm => {
                        let idx: Vec<Vec<usize>> =
                            (0..plan.seq_len).map(|t| plan.step_indices(t)).collect();
                        let steps: Vec<Var> = idx
                            .iter()
                            .map(|i| tape.constant(reps.gather_rows(i)))
                            .collect();
                        let probs = model.probs_on_tape(&mut tape, &b, &steps)?;
                        let mut acc = None;
                        for (p, i) in probs.into_iter().zip(&idx) {
                            let y: Vec<usize> = i.iter().map(|&r| labels[r]).collect();
                            let l = tape.cross_entropy(p, &y)?;
                            acc = Some(match acc {
                                None => l,
                                Some(a) => tape.add(a, l)?,
                            });
                        }
                        tape.scale(acc.expect("seq_len >= 1"), 1.0 / plan.seq_len as f32)
                    }
                    ClassifierHead::Softmax => {
                        let rows = plan.row_indices();
                        let x = tape.constant(reps.gather_rows(&rows));
                        let y: Vec<usize> = rows.iter().map(|&r| labels[r]).collect();
                        let p = model.probs_on_tape(&mut tape, &b, &[x])?[0];
                        tape.cross_entropy(p, &y)?
                    }
                };
                total += f64::from(tape.value(loss).item());
                let grads = tape.backward(loss)?;
                b.apply(&mut model.params, &grads, &adam, &mut state)?;
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

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::BaggingPolicy;

    fn opts(lr: f64, epochs: usize) -> TrainOptions {
        TrainOptions {
            lr,
            epochs,
            policy: BaggingPolicy::default(),
        }
    }

    fn zeroed(c: &Classifier) -> Classifier {
        let mut p = c.params().clone();
        for e in p.entries_mut() {
            e.tensor = Tensor::zeros(e.tensor.shape());
        }
        Classifier::from_params(*c.spec(), p).unwrap()
    }

    #[test]
    fn softmax_head_parameter_count() {
        let c = Classifier::build(ClassifierSpec::softmax(26, 12), 0).unwrap();
        // 26·12 weights + 12 biases
        assert_eq!(c.params().parameter_count(), 324);
    }

    #[test]
    fn lstm_head_shapes() {
        let c = Classifier::build(ClassifierSpec::lstm(79, 18), 0).unwrap();
        let cell = c.params().lstm("lstm").unwrap();
        assert_eq!((cell.input_dim, cell.hidden_dim), (79, 79));
        assert_eq!(c.params().get("fc.w").unwrap().shape(), &[18, 79]);
    }

    #[test]
    fn seeded_init_is_reproducible() {
        let s = ClassifierSpec::lstm(9, 3);
        assert_eq!(Classifier::build(s, 0).unwrap(), Classifier::build(s, 0).unwrap());
    }

    #[test]
    fn argmax_rules() {
        assert_eq!(argmax(&[0.1, 2.0, -1.0]), 1);
        assert_eq!(argmax(&[1.0, 1.0]), 0);
        let shifted: Vec<f32> = [0.1f32, 2.0, -1.0].iter().map(|v| v + 100.0).collect();
        assert_eq!(argmax(&shifted), 1);
    }

    #[test]
    fn zero_softmax_head_predicts_class_zero() {
        let c = zeroed(&Classifier::build(ClassifierSpec::softmax(4, 3), 1).unwrap());
        let reps = Tensor::full(&[6, 4], 0.7);
        let p = c.predict_proba(&reps).unwrap();
        assert!(p.data().iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-7));
        assert_eq!(c.classify(&reps).unwrap(), vec![0; 6]);
    }

    #[test]
    fn lstm_head_classifies_each_step() {
        let c = Classifier::build(ClassifierSpec::lstm(4, 3), 1).unwrap();
        assert_eq!(c.classify(&Tensor::full(&[7, 4], 0.2)).unwrap().len(), 7);
        assert!(c.classify(&Tensor::full(&[7, 5], 0.2)).is_err());
    }

    #[test]
    fn zero_epochs_is_identity() {
        let c = Classifier::build(ClassifierSpec::softmax(3, 2), 1).unwrap();
        let out = c
            .train(
                &Tensor::full(&[10, 3], 1.0),
                &[1; 10],
                &opts(0.001, 0),
                &mut ChaCha8Rng::seed_from_u64(0),
            )
            .unwrap();
        assert_eq!(out.model, c);
    }

    #[test]
    fn single_class_set_is_learned() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let reps = Tensor::new(
            vec![200, 3],
            (0..600).map(|_| rng.random_range(-0.2..0.2)).collect(),
        )
        .unwrap();
        let labels = vec![1usize; 200];
        for spec in [ClassifierSpec::softmax(3, 4), ClassifierSpec::lstm(3, 4)] {
            let c = Classifier::build(spec, 5).unwrap();
            let out = c.train(&reps, &labels, &opts(0.01, 100), &mut rng).unwrap();
            let pred = out.model.classify(&reps).unwrap();
            assert!(pred.iter().all(|&p| p == 1), "{:?}", spec.head);
        }
    }

    #[test]
    fn label_out_of_range_names_row() {
        let c = Classifier::build(ClassifierSpec::softmax(2, 3), 0).unwrap();
        let err = c
            .train(
                &Tensor::zeros(&[4, 2]),
                &[0, 1, 3, 0],
                &opts(0.01, 1),
                &mut ChaCha8Rng::seed_from_u64(0),
            )
            .unwrap_err();
        assert!(matches!(err, ModelError::LabelOutOfRange { row: 2, label: 3, classes: 3 }));
    }

    #[test]
    fn invalid_specs() {
        assert!(Classifier::build(ClassifierSpec::softmax(3, 1), 0).is_err());
        assert!(Classifier::build(ClassifierSpec::softmax(0, 3), 0).is_err());
    }
}
