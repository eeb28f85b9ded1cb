//! Shared-weight multi-dilated convolution: one kernel applied at several
//! dilations, branch outputs mixed by the PMF of learnable coefficients.

use serde::{Deserialize, Serialize};

use super::pmf::{pmf, pmf_backward, PmfKind};
use crate::error::{Error, Result};
use crate::tensorops::{
    check_conv_args, conv_accumulate, conv_adjoint_accumulate, ConvKernel, PaddingMode, SeqBatch,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiDilatedLayerState {
    shared_kernel: ConvKernel,
    dilations: Vec<usize>,
    coefficients: Vec<f64>,
    pmf_kind: PmfKind,
}

impl MultiDilatedLayerState {
    pub fn new(
        shared_kernel: ConvKernel,
        dilations: Vec<usize>,
        coefficients: Vec<f64>,
        pmf_kind: PmfKind,
    ) -> Result<Self> {
        if dilations.len() < 2 {
            return Err(Error::invalid(
                "a multi-dilated layer needs at least two branches",
            ));
        }
        if dilations.len() != coefficients.len() {
            return Err(Error::invalid(format!(
                "{} dilations but {} coefficients",
                dilations.len(),
                coefficients.len()
            )));
        }
        if dilations[0] == 0 || dilations.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid(
                "branch dilations must be >= 1 and strictly increasing",
            ));
        }
        pmf(&coefficients, pmf_kind)?;
        Ok(Self {
            shared_kernel,
            dilations,
            coefficients,
            pmf_kind,
        })
    }

    pub fn shared_kernel(&self) -> &ConvKernel {
        &self.shared_kernel
    }

    pub fn shared_kernel_mut(&mut self) -> &mut ConvKernel {
        &mut self.shared_kernel
    }

    pub fn dilations(&self) -> &[usize] {
        &self.dilations
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    pub fn coefficients_mut(&mut self) -> &mut [f64] {
        &mut self.coefficients
    }

    pub fn pmf_kind(&self) -> PmfKind {
        self.pmf_kind
    }

    pub fn branches(&self) -> usize {
        self.dilations.len()
    }

    pub fn alphas(&self) -> Result<Vec<f64>> {
        pmf(&self.coefficients, self.pmf_kind)
    }

    pub(crate) fn into_kernel(self) -> ConvKernel {
        self.shared_kernel
    }
}

/// Forward cache: the input, the PMF and every branch output.
#[derive(Debug, Clone)]
pub struct MultiDilatedTape {
    input: SeqBatch,
    alphas: Vec<f64>,
    branch_outputs: Vec<SeqBatch>,
    state: MultiDilatedLayerState,
    padding: PaddingMode,
}

impl MultiDilatedTape {
    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }
}

pub fn multi_dilated_forward(
    x: &SeqBatch,
    st: &MultiDilatedLayerState,
    padding: PaddingMode,
) -> Result<SeqBatch> {
    Ok(multi_dilated_forward_taped(x, st, padding)?.0)
}

pub fn multi_dilated_forward_taped(
    x: &SeqBatch,
    st: &MultiDilatedLayerState,
    padding: PaddingMode,
) -> Result<(SeqBatch, MultiDilatedTape)> {
    let alphas = st.alphas()?;
    let k = &st.shared_kernel;
    let mut out = SeqBatch::zeros(x.batch(), k.out_channels(), x.length());
    let mut branch_outputs = Vec::with_capacity(st.dilations.len());
    for (&d, &a) in st.dilations.iter().zip(&alphas) {
        check_conv_args(x, k, d, padding)?;
        let mut branch = SeqBatch::zeros(x.batch(), k.out_channels(), x.length());
        conv_accumulate(x, k, d, padding, 1.0, &mut branch);
        out.scaled_add_assign(a, &branch);
        branch_outputs.push(branch);
    }
    let tape = MultiDilatedTape {
        input: x.clone(),
        alphas,
        branch_outputs,
        state: st.clone(),
        padding,
    };
    Ok((out, tape))
}

/// `sum_i alphas[i] * conv(x, kernel, dilations[i])` for an arbitrary branch list,
/// including repeated dilations.
pub fn mixed_dilation_forward(
    x: &SeqBatch,
    kernel: &ConvKernel,
    dilations: &[usize],
    alphas: &[f64],
    padding: PaddingMode,
) -> Result<SeqBatch> {
    if dilations.len() != alphas.len() || dilations.is_empty() {
        return Err(Error::invalid("need one mixing weight per branch"));
    }
    let mut out = SeqBatch::zeros(x.batch(), kernel.out_channels(), x.length());
    for (&d, &a) in dilations.iter().zip(alphas) {
        check_conv_args(x, kernel, d, padding)?;
        conv_accumulate(x, kernel, d, padding, a, &mut out);
    }
    Ok(out)
}

/// Gradients of a multi-dilated layer.
#[derive(Debug, Clone)]
pub struct MultiDilatedGrads {
    pub input: SeqBatch,
    pub kernel: ConvKernel,
    pub coefficients: Vec<f64>,
}

pub fn multi_dilated_backward(
    tape: &MultiDilatedTape,
    grad_out: &SeqBatch,
) -> Result<MultiDilatedGrads> {
    multi_dilated_backward_impl(tape, grad_out, true)
}

pub(crate) fn multi_dilated_backward_impl(
    tape: &MultiDilatedTape,
    grad_out: &SeqBatch,
    need_input: bool,
) -> Result<MultiDilatedGrads> {
    let x = &tape.input;
    let k = &tape.state.shared_kernel;
    if grad_out.shape() != (x.batch(), k.out_channels(), x.length()) {
        return Err(Error::invalid(
            "gradient shape does not match the layer output",
        ));
    }
    let mut grad_x = SeqBatch::zeros(x.batch(), x.channels(), x.length());
    let mut grad_k = ConvKernel::zeros(k.out_channels(), k.in_channels(), k.kernel_size());
    let mut grad_alpha = Vec::with_capacity(tape.alphas.len());
    for ((&d, &a), branch) in tape
        .state
        .dilations
        .iter()
        .zip(&tape.alphas)
        .zip(&tape.branch_outputs)
    {
        grad_alpha.push(grad_out.dot(branch));
        conv_adjoint_accumulate(
            x,
            k,
            d,
            tape.padding,
            a,
            grad_out,
            need_input.then_some(&mut grad_x),
            &mut grad_k,
        );
    }
    let coefficients = pmf_backward(&tape.state.coefficients, &grad_alpha, tape.state.pmf_kind)?;
    Ok(MultiDilatedGrads {
        input: grad_x,
        kernel: grad_k,
        coefficients,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use crate::tensorops::dilated_conv1d_forward;
    use rand::Rng;

    fn random_batch(rng: &mut impl Rng, b: usize, c: usize, t: usize) -> SeqBatch {
        SeqBatch::from_vec(
            b,
            c,
            t,
            (0..b * c * t).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn identical_branches_match_single_conv() {
        let mut rng = rng_from_seed(11);
        let k = ConvKernel::init_uniform(2, 3, 3, &mut rng);
        let x = random_batch(&mut rng, 2, 3, 20);
        // strictly increasing dilations are required, so compare through explicit weights
        let st = MultiDilatedLayerState::new(
            k.clone(),
            vec![2, 5],
            vec![1.0, 0.0],
            PmfKind::AbsNormalize,
        )
        .unwrap();
        let y = multi_dilated_forward(&x, &st, PaddingMode::Causal).unwrap();
        let single = dilated_conv1d_forward(&x, &k, 2, PaddingMode::Causal).unwrap();
        assert_eq!(y, single);
        assert!(MultiDilatedLayerState::new(
            k.clone(),
            vec![2, 2],
            vec![1.0, 1.0],
            PmfKind::AbsNormalize
        )
        .is_err());
        assert!(MultiDilatedLayerState::new(k, vec![2], vec![1.0], PmfKind::AbsNormalize).is_err());
    }

    #[test]
    fn equal_dilations_reduce_to_one_conv() {
        let mut rng = rng_from_seed(14);
        let k = ConvKernel::init_uniform(3, 2, 3, &mut rng);
        let x = random_batch(&mut rng, 2, 2, 25);
        let alphas = pmf(&[1.0, 1.0], PmfKind::AbsNormalize).unwrap();
        let y = mixed_dilation_forward(&x, &k, &[4, 4], &alphas, PaddingMode::Causal).unwrap();
        let single = dilated_conv1d_forward(&x, &k, 4, PaddingMode::Causal).unwrap();
        for (a, b) in y.data().iter().zip(single.data()) {
            assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn zero_grad_gives_zero_grads() {
        let mut rng = rng_from_seed(12);
        let k = ConvKernel::init_uniform(2, 2, 2, &mut rng);
        let x = random_batch(&mut rng, 1, 2, 12);
        let st =
            MultiDilatedLayerState::new(k, vec![1, 3, 4], vec![0.3, -1.0, 2.0], PmfKind::Softmax)
                .unwrap();
        let (_, tape) = multi_dilated_forward_taped(&x, &st, PaddingMode::Causal).unwrap();
        let g = multi_dilated_backward(&tape, &SeqBatch::zeros(1, 2, 12)).unwrap();
        assert!(g
            .input
            .data()
            .iter()
            .chain(g.kernel.weights())
            .chain(&g.coefficients)
            .all(|&v| v == 0.0));
    }

    #[test]
    fn equal_coefficients_on_twin_branches_get_equal_gradients() {
        // branches at dilations beyond the sequence read only padding, so their
        // outputs coincide and the layer is symmetric in (w1, w2)
        let mut rng = rng_from_seed(13);
        let k = ConvKernel::init_uniform(2, 2, 2, &mut rng);
        let x = random_batch(&mut rng, 2, 2, 8);
        for kind in [PmfKind::AbsNormalize, PmfKind::Softmax, PmfKind::Sigmoid] {
            let st =
                MultiDilatedLayerState::new(k.clone(), vec![20, 30], vec![0.7, 0.7], kind).unwrap();
            let (_, tape) = multi_dilated_forward_taped(&x, &st, PaddingMode::Causal).unwrap();
            let g = multi_dilated_backward(&tape, &random_batch(&mut rng, 2, 2, 8)).unwrap();
            assert!((g.coefficients[0] - g.coefficients[1]).abs() < 1e-15);
        }
    }
}
