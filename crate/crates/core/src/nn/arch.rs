use rand::Rng;

use super::{BasicBlock, BatchNorm2d, Conv2d, GlobalPool, Layer, Linear, MaxPool2d, PoolKind, Relu, Sequential};

/// Four conv-BN-ReLU blocks, global max pooling and a linear head.
///
/// The first block patchifies the 128×128 input with a stride-4 kernel;
/// later blocks halve the resolution down to 4×4.
pub fn small_cnn<R: Rng>(rng: &mut R, in_ch: usize, num_classes: usize) -> Sequential {
    let widths = [8, 16, 32, 32];
    let mut first = Conv2d::new(rng, in_ch, widths[0], 4, 4, 0, false);
    first.skip_input_grad = true;
    let mut layers: Vec<Box<dyn Layer>> = vec![
        Box::new(first),
        Box::new(BatchNorm2d::new(widths[0])),
        Box::new(Relu::new()),
    ];
    for w in widths.windows(2) {
        layers.push(Box::new(Conv2d::new(rng, w[0], w[1], 3, 2, 1, false)));
        layers.push(Box::new(BatchNorm2d::new(w[1])));
        layers.push(Box::new(Relu::new()));
    }
    layers.push(Box::new(GlobalPool::new(PoolKind::Max)));
    layers.push(Box::new(Linear::new(rng, widths[3], num_classes)));
    Sequential::new(layers)
}

/// ResNet-18: 7×7 stem, four stages of two basic blocks, average pooling.
pub fn resnet18<R: Rng>(rng: &mut R, in_ch: usize, num_classes: usize) -> Sequential {
    let mut stem = Conv2d::new(rng, in_ch, 64, 7, 2, 3, false);
    stem.skip_input_grad = true;
    let mut layers: Vec<Box<dyn Layer>> = vec![
        Box::new(stem),
        Box::new(BatchNorm2d::new(64)),
        Box::new(Relu::new()),
        Box::new(MaxPool2d::new(3, 2, 1)),
    ];
    let mut in_ch = 64;
    for (i, out_ch) in [64, 128, 256, 512].into_iter().enumerate() {
        let stride = if i == 0 { 1 } else { 2 };
        layers.push(Box::new(BasicBlock::new(rng, in_ch, out_ch, stride)));
        layers.push(Box::new(BasicBlock::new(rng, out_ch, out_ch, 1)));
        in_ch = out_ch;
    }
    layers.push(Box::new(GlobalPool::new(PoolKind::Avg)));
    layers.push(Box::new(Linear::new(rng, 512, num_classes)));
    Sequential::new(layers)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Tensor;
    use rand::SeedableRng;

    #[test]
    fn small_cnn_shape_and_size() {
        let mut rng = rand_pcg::Pcg64::seed_from_u64(0);
        let net = small_cnn(&mut rng, 3, 2);
        assert!(net.num_params() <= 500_000);
        let y = net.forward(&Tensor::zeros([2, 3, 128, 128]));
        assert_eq!(y.shape, [2, 2, 1, 1]);
    }

    #[test]
    fn resnet18_shape_and_size() {
        let mut rng = rand_pcg::Pcg64::seed_from_u64(0);
        let mut net = resnet18(&mut rng, 3, 2);
        // 11.17M for the 1000-class head; the 2-class head drops ~0.51M.
        let n = net.num_params();
        assert!((11_100_000..11_200_000).contains(&n), "{n}");
        let x = Tensor::zeros([1, 3, 64, 64]);
        let y = net.forward_train(&x);
        assert_eq!(y.shape, [1, 2, 1, 1]);
        let dx = net.backward(&Tensor::from_vec(y.shape, vec![1.0, -1.0]));
        assert_eq!(dx.shape, x.shape);
    }
}
