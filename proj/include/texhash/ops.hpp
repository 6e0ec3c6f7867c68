#pragma once

// Differentiable operations over Tensor. Elementwise binary ops require
// identical shapes; the only broadcasting is the per-channel bias add inside
// conv2d/deconv2d/fully_connected and the explicit channel_scale.

#include <vector>

#include "texhash/tensor.hpp"

namespace texhash {

// Elementwise arithmetic.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor add_scalar(const Tensor& a, double offset);
Tensor square(const Tensor& a);
Tensor log(const Tensor& a);

// Reductions to a single-element tensor.
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);

// Activations.
Tensor relu(const Tensor& a);
Tensor leaky_relu(const Tensor& a, double slope = 0.2);
Tensor sigmoid(const Tensor& a);
Tensor tanh(const Tensor& a);
// log(1 + exp(a)), stable for large |a|.
Tensor softplus(const Tensor& a);

// Softmax along the last axis, max-subtracted.
Tensor softmax(const Tensor& a);

// Shape plumbing.
Tensor reshape(const Tensor& a, Shape shape);
Tensor transpose(const Tensor& a);  // rank-2 only
Tensor channel_concat(const Tensor& a, const Tensor& b);  // axis 1 of [N,C,H,W]

// [N,in] x weight[out,in] + bias[out] -> [N,out]. bias may be undefined.
Tensor fully_connected(const Tensor& x, const Tensor& weight, const Tensor& bias);
// [m,n] x [n,p] -> [m,p].
Tensor matmul(const Tensor& a, const Tensor& b);

// x[N,C,H,W], weight[F,C,kh,kw], bias[F] (may be undefined).
// Output spatial size floor((H + 2p - kh)/stride) + 1.
Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, int stride, int padding);

// Transposed convolution: x[N,C,H,W], weight[C,F,kh,kw], bias[F] (may be
// undefined). Output spatial size (H-1)*stride - 2p + kh. With stride 2 the
// configuration must give exactly 2H x 2W.
Tensor deconv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, int stride, int padding);

struct ChannelStats {
  std::vector<double> mean;
  std::vector<double> var;
};
// Per-channel normalisation of x[N,C,H,W] followed by gamma[C] * xhat + beta[C].
// Without `fixed` the batch mean and biased variance over N,H,W are used and,
// when `observed` is non-null, reported there.
Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, const ChannelStats* fixed = nullptr,
                  double eps = 1e-5, ChannelStats* observed = nullptr);
// [N,C,H,W] -> [N,C].
Tensor global_avg_pool(const Tensor& x);

// x[N,C,H,W] * weights[N,C] broadcast over H,W.
Tensor channel_scale(const Tensor& x, const Tensor& weights);

// [N,C,H,W] -> [N,C,C], entries sum_hw f_i f_j / (C*H*W).
Tensor gram_matrix(const Tensor& features);

// Composite losses.
Tensor l1_distance(const Tensor& a, const Tensor& b);  // mean |a - b|
Tensor mse(const Tensor& a, const Tensor& b);          // mean (a - b)^2
// Mean over elements of softplus(x) - target*x, i.e. sigmoid cross-entropy.
Tensor bce_with_logits(const Tensor& logits, double target);
// Mean cross-entropy of row-wise softmax(logits[N,C]) against class labels.
Tensor softmax_cross_entropy(const Tensor& logits, const std::vector<int>& labels);

}  // namespace texhash
