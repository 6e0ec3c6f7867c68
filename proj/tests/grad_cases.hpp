#pragma once

// Finite-difference cases for every differentiable op, each evaluated at a
// seeded smooth point. Shared by the unit tests and the acceptance runner.

#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "texhash/grad_check.hpp"
#include "texhash/ops.hpp"
#include "texhash/tensor.hpp"

namespace gradcase {

using namespace texhash;

inline Tensor rnd(Shape s, std::mt19937_64& rng, double sd = 1.0) { return Tensor::randn(std::move(s), rng, sd); }

// Values bounded away from zero by at least `gap`, so relu/abs kinks stay
// outside the finite-difference stencil.
inline Tensor away_from_zero(Shape s, std::mt19937_64& rng, double gap = 1e-2) {
  Tensor t = rnd(std::move(s), rng);
  for (auto& v : t.data_mut())
    if (std::abs(v) < gap) v = v < 0 ? -gap : gap;
  return t;
}

struct OpCase {
  const char* name;
  std::function<double(std::mt19937_64&)> worst;  // max relative error at one point
};

inline double check(const std::function<Tensor(const Tensor&)>& f, const Tensor& p) {
  const auto r = grad_check(f, p, 1e-5);
  return r.finite ? r.max_rel_error : INFINITY;
}

inline std::vector<OpCase> op_cases() {
  return {
      {"add", [](auto& g) { Tensor b = rnd({3, 4}, g), w = rnd({3, 4}, g);
         return check([&](const Tensor& x) { return sum(mul(add(x, b), w)); }, rnd({3, 4}, g)); }},
      {"sub", [](auto& g) { Tensor b = rnd({3, 4}, g), w = rnd({3, 4}, g);
         return check([&](const Tensor& x) { return sum(mul(sub(b, x), w)); }, rnd({3, 4}, g)); }},
      {"mul", [](auto& g) { Tensor b = rnd({3, 4}, g);
         return check([&](const Tensor& x) { return sum(mul(mul(x, b), x)); }, rnd({3, 4}, g)); }},
      {"scale_add_scalar", [](auto& g) { Tensor w = rnd({5}, g);
         return check([&](const Tensor& x) { return sum(mul(add_scalar(scale(x, -1.7), 0.3), w)); }, rnd({5}, g)); }},
      {"square_log", [](auto& g) {
         Tensor p = rnd({6}, g);
         for (auto& v : p.data_mut()) v = 0.5 + std::abs(v);
         return check([&](const Tensor& x) { return sum(log(square(x))); }, p); }},
      {"mean", [](auto& g) { return check([&](const Tensor& x) { return mean(square(x)); }, rnd({2, 5}, g)); }},
      {"relu", [](auto& g) { Tensor w = rnd({4, 4}, g);
         return check([&](const Tensor& x) { return sum(mul(relu(x), w)); }, away_from_zero({4, 4}, g)); }},
      {"leaky_relu", [](auto& g) { Tensor w = rnd({4, 4}, g);
         return check([&](const Tensor& x) { return sum(mul(leaky_relu(x, 0.2), w)); }, away_from_zero({4, 4}, g)); }},
      {"sigmoid", [](auto& g) { Tensor w = rnd({6}, g);
         return check([&](const Tensor& x) { return sum(mul(sigmoid(x), w)); }, rnd({6}, g, 2.0)); }},
      {"tanh", [](auto& g) { Tensor w = rnd({6}, g);
         return check([&](const Tensor& x) { return sum(mul(tanh(x), w)); }, rnd({6}, g, 2.0)); }},
      {"softplus", [](auto& g) { Tensor w = rnd({6}, g);
         return check([&](const Tensor& x) { return sum(mul(softplus(x), w)); }, rnd({6}, g, 3.0)); }},
      {"softmax", [](auto& g) { Tensor w = rnd({3, 5}, g);
         return check([&](const Tensor& x) { return sum(mul(softmax(x), w)); }, rnd({3, 5}, g)); }},
      {"softmax_cross_entropy", [](auto& g) {
         std::vector<int> lab{0, 3, 1, 4};
         return check([&](const Tensor& x) { return softmax_cross_entropy(x, lab); }, rnd({4, 5}, g)); }},
      {"reshape_transpose", [](auto& g) { Tensor w = rnd({4, 3}, g);
         return check([&](const Tensor& x) { return sum(mul(transpose(reshape(x, {3, 4})), w)); }, rnd({2, 6}, g)); }},
      {"channel_concat", [](auto& g) { Tensor b = rnd({2, 1, 3, 3}, g), w = rnd({2, 3, 3, 3}, g);
         return check([&](const Tensor& x) { return sum(mul(channel_concat(x, b), w)); }, rnd({2, 2, 3, 3}, g)); }},
      {"fully_connected", [](auto& g) {
         Tensor W = rnd({3, 4}, g), b = rnd({3}, g), x0 = rnd({2, 4}, g);
         double e = check([&](const Tensor& x) { return sum(square(fully_connected(x, W, b))); }, x0);
         e = std::max(e, check([&](const Tensor& w) { return sum(square(fully_connected(x0, w, b))); }, W));
         return std::max(e, check([&](const Tensor& bb) { return sum(square(fully_connected(x0, W, bb))); }, b)); }},
      {"matmul", [](auto& g) { Tensor b = rnd({4, 2}, g);
         return check([&](const Tensor& x) { return sum(square(matmul(x, b))); }, rnd({3, 4}, g)); }},
      {"conv2d", [](auto& g) {
         Tensor w = rnd({3, 2, 3, 3}, g), b = rnd({3}, g), x0 = rnd({2, 2, 5, 5}, g), m = rnd({2, 3, 3, 3}, g);
         double e = check([&](const Tensor& x) { return sum(mul(conv2d(x, w, b, 2, 1), m)); }, x0);
         e = std::max(e, check([&](const Tensor& ww) { return sum(mul(conv2d(x0, ww, b, 2, 1), m)); }, w));
         return std::max(e, check([&](const Tensor& bb) { return sum(mul(conv2d(x0, w, bb, 2, 1), m)); }, b)); }},
      {"deconv2d", [](auto& g) {
         Tensor w = rnd({2, 3, 4, 4}, g), b = rnd({3}, g), x0 = rnd({1, 2, 3, 3}, g), m = rnd({1, 3, 6, 6}, g);
         double e = check([&](const Tensor& x) { return sum(mul(deconv2d(x, w, b, 2, 1), m)); }, x0);
         e = std::max(e, check([&](const Tensor& ww) { return sum(mul(deconv2d(x0, ww, b, 2, 1), m)); }, w));
         return std::max(e, check([&](const Tensor& bb) { return sum(mul(deconv2d(x0, w, bb, 2, 1), m)); }, b)); }},
      {"conv2d_relu_chain", [](auto& g) {
         // Resample until no pre-activation lies within 1e-3 of the kink.
         Tensor w = rnd({3, 2, 3, 3}, g), x0;
         for (;;) {
           x0 = rnd({1, 2, 4, 4}, g);
           const Tensor pre = conv2d(x0, w, Tensor{}, 1, 1);
           bool ok = true;
           for (double v : pre.data()) ok = ok && std::abs(v) > 1e-3;
           if (ok) break;
         }
         return check([&](const Tensor& x) { return sum(square(relu(conv2d(x, w, Tensor{}, 1, 1)))); }, x0); }},
      {"batch_norm", [](auto& g) {
         Tensor ga = rnd({3}, g), be = rnd({3}, g), m = rnd({2, 3, 3, 3}, g), x0 = rnd({2, 3, 3, 3}, g);
         double e = check([&](const Tensor& x) { return sum(mul(batch_norm(x, ga, be), m)); }, x0);
         e = std::max(e, check([&](const Tensor& gg) { return sum(mul(batch_norm(x0, gg, be), m)); }, ga));
         return std::max(e, check([&](const Tensor& bb) { return sum(mul(batch_norm(x0, ga, bb), m)); }, be)); }},
      {"global_avg_pool", [](auto& g) {
         return check([&](const Tensor& x) { return sum(square(global_avg_pool(x))); }, rnd({2, 3, 3, 2}, g)); }},
      {"channel_scale", [](auto& g) {
         Tensor s0 = rnd({2, 3}, g), x0 = rnd({2, 3, 2, 2}, g);
         double e = check([&](const Tensor& x) { return sum(square(channel_scale(x, s0))); }, x0);
         return std::max(e, check([&](const Tensor& s) { return sum(square(channel_scale(x0, s))); }, s0)); }},
      {"gram_matrix", [](auto& g) { Tensor m = rnd({1, 3, 3}, g);
         return check([&](const Tensor& x) { return sum(mul(gram_matrix(x), m)); }, rnd({1, 3, 3, 3}, g)); }},
      {"l1_distance", [](auto& g) {
         Tensor b = rnd({10}, g), x0 = away_from_zero({10}, g);
         for (std::size_t i = 0; i < 10; ++i) x0.data_mut()[i] += b.data()[i];
         return check([&](const Tensor& x) { return l1_distance(x, b); }, x0); }},
      {"mse", [](auto& g) { Tensor b = rnd({7}, g);
         return check([&](const Tensor& x) { return mse(x, b); }, rnd({7}, g)); }},
      {"bce_with_logits", [](auto& g) {
         return std::max(check([](const Tensor& x) { return bce_with_logits(x, 1.0); }, rnd({6}, g, 2.0)),
                         check([](const Tensor& x) { return bce_with_logits(x, 0.0); }, rnd({6}, g, 2.0))); }},
  };
}

}  // namespace gradcase
