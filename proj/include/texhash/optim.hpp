#pragma once

#include <vector>

#include "texhash/tensor.hpp"

namespace texhash {

struct AdamOptions {
  double lr = 2e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class Adam {
 public:
  Adam(std::vector<Tensor> params, AdamOptions options);

  // Applies one update from the accumulated gradients, then clears them.
  void step();
  void zero_grad();

  const AdamOptions& options() const { return options_; }
  long steps() const { return t_; }

 private:
  std::vector<Tensor> params_;
  AdamOptions options_;
  std::vector<std::vector<double>> m_, v_;
  long t_ = 0;
};

}  // namespace texhash
