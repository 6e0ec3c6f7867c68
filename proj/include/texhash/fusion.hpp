#pragma once

// Channel-wise attention over paired encoder/decoder activations of a frozen
// generator, and the progressive strided-conv cascade that turns the attended
// multi-scale maps into a single descriptor.
//
// For every size M in {2K, K, ..., 2}:
//   X^M   = enc^M (+) dec^M          (dec^2K alone at M = 2K)
//   CA^M  = softmax(W_M q + b_M) * X^M, q = global average pool of X^M
//   F1^M  = conv1x1(CA^M), half the depth of CA^M   (M < 2K)
// and the cascade
//   S^K   = strided(CA^2K)
//   S^M/2 = strided(S^M (+) F1^M)                  down to 1x1 -> descriptor.

#include <cstdint>
#include <filesystem>
#include <map>
#include <random>
#include <vector>

#include "texhash/blob_io.hpp"
#include "texhash/tensor.hpp"
#include "texhash/tsn.hpp"

namespace texhash {

struct CaParams {
  Tensor weight;  // [C,C], dense map over the pooled channel vector
  Tensor bias;    // [C]
};

// Depth concatenation; `encoder` is undefined at the decoder-only size.
Tensor fuse_pair(const Tensor& encoder, const Tensor& decoder);

// Channel attention on x[N,C,M,M]. When `attention` is non-null it receives
// the [N,C] weight vectors A_c.
Tensor channel_attention(const Tensor& x, const CaParams& params, Tensor* attention = nullptr);

// Order in which the cascade consumed each attended map.
struct FusionTrace {
  std::vector<int> consumed_sizes;
};

class FusionPipeline {
 public:
  FusionPipeline(const GeneratorNet& generator, bool use_attention, std::mt19937_64& rng);

  // Attended (or, without attention, plain fused) maps keyed by size.
  std::map<int, Tensor> attend(const ActivationTable& acts) const;
  // Cascade over ca_outputs for sizes 2K..2; returns [N, d].
  Tensor combine(const std::map<int, Tensor>& ca_outputs, FusionTrace* trace = nullptr) const;
  Tensor forward(const ActivationTable& acts, FusionTrace* trace = nullptr) const;

  int descriptor_dim() const { return descriptor_dim_; }
  int output_size() const { return output_size_; }
  bool use_attention() const { return use_attention_; }
  std::size_t attention_modules() const { return ca_.size(); }
  std::vector<int> sizes() const;  // 2K, K, ..., 2
  int fused_channels(int size) const { return channels_.at(size); }
  const CaParams& attention_params(int size) const { return ca_.at(size); }

  NamedTensors parameters() const;
  std::vector<Tensor> parameter_list() const;
  void set_trainable(bool trainable);

 private:
  bool use_attention_;
  int output_size_;
  int descriptor_dim_ = 0;
  std::map<int, int> channels_;       // depth of X^M
  std::map<int, CaParams> ca_;        // per size, never shared
  std::map<int, Tensor> pointwise_;   // 1x1 conv weight for M < 2K
  std::map<int, Tensor> strided_;     // keyed by input size M, 3x3 stride 2
};

// generate -> fuse_pair -> channel_attention -> combine with the generator's
// weights untouched by gradients. patches: [N,3,K,K].
Tensor extract_descriptor(const GeneratorNet& generator, const FusionPipeline& fusion, const Tensor& patches,
                          FusionTrace* trace = nullptr);

void write_fusion_blob(ByteWriter& w, const FusionPipeline& fusion, const GeneratorConfig& generator);
// Rebuilds the pipeline for `generator` and loads stored parameters into it.
FusionPipeline read_fusion_blob(ByteReader& r, const GeneratorNet& generator);
void save_fusion_checkpoint(const FusionPipeline& fusion, const GeneratorConfig& generator,
                            const std::filesystem::path& path);
FusionPipeline load_fusion_checkpoint(const std::filesystem::path& path, const GeneratorNet& generator);

}  // namespace texhash
