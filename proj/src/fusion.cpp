#include "texhash/fusion.hpp"

#include <cmath>

#include "texhash/errors.hpp"
#include "texhash/ops.hpp"

namespace texhash {

namespace {

constexpr std::uint32_t kFusionVersion = 1;

Tensor he_conv(std::size_t out, std::size_t in, std::size_t k, std::mt19937_64& rng) {
  return Tensor::randn(Shape{out, in, k, k}, rng, std::sqrt(2.0 / static_cast<double>(in * k * k)));
}

}  // namespace

Tensor fuse_pair(const Tensor& encoder, const Tensor& decoder) {
  if (!encoder.defined()) return decoder;
  if (encoder.rank() != 4 || decoder.rank() != 4 || encoder.dim(2) != decoder.dim(2) ||
      encoder.dim(3) != decoder.dim(3)) {
    throw ShapeError("fuse_pair: spatial mismatch " + shape_str(encoder.shape()) + " vs " +
                     shape_str(decoder.shape()));
  }
  return channel_concat(encoder, decoder);
}

Tensor channel_attention(const Tensor& x, const CaParams& params, Tensor* attention) {
  if (x.rank() != 4 || params.weight.rank() != 2 || params.weight.dim(0) != x.dim(1) ||
      params.weight.dim(1) != x.dim(1)) {
    throw ShapeError("channel_attention: input " + shape_str(x.shape()) + " does not match attention weight " +
                     shape_str(params.weight.shape()));
  }
  const Tensor q = global_avg_pool(x);
  const Tensor a = softmax(fully_connected(q, params.weight, params.bias));
  if (attention) *attention = a;
  return channel_scale(x, a);
}

FusionPipeline::FusionPipeline(const GeneratorNet& generator, bool use_attention, std::mt19937_64& rng)
    : use_attention_(use_attention), output_size_(generator.output_size()) {
  const int top = output_size_;
  for (int m = top; m >= 2; m /= 2) {
    const int c = generator.decoder_width(m) + (m < top ? generator.encoder_width(m) : 0);
    if (c % 2 != 0) throw ConfigError("fusion: odd fused depth " + std::to_string(c) + " at size " + std::to_string(m));
    channels_[m] = c;
    if (use_attention_) {
      const auto cs = static_cast<std::size_t>(c);
      ca_[m] = CaParams{Tensor::randn(Shape{cs, cs}, rng, 0.02), Tensor(Shape{cs}, 0.0)};
    }
    if (m < top) pointwise_[m] = he_conv(static_cast<std::size_t>(c / 2), static_cast<std::size_t>(c), 1, rng);
  }
  // Strided stage from size M feeds the concatenation at M/2, whose other half
  // is F1^{M/2} of depth C(M/2)/2; the last stage keeps the full depth.
  for (int m = top; m >= 2; m /= 2) {
    const int in = channels_[m];
    const int out = m > 2 ? channels_[m / 2] / 2 : channels_[2];
    strided_[m] = he_conv(static_cast<std::size_t>(out), static_cast<std::size_t>(in), 3, rng);
    if (m == 2) descriptor_dim_ = out;
  }
}

std::vector<int> FusionPipeline::sizes() const {
  std::vector<int> out;
  for (int m = output_size_; m >= 2; m /= 2) out.push_back(m);
  return out;
}

std::map<int, Tensor> FusionPipeline::attend(const ActivationTable& acts) const {
  std::map<int, Tensor> out;
  for (int m : sizes()) {
    auto dec = acts.decoder.find(m);
    if (dec == acts.decoder.end()) throw ShapeError("fusion: missing decoder activation at size " + std::to_string(m));
    Tensor enc;
    if (m < output_size_) {
      auto it = acts.encoder.find(m);
      if (it == acts.encoder.end()) throw ShapeError("fusion: missing encoder activation at size " + std::to_string(m));
      enc = it->second;
    }
    Tensor x = fuse_pair(enc, dec->second);
    if (x.dim(1) != static_cast<std::size_t>(channels_.at(m))) {
      throw ShapeError("fusion: fused depth " + std::to_string(x.dim(1)) + " at size " + std::to_string(m) +
                       ", expected " + std::to_string(channels_.at(m)));
    }
    out[m] = use_attention_ ? channel_attention(x, ca_.at(m)) : x;
  }
  return out;
}

Tensor FusionPipeline::combine(const std::map<int, Tensor>& ca_outputs, FusionTrace* trace) const {
  Tensor running;
  for (int m : sizes()) {
    auto it = ca_outputs.find(m);
    if (it == ca_outputs.end()) throw ShapeError("fusion: missing attended map at size " + std::to_string(m));
    const Tensor& ca = it->second;
    if (ca.rank() != 4 || ca.dim(2) != static_cast<std::size_t>(m) ||
        ca.dim(1) != static_cast<std::size_t>(channels_.at(m))) {
      throw ShapeError("fusion: attended map at size " + std::to_string(m) + " has shape " + shape_str(ca.shape()) +
                       ", expected depth " + std::to_string(channels_.at(m)));
    }
    if (trace) trace->consumed_sizes.push_back(m);
    Tensor stage_input;
    if (m == output_size_) {
      stage_input = ca;
    } else {
      const Tensor f1 = conv2d(ca, pointwise_.at(m), Tensor{}, 1, 0);
      if (running.dim(1) != f1.dim(1) || running.dim(2) != f1.dim(2)) {
        throw ShapeError("fusion: depth mismatch at size " + std::to_string(m) + ": strided " +
                         shape_str(running.shape()) + " vs 1x1 " + shape_str(f1.shape()));
      }
      stage_input = channel_concat(running, f1);
    }
    running = conv2d(stage_input, strided_.at(m), Tensor{}, 2, 1);
  }
  return reshape(running, Shape{running.dim(0), static_cast<std::size_t>(descriptor_dim_)});
}

Tensor FusionPipeline::forward(const ActivationTable& acts, FusionTrace* trace) const {
  return combine(attend(acts), trace);
}

NamedTensors FusionPipeline::parameters() const {
  NamedTensors out;
  for (int m : sizes()) {
    const std::string s = std::to_string(m);
    if (auto it = ca_.find(m); it != ca_.end()) {
      out.emplace_back("fusion.ca" + s + ".weight", it->second.weight);
      out.emplace_back("fusion.ca" + s + ".bias", it->second.bias);
    }
    if (auto it = pointwise_.find(m); it != pointwise_.end()) out.emplace_back("fusion.pw" + s + ".weight", it->second);
    out.emplace_back("fusion.strided" + s + ".weight", strided_.at(m));
  }
  return out;
}

std::vector<Tensor> FusionPipeline::parameter_list() const {
  std::vector<Tensor> out;
  for (auto& [name, t] : parameters()) out.push_back(t);
  return out;
}

void FusionPipeline::set_trainable(bool trainable) {
  for (auto& t : parameter_list()) t.set_requires_grad(trainable);
}

Tensor extract_descriptor(const GeneratorNet& generator, const FusionPipeline& fusion, const Tensor& patches,
                          FusionTrace* trace) {
  ActivationTable acts;
  {
    NoGradGuard no_grad;
    acts = generator.generate(patches).activations;
  }
  return fusion.forward(acts, trace);
}

void write_fusion_blob(ByteWriter& w, const FusionPipeline& fusion, const GeneratorConfig& generator) {
  w.raw("FUSD");
  w.u32(kFusionVersion);
  w.u32(static_cast<std::uint32_t>(generator.patch_size));
  w.u32(static_cast<std::uint32_t>(generator.base_width));
  w.u32(static_cast<std::uint32_t>(generator.max_width));
  w.u8(fusion.use_attention() ? 1 : 0);
  w.u32(static_cast<std::uint32_t>(fusion.descriptor_dim()));
  write_tensors(w, fusion.parameters());
}

FusionPipeline read_fusion_blob(ByteReader& r, const GeneratorNet& generator) {
  r.expect_magic("FUSD");
  const auto version = r.u32();
  if (version != kFusionVersion) r.fail("unsupported fusion checkpoint version " + std::to_string(version));
  GeneratorConfig g;
  g.patch_size = static_cast<int>(r.u32());
  g.base_width = static_cast<int>(r.u32());
  g.max_width = static_cast<int>(r.u32());
  const auto& actual = generator.config();
  if (g.patch_size != actual.patch_size || g.base_width != actual.base_width || g.max_width != actual.max_width) {
    r.fail("fusion parameters were built for a different generator geometry");
  }
  const bool use_attention = r.u8() != 0;
  const auto dim = static_cast<int>(r.u32());
  std::mt19937_64 rng(0);
  FusionPipeline fusion(generator, use_attention, rng);
  if (fusion.descriptor_dim() != dim) r.fail("descriptor dimension mismatch");
  const NamedTensors stored = read_tensors(r);
  NamedTensors targets = fusion.parameters();
  assign_tensors(stored, targets, r.source());
  fusion.set_trainable(false);
  return fusion;
}

void save_fusion_checkpoint(const FusionPipeline& fusion, const GeneratorConfig& generator,
                            const std::filesystem::path& path) {
  ByteWriter w;
  write_fusion_blob(w, fusion, generator);
  write_file_bytes(path, w.bytes());
}

FusionPipeline load_fusion_checkpoint(const std::filesystem::path& path, const GeneratorNet& generator) {
  const auto bytes = read_file_bytes(path);
  ByteReader r(bytes, path.string());
  return read_fusion_blob(r, generator);
}

}  // namespace texhash
