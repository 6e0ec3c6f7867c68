#include "texhash/hashing.hpp"

#include <Eigen/Cholesky>
#include <Eigen/LU>
#include <algorithm>
#include <cmath>
#include <numeric>

#include "texhash/errors.hpp"
#include "texhash/ops.hpp"
#include "texhash/seed.hpp"

namespace texhash {

namespace {

constexpr std::uint32_t kHashVersion = 1;

double softplus_scalar(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

double sign_of(double v) { return v >= 0.0 ? 1.0 : -1.0; }

Tensor matrix_to_tensor(const Eigen::MatrixXd& m) {
  std::vector<double> v(static_cast<std::size_t>(m.size()));
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) v[static_cast<std::size_t>(r * m.cols() + c)] = m(r, c);
  return Tensor(Shape{static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())}, std::move(v));
}

Eigen::MatrixXd tensor_to_matrix(const Tensor& t) {
  if (t.rank() != 2) throw ShapeError("expected a rank-2 tensor, got " + shape_str(t.shape()));
  Eigen::MatrixXd m(static_cast<Eigen::Index>(t.dim(0)), static_cast<Eigen::Index>(t.dim(1)));
  const auto d = t.data();
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = d[static_cast<std::size_t>(r * m.cols() + c)];
  return m;
}

Tensor descriptors_for_images(const GeneratorNet& generator, const FusionPipeline& fusion,
                              const std::vector<Image>& images, int batch_size) {
  NoGradGuard no_grad;
  const std::size_t n = images.size();
  const auto dim = static_cast<std::size_t>(fusion.descriptor_dim());
  std::vector<double> out;
  out.reserve(n * dim);
  for (std::size_t start = 0; start < n; start += static_cast<std::size_t>(batch_size)) {
    const std::size_t end = std::min(n, start + static_cast<std::size_t>(batch_size));
    const Tensor x = images_to_tensor(std::span<const Image>(images.data() + start, end - start));
    const Tensor d = extract_descriptor(generator, fusion, x);
    out.insert(out.end(), d.data().begin(), d.data().end());
  }
  return Tensor(Shape{n, dim}, std::move(out));
}

// Round-robin over per-class shuffled queues so every batch carries as many
// classes as it can.
std::vector<std::vector<std::size_t>> balanced_batches(const std::vector<int>& labels, int num_classes,
                                                        int batch_size, std::mt19937_64& rng) {
  std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(num_classes));
  for (std::size_t i = 0; i < labels.size(); ++i) by_class[static_cast<std::size_t>(labels[i])].push_back(i);
  for (auto& q : by_class) std::shuffle(q.begin(), q.end(), rng);
  std::vector<std::size_t> order;
  order.reserve(labels.size());
  std::vector<std::size_t> cursor(by_class.size(), 0);
  std::vector<std::size_t> classes(by_class.size());
  std::iota(classes.begin(), classes.end(), 0);
  while (order.size() < labels.size()) {
    std::shuffle(classes.begin(), classes.end(), rng);
    for (std::size_t c : classes) {
      if (cursor[c] < by_class[c].size()) order.push_back(by_class[c][cursor[c]++]);
    }
  }
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t s = 0; s < order.size(); s += static_cast<std::size_t>(batch_size)) {
    const std::size_t e = std::min(order.size(), s + static_cast<std::size_t>(batch_size));
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(s), order.begin() + static_cast<std::ptrdiff_t>(e));
  }
  // A trailing singleton has no pairs; fold it into the previous batch.
  if (batches.size() > 1 && batches.back().size() < 2) {
    batches[batches.size() - 2].push_back(batches.back().front());
    batches.pop_back();
  }
  return batches;
}

}  // namespace

int hamming_from_inner(int k, int inner) {
  if (k < 0 || inner > k || inner < -k || (k - inner) % 2 != 0) {
    throw std::invalid_argument("hamming_from_inner: inner product " + std::to_string(inner) +
                                " impossible for " + std::to_string(k) + "-bit codes");
  }
  return (k - inner) / 2;
}

double pairwise_loss(double theta, bool similar) { return softplus_scalar(theta) - (similar ? theta : 0.0); }

double pairwise_loss(std::span<const double> u_i, std::span<const double> u_j, bool similar) {
  if (u_i.size() != u_j.size()) throw ShapeError("pairwise_loss: code lengths differ");
  double dot = 0.0;
  for (std::size_t b = 0; b < u_i.size(); ++b) dot += u_i[b] * u_j[b];
  return pairwise_loss(0.5 * dot, similar);
}

Tensor pairwise_nll(const Tensor& u, const std::vector<int>& labels) {
  if (u.rank() != 2 || u.dim(0) != labels.size()) {
    throw ShapeError("pairwise_nll: codes " + shape_str(u.shape()) + " vs " + std::to_string(labels.size()) +
                     " labels");
  }
  const std::size_t n = labels.size();
  if (n < 2) throw ShapeError("pairwise_nll: need at least two samples");
  std::vector<double> upper(n * n, 0.0), sim(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      upper[i * n + j] = 1.0;
      sim[i * n + j] = labels[i] == labels[j] ? 1.0 : 0.0;
    }
  const Tensor mask(Shape{n, n}, std::move(upper));
  const Tensor s(Shape{n, n}, std::move(sim));
  const Tensor theta = scale(matmul(u, transpose(u)), 0.5);
  const Tensor per_pair = mul(mask, sub(softplus(theta), mul(s, theta)));
  return scale(sum(per_pair), 2.0 / static_cast<double>(n * (n - 1)));
}

Tensor hash_network_loss(const Tensor& u, const std::vector<int>& labels, const Tensor& codes, double mu) {
  if (codes.shape() != u.shape()) {
    throw ShapeError("hash_network_loss: codes " + shape_str(codes.shape()) + " vs outputs " + shape_str(u.shape()));
  }
  const double n = static_cast<double>(u.dim(0));
  const Tensor fit = scale(sum(square(sub(codes, u))), mu / n);
  // (n - 1) * mean over pairs = sum over ordered pairs / n, matching the
  // per-sample normalisation of the fit term.
  return add(scale(pairwise_nll(u, labels), n - 1.0), fit);
}

Eigen::MatrixXd one_hot(const std::vector<int>& labels, int num_classes) {
  Eigen::MatrixXd y = Eigen::MatrixXd::Zero(num_classes, static_cast<Eigen::Index>(labels.size()));
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= num_classes) {
      throw DataError("one_hot: label " + std::to_string(labels[i]) + " outside [0," + std::to_string(num_classes) + ")");
    }
    y(labels[i], static_cast<Eigen::Index>(i)) = 1.0;
  }
  return y;
}

double classification_loss(const Eigen::MatrixXd& B, const Eigen::MatrixXd& W, const Eigen::MatrixXd& Y,
                           double lambda) {
  const double n = static_cast<double>(B.cols());
  return (Y - W.transpose() * B).squaredNorm() / n + lambda * W.squaredNorm();
}

Eigen::MatrixXd solve_classifier(const Eigen::MatrixXd& B, const Eigen::MatrixXd& Y, double lambda) {
  if (B.cols() != Y.cols()) throw ShapeError("solve_classifier: B and Y disagree on sample count");
  if (lambda < 0.0) throw ConfigError("solve_classifier: lambda must be >= 0");
  const double n = static_cast<double>(B.cols());
  Eigen::MatrixXd a = B * B.transpose();
  a.diagonal().array() += lambda * n;
  const Eigen::MatrixXd rhs = B * Y.transpose();
  if (lambda == 0.0) {
    Eigen::FullPivLU<Eigen::MatrixXd> lu(a);
    if (!lu.isInvertible()) {
      throw NumericError("solve_classifier: B B^T is singular (rank " + std::to_string(lu.rank()) + " of " +
                         std::to_string(a.rows()) + ") and lambda = 0");
    }
    return lu.solve(rhs);
  }
  Eigen::LLT<Eigen::MatrixXd> llt(a);
  if (llt.info() != Eigen::Success) throw NumericError("solve_classifier: factorisation failed");
  return llt.solve(rhs);
}

double code_objective(const Eigen::MatrixXd& B, const Eigen::MatrixXd& U, const Eigen::MatrixXd& W,
                      const Eigen::MatrixXd& Y, double nu, double mu) {
  const double n = static_cast<double>(B.cols());
  return nu * (Y - W.transpose() * B).squaredNorm() / n + mu * (B - U).squaredNorm() / n;
}

Eigen::MatrixXd update_codes(const Eigen::MatrixXd& B, const Eigen::MatrixXd& U, const Eigen::MatrixXd& W,
                             const Eigen::MatrixXd& Y, double nu, double mu, int max_sweeps, int* sweeps_run) {
  if (B.rows() != U.rows() || B.cols() != U.cols() || W.rows() != B.rows() || W.cols() != Y.rows() ||
      Y.cols() != B.cols()) {
    throw ShapeError("update_codes: inconsistent B/U/W/Y shapes");
  }
  Eigen::MatrixXd out = B;
  // Residual R = Y - W^T B, kept current across row replacements.
  Eigen::MatrixXd r = Y - W.transpose() * out;
  int sweeps = 0;
  for (; sweeps < max_sweeps; ++sweeps) {
    bool changed = false;
    for (Eigen::Index z = 0; z < out.rows(); ++z) {
      const Eigen::RowVectorXd wz = W.row(z);
      r.noalias() += wz.transpose() * out.row(z);  // residual without row z
      // With ||b_z||^2 = N fixed, the row objective is linear in b_z.
      const Eigen::RowVectorXd drive = nu * (wz * r) + mu * U.row(z);
      for (Eigen::Index i = 0; i < out.cols(); ++i) {
        const double b = sign_of(drive(i));
        if (b != out(z, i)) {
          out(z, i) = b;
          changed = true;
        }
      }
      r.noalias() -= wz.transpose() * out.row(z);
    }
    if (!changed) {
      ++sweeps;
      break;
    }
  }
  if (sweeps_run) *sweeps_run = sweeps;
  return out;
}

SignCode sign_code(std::span<const double> u) {
  SignCode out(u.size());
  for (std::size_t i = 0; i < u.size(); ++i) out[i] = u[i] >= 0.0 ? 1 : -1;
  return out;
}

Tensor HashModel::project(const Tensor& descriptors) const {
  if (descriptors.rank() != 2 || descriptors.dim(1) != static_cast<std::size_t>(descriptor_dim)) {
    throw ShapeError("hash projection expects [n," + std::to_string(descriptor_dim) + "], got " +
                     shape_str(descriptors.shape()));
  }
  return fully_connected(descriptors, proj_weight, proj_bias);
}

std::vector<SignCode> HashModel::encode(const Tensor& descriptors) const {
  NoGradGuard no_grad;
  const Tensor u = project(descriptors);
  std::vector<SignCode> out;
  const auto k = static_cast<std::size_t>(bits);
  for (std::size_t i = 0; i < u.dim(0); ++i) out.push_back(sign_code(u.data().subspan(i * k, k)));
  return out;
}

Tensor compute_descriptors(const GeneratorNet& generator, const FusionPipeline& fusion,
                           const std::vector<LabeledPatch>& patches, int batch_size) {
  std::vector<Image> images;
  images.reserve(patches.size());
  for (const auto& p : patches) images.push_back(p.image);
  return descriptors_for_images(generator, fusion, images, batch_size);
}

HashTrainResult train_hash(const GeneratorNet& generator, const std::vector<LabeledPatch>& train, int num_classes,
                           const HashConfig& config) {
  if (config.bits < 1) throw ConfigError("train_hash: bits must be positive");
  if (config.batch_size < 2) throw ConfigError("train_hash: batch size must be >= 2");
  if (config.epochs < 0) throw ConfigError("train_hash: epochs must be >= 0");
  if (train.size() < 2) throw DataError("train_hash: need at least two training patches");
  const int K = generator.patch_size();

  std::vector<Image> images;
  std::vector<int> labels;
  for (const auto& p : train) {
    if (p.image.width != K || p.image.height != K) {
      throw DataError("train_hash: patch of size " + std::to_string(p.image.width) + " for generator K=" +
                      std::to_string(K));
    }
    images.push_back(p.image);
    labels.push_back(p.label);
  }
  const std::size_t originals = images.size();

  std::mt19937_64 aug_rng(mix_seed(config.seed, 13));
  if (config.augment) {
    NoGradGuard no_grad;
    std::uniform_int_distribution<int> offset(0, K);
    for (std::size_t s = 0; s < originals; s += 16) {
      const std::size_t e = std::min(originals, s + 16);
      const Tensor x = images_to_tensor(std::span<const Image>(images.data() + s, e - s));
      const Tensor expanded = generator.generate(x).image;
      for (std::size_t i = 0; i < e - s; ++i) {
        const Image big = tensor_to_image(expanded, i);
        const int ox = offset(aug_rng), oy = offset(aug_rng);
        images.push_back(big.crop(ox, oy, K, K));
        labels.push_back(labels[s + i]);
      }
    }
  }
  const std::size_t n = images.size();

  std::mt19937_64 fusion_rng(mix_seed(config.seed, 11));
  FusionPipeline fusion(generator, config.use_attention, fusion_rng);
  const int d = fusion.descriptor_dim();
  const auto k = static_cast<std::size_t>(config.bits);

  // Data-dependent init: each bit's initial output is centred and scaled to
  // unit variance over the training descriptors, so the input-independent
  // part of the descriptor cannot dominate the codes.
  const Tensor d0 = descriptors_for_images(generator, fusion, images, 32);
  std::mt19937_64 proj_rng(mix_seed(config.seed, 12));
  HashModel model;
  model.bits = config.bits;
  model.descriptor_dim = d;
  model.num_classes = num_classes;
  model.nu = config.nu;
  model.lambda = config.lambda;
  model.mu = config.mu;
  model.proj_weight = Tensor::randn(Shape{k, static_cast<std::size_t>(d)}, proj_rng, 1.0 / std::sqrt(d));
  model.proj_bias = Tensor(Shape{k}, 0.0);
  {
    const Eigen::MatrixXd raw = tensor_to_matrix(d0) * tensor_to_matrix(model.proj_weight).transpose();  // n x k
    auto w = model.proj_weight.data_mut();
    auto bias = model.proj_bias.data_mut();
    for (std::size_t z = 0; z < k; ++z) {
      const auto col = raw.col(static_cast<Eigen::Index>(z));
      const double m = col.mean();
      const double sd = std::sqrt((col.array() - m).square().mean());
      const double inv = sd > 1e-12 ? 1.0 / sd : 1.0;
      for (int c = 0; c < d; ++c) w[z * static_cast<std::size_t>(d) + static_cast<std::size_t>(c)] *= inv;
      bias[z] = -m * inv;
    }
  }

  Eigen::MatrixXd U;
  {
    NoGradGuard no_grad;
    U = tensor_to_matrix(model.project(d0)).transpose();
  }
  Eigen::MatrixXd B = U.unaryExpr([](double v) { return sign_of(v); });
  const Eigen::MatrixXd Y = one_hot(labels, num_classes);
  Eigen::MatrixXd W = solve_classifier(B, Y, config.lambda);

  fusion.set_trainable(true);
  model.proj_weight.set_requires_grad(true);
  model.proj_bias.set_requires_grad(true);
  std::vector<Tensor> params = fusion.parameter_list();
  params.push_back(model.proj_weight);
  params.push_back(model.proj_bias);
  Adam opt(params, config.adam);

  HashTrainResult result{model, fusion, {}, static_cast<int>(originals), static_cast<int>(n - originals)};
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    double j_sum = 0.0, fit_sum = 0.0;
    std::size_t batches_seen = 0;
    for (const auto& batch : balanced_batches(labels, num_classes, config.batch_size, aug_rng)) {
      std::vector<Image> bx;
      std::vector<int> by;
      std::vector<double> codes;
      for (std::size_t i : batch) {
        bx.push_back(images[i]);
        by.push_back(labels[i]);
        for (std::size_t b = 0; b < k; ++b) codes.push_back(B(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(i)));
      }
      const Tensor x = images_to_tensor(bx);
      const Tensor u = model.project(extract_descriptor(generator, fusion, x));
      const Tensor code_t(Shape{batch.size(), k}, std::move(codes));
      const Tensor loss = hash_network_loss(u, by, code_t, config.mu);
      if (!std::isfinite(loss.item())) {
        throw NumericError("hash training diverged in epoch " + std::to_string(epoch) + " after " +
                           std::to_string(batches_seen) + " batches");
      }
      const double j = pairwise_nll(u.detach(), by).item();
      j_sum += j;
      fit_sum += (loss.item() - (static_cast<double>(batch.size()) - 1.0) * j) / config.mu;
      loss.backward();
      opt.step();
      for (std::size_t r = 0; r < batch.size(); ++r)
        for (std::size_t b = 0; b < k; ++b)
          U(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(batch[r])) = u.data()[r * k + b];
      ++batches_seen;
    }
    W = solve_classifier(B, Y, config.lambda);
    const Eigen::MatrixXd next = update_codes(B, U, W, Y, config.nu, config.mu, config.code_sweeps);
    HashEpochRecord rec;
    rec.epoch = epoch;
    rec.bits_flipped = static_cast<int>((next.array() != B.array()).count());
    B = next;
    W = solve_classifier(B, Y, config.lambda);
    rec.pairwise = j_sum / static_cast<double>(batches_seen);
    rec.code_fit = fit_sum / static_cast<double>(batches_seen);
    rec.classification = classification_loss(B, W, Y, config.lambda);
    rec.objective = rec.pairwise + config.nu * rec.classification;
    result.history.push_back(rec);
  }

  fusion.set_trainable(false);
  model.proj_weight.set_requires_grad(false);
  model.proj_bias.set_requires_grad(false);
  model.classifier = W;
  model.codes = B;
  result.model = model;
  result.fusion = fusion;
  return result;
}

std::vector<std::uint8_t> encode_hash_model(const HashModel& model, const HashCheckpointRefs& refs) {
  ByteWriter w;
  w.raw("HSHM");
  w.u32(kHashVersion);
  w.u32(static_cast<std::uint32_t>(model.bits));
  w.u32(static_cast<std::uint32_t>(model.descriptor_dim));
  w.u32(static_cast<std::uint32_t>(model.num_classes));
  w.f64(model.nu);
  w.f64(model.lambda);
  w.f64(model.mu);
  w.str(refs.tsn_checkpoint);
  w.str(refs.fusion_checkpoint);
  NamedTensors tensors{{"hash.proj.weight", model.proj_weight}, {"hash.proj.bias", model.proj_bias}};
  if (model.classifier.size() > 0) tensors.emplace_back("hash.classifier", matrix_to_tensor(model.classifier));
  write_tensors(w, tensors);
  return w.bytes();
}

void save_hash_model(const HashModel& model, const HashCheckpointRefs& refs, const std::filesystem::path& path) {
  write_file_bytes(path, encode_hash_model(model, refs));
}

HashModel load_hash_model(const std::filesystem::path& path, HashCheckpointRefs* refs) {
  const auto bytes = read_file_bytes(path);
  ByteReader r(bytes, path.string());
  r.expect_magic("HSHM");
  const auto version = r.u32();
  if (version != kHashVersion) r.fail("unsupported hash model version " + std::to_string(version));
  HashModel m;
  m.bits = static_cast<int>(r.u32());
  m.descriptor_dim = static_cast<int>(r.u32());
  m.num_classes = static_cast<int>(r.u32());
  m.nu = r.f64();
  m.lambda = r.f64();
  m.mu = r.f64();
  HashCheckpointRefs stored;
  stored.tsn_checkpoint = r.str();
  stored.fusion_checkpoint = r.str();
  if (refs) *refs = stored;
  const auto k = static_cast<std::size_t>(m.bits);
  m.proj_weight = Tensor(Shape{k, static_cast<std::size_t>(m.descriptor_dim)});
  m.proj_bias = Tensor(Shape{k});
  NamedTensors targets{{"hash.proj.weight", m.proj_weight}, {"hash.proj.bias", m.proj_bias}};
  const NamedTensors all = read_tensors(r);
  assign_tensors(all, targets, path.string());
  for (const auto& [name, t] : all) {
    if (name == "hash.classifier") m.classifier = tensor_to_matrix(t);
  }
  return m;
}

LshHasher::LshHasher(int dim, int bits, std::uint64_t seed) : dim_(dim), bits_(bits), planes_(bits, dim) {
  if (dim < 1 || bits < 1) throw ConfigError("lsh: dim and bits must be positive");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  for (Eigen::Index r = 0; r < planes_.rows(); ++r)
    for (Eigen::Index c = 0; c < planes_.cols(); ++c) planes_(r, c) = g(rng);
}

SignCode LshHasher::encode(std::span<const double> x) const {
  if (x.size() != static_cast<std::size_t>(dim_)) {
    throw ShapeError("lsh: input has " + std::to_string(x.size()) + " entries, expected " + std::to_string(dim_));
  }
  Eigen::VectorXd v(dim_);
  for (int i = 0; i < dim_; ++i) v(i) = x[static_cast<std::size_t>(i)];
  const Eigen::VectorXd p = planes_ * v;
  return sign_code(std::span<const double>(p.data(), static_cast<std::size_t>(p.size())));
}

}  // namespace texhash
