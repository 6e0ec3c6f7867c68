#pragma once

// Supervised hash learning on descriptors: a logistic pairwise likelihood on
// code inner products plus a ridge linear classifier on the binary codes,
// optimised by alternating (a) Adam on the projection and fusion parameters,
// (b) a closed-form classifier solve and (c) bitwise discrete code updates.
// Also the random-hyperplane LSH baseline.
//
// Matrices follow the column-per-sample convention: B, U are k x N, the
// classifier W is k x L and the one-hot label matrix Y is L x N.

#include <Eigen/Core>
#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "texhash/dataset.hpp"
#include "texhash/fusion.hpp"
#include "texhash/optim.hpp"
#include "texhash/tensor.hpp"
#include "texhash/tsn.hpp"

namespace texhash {

using SignCode = std::vector<std::int8_t>;  // entries exactly -1 or +1

// (k - inner) / 2; rejects |inner| > k and parity mismatches.
int hamming_from_inner(int k, int inner);

// -(s*theta - ln(1 + e^theta)), computed stably.
double pairwise_loss(double theta, bool similar);
// theta = <u_i, u_j> / 2.
double pairwise_loss(std::span<const double> u_i, std::span<const double> u_j, bool similar);

// Mean pairwise loss over all unordered pairs i < j of the rows of u[n,k];
// s_ij = 1 iff labels match.
Tensor pairwise_nll(const Tensor& u, const std::vector<int>& labels);

// Network objective for fixed codes, both terms per sample:
// sum_{i != j} l_ij / n + mu * mean_i ||b_i - u_i||^2.
// codes[n,k] is a constant tensor of the current binary codes.
Tensor hash_network_loss(const Tensor& u, const std::vector<int>& labels, const Tensor& codes, double mu);

Eigen::MatrixXd one_hot(const std::vector<int>& labels, int num_classes);

// ||Y - W^T B||_F^2 / N + lambda ||W||_F^2.
double classification_loss(const Eigen::MatrixXd& B, const Eigen::MatrixXd& W, const Eigen::MatrixXd& Y,
                           double lambda);

// Exact minimiser of classification_loss for fixed B:
// W = (B B^T + lambda N I)^-1 B Y^T. Throws NumericError if lambda = 0 and the
// system is singular.
Eigen::MatrixXd solve_classifier(const Eigen::MatrixXd& B, const Eigen::MatrixXd& Y, double lambda);

// Surrogate minimised by update_codes:
// nu ||Y - W^T B||^2 / N + mu ||B - U||^2 / N.
double code_objective(const Eigen::MatrixXd& B, const Eigen::MatrixXd& U, const Eigen::MatrixXd& W,
                      const Eigen::MatrixXd& Y, double nu, double mu);

// Cyclic row-wise coordinate descent: each bit row of B is replaced by its
// exact minimiser with the other rows fixed. Stops after `max_sweeps` sweeps
// or once a sweep changes nothing. sign(0) = +1.
Eigen::MatrixXd update_codes(const Eigen::MatrixXd& B, const Eigen::MatrixXd& U, const Eigen::MatrixXd& W,
                             const Eigen::MatrixXd& Y, double nu, double mu, int max_sweeps = 1,
                             int* sweeps_run = nullptr);

SignCode sign_code(std::span<const double> u);

struct HashModel {
  int bits = 0;
  int descriptor_dim = 0;
  int num_classes = 0;
  double nu = 0.1;
  double lambda = 1.0;
  double mu = 1.0;
  Tensor proj_weight;         // [k,d]
  Tensor proj_bias;           // [k]
  Eigen::MatrixXd classifier; // k x L
  Eigen::MatrixXd codes;      // k x N training codes

  Tensor project(const Tensor& descriptors) const;                // [n,d] -> [n,k]
  std::vector<SignCode> encode(const Tensor& descriptors) const;  // sign of project
};

struct HashConfig {
  int bits = 32;
  double nu = 0.1;
  double lambda = 1.0;
  double mu = 1.0;
  int epochs = 30;
  int batch_size = 32;
  AdamOptions adam{3e-3, 0.9, 0.999, 1e-8};
  std::uint64_t seed = 1;
  bool augment = true;
  bool use_attention = true;
  int code_sweeps = 1;
};

struct HashEpochRecord {
  int epoch = 0;
  double pairwise = 0.0;        // mean J over the epoch's batches
  double code_fit = 0.0;        // mean ||b - u||^2 per sample
  double classification = 0.0;  // Q after the classifier solve
  double objective = 0.0;       // J + nu Q
  int bits_flipped = 0;
};

struct HashTrainResult {
  HashModel model;
  FusionPipeline fusion;
  std::vector<HashEpochRecord> history;
  int original_samples = 0;
  int augmented_samples = 0;
};

// Stage-2 training on top of a frozen generator. With augmentation on, every
// original patch contributes one extra K x K crop of the generator's 2K x 2K
// expansion of it, carrying the same label.
HashTrainResult train_hash(const GeneratorNet& generator, const std::vector<LabeledPatch>& train,
                           int num_classes, const HashConfig& config);

// Descriptors for many patches, evaluated in batches without recording.
Tensor compute_descriptors(const GeneratorNet& generator, const FusionPipeline& fusion,
                           const std::vector<LabeledPatch>& patches, int batch_size = 32);

// Stage-2 checkpoint: magic HSHM, version, k, d, L, nu, lambda, mu, the
// generator and fusion files by relative reference, projection tensors and
// the classifier.
struct HashCheckpointRefs {
  std::string tsn_checkpoint;
  std::string fusion_checkpoint;
};
void save_hash_model(const HashModel& model, const HashCheckpointRefs& refs, const std::filesystem::path& path);
std::vector<std::uint8_t> encode_hash_model(const HashModel& model, const HashCheckpointRefs& refs);
HashModel load_hash_model(const std::filesystem::path& path, HashCheckpointRefs* refs = nullptr);

// Random-hyperplane LSH: bit i = sign(<r_i, x>), r_i standard Gaussian.
class LshHasher {
 public:
  LshHasher(int dim, int bits, std::uint64_t seed);
  SignCode encode(std::span<const double> x) const;
  int dim() const { return dim_; }
  int bits() const { return bits_; }

 private:
  int dim_;
  int bits_;
  Eigen::MatrixXd planes_;  // bits x dim
};

}  // namespace texhash
