#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dosepred/dca.hpp"
#include "dosepred/losses.hpp"
#include "dosepred/tensor.hpp"
#include "dosepred/volume.hpp"

namespace dosepred {

/// Convolutional encoder-decoder hosting the DCA block in its skip
/// connections. Strided 3x3x3 encoder, nearest-upsample decoder with skip
/// residuals, and a non-negative softplus dose head.
struct ScaffoldConfig {
  int in_channels = kInputChannels;
  std::vector<int> stage_channels{4, 8, 16};
  int heads = 2;
  bool use_dca = true;
  /// Fixed gain on the dose head's pre-activation. Decouples the dose scale
  /// (tens of Gy) from the small per-step parameter movement of Adam.
  double head_gain = 150.0;
  /// Convolution weights and biases are stored divided by this gain and
  /// multiplied back in the forward pass. Adam's per-step displacement is
  /// lr-bounded independent of gradient scale, so the gain sets how far the
  /// effective weights can travel within a short schedule.
  double weight_gain = 3.0;

  int n_stages() const { return static_cast<int>(stage_channels.size()); }
  void validate() const;
};

struct TrainConfig {
  double learning_rate = 2e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double min_learning_rate = 2e-5;
  int restart_period = 100;
  std::uint64_t seed = 42;
  int steps = 200;
  bool augment = true;
  LossWeights loss_weights;
  DvhRelaxation relaxation;
  /// "global" trains with the possible-dose-mask DVH term; "structural"
  /// substitutes the per-structure DVH loss.
  std::string dvh_mode = "global";
};

/// Cosine annealing with warm restarts; multiplier 1 keeps the period fixed.
double lr_at(int step, const TrainConfig& cfg);

struct TraceEntry {
  int step;
  double lr;
  double loss;
};

class ScaffoldNet {
 public:
  ScaffoldNet(const ScaffoldConfig& cfg, std::uint64_t seed);

  /// input: [12, H, W, D] with extents divisible by 2^(n_stages-1);
  /// returns a non-negative dose grid tensor [H, W, D].
  Tensor forward(Tape& tape, const Tensor& input) const;

  std::vector<std::pair<std::string, Tensor>>& parameters() { return params_; }
  const std::vector<std::pair<std::string, Tensor>>& parameters() const {
    return params_;
  }
  const ScaffoldConfig& config() const { return cfg_; }
  DcaState& dca_state() { return dca_; }

 private:
  Tensor add_param(const std::string& name, Shape shape);
  ScaffoldConfig cfg_;
  DcaState dca_;
  std::vector<std::pair<std::string, Tensor>> params_;
};

class AdamOptimizer {
 public:
  AdamOptimizer(std::vector<std::pair<std::string, Tensor>>& params,
                double beta1, double beta2, double eps = 1e-8);
  void step(double lr);

 private:
  std::vector<std::pair<std::string, Tensor>>* params_;
  double beta1_, beta2_, eps_;
  std::int64_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

/// Per-patient (batch size 1) steps cycling through the cohort in order,
/// with augmentation re-seeded per step. Deterministic given seed + cohort.
/// Throws on a non-finite loss, carrying the trace collected so far.
std::vector<TraceEntry> train(ScaffoldNet& net,
                              const std::vector<PreparedPatient>& cohort,
                              const TrainConfig& cfg);

struct TrainDivergence : std::runtime_error {
  explicit TrainDivergence(std::vector<TraceEntry> t)
      : std::runtime_error("training diverged: non-finite loss"),
        trace(std::move(t)) {}
  std::vector<TraceEntry> trace;
};

/// Forward pass without gradient bookkeeping, returning a dose grid.
Grid3 predict(const ScaffoldNet& net, const PreparedPatient& p);

}  // namespace dosepred
