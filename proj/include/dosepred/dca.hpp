#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "dosepred/rng.hpp"
#include "dosepred/tensor.hpp"

namespace dosepred {

/// Stage layout of the dual cross-attention block. Stage i (0-based) has
/// spatial extents base_spatial / 2^i; every stage is pooled down to the
/// coarsest stage's grid, so all stages share the token count P.
struct DcaConfig {
  int n_stages = 0;
  std::vector<int> channels;          // C_1..C_n
  std::array<int, 3> base_spatial{};  // stage-1 (H, W, D)
  int heads = 1;

  void validate() const;
  int total_channels() const;  // C_c
  std::array<int, 3> stage_spatial(int stage) const;
  std::array<int, 3> coarse_spatial() const;
  int token_count() const;       // P
  int pool_factor(int stage) const;  // 2^(n-1-stage)
};

/// Learnable parameters: per-stage embedding affines, CCA query affines plus
/// shared key/value affines, SCA norms and query/key affines with per-stage
/// value affines, output norms, and per-stage fusion affines (scale
/// initialized to zero so the whole block starts as the identity).
class DcaState {
 public:
  DcaState() = default;
  DcaState(const std::vector<int>& channels, std::uint64_t seed);

  const Tensor& param(const std::string& name) const;
  Tensor& param(const std::string& name);
  std::vector<std::pair<std::string, Tensor>>& params() { return params_; }
  const std::vector<std::pair<std::string, Tensor>>& params() const {
    return params_;
  }

  /// Re-draws every parameter uniformly; used by gradient checking so no
  /// parameter sits at an exactly-zero stationary point.
  void randomize(RandomStream& rng);

 private:
  Tensor& add(const std::string& name, Shape shape);
  std::vector<std::pair<std::string, Tensor>> params_;
};

/// Eq-level API. E holds per-stage feature volumes [C_i, H_i, W_i, D_i];
/// token sets are [P, C_i].
std::vector<Tensor> embed_patches(Tape& tape, const DcaConfig& cfg,
                                  const DcaState& state,
                                  const std::vector<Tensor>& E);
std::vector<Tensor> channel_cross_attention(Tape& tape, const DcaConfig& cfg,
                                            const DcaState& state,
                                            const std::vector<Tensor>& tokens);
std::vector<Tensor> spatial_cross_attention(Tape& tape, const DcaConfig& cfg,
                                            const DcaState& state,
                                            const std::vector<Tensor>& tokens);
/// embed -> CCA -> SCA -> per-stage norm + fusion affine -> reshape to the
/// coarse grid -> nearest upsample -> residual add onto E_i.
std::vector<Tensor> dca_forward(Tape& tape, const DcaConfig& cfg,
                                const DcaState& state,
                                const std::vector<Tensor>& E);

}  // namespace dosepred
