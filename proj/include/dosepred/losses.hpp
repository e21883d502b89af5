#pragma once

#include <map>
#include <string>
#include <vector>

#include "dosepred/tensor.hpp"
#include "dosepred/volume.hpp"

namespace dosepred {

/// Sigmoid relaxation of the counting DVH: bin value t is the masked mean of
/// sigmoid(steepness * (dose - edge_t)).
struct DvhRelaxation {
  int n_bins = 80;
  double bin_min = 0.5;   // Gy, first edge
  double bin_max = 79.5;  // Gy, last edge
  double steepness = 4.0; // Gy^-1

  std::vector<double> edges() const;
  void validate() const;
};

struct LossWeights {
  double alpha = 10.0;  // masked MSE
  double beta = 10.0;   // global DVH
};

// Differentiable forms; gt and masks are constants, gradient flows to pred.
Tensor masked_mse(Tape& tape, const Tensor& pred, const Tensor& gt,
                  const Tensor& mask);
Tensor soft_dvh(Tape& tape, const Tensor& dose, const Tensor& mask,
                const DvhRelaxation& relax);
Tensor dvh_loss(Tape& tape, const Tensor& pred, const Tensor& gt,
                const std::vector<Tensor>& structure_masks,
                const DvhRelaxation& relax);
Tensor global_dvh_loss(Tape& tape, const Tensor& pred, const Tensor& gt,
                       const Tensor& possible_dose_mask,
                       const DvhRelaxation& relax);
Tensor combined_loss(Tape& tape, const Tensor& pred, const Tensor& gt,
                     const Tensor& possible_dose_mask, const LossWeights& w,
                     const DvhRelaxation& relax);

// Grid conveniences (forward value only).
double masked_mse(const Grid3& pred, const Grid3& gt, const Grid3& mask);
std::vector<double> soft_dvh(const Grid3& dose, const Grid3& mask,
                             const DvhRelaxation& relax);
double dvh_loss(const Grid3& pred, const Grid3& gt,
                const std::map<std::string, Grid3>& structures,
                const DvhRelaxation& relax);
double global_dvh_loss(const Grid3& pred, const Grid3& gt, const Grid3& mask,
                       const DvhRelaxation& relax);

Tensor grid_to_tensor(const Grid3& g, bool requires_grad = false);

}  // namespace dosepred
