#include "dosepred/losses.hpp"

#include <stdexcept>

namespace dosepred {

std::vector<double> DvhRelaxation::edges() const {
  validate();
  std::vector<double> e(static_cast<std::size_t>(n_bins));
  const double step = (bin_max - bin_min) / (n_bins - 1);
  for (int t = 0; t < n_bins; ++t)
    e[static_cast<std::size_t>(t)] = bin_min + step * t;
  return e;
}

void DvhRelaxation::validate() const {
  if (n_bins < 2) throw std::invalid_argument("dvh relaxation: need >= 2 bins");
  if (!(bin_max > bin_min))
    throw std::invalid_argument("dvh relaxation: edges must increase");
  if (!(steepness > 0.0))
    throw std::invalid_argument("dvh relaxation: steepness must be positive");
}

Tensor grid_to_tensor(const Grid3& g, bool requires_grad) {
  return Tensor({g.shape[0], g.shape[1], g.shape[2]}, g.v, requires_grad);
}

namespace {

double mask_sum(const Tensor& mask) {
  double s = 0.0;
  for (double v : mask.data()) s += v;
  if (s <= 0.0) throw std::invalid_argument("empty mask");
  return s;
}

}  // namespace

Tensor masked_mse(Tape& tape, const Tensor& pred, const Tensor& gt,
                  const Tensor& mask) {
  if (pred.shape() != gt.shape() || pred.shape() != mask.shape())
    throw std::invalid_argument("masked_mse: shape mismatch");
  const double inv = 1.0 / mask_sum(mask);
  Tensor diff = sub(tape, pred, gt);
  Tensor sq = mul(tape, diff, diff);
  Tensor masked = mul(tape, sq, mask);
  return scale(tape, sum(tape, masked), inv);
}

Tensor soft_dvh(Tape& tape, const Tensor& dose, const Tensor& mask,
                const DvhRelaxation& relax) {
  return soft_dvh_op(tape, dose, mask, relax.edges(), relax.steepness);
}

Tensor dvh_loss(Tape& tape, const Tensor& pred, const Tensor& gt,
                const std::vector<Tensor>& structure_masks,
                const DvhRelaxation& relax) {
  if (structure_masks.empty())
    throw std::invalid_argument("dvh_loss: no structures present");
  const double inv =
      1.0 / (static_cast<double>(structure_masks.size()) * relax.n_bins);
  Tensor total;
  for (const Tensor& m : structure_masks) {
    Tensor dg = soft_dvh(tape, gt, m, relax);
    Tensor dp = soft_dvh(tape, pred, m, relax);
    Tensor diff = sub(tape, dg, dp);
    Tensor term = sum(tape, mul(tape, diff, diff));
    total = total.defined() ? add(tape, total, term) : term;
  }
  return scale(tape, total, inv);
}

Tensor global_dvh_loss(Tape& tape, const Tensor& pred, const Tensor& gt,
                       const Tensor& possible_dose_mask,
                       const DvhRelaxation& relax) {
  Tensor dg = soft_dvh(tape, gt, possible_dose_mask, relax);
  Tensor dp = soft_dvh(tape, pred, possible_dose_mask, relax);
  Tensor diff = sub(tape, dg, dp);
  return scale(tape, sum(tape, mul(tape, diff, diff)), 1.0 / relax.n_bins);
}

Tensor combined_loss(Tape& tape, const Tensor& pred, const Tensor& gt,
                     const Tensor& possible_dose_mask, const LossWeights& w,
                     const DvhRelaxation& relax) {
  if (w.alpha < 0.0 || w.beta < 0.0)
    throw std::invalid_argument("combined_loss: weights must be >= 0");
  Tensor mse = scale(tape, masked_mse(tape, pred, gt, possible_dose_mask), w.alpha);
  Tensor dvh = scale(
      tape, global_dvh_loss(tape, pred, gt, possible_dose_mask, relax), w.beta);
  return add(tape, mse, dvh);
}

// ---- grid conveniences -----------------------------------------------------

double masked_mse(const Grid3& pred, const Grid3& gt, const Grid3& mask) {
  Tape tape;
  return masked_mse(tape, grid_to_tensor(pred), grid_to_tensor(gt),
                    grid_to_tensor(mask))
      .value();
}

std::vector<double> soft_dvh(const Grid3& dose, const Grid3& mask,
                             const DvhRelaxation& relax) {
  Tape tape;
  return soft_dvh(tape, grid_to_tensor(dose), grid_to_tensor(mask), relax).data();
}

double dvh_loss(const Grid3& pred, const Grid3& gt,
                const std::map<std::string, Grid3>& structures,
                const DvhRelaxation& relax) {
  Tape tape;
  std::vector<Tensor> masks;
  for (const auto& [name, g] : structures) masks.push_back(grid_to_tensor(g));
  return dvh_loss(tape, grid_to_tensor(pred), grid_to_tensor(gt), masks, relax)
      .value();
}

double global_dvh_loss(const Grid3& pred, const Grid3& gt, const Grid3& mask,
                       const DvhRelaxation& relax) {
  Tape tape;
  return global_dvh_loss(tape, grid_to_tensor(pred), grid_to_tensor(gt),
                         grid_to_tensor(mask), relax)
      .value();
}

}  // namespace dosepred
