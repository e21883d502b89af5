#include "dosepred/scaffold.hpp"

#include <cmath>
#include <stdexcept>

#include "dosepred/augment.hpp"
#include "dosepred/rng.hpp"

namespace dosepred {

void ScaffoldConfig::validate() const {
  if (stage_channels.empty())
    throw std::invalid_argument("scaffold: no stages configured");
  if (in_channels < 1)
    throw std::invalid_argument("scaffold: input channels must be positive");
  for (int c : stage_channels)
    if (c < 1) throw std::invalid_argument("scaffold: channels must be positive");
  if (use_dca) {
    for (int c : stage_channels)
      if (c % heads != 0)
        throw std::invalid_argument("scaffold: channels not divisible by heads");
  }
  if (head_gain <= 0.0)
    throw std::invalid_argument("scaffold: head gain must be positive");
  if (weight_gain <= 0.0)
    throw std::invalid_argument("scaffold: weight gain must be positive");
}

double lr_at(int step, const TrainConfig& cfg) {
  if (step < 0) throw std::invalid_argument("lr_at: negative step");
  if (cfg.restart_period < 1)
    throw std::invalid_argument("lr_at: restart period must be >= 1");
  const int t = step % cfg.restart_period;
  const double pi = 3.14159265358979323846;
  return cfg.min_learning_rate +
         0.5 * (cfg.learning_rate - cfg.min_learning_rate) *
             (1.0 + std::cos(pi * t / cfg.restart_period));
}

Tensor ScaffoldNet::add_param(const std::string& name, Shape shape) {
  // returns a shallow handle by value; a reference into params_ would dangle
  // once the vector reallocates on the next insertion
  params_.emplace_back(name, Tensor(std::move(shape), true));
  return params_.back().second;
}

ScaffoldNet::ScaffoldNet(const ScaffoldConfig& cfg, std::uint64_t seed)
    : cfg_(cfg) {
  cfg_.validate();
  RandomStream rng(seed);
  // stored values carry the 1/weight_gain factor; effective init is unchanged
  auto init_conv = [&](Tensor& w, double scale_override = 0.0) {
    const double fan_in =
        static_cast<double>(w.dim(1)) * w.dim(2) * w.dim(3) * w.dim(4);
    const double a =
        (scale_override > 0.0 ? scale_override : 1.0 / std::sqrt(fan_in)) /
        cfg_.weight_gain;
    for (double& v : w.data()) v = rng.uniform(-a, a);
  };

  const int n = cfg_.n_stages();
  for (int i = 0; i < n; ++i) {
    const int cin = i == 0 ? cfg_.in_channels : cfg_.stage_channels[static_cast<std::size_t>(i - 1)];
    const int cout = cfg_.stage_channels[static_cast<std::size_t>(i)];
    Tensor w = add_param("enc" + std::to_string(i) + ".w", {cout, cin, 3, 3, 3});
    add_param("enc" + std::to_string(i) + ".b", {cout});
    init_conv(w);
  }
  for (int i = n - 2; i >= 0; --i) {
    const int cin = cfg_.stage_channels[static_cast<std::size_t>(i + 1)];
    const int cout = cfg_.stage_channels[static_cast<std::size_t>(i)];
    Tensor w = add_param("dec" + std::to_string(i) + ".w", {cout, cin, 3, 3, 3});
    add_param("dec" + std::to_string(i) + ".b", {cout});
    init_conv(w);
  }
  {
    const int head_in = cfg_.stage_channels[0] + cfg_.in_channels;
    Tensor w = add_param("head.w", {1, head_in, 3, 3, 3});
    add_param("head.b", {1});
    init_conv(w, 0.01);
  }
  // DCA parameters come from an independent stream so the convolutional
  // weights are identical with and without the block.
  dca_ = DcaState(cfg_.stage_channels, derive_seed(seed, 1));
  if (cfg_.use_dca)
    for (auto& [name, t] : dca_.params())
      params_.emplace_back("dca." + name, t);
}

Tensor ScaffoldNet::forward(Tape& tape, const Tensor& input) const {
  if (input.ndim() != 4 || input.dim(0) != cfg_.in_channels)
    throw std::invalid_argument("scaffold forward: bad input channels");
  const int n = cfg_.n_stages();
  const int div = 1 << (n - 1);
  for (int a = 1; a <= 3; ++a)
    if (input.dim(a) % div != 0)
      throw std::invalid_argument("scaffold forward: extents not divisible");

  auto param = [&](const std::string& name) -> const Tensor& {
    for (const auto& [pn, t] : params_)
      if (pn == name) return t;
    return dca_.param(name.substr(4));  // "dca." prefix when use_dca is false
  };

  auto gained_conv = [&](const Tensor& in, const std::string& stem,
                         int stride) {
    Tensor w = scale(tape, param(stem + ".w"), cfg_.weight_gain);
    Tensor b = scale(tape, param(stem + ".b"), cfg_.weight_gain);
    return conv3d(tape, in, w, b, stride);
  };

  std::vector<Tensor> stages;
  Tensor x = input;
  for (int i = 0; i < n; ++i) {
    x = gained_conv(x, "enc" + std::to_string(i), i == 0 ? 1 : 2);
    x = tanh_op(tape, x);
    stages.push_back(x);
  }

  if (cfg_.use_dca) {
    DcaConfig dcfg;
    dcfg.n_stages = n;
    dcfg.channels = cfg_.stage_channels;
    dcfg.base_spatial = {input.dim(1), input.dim(2), input.dim(3)};
    dcfg.heads = cfg_.heads;
    stages = dca_forward(tape, dcfg, dca_, stages);
  }

  Tensor d = stages[static_cast<std::size_t>(n - 1)];
  for (int i = n - 2; i >= 0; --i) {
    Tensor up = upsample_nearest3d(tape, d, 2);
    Tensor c = gained_conv(up, "dec" + std::to_string(i), 1);
    d = add(tape, tanh_op(tape, c), stages[static_cast<std::size_t>(i)]);
  }

  Tensor head_in = concat_channels(tape, {d, input});
  Tensor z = gained_conv(head_in, "head", 1);
  Tensor dose = softplus(tape, scale(tape, z, cfg_.head_gain));
  return reshape(tape, dose, {input.dim(1), input.dim(2), input.dim(3)});
}

AdamOptimizer::AdamOptimizer(std::vector<std::pair<std::string, Tensor>>& params,
                             double beta1, double beta2, double eps)
    : params_(&params), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (auto& [name, t] : params) {
    m_.emplace_back(t.data().size(), 0.0);
    v_.emplace_back(t.data().size(), 0.0);
  }
}

void AdamOptimizer::step(double lr) {
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t p = 0; p < params_->size(); ++p) {
    Tensor& t = (*params_)[p].second;
    const auto& g = t.grad();
    auto& m = m_[p];
    auto& v = v_[p];
    for (std::size_t i = 0; i < g.size(); ++i) {
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i];
      const double mh = m[i] / bc1;
      const double vh = v[i] / bc2;
      t.data()[i] -= lr * mh / (std::sqrt(vh) + eps_);
    }
  }
}

std::vector<TraceEntry> train(ScaffoldNet& net,
                              const std::vector<PreparedPatient>& cohort,
                              const TrainConfig& cfg) {
  if (cohort.empty()) throw std::invalid_argument("train: empty cohort");
  AdamOptimizer opt(net.parameters(), cfg.beta1, cfg.beta2);
  std::vector<TraceEntry> trace;
  trace.reserve(static_cast<std::size_t>(cfg.steps));

  for (int step = 0; step < cfg.steps; ++step) {
    const std::size_t idx = static_cast<std::size_t>(step) % cohort.size();
    const PreparedPatient& base = cohort[idx];
    const PreparedPatient aug =
        cfg.augment ? augment(base, derive_seed(cfg.seed, static_cast<std::uint64_t>(step)))
                    : base;

    Tape tape;
    double loss_value = 0.0;
    try {
      Tensor input = assemble_input(aug);
      Tensor gt = grid_to_tensor(aug.dose_gt);
      Tensor mask = grid_to_tensor(aug.possible_dose_mask);
      Tensor pred = net.forward(tape, input);
      Tensor loss;
      if (cfg.dvh_mode == "structural") {
        std::vector<Tensor> smasks;
        for (const auto& [name, g] : aug.structures) {
          double s = 0.0;
          for (double v : g.v) s += v;
          // augmentation can crop a structure off the grid entirely
          if (s > 0.0) smasks.push_back(grid_to_tensor(g));
        }
        Tensor mse = scale(tape, masked_mse(tape, pred, gt, mask),
                           cfg.loss_weights.alpha);
        loss = smasks.empty()
                   ? mse
                   : add(tape, mse,
                         scale(tape,
                               dvh_loss(tape, pred, gt, smasks, cfg.relaxation),
                               cfg.loss_weights.beta));
      } else {
        loss = combined_loss(tape, pred, gt, mask, cfg.loss_weights,
                             cfg.relaxation);
      }
      loss_value = loss.value();
      trace.push_back({step, lr_at(step, cfg), loss_value});
      if (!std::isfinite(loss_value)) throw TrainDivergence(trace);

      for (auto& [name, t] : net.parameters()) t.zero_grad();
      tape.backward(loss);
    } catch (const TrainDivergence&) {
      throw;
    } catch (const std::runtime_error&) {
      throw TrainDivergence(trace);
    }
    opt.step(lr_at(step, cfg));
    tape.clear();
  }
  return trace;
}

Grid3 predict(const ScaffoldNet& net, const PreparedPatient& p) {
  Tape tape;
  Tensor pred = net.forward(tape, assemble_input(p));
  Grid3 out({p.shape[0], p.shape[1], p.shape[2]});
  out.v = pred.data();
  return out;
}

}  // namespace dosepred
