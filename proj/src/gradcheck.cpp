#include "dosepred/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "dosepred/rng.hpp"

namespace dosepred {

double fd_rel_err(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-6});
  return std::abs(analytic - numeric) / denom;
}

GradCheckResult gradcheck_params(
    std::vector<std::pair<std::string, Tensor>>& params,
    const std::function<Tensor(Tape&)>& loss_fn, int samples, double step,
    double tolerance, std::uint64_t seed, bool corrupt_analytic) {
  // one backward pass gives every analytic derivative
  for (auto& [name, t] : params) t.zero_grad();
  {
    Tape tape;
    Tensor loss = loss_fn(tape);
    tape.backward(loss);
  }

  std::int64_t total = 0;
  for (const auto& [name, t] : params) total += t.size();

  RandomStream rng(seed);
  GradCheckResult res;
  for (int s = 0; s < samples; ++s) {
    std::int64_t flat = static_cast<std::int64_t>(
        rng.next_below(static_cast<std::uint64_t>(total)));
    std::size_t pi = 0;
    while (flat >= params[pi].second.size()) {
      flat -= params[pi].second.size();
      ++pi;
    }
    Tensor& t = params[pi].second;
    const std::size_t idx = static_cast<std::size_t>(flat);
    double analytic = t.grad()[idx];
    if (corrupt_analytic) analytic = analytic * 1.5 + 1.0;

    const double saved = t.data()[idx];
    t.data()[idx] = saved + step;
    double f_plus;
    {
      Tape tape;
      f_plus = loss_fn(tape).value();
    }
    t.data()[idx] = saved - step;
    double f_minus;
    {
      Tape tape;
      f_minus = loss_fn(tape).value();
    }
    t.data()[idx] = saved;

    const double numeric = (f_plus - f_minus) / (2.0 * step);
    const double err = fd_rel_err(analytic, numeric);
    ++res.checked;
    if (err < tolerance) ++res.passed;
    if (err > res.max_rel_err) {
      res.max_rel_err = err;
      res.worst_param = params[pi].first;
    }
  }
  return res;
}

}  // namespace dosepred
