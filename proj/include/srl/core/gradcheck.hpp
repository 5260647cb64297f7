#pragma once

#include <algorithm>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "srl/common.hpp"
#include "srl/core/tensor.hpp"

namespace srl::core {

struct FdOptions {
  double step = 1e-3;       // central-difference half step
  int coords = 96;          // sampled coordinates (>= 64 per contract)
  std::uint64_t seed = 17;
};

struct FdReport {
  double max_rel_err = 0;
  std::string worst_param;
  std::size_t worst_index = 0;
  double analytic = 0, numeric = 0;
  int coords_checked = 0;
};

/// Compares backward() gradients against central finite differences on a
/// random subsample of parameter coordinates and returns the worst relative
/// error. `loss_fn` must rebuild the forward pass from the current parameter
/// values and return the scalar loss; `grad_fn` must zero grads, run
/// forward+backward once, and return the loss.
template <class S>
FdReport finite_diff_check(const std::function<S()>& loss_fn,
                           const std::function<S()>& grad_fn,
                           const std::vector<Variable<S>*>& params,
                           FdOptions opt = {}) {
  grad_fn();
  std::size_t total = 0;
  for (auto* p : params) total += p->value.numel();
  if (total == 0) throw ContractError("finite_diff_check: no parameters");

  std::size_t want = std::min<std::size_t>(static_cast<std::size_t>(opt.coords), total);
  Pcg32 rng(opt.seed, 0x9d0c);
  std::vector<std::size_t> picks;
  if (want == total) {
    picks.resize(total);
    for (std::size_t i = 0; i < total; ++i) picks[i] = i;
  } else {
    std::vector<char> used(total, 0);
    while (picks.size() < want) {
      std::size_t i = rng.bounded(static_cast<std::uint32_t>(total));
      if (!used[i]) {
        used[i] = 1;
        picks.push_back(i);
      }
    }
    std::sort(picks.begin(), picks.end());
  }

  FdReport rep;
  rep.coords_checked = static_cast<int>(picks.size());
  for (std::size_t flat : picks) {
    std::size_t off = flat;
    Variable<S>* p = nullptr;
    for (auto* cand : params) {
      if (off < cand->value.numel()) {
        p = cand;
        break;
      }
      off -= cand->value.numel();
    }
    S keep = p->value.data[off];
    p->value.data[off] = keep + static_cast<S>(opt.step);
    double up = static_cast<double>(loss_fn());
    p->value.data[off] = keep - static_cast<S>(opt.step);
    double down = static_cast<double>(loss_fn());
    p->value.data[off] = keep;

    double numeric = (up - down) / (2.0 * opt.step);
    double analytic = static_cast<double>(p->grad.data[off]);
    double denom = std::max(std::abs(numeric), std::abs(analytic));
    double err = 0;
    if (denom > 1e-10) err = std::abs(numeric - analytic) / denom;
    if (err > rep.max_rel_err) {
      rep.max_rel_err = err;
      rep.worst_param = p->name;
      rep.worst_index = off;
      rep.analytic = analytic;
      rep.numeric = numeric;
    }
  }
  return rep;
}

}  // namespace srl::core
