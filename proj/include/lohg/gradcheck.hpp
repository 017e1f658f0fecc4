#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "lohg/rng.hpp"
#include "lohg/tensor.hpp"

namespace lohg {

/// Central-difference gradient verification.
///
/// Per-element error is |analytic - numeric| / max(|analytic|, |numeric|, floor)
/// where floor = max(64 * eps(T) * max(1,|f|) / h, 1e-6 * ||grad||_inf). The
/// floor turns the comparison into a scaled absolute one for elements that are
/// negligible next to the dominant gradient, so finite-difference rounding
/// noise on true zeros does not register as relative error.
template <typename T>
struct GradcheckReport {
  double max_rel_err = 0.0;
  int64_t elements_checked = 0;
  std::string worst;  // "input 2 flat 17: analytic=..., numeric=..."

  bool passes(double tol) const { return max_rel_err <= tol; }
};

struct GradcheckOptions {
  double step = 1e-4;            // central-difference step h
  int64_t max_per_input = -1;    // -1 checks every element, else samples this many
  uint64_t sample_seed = 0x1dea; // used only when sampling
};

/// `fn` must map the given leaf inputs to a scalar. Inputs are deep-copied; the
/// analytic pass runs `fn` once under a fresh tape, the numeric pass re-runs it
/// with single elements displaced by +-h and no tape. Pointwise functions with
/// kinks (relu at 0) need inputs placed away from the kink by more than h.
template <typename T>
GradcheckReport<T> gradcheck(const std::function<Tensor<T>(std::vector<Tensor<T>>&)>& fn,
                             const std::vector<Tensor<T>>& inputs,
                             const GradcheckOptions& opt = {}) {
  std::vector<Tensor<T>> leaves;
  leaves.reserve(inputs.size());
  for (const auto& in : inputs) leaves.push_back(in.detached_copy().set_requires_grad());

  Tape<T> tape;
  double f0 = 0.0;
  {
    TapeScope<T> scope(tape);
    Tensor<T> y = fn(leaves);
    if (y.numel() != 1) throw ContractError("gradcheck: function must return a scalar");
    f0 = static_cast<double>(y.item());
    tape.backward(y);
  }
  std::vector<std::vector<double>> analytic(leaves.size());
  for (size_t i = 0; i < leaves.size(); ++i) {
    analytic[i].assign(static_cast<size_t>(leaves[i].numel()), 0.0);
    auto g = leaves[i].grad();
    for (size_t j = 0; j < g.size(); ++j) analytic[i][j] = static_cast<double>(g[j]);
  }

  const double h = opt.step;
  auto eval_displaced = [&](size_t which, int64_t flat, double delta) {
    std::vector<Tensor<T>> probe;
    probe.reserve(leaves.size());
    for (size_t i = 0; i < leaves.size(); ++i) {
      Tensor<T> c = leaves[i].detached_copy();
      if (i == which) {
        auto d = c.mutable_data();
        d[static_cast<size_t>(flat)] = static_cast<T>(static_cast<double>(d[static_cast<size_t>(flat)]) + delta);
      }
      probe.push_back(c);
    }
    return static_cast<double>(fn(probe).item());
  };

  // element lists, either exhaustive or sampled without replacement
  Rng rng(opt.sample_seed);
  std::vector<std::vector<int64_t>> picks(leaves.size());
  for (size_t i = 0; i < leaves.size(); ++i) {
    int64_t n = leaves[i].numel();
    if (opt.max_per_input < 0 || opt.max_per_input >= n) {
      picks[i].resize(static_cast<size_t>(n));
      for (int64_t j = 0; j < n; ++j) picks[i][static_cast<size_t>(j)] = j;
    } else {
      std::vector<int64_t> all(static_cast<size_t>(n));
      for (int64_t j = 0; j < n; ++j) all[static_cast<size_t>(j)] = j;
      for (int64_t j = 0; j < opt.max_per_input; ++j) {
        int64_t pick = rng.uniform_int(j, n - 1);
        std::swap(all[static_cast<size_t>(j)], all[static_cast<size_t>(pick)]);
      }
      picks[i].assign(all.begin(), all.begin() + opt.max_per_input);
    }
  }

  std::vector<std::pair<size_t, int64_t>> coords;
  std::vector<double> numeric_at;
  for (size_t i = 0; i < picks.size(); ++i) {
    for (int64_t flat : picks[i]) {
      double fp = eval_displaced(i, flat, h);
      double fm = eval_displaced(i, flat, -h);
      coords.emplace_back(i, flat);
      numeric_at.push_back((fp - fm) / (2.0 * h));
    }
  }

  double gmax = 0.0;
  for (size_t k = 0; k < coords.size(); ++k) {
    double a = analytic[coords[k].first][static_cast<size_t>(coords[k].second)];
    gmax = std::max(gmax, std::max(std::fabs(a), std::fabs(numeric_at[k])));
  }
  const double eps = static_cast<double>(std::numeric_limits<T>::epsilon());
  const double floor = std::max(64.0 * eps * std::max(1.0, std::fabs(f0)) / h, 1e-6 * gmax);

  GradcheckReport<T> report;
  for (size_t k = 0; k < coords.size(); ++k) {
    double a = analytic[coords[k].first][static_cast<size_t>(coords[k].second)];
    double n = numeric_at[k];
    // Both sides beneath the floor are indistinguishable from zero at probe
    // precision (architecturally dead parameters land here).
    if (std::max(std::fabs(a), std::fabs(n)) <= floor) continue;
    double rel = std::fabs(a - n) / std::max({std::fabs(a), std::fabs(n), floor});
    if (rel > report.max_rel_err) {
      report.max_rel_err = rel;
      std::ostringstream os;
      os << "input " << coords[k].first << " flat " << coords[k].second << ": analytic=" << a
         << ", numeric=" << n;
      report.worst = os.str();
    }
  }
  report.elements_checked = static_cast<int64_t>(coords.size());
  return report;
}

struct FdParamReport {
  double max_rel_err = 0.0;
  int64_t elements_checked = 0;
  std::string worst;

  bool passes(double tol) const { return max_rel_err <= tol; }
};

/// Finite-difference check for module parameters, displacing them in place.
/// `forward` must rebuild its scalar from the tensors' current values on each
/// call; `leaves` are the tensors to differentiate against (module parameters
/// and/or inputs; they share storage with whatever `forward` reads). The error
/// floor matches gradcheck above.
template <typename T>
FdParamReport fd_check_params(const std::function<Tensor<T>()>& forward,
                              std::vector<Tensor<T>> leaves, double h = 1e-4,
                              int64_t max_per_tensor = -1, uint64_t seed = 0x51ed) {
  for (auto& p : leaves) {
    p.set_requires_grad(true);
    p.zero_grad();
  }
  Tape<T> tape;
  double f0 = 0.0;
  {
    TapeScope<T> scope(tape);
    Tensor<T> y = forward();
    f0 = static_cast<double>(y.item());
    tape.backward(y);
  }
  std::vector<std::vector<double>> analytic(leaves.size());
  for (size_t i = 0; i < leaves.size(); ++i) {
    analytic[i].assign(static_cast<size_t>(leaves[i].numel()), 0.0);
    auto g = leaves[i].grad();
    for (size_t j = 0; j < g.size(); ++j) analytic[i][j] = static_cast<double>(g[j]);
  }

  Rng rng(seed);
  std::vector<std::pair<size_t, int64_t>> coords;
  for (size_t i = 0; i < leaves.size(); ++i) {
    int64_t n = leaves[i].numel();
    if (max_per_tensor < 0 || max_per_tensor >= n) {
      for (int64_t j = 0; j < n; ++j) coords.emplace_back(i, j);
    } else {
      std::vector<int64_t> all(static_cast<size_t>(n));
      for (int64_t j = 0; j < n; ++j) all[static_cast<size_t>(j)] = j;
      for (int64_t j = 0; j < max_per_tensor; ++j) {
        std::swap(all[static_cast<size_t>(j)], all[static_cast<size_t>(rng.uniform_int(j, n - 1))]);
      }
      for (int64_t j = 0; j < max_per_tensor; ++j)
        coords.emplace_back(i, all[static_cast<size_t>(j)]);
    }
  }

  std::vector<double> numeric(coords.size());
  for (size_t k = 0; k < coords.size(); ++k) {
    auto [i, flat] = coords[k];
    auto d = leaves[i].mutable_data();
    const T orig = d[static_cast<size_t>(flat)];
    d[static_cast<size_t>(flat)] = static_cast<T>(static_cast<double>(orig) + h);
    double fp = static_cast<double>(forward().item());
    d[static_cast<size_t>(flat)] = static_cast<T>(static_cast<double>(orig) - h);
    double fm = static_cast<double>(forward().item());
    d[static_cast<size_t>(flat)] = orig;
    numeric[k] = (fp - fm) / (2.0 * h);
  }

  double gmax = 0.0;
  for (size_t k = 0; k < coords.size(); ++k) {
    auto [i, flat] = coords[k];
    gmax =
        std::max({gmax, std::fabs(analytic[i][static_cast<size_t>(flat)]), std::fabs(numeric[k])});
  }
  const double eps = static_cast<double>(std::numeric_limits<T>::epsilon());
  const double floor = std::max(64.0 * eps * std::max(1.0, std::fabs(f0)) / h, 1e-6 * gmax);

  FdParamReport report;
  report.elements_checked = static_cast<int64_t>(coords.size());
  for (size_t k = 0; k < coords.size(); ++k) {
    auto [i, flat] = coords[k];
    double a = analytic[i][static_cast<size_t>(flat)];
    double n = numeric[k];
    // Both sides beneath the floor are indistinguishable from zero at probe
    // precision (architecturally dead parameters land here).
    if (std::max(std::fabs(a), std::fabs(n)) <= floor) continue;
    double rel = std::fabs(a - n) / std::max({std::fabs(a), std::fabs(n), floor});
    if (rel > report.max_rel_err) {
      report.max_rel_err = rel;
      std::ostringstream os;
      os << "leaf " << i << " flat " << flat << ": analytic=" << a << ", numeric=" << n;
      report.worst = os.str();
    }
  }
  return report;
}

/// All parameter tensors of a registry, for fd_check_params.
template <typename T, typename Registry>
std::vector<Tensor<T>> registry_leaves(Registry& reg) {
  std::vector<Tensor<T>> out;
  for (auto& [name, p] : reg.items()) out.push_back(p);
  return out;
}

}  // namespace lohg
