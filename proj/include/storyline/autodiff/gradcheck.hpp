#pragma once
// Central-difference gradient verification.

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "storyline/autodiff/tensor.hpp"

namespace storyline::ad {

struct GradCheckEntry {
  std::string param;
  std::size_t index = 0;
  double analytic = 0;
  double numeric = 0;
  double rel_error = 0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double max_rel_error = 0;
  double tolerance = 0;
  bool passed = false;
};

struct GradCheckOptions {
  double h = 1e-4;
  double tol = 1e-3;
  // Coordinates drawn in total; every parameter tensor gets at least one.
  std::size_t samples = 64;
  std::uint64_t seed = 0;
  // Relative error is |a - n| / max(|a|, |n|, floor).
  double floor = 1e-6;
};

struct NamedParam {
  std::string name;
  Tensor<double> tensor;
};

// `loss` recomputes the scalar loss from the current parameter values.
inline GradCheckReport grad_check(const std::function<Tensor<double>()>& loss,
                                  std::vector<NamedParam> params,
                                  const GradCheckOptions& opt = {}) {
  for (auto& p : params) p.tensor.zero_grad();
  Tensor<double> l = loss();
  if (!std::isfinite(l.item())) throw NumericError("grad_check: loss is not finite");
  backward(l);

  std::mt19937_64 rng(opt.seed);
  std::vector<std::pair<std::size_t, std::size_t>> coords;
  for (std::size_t i = 0; i < params.size(); ++i) {
    std::uniform_int_distribution<std::size_t> pick(0, params[i].tensor.size() - 1);
    coords.emplace_back(i, pick(rng));
  }
  std::size_t total = 0;
  for (const auto& p : params) total += p.tensor.size();
  std::uniform_int_distribution<std::size_t> flat(0, total - 1);
  while (coords.size() < opt.samples) {
    std::size_t f = flat(rng), i = 0;
    while (f >= params[i].tensor.size()) f -= params[i++].tensor.size();
    coords.emplace_back(i, f);
  }

  GradCheckReport report;
  report.tolerance = opt.tol;
  for (auto [i, j] : coords) {
    auto& t = params[i].tensor;
    const double analytic = t.has_grad() ? t.grad()[j] : 0.0;
    auto w = t.mutable_data();
    const double orig = w[j];
    w[j] = orig + opt.h;
    const double fp = loss().item();
    w[j] = orig - opt.h;
    const double fm = loss().item();
    w[j] = orig;
    if (!std::isfinite(fp) || !std::isfinite(fm)) {
      throw NumericError("grad_check: loss is not finite at a perturbed point");
    }
    const double numeric = (fp - fm) / (2 * opt.h);
    const double denom = std::max({std::abs(analytic), std::abs(numeric), opt.floor});
    GradCheckEntry e{params[i].name, j, analytic, numeric,
                     std::abs(analytic - numeric) / denom};
    report.max_rel_error = std::max(report.max_rel_error, e.rel_error);
    report.entries.push_back(std::move(e));
  }
  report.passed = report.max_rel_error <= opt.tol;
  return report;
}

}  // namespace storyline::ad
