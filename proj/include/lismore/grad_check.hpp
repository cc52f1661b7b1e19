#pragma once

// Central finite-difference verification of analytic gradients. The function
// under test must be a deterministic scalar-valued function of the listed
// input tensors; it is re-evaluated with perturbed inputs on a non-recording
// tape, so the numeric route never touches the backward pass it is checking.

#include <cstdint>
#include <functional>
#include <vector>

#include "lismore/rng.hpp"
#include "lismore/tensor.hpp"

namespace lismore {

struct GradCheckOptions {
  double h = 1e-5;
  double tol = 1e-4;
  // Below this magnitude the relative error is meaningless (dead or nearly
  // dead coordinates); the absolute difference is compared against tol
  // instead.
  double abs_floor = 1e-6;
  // 0 checks every coordinate; otherwise a seeded sample per tensor.
  std::size_t max_coords_per_tensor = 0;
  std::uint64_t sample_seed = 0;
};

struct GradCheckEntry {
  std::size_t tensor_index = 0;
  std::size_t coord = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double error = 0.0;
  bool relative = true;
  bool passed = true;
};

struct GradCheckReport {
  bool passed = true;
  double max_error = 0.0;
  std::size_t coords_checked = 0;
  GradCheckEntry worst;
  std::vector<GradCheckEntry> failures;
};

inline GradCheckReport grad_check(const std::function<Tensor(Tape&)>& f,
                                  const std::vector<Tensor>& inputs,
                                  const GradCheckOptions& opt = {}) {
  for (const Tensor& t : inputs) {
    Tensor& mut = const_cast<Tensor&>(t);
    mut.set_requires_grad(true);
    mut.zero_grad();
  }
  Tape tape;
  Tensor loss = f(tape);
  tape.backward(loss);

  std::vector<std::vector<double>> analytic;
  analytic.reserve(inputs.size());
  for (const Tensor& t : inputs) {
    analytic.push_back(t.has_grad() ? t.grad() : std::vector<double>(t.size(), 0.0));
  }

  const auto evaluate = [&]() {
    Tape silent;
    silent.recording = false;
    return f(silent).item();
  };

  GradCheckReport report;
  Rng rng(opt.sample_seed);
  for (std::size_t ti = 0; ti < inputs.size(); ++ti) {
    Tensor& t = const_cast<Tensor&>(inputs[ti]);
    std::vector<std::size_t> coords(t.size());
    for (std::size_t i = 0; i < coords.size(); ++i) coords[i] = i;
    if (opt.max_coords_per_tensor > 0 && coords.size() > opt.max_coords_per_tensor) {
      shuffle(coords, rng);
      coords.resize(opt.max_coords_per_tensor);
    }
    for (const std::size_t c : coords) {
      const double orig = t.data()[c];
      t.data()[c] = orig + opt.h;
      const double fp = evaluate();
      t.data()[c] = orig - opt.h;
      const double fm = evaluate();
      t.data()[c] = orig;
      const double numeric = (fp - fm) / (2.0 * opt.h);
      const double a = analytic[ti][c];
      const double denom = std::max(std::abs(a), std::abs(numeric));
      GradCheckEntry entry;
      entry.tensor_index = ti;
      entry.coord = c;
      entry.analytic = a;
      entry.numeric = numeric;
      if (denom < opt.abs_floor) {
        entry.relative = false;
        entry.error = std::abs(a - numeric);
      } else {
        entry.relative = true;
        entry.error = std::abs(a - numeric) / denom;
      }
      entry.passed = entry.error <= opt.tol;
      ++report.coords_checked;
      if (entry.error >= report.max_error) {
        report.max_error = entry.error;
        report.worst = entry;
      }
      if (!entry.passed) {
        report.passed = false;
        report.failures.push_back(entry);
      }
    }
  }
  return report;
}

}  // namespace lismore
