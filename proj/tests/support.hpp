#pragma once

#include <atomic>
#include <cmath>
#include <filesystem>
#include <string>
#include <unistd.h>

#include "coronagan/nn.hpp"
#include "coronagan/rng.hpp"
#include "coronagan/tensor.hpp"

namespace coronagan::testing {

template <std::floating_point T>
Tensor<T> random_tensor(Shape4 shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor<T> t(shape);
  for (auto& v : t.values()) v = static_cast<T>(uniform(rng, lo, hi));
  return t;
}

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag = "t") {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("coronagan_" + tag + "_" + std::to_string(::getpid()) + "_" +
             std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  [[nodiscard]] const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& s) const { return path_ / s; }

 private:
  std::filesystem::path path_;
};

struct GradCheckResult {
  double max_rel_error = 0;
  int checked = 0;
  int skipped = 0;     // perturbations that crossed a ReLU / |x| kink
  int negligible = 0;  // analytic and numeric both below the absolute floor
  std::string worst;
};

/// Compares analytic gradients against central differences for (a sample of)
/// every parameter. `loss` recomputes the scalar objective from the current
/// parameter values. Relative error is |a - n| / max(|a|, |n|, floor); entries
/// where both are below `abs_floor` (e.g. biases feeding an instance norm,
/// whose gradient is exactly zero) are counted as negligible instead.
template <class LossFn>
GradCheckResult check_param_grads(nn::ParamStore<double>& params,
                                  const nn::Grads<double>& analytic, LossFn&& loss, Rng& rng,
                                  double eps = 1e-5, double floor = 1e-6,
                                  int max_per_tensor = 12, double abs_floor = 1e-8) {
  GradCheckResult r;
  std::uint64_t base_signature = 0;
  {
    nn::KinkProbe probe;
    (void)loss();
    base_signature = probe.signature();
  }
  const auto eval = [&](std::uint64_t* signature) {
    nn::KinkProbe probe;
    const double v = loss();
    *signature = probe.signature();
    return v;
  };
  for (int t = 0; t < params.size(); ++t) {
    Tensor<double>& p = params.value(t);
    const std::size_t n = p.size();
    const int picks = static_cast<int>(std::min<std::size_t>(n, max_per_tensor));
    for (int k = 0; k < picks; ++k) {
      const std::size_t i =
          n <= static_cast<std::size_t>(max_per_tensor) ? k : uniform_index(rng, n);
      const double saved = p[i];
      std::uint64_t sp = 0;
      std::uint64_t sm = 0;
      p[i] = saved + eps;
      const double lp = eval(&sp);
      p[i] = saved - eps;
      const double lm = eval(&sm);
      p[i] = saved;
      if (sp != base_signature || sm != base_signature) {
        ++r.skipped;
        continue;
      }
      const double numeric = (lp - lm) / (2 * eps);
      const double a = analytic[t][i];
      if (std::abs(a) < abs_floor && std::abs(numeric) < abs_floor) {
        ++r.negligible;
        continue;
      }
      const double rel =
          std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), floor});
      ++r.checked;
      if (rel > r.max_rel_error) {
        r.max_rel_error = rel;
        r.worst = params.name(t) + "[" + std::to_string(i) + "] analytic " + std::to_string(a) +
                  " numeric " + std::to_string(numeric);
      }
    }
  }
  return r;
}

}  // namespace coronagan::testing
