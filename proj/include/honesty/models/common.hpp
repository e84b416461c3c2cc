#pragma once

#include <memory>
#include <string>
#include <vector>

#include "honesty/models.hpp"

namespace honesty::models {

struct TrainOutput {
  std::shared_ptr<const Classifier> classifier;
  std::vector<double> log;  // one loss value per epoch / stage / tree
};

inline constexpr double kDivergenceLimit = 1e6;

// Throws DivergenceError naming the epoch and hyperparameters when `loss` is
// non-finite or exceeds kDivergenceLimit.
void guard_loss(double loss, std::size_t epoch, const ModelSpec& spec);

double hyper_double(const ModelSpec& spec, const char* key);
int hyper_int(const ModelSpec& spec, const char* key);
std::vector<int> hyper_int_list(const ModelSpec& spec, const char* key);
std::string hyper_string(const ModelSpec& spec, const char* key);

// Row i of X as a span.
inline std::span<const double> row(const Matrix& X, Eigen::Index i) {
  return {X.data() + i * X.cols(), static_cast<std::size_t>(X.cols())};
}

// Seeded permutation of 0..n-1.
std::vector<std::size_t> shuffled_indices(std::size_t n, Rng& rng);

}  // namespace honesty::models
