#pragma once

// Central finite differences against the analytic gradients of every
// gradient-trained objective.

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "honesty/models/dense.hpp"
#include "honesty/models/gan.hpp"
#include "honesty/models/linear.hpp"
#include "honesty/models/mlp.hpp"
#include "honesty/rng.hpp"

namespace gradcheck {

using honesty::Rng;
using honesty::models::Activation;
using honesty::models::DenseNet;
using honesty::models::Matrix;
using honesty::models::Vector;

struct Instance {
  std::string family;
  int index = 0;
  double rel_error = 0;
  std::size_t params = 0;
};

// ||a - n|| / max(||a|| + ||n||, tiny)
inline double relative_error(const Vector& analytic, const Vector& numeric) {
  const double denom = std::max(analytic.norm() + numeric.norm(), 1e-12);
  return (analytic - numeric).norm() / denom;
}

inline Vector numeric_gradient(const std::function<double(const Vector&)>& f, Vector theta, double h = 1e-5) {
  Vector g(theta.size());
  for (Eigen::Index i = 0; i < theta.size(); ++i) {
    const double keep = theta[i];
    theta[i] = keep + h;
    const double up = f(theta);
    theta[i] = keep - h;
    const double down = f(theta);
    theta[i] = keep;
    g[i] = (up - down) / (2 * h);
  }
  return g;
}

inline Matrix random_matrix(Rng& rng, int rows, int cols, double scale = 1.0) {
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = scale * rng.normal();
  return m;
}

inline std::vector<int> random_labels(Rng& rng, int n) {
  std::vector<int> y(static_cast<std::size_t>(n));
  for (auto& v : y) v = static_cast<int>(rng.below(2));
  y[0] = 0;
  y[1 % y.size()] = 1;
  return y;
}

// Smooth activations only: finite differences are meaningless across a ReLU kink.
inline Activation smooth_activation(int i) { return i % 2 ? Activation::Sigmoid : Activation::Tanh; }

inline Instance check_lr(int i, std::uint64_t seed) {
  Rng rng(seed);
  const int n = 5 + static_cast<int>(rng.below(8)), d = 2 + static_cast<int>(rng.below(6));
  const Matrix X = random_matrix(rng, n, d);
  const auto y = random_labels(rng, n);
  const double l2 = rng.uniform(0, 0.1);
  Vector theta(d + 1);
  for (auto& v : theta) v = rng.normal();
  auto loss = [&](const Vector& t) { return honesty::models::logistic_loss(t.head(d), t[d], X, y, l2); };
  Vector gw;
  double gb = 0;
  honesty::models::logistic_loss(theta.head(d), theta[d], X, y, l2, &gw, &gb);
  Vector analytic(d + 1);
  analytic << gw, gb;
  return {"LR", i, relative_error(analytic, numeric_gradient(loss, theta)), static_cast<std::size_t>(d + 1)};
}

inline Instance check_mlp(const std::string& family, std::vector<int> hidden, int i, std::uint64_t seed) {
  Rng rng(seed);
  const int n = 4 + static_cast<int>(rng.below(6)), d = 2 + static_cast<int>(rng.below(5));
  std::vector<int> layers = {d};
  layers.insert(layers.end(), hidden.begin(), hidden.end());
  layers.push_back(1);
  DenseNet net(layers, smooth_activation(i));
  net.init(rng);
  const Matrix X = random_matrix(rng, n, d);
  const auto y = random_labels(rng, n);
  const double l2 = rng.uniform(0, 0.05);
  const Vector theta = net.flatten();
  auto loss = [&](const Vector& t) {
    DenseNet copy = net;
    copy.unflatten(std::span<const double>(t.data(), static_cast<std::size_t>(t.size())));
    return honesty::models::mlp_loss(copy, X, y, l2, nullptr);
  };
  Vector analytic;
  honesty::models::mlp_loss(net, X, y, l2, &analytic);
  return {family, i, relative_error(analytic, numeric_gradient(loss, theta)), static_cast<std::size_t>(theta.size())};
}

inline Instance check_gan_discriminator(int i, std::uint64_t seed) {
  Rng rng(seed);
  const int d = 2 + static_cast<int>(rng.below(4));
  DenseNet disc({d, 3 + static_cast<int>(rng.below(4)), 3}, smooth_activation(i));
  disc.init(rng);
  const int nl = 3 + static_cast<int>(rng.below(4));
  const Matrix labeled = random_matrix(rng, nl, d);
  const auto y = random_labels(rng, nl);
  const Matrix unlabeled = random_matrix(rng, 2 + static_cast<int>(rng.below(3)), d);
  const Matrix fake = random_matrix(rng, 2 + static_cast<int>(rng.below(3)), d);
  const double l2 = rng.uniform(0, 0.05);
  const Vector theta = disc.flatten();
  auto loss = [&](const Vector& t) {
    DenseNet copy = disc;
    copy.unflatten(std::span<const double>(t.data(), static_cast<std::size_t>(t.size())));
    return honesty::models::gan_discriminator_loss(copy, labeled, y, unlabeled, fake, l2, nullptr);
  };
  Vector analytic;
  honesty::models::gan_discriminator_loss(disc, labeled, y, unlabeled, fake, l2, &analytic);
  return {"GAN-D", i, relative_error(analytic, numeric_gradient(loss, theta)), static_cast<std::size_t>(theta.size())};
}

inline Instance check_gan_generator(int i, std::uint64_t seed) {
  Rng rng(seed);
  const int d = 2 + static_cast<int>(rng.below(4)), z = 2 + static_cast<int>(rng.below(3));
  DenseNet gen({z, 3 + static_cast<int>(rng.below(3)), d}, smooth_activation(i));
  DenseNet disc({d, 4, 3}, smooth_activation(i + 1));
  gen.init(rng);
  disc.init(rng);
  const Matrix noise = random_matrix(rng, 3 + static_cast<int>(rng.below(4)), z);
  const Vector theta = gen.flatten();
  auto loss = [&](const Vector& t) {
    DenseNet copy = gen;
    copy.unflatten(std::span<const double>(t.data(), static_cast<std::size_t>(t.size())));
    return honesty::models::gan_generator_loss(copy, disc, noise, nullptr);
  };
  Vector analytic;
  honesty::models::gan_generator_loss(gen, disc, noise, &analytic);
  return {"GAN-G", i, relative_error(analytic, numeric_gradient(loss, theta)), static_cast<std::size_t>(theta.size())};
}

// `per_family` instances for each of LR, NN, DNN, GAN-D, GAN-G.
inline std::vector<Instance> run_all(int per_family, std::uint64_t seed) {
  std::vector<Instance> out;
  for (int i = 0; i < per_family; ++i) {
    const std::uint64_t s = seed + 1000 * static_cast<std::uint64_t>(i);
    out.push_back(check_lr(i, s + 1));
    out.push_back(check_mlp("NN", {3 + i % 4}, i, s + 2));
    out.push_back(check_mlp("DNN", {8, 5, 3}, i, s + 3));
    out.push_back(check_gan_discriminator(i, s + 4));
    out.push_back(check_gan_generator(i, s + 5));
  }
  return out;
}

}  // namespace gradcheck
