#include "honesty/models/linear.hpp"

#include <cmath>

#include "honesty/error.hpp"

namespace honesty::models {

namespace {

Eigen::Map<const Vector> as_vector(std::span<const double> x) {
  return {x.data(), static_cast<Eigen::Index>(x.size())};
}

}  // namespace

double logistic_loss(const Vector& w, double b, const Matrix& X, std::span<const int> y, double l2,
                     Vector* grad_w, double* grad_b) {
  const auto n = static_cast<double>(X.rows());
  const Vector z = (X * w).array() + b;
  double loss = 0.0;
  Vector residual(X.rows());
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    // -log sigmoid(z) for y = 1, -log(1 - sigmoid(z)) for y = 0
    loss += y[static_cast<std::size_t>(i)] ? softplus(-z[i]) : softplus(z[i]);
    residual[i] = sigmoid(z[i]) - y[static_cast<std::size_t>(i)];
  }
  loss = loss / n + 0.5 * l2 * w.squaredNorm();
  if (grad_w) *grad_w = X.transpose() * residual / n + l2 * w;
  if (grad_b) *grad_b = residual.sum() / n;
  return loss;
}

double hinge_loss(const Vector& w, double b, const Matrix& X, std::span<const int> y, double l2,
                  Vector* grad_w, double* grad_b) {
  const auto n = static_cast<double>(X.rows());
  const Vector z = (X * w).array() + b;
  double loss = 0.0;
  Vector coeff = Vector::Zero(X.rows());
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    const double s = y[static_cast<std::size_t>(i)] ? 1.0 : -1.0;
    const double slack = 1.0 - s * z[i];
    if (slack > 0) {
      loss += slack;
      coeff[i] = -s;
    }
  }
  loss = loss / n + 0.5 * l2 * w.squaredNorm();
  if (grad_w) *grad_w = X.transpose() * coeff / n + l2 * w;
  if (grad_b) *grad_b = coeff.sum() / n;
  return loss;
}

double LogisticRegression::predict_proba(std::span<const double> x) const {
  return sigmoid(w_.dot(as_vector(x)) + b_);
}

nlohmann::json LogisticRegression::structure() const { return {{"width", w_.size()}}; }

std::vector<double> LogisticRegression::parameters() const {
  std::vector<double> p(w_.data(), w_.data() + w_.size());
  p.push_back(b_);
  return p;
}

double LinearSvm::margin(std::span<const double> x) const { return w_.dot(as_vector(x)) + b_; }

double LinearSvm::predict_proba(std::span<const double> x) const { return sigmoid(a_ * margin(x) + c_); }

nlohmann::json LinearSvm::structure() const { return {{"width", w_.size()}}; }

std::vector<double> LinearSvm::parameters() const {
  std::vector<double> p(w_.data(), w_.data() + w_.size());
  p.push_back(b_);
  p.push_back(a_);
  p.push_back(c_);
  return p;
}

std::pair<double, double> fit_logistic_link(std::span<const double> margins, std::span<const int> y) {
  double n_pos = 0, n_neg = 0;
  for (int label : y) (label ? n_pos : n_neg) += 1;
  const double t_pos = (n_pos + 1) / (n_pos + 2);
  const double t_neg = 1 / (n_neg + 2);

  auto objective = [&](double a, double c) {
    double f = 0;
    for (std::size_t i = 0; i < margins.size(); ++i) {
      const double z = a * margins[i] + c;
      const double t = y[i] ? t_pos : t_neg;
      f += t * softplus(-z) + (1 - t) * softplus(z);
    }
    return f;
  };

  double a = 0.0;
  double c = std::log((n_pos + 1) / (n_neg + 1));
  double f = objective(a, c);
  for (int iter = 0; iter < 100; ++iter) {
    double ga = 0, gc = 0, haa = 1e-12, hac = 0, hcc = 1e-12;
    for (std::size_t i = 0; i < margins.size(); ++i) {
      const double m = margins[i];
      const double p = sigmoid(a * m + c);
      const double t = y[i] ? t_pos : t_neg;
      const double w = p * (1 - p);
      ga += (p - t) * m;
      gc += (p - t);
      haa += w * m * m;
      hac += w * m;
      hcc += w;
    }
    if (std::abs(ga) < 1e-10 && std::abs(gc) < 1e-10) break;
    const double det = haa * hcc - hac * hac;
    const double da = -(hcc * ga - hac * gc) / det;
    const double dc = -(-hac * ga + haa * gc) / det;
    // Backtracking keeps the objective non-increasing.
    double step = 1.0;
    bool improved = false;
    while (step >= 1e-10) {
      const double fn = objective(a + step * da, c + step * dc);
      if (fn < f + 1e-4 * step * (ga * da + gc * dc)) {
        a += step * da;
        c += step * dc;
        f = fn;
        improved = true;
        break;
      }
      step /= 2;
    }
    if (!improved) break;
  }
  return {a, c};
}

TrainOutput train_lr(const ModelSpec& spec, const Dataset& data) {
  const double lr = hyper_double(spec, "learning_rate");
  const double l2 = hyper_double(spec, "l2");
  const int epochs = hyper_int(spec, "epochs");
  const auto batch = static_cast<std::size_t>(hyper_int(spec, "batch_size"));
  const std::size_t n = data.size();

  Rng rng(spec.seed);
  Vector w = Vector::Zero(data.X.cols());
  double b = 0.0;
  std::vector<double> log;
  for (int epoch = 1; epoch <= epochs; ++epoch) {
    if (batch == 0 || batch >= n) {
      Vector gw;
      double gb = 0;
      logistic_loss(w, b, data.X, data.y, l2, &gw, &gb);
      w -= lr * gw;
      b -= lr * gb;
    } else {
      const auto order = shuffled_indices(n, rng);
      for (std::size_t start = 0; start < n; start += batch) {
        const std::span<const std::size_t> rows(order.data() + start, std::min(batch, n - start));
        const Dataset part = data.subset(rows);
        Vector gw;
        double gb = 0;
        logistic_loss(w, b, part.X, part.y, l2, &gw, &gb);
        w -= lr * gw;
        b -= lr * gb;
      }
    }
    const double loss = logistic_loss(w, b, data.X, data.y, l2);
    guard_loss(loss, static_cast<std::size_t>(epoch), spec);
    log.push_back(loss);
  }
  return {std::make_shared<LogisticRegression>(std::move(w), b), std::move(log)};
}

TrainOutput train_svm(const ModelSpec& spec, const Dataset& data) {
  const double lr = hyper_double(spec, "learning_rate");
  const double l2 = hyper_double(spec, "l2");
  const int epochs = hyper_int(spec, "epochs");
  const auto batch = static_cast<std::size_t>(hyper_int(spec, "batch_size"));
  const std::size_t n = data.size();

  Rng rng(spec.seed);
  Vector w = Vector::Zero(data.X.cols());
  double b = 0.0;
  std::vector<double> log;
  for (int epoch = 1; epoch <= epochs; ++epoch) {
    const auto order = shuffled_indices(n, rng);
    const std::size_t step = (batch == 0 || batch >= n) ? n : batch;
    for (std::size_t start = 0; start < n; start += step) {
      const std::span<const std::size_t> rows(order.data() + start, std::min(step, n - start));
      const Dataset part = data.subset(rows);
      Vector gw;
      double gb = 0;
      hinge_loss(w, b, part.X, part.y, l2, &gw, &gb);
      w -= lr * gw;
      b -= lr * gb;
    }
    const double loss = hinge_loss(w, b, data.X, data.y, l2);
    guard_loss(loss, static_cast<std::size_t>(epoch), spec);
    log.push_back(loss);
  }

  const Vector margins = (data.X * w).array() + b;
  const auto [a, c] = fit_logistic_link(std::span<const double>(margins.data(), n), data.y);
  return {std::make_shared<LinearSvm>(std::move(w), b, a, c), std::move(log)};
}

}  // namespace honesty::models
