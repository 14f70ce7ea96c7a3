#ifndef ADFSDCA_LOSS_HPP
#define ADFSDCA_LOSS_HPP

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "adfsdca/data.hpp"

namespace adfsdca {

enum class loss_kind { quadratic, logistic };

inline std::string_view to_string(loss_kind k) {
  return k == loss_kind::quadratic ? "quadratic" : "logistic";
}

inline loss_kind parse_loss_kind(std::string_view s) {
  if (s == "quadratic") return loss_kind::quadratic;
  if (s == "logistic") return loss_kind::logistic;
  throw std::invalid_argument("unknown loss '" + std::string(s) + "'");
}

/// Quadratic: (a - y)^2 / 2.  Logistic: log(1 + exp(-y a)).
inline double loss_value(loss_kind k, double a, double y) {
  if (k == loss_kind::quadratic) {
    const double r = a - y;
    return 0.5 * r * r;
  }
  // softplus(z) = max(z, 0) + log1p(exp(-|z|))
  const double z = -y * a;
  return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z)));
}

/// d/da of loss_value.
inline double loss_derivative(loss_kind k, double a, double y) {
  if (k == loss_kind::quadratic) return a - y;
  const double z = y * a;
  // -y / (1 + exp(z)), evaluated without overflow for either sign of z.
  if (z >= 0.0) {
    const double e = std::exp(-z);
    return -y * e / (1.0 + e);
  }
  return -y / (1.0 + std::exp(z));
}

/// Lipschitz constant of the scalar derivative.
inline double loss_smoothness(loss_kind k) {
  return k == loss_kind::quadratic ? 1.0 : 0.25;
}

/// A loss family bound to a dataset: per-example L_i = v_i * L~_i and the
/// averages used by the step-size and probability formulas.
class loss_model {
 public:
  loss_model(loss_kind kind, const dataset& ds) : loss_model(kind, ds, loss_smoothness(kind)) {}

  /// `scalar_smoothness` overrides L~ (e.g. 2 for the unhalved square loss).
  loss_model(loss_kind kind, const dataset& ds, double scalar_smoothness)
      : kind_(kind), tilde_(ds.size(), scalar_smoothness) {
    if (!(scalar_smoothness > 0.0)) throw std::invalid_argument("smoothness must be > 0");
    if (kind == loss_kind::logistic && !ds.binary_labels())
      throw std::invalid_argument("logistic loss requires labels in {-1, +1}");
    lipschitz_.resize(ds.size());
    for (std::size_t i = 0; i < ds.size(); ++i) lipschitz_[i] = ds.norms()[i] * tilde_[i];
    double s = 0.0;
    for (double l : lipschitz_) s += l;
    mean_ = s / static_cast<double>(ds.size());
    max_ = *std::max_element(lipschitz_.begin(), lipschitz_.end());
  }

  loss_kind kind() const { return kind_; }
  double value(double a, double y) const { return loss_value(kind_, a, y); }
  double derivative(double a, double y) const { return loss_derivative(kind_, a, y); }

  /// L~_i
  const std::vector<double>& scalar_smoothness() const { return tilde_; }
  /// L_i = ||x_i||^2 L~_i
  const std::vector<double>& lipschitz() const { return lipschitz_; }
  double mean_lipschitz() const { return mean_; }
  double max_lipschitz() const { return max_; }

 private:
  loss_kind kind_;
  std::vector<double> tilde_;
  std::vector<double> lipschitz_;
  double mean_ = 0.0;
  double max_ = 0.0;
};

/// P(w) = (1/n) sum_i l_i(x_i^T w) + (lambda/2) ||w||^2
inline double primal_objective(const dataset& ds, const loss_model& loss, double lambda,
                               std::span<const double> w) {
  double s = 0.0;
  for (std::size_t i = 0; i < ds.size(); ++i) s += loss.value(ds.row(i).dot(w), ds.label(i));
  double ww = 0.0;
  for (double x : w) ww += x * x;
  return s / static_cast<double>(ds.size()) + 0.5 * lambda * ww;
}

/// grad P(w) = (1/n) sum_i l_i'(x_i^T w) x_i + lambda w
inline std::vector<double> primal_gradient(const dataset& ds, const loss_model& loss,
                                           double lambda, std::span<const double> w) {
  std::vector<double> g(w.begin(), w.end());
  for (double& x : g) x *= lambda;
  const double inv_n = 1.0 / static_cast<double>(ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto r = ds.row(i);
    r.axpy(inv_n * loss.derivative(r.dot(w), ds.label(i)), g);
  }
  return g;
}

}  // namespace adfsdca

#endif
