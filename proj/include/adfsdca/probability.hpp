#ifndef ADFSDCA_PROBABILITY_HPP
#define ADFSDCA_PROBABILITY_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "adfsdca/data.hpp"
#include "adfsdca/loss.hpp"

namespace adfsdca {

/// Dual residue kappa_i = alpha_i + l_i'(x_i^T w). Entries below the
/// zero threshold are stored as exact zeros and left out of `support`.
struct residue_vector {
  std::vector<double> kappa;
  std::vector<std::uint32_t> support;
  double norm2 = 0.0;

  bool converged() const { return support.empty(); }
};

/// Relative threshold below which a residue counts as zero.
inline double residue_threshold(double alpha_i, double derivative_i) {
  return 1e-14 * (1.0 + std::abs(alpha_i) + std::abs(derivative_i));
}

/// Residue of one coordinate, thresholded.
inline double residue_at(std::size_t i, std::span<const double> alpha,
                         std::span<const double> w, const dataset& ds,
                         const loss_model& loss) {
  const double g = loss.derivative(ds.row(i).dot(w), ds.label(i));
  const double k = alpha[i] + g;
  return std::abs(k) > residue_threshold(alpha[i], g) ? k : 0.0;
}

inline residue_vector compute_residues(std::span<const double> alpha,
                                       std::span<const double> w, const dataset& ds,
                                       const loss_model& loss) {
  if (alpha.size() != ds.size() || w.size() != ds.dim())
    throw std::invalid_argument("state dimensions do not match dataset");
  residue_vector r;
  r.kappa.resize(ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const double k = residue_at(i, alpha, w, ds, loss);
    r.kappa[i] = k;
    if (k != 0.0) {
      r.support.push_back(static_cast<std::uint32_t>(i));
      r.norm2 += k * k;
    }
  }
  return r;
}

enum class convexity_case { all_convex, average_convex };

inline convexity_case parse_convexity_case(std::string_view s) {
  if (s == "all_convex") return convexity_case::all_convex;
  if (s == "average_convex") return convexity_case::average_convex;
  throw std::invalid_argument("unknown convexity case '" + std::string(s) + "'");
}

/// Weights of the optimality gap: beta (dual metric) and gamma (primal).
struct case_params {
  convexity_case kind = convexity_case::all_convex;
  std::vector<double> beta;
  double gamma = 0.0;
  double lambda = 0.0;
  std::size_t n = 0;

  /// (n lambda)^2, the factor shared by every step-size formula.
  double nl2() const {
    const double nl = static_cast<double>(n) * lambda;
    return nl * nl;
  }
};

/// all_convex: beta_i = 1/L~_i, gamma = n lambda.
/// average_convex: beta_i = Lbar/L_i, gamma = n Lbar^2.
inline case_params make_case_params(convexity_case kind, const loss_model& loss,
                                    double lambda) {
  if (!(lambda > 0.0)) throw std::invalid_argument("lambda must be > 0");
  case_params cp;
  cp.kind = kind;
  cp.lambda = lambda;
  cp.n = loss.lipschitz().size();
  const double n = static_cast<double>(cp.n);
  cp.beta.resize(cp.n);
  if (kind == convexity_case::all_convex) {
    for (std::size_t i = 0; i < cp.n; ++i) cp.beta[i] = 1.0 / loss.scalar_smoothness()[i];
    cp.gamma = n * lambda;
  } else {
    const double lbar = loss.mean_lipschitz();
    for (std::size_t i = 0; i < cp.n; ++i) {
      if (!(loss.lipschitz()[i] > 0.0))
        throw std::invalid_argument("average_convex case needs L_i > 0 (zero row " +
                                    std::to_string(i) + ")");
      cp.beta[i] = lbar / loss.lipschitz()[i];
    }
    cp.gamma = n * lbar * lbar;
  }
  return cp;
}

/// The probability minimizing the variance of the step, restricted to the
/// residue support: p_i proportional to sqrt(v_i gamma + (n lambda)^2 beta_i) |kappa_i|.
/// Off-support entries are exactly zero.
inline std::vector<double> optimal_probabilities(const residue_vector& r,
                                                 const case_params& cp,
                                                 std::span<const double> v) {
  if (r.support.empty()) throw std::domain_error("empty residue support");
  const double nl2 = cp.nl2();
  std::vector<double> p(r.kappa.size(), 0.0);
  double total = 0.0;
  for (auto i : r.support) {
    p[i] = std::sqrt(v[i] * cp.gamma + nl2 * cp.beta[i]) * std::abs(r.kappa[i]);
    total += p[i];
  }
  for (auto i : r.support) p[i] /= total;
  return p;
}

/// Largest step parameter for which the per-iteration contraction
/// certificate holds at (kappa, p):
///   (n lambda)^2 sum beta_i k_i^2 / sum (n^2 lambda^2 beta_i + v_i gamma) k_i^2 / p_i
inline double theta_of(const residue_vector& r, std::span<const double> p,
                       const case_params& cp, std::span<const double> v) {
  if (r.support.empty()) throw std::domain_error("empty residue support");
  const double nl2 = cp.nl2();
  double num = 0.0, den = 0.0;
  for (auto i : r.support) {
    if (!(p[i] > 0.0))
      throw std::invalid_argument("probability not coherent with residue at coordinate " +
                                  std::to_string(i));
    const double k2 = r.kappa[i] * r.kappa[i];
    num += cp.beta[i] * k2;
    den += (nl2 * cp.beta[i] + v[i] * cp.gamma) * k2 / p[i];
  }
  return nl2 * num / den;
}

/// Instance-wide lower bound on theta_of(kappa, p*) for batch size b,
/// capped at 1.
inline double theta_lower_bound(const case_params& cp, std::span<const double> v,
                                std::size_t b = 1) {
  if (b < 1) throw std::invalid_argument("batch size must be >= 1");
  const double nl2 = cp.nl2();
  double den = 0.0;
  for (std::size_t i = 0; i < cp.n; ++i) den += v[i] * cp.gamma / cp.beta[i] + nl2;
  return std::min(1.0, nl2 * static_cast<double>(b) / den);
}

enum class eso_mode { paper, feature_degree };

inline eso_mode parse_eso_mode(std::string_view s) {
  if (s == "paper") return eso_mode::paper;
  if (s == "feature_degree") return eso_mode::feature_degree;
  throw std::invalid_argument("unknown eso mode '" + std::string(s) + "'");
}

struct eso_params {
  std::vector<double> v;
  std::size_t batch = 1;
  std::size_t omega = 1;
};

/// v_i = min{b, omega} ||x_i||^2, with omega the largest nonzero count per
/// example (paper) or per feature (feature_degree).
inline eso_params eso_v(const dataset& ds, std::size_t b, eso_mode mode = eso_mode::paper) {
  if (b < 1 || b > ds.size()) throw std::invalid_argument("batch size must be in [1, n]");
  eso_params e;
  e.batch = b;
  e.omega = mode == eso_mode::paper ? ds.max_example_nnz() : ds.max_feature_degree();
  const double factor = static_cast<double>(std::min(b, std::max<std::size_t>(e.omega, 1)));
  e.v.resize(ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) e.v[i] = factor * ds.norms()[i];
  return e;
}

}  // namespace adfsdca

#endif
