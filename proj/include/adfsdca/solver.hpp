#ifndef ADFSDCA_SOLVER_HPP
#define ADFSDCA_SOLVER_HPP

#include <algorithm>
#include <cassert>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "adfsdca/data.hpp"
#include "adfsdca/loss.hpp"
#include "adfsdca/probability.hpp"
#include "adfsdca/rng.hpp"
#include "adfsdca/sampler.hpp"

namespace adfsdca {

enum class variant { dfsdca, adfsdca, adfsdca_plus, minibatch };

inline std::string_view to_string(variant v) {
  switch (v) {
    case variant::dfsdca: return "dfsdca";
    case variant::adfsdca: return "adfsdca";
    case variant::adfsdca_plus: return "adfsdca+";
    case variant::minibatch: return "minibatch";
  }
  return "?";
}

inline variant parse_variant(std::string_view s) {
  if (s == "dfsdca") return variant::dfsdca;
  if (s == "adfsdca") return variant::adfsdca;
  if (s == "adfsdca+" || s == "adfsdca_plus") return variant::adfsdca_plus;
  if (s == "minibatch") return variant::minibatch;
  throw std::invalid_argument("unknown variant '" + std::string(s) + "'");
}

enum class theta_policy { adaptive, fixed };

inline theta_policy parse_theta_policy(std::string_view s) {
  if (s == "adaptive") return theta_policy::adaptive;
  if (s == "fixed") return theta_policy::fixed;
  throw std::invalid_argument("unknown theta policy '" + std::string(s) + "'");
}

struct solver_config {
  variant algo = variant::adfsdca;
  double lambda = 0.0;
  convexity_case convexity = convexity_case::all_convex;
  /// adaptive: theta = Theta(kappa, p) each step; fixed: the lower bound.
  theta_policy theta = theta_policy::adaptive;
  /// Replaces the policy with a constant step parameter when set.
  std::optional<double> theta_override;
  /// adfSDCA+ probability shrink factor.
  double shrink = 10.0;
  /// Mini-batch size.
  std::size_t batch = 1;
  eso_mode eso = eso_mode::paper;
  std::size_t epochs = 10;
  std::uint64_t seed = 0;
  /// Initial pseudo-dual point; empty means zero.
  std::vector<double> alpha0;
  /// Trace rows per pass over the data.
  std::size_t evals_per_epoch = 1;
  /// Stop once P(w) - P* <= target (needs a reference); 0 disables.
  double target_subopt = 0.0;
  /// Integer epochs at which |kappa| is captured.
  std::vector<std::size_t> snapshot_epochs;

  void validate(std::size_t n) const {
    if (!(lambda > 0.0) || !std::isfinite(lambda))
      throw std::invalid_argument("lambda must be > 0");
    if (epochs < 1) throw std::invalid_argument("epochs must be >= 1");
    if (evals_per_epoch < 1) throw std::invalid_argument("evals_per_epoch must be >= 1");
    if (algo == variant::adfsdca_plus && !(shrink >= 1.0))
      throw std::invalid_argument("shrink parameter must be >= 1");
    if (algo == variant::minibatch && (batch < 1 || batch >= n))
      throw std::invalid_argument("batch size must satisfy 1 <= b < n (b=" +
                                  std::to_string(batch) + ", n=" + std::to_string(n) + ")");
    if (!alpha0.empty() && alpha0.size() != n)
      throw std::invalid_argument("alpha0 has wrong length");
    if (theta_override && !(*theta_override > 0.0 && *theta_override <= 1.0))
      throw std::invalid_argument("theta override must be in (0, 1]");
  }
};

/// Pseudo-dual alpha and primal w, linked by w = (1/(lambda n)) sum alpha_i x_i.
struct solver_state {
  std::vector<double> alpha;
  std::vector<double> w;
  std::uint64_t iteration = 0;
  double theta = 0.0;
};

/// w = (1/(lambda n)) sum_i alpha_i x_i
inline std::vector<double> primal_from_dual(const dataset& ds, double lambda,
                                            std::span<const double> alpha) {
  std::vector<double> w(ds.dim(), 0.0);
  const double scale = 1.0 / (lambda * static_cast<double>(ds.size()));
  for (std::size_t i = 0; i < ds.size(); ++i)
    if (alpha[i] != 0.0) ds.row(i).axpy(scale * alpha[i], w);
  return w;
}

inline solver_state make_state(const dataset& ds, double lambda,
                               std::span<const double> alpha0 = {}) {
  solver_state s;
  s.alpha = alpha0.empty() ? std::vector<double>(ds.size(), 0.0)
                           : std::vector<double>(alpha0.begin(), alpha0.end());
  if (s.alpha.size() != ds.size()) throw std::invalid_argument("alpha0 has wrong length");
  s.w = primal_from_dual(ds, lambda, s.alpha);
  return s;
}

/// ||w - (1/(lambda n)) sum alpha_i x_i||
inline double link_residual(const solver_state& s, const dataset& ds, double lambda) {
  const auto w = primal_from_dual(ds, lambda, s.alpha);
  double r = 0.0;
  for (std::size_t j = 0; j < w.size(); ++j) r += (w[j] - s.w[j]) * (w[j] - s.w[j]);
  return std::sqrt(r);
}

/// alpha_i -= theta kappa_i / p_i;  w -= theta kappa_i / (n lambda p_i) x_i.
/// `p` is the inclusion probability scale (b p_i for mini-batches).
inline void step_serial(solver_state& s, std::size_t i, double p, double kappa,
                        double theta, const dataset& ds, double lambda) {
  if (!(p > 0.0)) throw std::invalid_argument("step probability must be > 0");
  if (kappa == 0.0) return;
  s.alpha[i] -= theta / p * kappa;
  const double coef = theta / (static_cast<double>(ds.size()) * lambda * p) * kappa;
  ds.row(i).axpy(-coef, s.w);
}

/// Uniform dfSDCA step bound lambda / (lambda n + max_i v_i L~_i).
inline double uniform_theta(const dataset& ds, const loss_model& loss, double lambda) {
  double m = 0.0;
  for (std::size_t i = 0; i < ds.size(); ++i)
    m = std::max(m, ds.norms()[i] * loss.scalar_smoothness()[i]);
  return lambda / (lambda * static_cast<double>(ds.size()) + m);
}

/// Sum_i (-theta beta_i (1 - theta/(b p_i)) + theta^2 v_i gamma / (n^2 lambda^2 b p_i)) kappa_i^2,
/// the right-hand side of the per-iteration contraction inequality.
inline double contraction_certificate(const residue_vector& r, std::span<const double> p,
                                      double theta, double batch, const case_params& cp,
                                      std::span<const double> v) {
  const double nl2 = cp.nl2();
  double c = 0.0;
  for (auto i : r.support) {
    const double bp = batch * p[i];
    const double k2 = r.kappa[i] * r.kappa[i];
    c += (-theta * cp.beta[i] * (1.0 - theta / bp) + theta * theta * v[i] * cp.gamma / (nl2 * bp)) * k2;
  }
  return c;
}

/// Exact expectation of the stochastic gradient (1/(n p_i)) kappa_i x_i
/// under p: sum_i p_i (kappa_i / (n p_i)) x_i.
inline std::vector<double> expected_update_direction(const residue_vector& r,
                                                     std::span<const double> p,
                                                     const dataset& ds) {
  std::vector<double> g(ds.dim(), 0.0);
  const double n = static_cast<double>(ds.size());
  for (auto i : r.support) {
    if (!(p[i] > 0.0)) throw std::invalid_argument("probability not coherent with residue");
    ds.row(i).axpy(p[i] * (r.kappa[i] / (n * p[i])), g);
  }
  return g;
}

/// (1/n) sum kappa_i x_i, equal to grad P(w) while the primal-dual link holds.
inline std::vector<double> residue_gradient(const residue_vector& r, const dataset& ds) {
  std::vector<double> g(ds.dim(), 0.0);
  const double inv_n = 1.0 / static_cast<double>(ds.size());
  for (auto i : r.support) ds.row(i).axpy(inv_n * r.kappa[i], g);
  return g;
}

struct reference_solution {
  std::vector<double> alpha;
  std::vector<double> w;
  double primal = 0.0;
  double grad_norm_inf = 0.0;
  std::uint64_t iterations = 0;
  /// Iteration cap hit before the residue tolerance.
  bool approximate = false;
};

struct gap_report {
  double dual_term = 0.0;    // ||alpha - alpha*||_beta^2
  double primal_term = 0.0;  // ||w - w*||^2
  double gap = 0.0;          // dual_term + gamma * primal_term
  double subopt = 0.0;       // P(w) - P*
  double subopt_bound = 0.0; // (Lbar + lambda) / (2 gamma) * gap
  bool bound_holds = true;
};

inline gap_report compute_gap(const solver_state& s, const reference_solution* ref,
                              const case_params& cp, const dataset& ds,
                              const loss_model& loss) {
  if (!ref) throw std::invalid_argument("optimality gap needs a reference solution");
  gap_report g;
  for (std::size_t i = 0; i < s.alpha.size(); ++i) {
    const double d = s.alpha[i] - ref->alpha[i];
    g.dual_term += cp.beta[i] * d * d;
  }
  for (std::size_t j = 0; j < s.w.size(); ++j) {
    const double d = s.w[j] - ref->w[j];
    g.primal_term += d * d;
  }
  g.gap = g.dual_term + cp.gamma * g.primal_term;
  g.subopt = primal_objective(ds, loss, cp.lambda, s.w) - ref->primal;
  g.subopt_bound = (loss.mean_lipschitz() + cp.lambda) / (2.0 * cp.gamma) * g.gap;
  g.bound_holds = g.subopt <= g.subopt_bound + 1e-12 * (1.0 + std::abs(ref->primal));
  return g;
}

struct variance_report {
  /// E ||kappa_i x_i / (n p_i)||^2 under p.
  double second_moment = 0.0;
  /// M (2 ||alpha - alpha*||^2 + 2 L ||w - w*||^2)
  double bound = 0.0;
  double m_const = 0.0;
  double q_const = 0.0;
  double l_const = 0.0;
  double residue_norm2 = 0.0;
  bool holds = true;
};

/// Second moment of the stochastic gradient against the suboptimality bound
/// with M = Q (1 + gamma Q / (lambda^2 n)), Q = mean ||x_i||^2 and
/// L = sum_i L~_i^2 ||x_i||^2.
inline variance_report variance_check(const solver_state& s, const residue_vector& r,
                                      std::span<const double> p,
                                      const reference_solution& ref, const case_params& cp,
                                      const dataset& ds, const loss_model& loss) {
  variance_report out;
  const double n = static_cast<double>(ds.size());
  for (auto i : r.support) {
    if (!(p[i] > 0.0)) throw std::invalid_argument("probability not coherent with residue");
    const double step = r.kappa[i] / (n * p[i]);
    out.second_moment += p[i] * step * step * ds.norms()[i];
  }
  double q = 0.0, l = 0.0;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    q += ds.norms()[i];
    const double lt = loss.scalar_smoothness()[i];
    l += lt * lt * ds.norms()[i];
  }
  q /= n;
  out.q_const = q;
  out.l_const = l;
  out.m_const = q * (1.0 + cp.gamma * q / (cp.lambda * cp.lambda * n));
  double da = 0.0, dw = 0.0;
  for (std::size_t i = 0; i < s.alpha.size(); ++i)
    da += (s.alpha[i] - ref.alpha[i]) * (s.alpha[i] - ref.alpha[i]);
  for (std::size_t j = 0; j < s.w.size(); ++j) dw += (s.w[j] - ref.w[j]) * (s.w[j] - ref.w[j]);
  out.bound = out.m_const * (2.0 * da + 2.0 * l * dw);
  out.residue_norm2 = r.norm2;
  out.holds = out.second_moment <= out.bound * (1.0 + 1e-12) + 1e-300;
  return out;
}

/// One trace row per evaluation point.
struct trace_row {
  double epoch = 0.0;
  std::uint64_t iter = 0;
  double seconds = 0.0;
  double primal = 0.0;
  double subopt = std::numeric_limits<double>::quiet_NaN();
  double gap = std::numeric_limits<double>::quiet_NaN();
  double residue_norm = 0.0;
  double residue_p90 = 0.0;
  double theta = 0.0;
};

/// What an observer sees before each update.
struct iteration_view {
  std::uint64_t iteration;
  const solver_state& state;
  const residue_vector& residues;
  /// Per-coordinate probabilities the step uses (b p_i is the inclusion
  /// probability for mini-batches).
  std::span<const double> p;
  double theta;
  double batch;
  const case_params& cp;
  std::span<const double> v;
  std::span<const std::uint32_t> selected;
};

using iteration_observer = std::function<void(const iteration_view&)>;

struct run_result {
  std::vector<trace_row> trace;
  solver_state state;
  /// "epochs", "target", or "converged: zero residue".
  std::string status;
  std::map<std::size_t, std::vector<double>> residue_snapshots;
  std::size_t link_resyncs = 0;
  std::uint64_t samples = 0;
};

/// Nearest-rank 90th percentile of |kappa|.
inline double residue_p90(const residue_vector& r) {
  std::vector<double> a(r.kappa.size());
  for (std::size_t i = 0; i < a.size(); ++i) a[i] = std::abs(r.kappa[i]);
  const std::size_t rank =
      static_cast<std::size_t>(std::ceil(0.9 * static_cast<double>(a.size()))) - 1;
  std::nth_element(a.begin(), a.begin() + static_cast<std::ptrdiff_t>(rank), a.end());
  return a[rank];
}

namespace detail {

/// Water-filling cap: entries above `cap` are clipped and the rest rescaled
/// so the total stays `total`. Returns whether any entry was clipped.
inline bool cap_and_rescale(std::vector<double>& q, double total, double cap) {
  std::vector<char> clipped(q.size(), 0);
  bool any = false;
  for (;;) {
    double free_sum = 0.0;
    std::size_t n_clipped = 0;
    for (std::size_t i = 0; i < q.size(); ++i) {
      if (clipped[i]) ++n_clipped;
      else free_sum += q[i];
    }
    const double scale = (total - static_cast<double>(n_clipped) * cap) / free_sum;
    bool changed = false;
    for (std::size_t i = 0; i < q.size(); ++i) {
      if (clipped[i]) continue;
      if (q[i] * scale > cap) {
        clipped[i] = 1;
        q[i] = cap;
        changed = true;
      }
    }
    if (!changed) {
      if (n_clipped == 0) return any;
      for (std::size_t i = 0; i < q.size(); ++i)
        if (!clipped[i]) q[i] *= scale;
      return true;
    }
    any = true;
  }
}

class run_driver {
 public:
  run_driver(const solver_config& cfg, const dataset& ds, const loss_model& loss,
             const reference_solution* ref)
      : cfg_(cfg), ds_(ds), loss_(loss), ref_(ref),
        cp_(make_case_params(cfg.convexity, loss, cfg.lambda)),
        start_(std::chrono::steady_clock::now()) {
    cfg.validate(ds.size());
    if (cfg.target_subopt > 0.0 && !ref)
      throw std::invalid_argument("target suboptimality needs a reference solution");
    result_.state = make_state(ds, cfg.lambda, cfg.alpha0);
    for (auto e : cfg.snapshot_epochs) snapshots_wanted_.push_back(e);
    std::sort(snapshots_wanted_.begin(), snapshots_wanted_.end());
  }

  const case_params& cp() const { return cp_; }
  solver_state& state() { return result_.state; }

  /// Records evaluation rows, snapshots and link checks due at the current
  /// sample count; returns false when the run should stop.
  bool checkpoint(double theta) {
    const double n = static_cast<double>(ds_.size());
    const double per_eval = n / static_cast<double>(cfg_.evals_per_epoch);
    bool stop = false;
    while (static_cast<double>(result_.samples) + 1e-9 >= next_eval_ * per_eval) {
      const bool integer_epoch = next_eval_ % cfg_.evals_per_epoch == 0;
      const std::size_t epoch = next_eval_ / cfg_.evals_per_epoch;
      if (integer_epoch && epoch > 0) enforce_link();
      const auto r = compute_residues(result_.state.alpha, result_.state.w, ds_, loss_);
      if (integer_epoch) take_snapshot(epoch, r);
      stop = record(r, theta) || stop;
      ++next_eval_;
      if (next_eval_ > cfg_.epochs * cfg_.evals_per_epoch) {
        if (result_.status.empty()) result_.status = "epochs";
        return false;
      }
    }
    return !stop;
  }

  /// Final row when stopping between evaluation points.
  void finish(std::string status, double theta) {
    if (result_.status.empty()) result_.status = std::move(status);
    const auto r = compute_residues(result_.state.alpha, result_.state.w, ds_, loss_);
    if (result_.trace.empty() || result_.trace.back().iter != result_.state.iteration) record(r, theta);
    // Snapshots requested past a zero-residue exit describe the final state.
    const double epoch = static_cast<double>(result_.samples) / static_cast<double>(ds_.size());
    for (auto e : snapshots_wanted_)
      if (static_cast<double>(e) >= epoch && !result_.residue_snapshots.count(e)) take_snapshot(e, r);
  }

  void advance(std::uint64_t samples) {
    result_.samples += samples;
    ++result_.state.iteration;
  }

  run_result take() { return std::move(result_); }

 private:
  void enforce_link() {
    const double resid = link_residual(result_.state, ds_, cfg_.lambda);
    double wn = 0.0;
    for (double x : result_.state.w) wn += x * x;
    if (resid > 1e-8 * (1.0 + std::sqrt(wn))) {
      result_.state.w = primal_from_dual(ds_, cfg_.lambda, result_.state.alpha);
      ++result_.link_resyncs;
    }
  }

  void take_snapshot(std::size_t epoch, const residue_vector& r) {
    if (!std::binary_search(snapshots_wanted_.begin(), snapshots_wanted_.end(), epoch)) return;
    std::vector<double> a(r.kappa.size());
    for (std::size_t i = 0; i < a.size(); ++i) a[i] = std::abs(r.kappa[i]);
    result_.residue_snapshots[epoch] = std::move(a);
  }

  bool record(const residue_vector& r, double theta) {
    trace_row row;
    row.epoch = static_cast<double>(result_.samples) / static_cast<double>(ds_.size());
    row.iter = result_.state.iteration;
    row.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    row.primal = primal_objective(ds_, loss_, cfg_.lambda, result_.state.w);
    row.residue_norm = std::sqrt(r.norm2);
    row.residue_p90 = residue_p90(r);
    row.theta = theta;
    bool reached = false;
    if (ref_) {
      row.subopt = row.primal - ref_->primal;
      row.gap = compute_gap(result_.state, ref_, cp_, ds_, loss_).gap;
      reached = cfg_.target_subopt > 0.0 && row.subopt <= cfg_.target_subopt;
      if (reached) result_.status = "target";
    }
    result_.trace.push_back(row);
    return reached;
  }

  const solver_config& cfg_;
  const dataset& ds_;
  const loss_model& loss_;
  const reference_solution* ref_;
  case_params cp_;
  std::chrono::steady_clock::time_point start_;
  run_result result_;
  std::size_t next_eval_ = 0;
  std::vector<std::size_t> snapshots_wanted_;
};

inline constexpr const char* zero_residue_status = "converged: zero residue";

}  // namespace detail

/// Adaptive dual-free SDCA: residues, optimal probabilities and an alias
/// table are rebuilt every iteration.
inline run_result run_adfsdca(const solver_config& cfg, const dataset& ds,
                              const loss_model& loss, const reference_solution* ref = nullptr,
                              const iteration_observer& observe = {}) {
  detail::run_driver run(cfg, ds, loss, ref);
  const auto& cp = run.cp();
  const auto& v = ds.norms();
  const double floor_theta = theta_lower_bound(cp, v, 1);
  counter_rng rng(cfg.seed);
  double theta = 0.0;
  if (!run.checkpoint(theta)) return run.take();
  for (;;) {
    auto& s = run.state();
    const auto r = compute_residues(s.alpha, s.w, ds, loss);
    if (r.converged()) {
      run.finish(detail::zero_residue_status, theta);
      return run.take();
    }
    const auto p = optimal_probabilities(r, cp, v);
    const alias_table table(p);
    const std::size_t i = table.draw(rng);
    if (cfg.theta_override) {
      theta = *cfg.theta_override;
    } else if (cfg.theta == theta_policy::fixed) {
      theta = floor_theta;
    } else {
      theta = std::min(1.0, theta_of(r, p, cp, v));
      assert(theta >= floor_theta * (1.0 - 1e-9));
    }
    s.theta = theta;
    if (observe) {
      const std::uint32_t sel[1] = {static_cast<std::uint32_t>(i)};
      observe({s.iteration, s, r, p, theta, 1.0, cp, v, sel});
    }
    step_serial(s, i, p[i], r.kappa[i], theta, ds, cfg.lambda);
    run.advance(1);
    if (!run.checkpoint(theta)) return run.take();
  }
}

/// Uniform dual-free SDCA with the fixed step lambda / (lambda n + max v_i L~_i).
inline run_result run_dfsdca_uniform(const solver_config& cfg, const dataset& ds,
                                     const loss_model& loss,
                                     const reference_solution* ref = nullptr,
                                     const iteration_observer& observe = {}) {
  detail::run_driver run(cfg, ds, loss, ref);
  const auto& cp = run.cp();
  const double n = static_cast<double>(ds.size());
  const double theta = cfg.theta_override.value_or(uniform_theta(ds, loss, cfg.lambda));
  const std::vector<double> uniform(ds.size(), 1.0 / n);
  counter_rng rng(cfg.seed);
  if (!run.checkpoint(theta)) return run.take();
  for (;;) {
    auto& s = run.state();
    const auto i = static_cast<std::size_t>(rng.below(ds.size()));
    s.theta = theta;
    if (observe) {
      const auto r = compute_residues(s.alpha, s.w, ds, loss);
      const std::uint32_t sel[1] = {static_cast<std::uint32_t>(i)};
      observe({s.iteration, s, r, uniform, theta, 1.0, cp, ds.norms(), sel});
    }
    step_serial(s, i, uniform[i], residue_at(i, s.alpha, s.w, ds, loss), theta, ds, cfg.lambda);
    run.advance(1);
    if (!run.checkpoint(theta)) return run.take();
  }
}

/// Heuristic adaptive dual-free SDCA: optimal probabilities are refreshed
/// once per pass and the sampled coordinate's weight is divided by `shrink`
/// after each step. The step parameter is fixed for the pass.
inline run_result run_adfsdca_plus(const solver_config& cfg, const dataset& ds,
                                   const loss_model& loss,
                                   const reference_solution* ref = nullptr,
                                   const iteration_observer& observe = {}) {
  detail::run_driver run(cfg, ds, loss, ref);
  const auto& cp = run.cp();
  const auto& v = ds.norms();
  const double floor_theta = theta_lower_bound(cp, v, 1);
  counter_rng rng(cfg.seed);
  tree_sampler tree;
  double theta = 0.0;
  std::uint64_t since_refresh = ds.size();
  if (!run.checkpoint(theta)) return run.take();
  for (;;) {
    auto& s = run.state();
    if (since_refresh >= ds.size() || !(tree.total() > 0.0)) {
      const auto r = compute_residues(s.alpha, s.w, ds, loss);
      if (r.converged()) {
        run.finish(detail::zero_residue_status, theta);
        return run.take();
      }
      const auto p = optimal_probabilities(r, cp, v);
      tree.rebuild(p);
      if (cfg.theta_override) theta = *cfg.theta_override;
      else if (cfg.theta == theta_policy::fixed) theta = floor_theta;
      else theta = std::min(1.0, theta_of(r, p, cp, v));
      since_refresh = 0;
    }
    tree_sampler::sample pick;
    try {
      pick = tree.draw(rng);
    } catch (const std::domain_error&) {
      since_refresh = ds.size();
      continue;
    }
    const std::size_t i = pick.index;
    const double kappa = residue_at(i, s.alpha, s.w, ds, loss);
    // theta was sized for the refresh-time kappa; a coordinate drawn after
    // shrinking (or whose residue grew) could take a step theta/p far past
    // the single-coordinate safe step, so cap the multiplier there.
    double step_theta = theta;
    if (!cfg.theta_override) {
      const double a = cp.nl2() * cp.beta[i];
      step_theta = std::min(theta, a / (a + v[i] * cp.gamma) * pick.probability);
    }
    s.theta = step_theta;
    if (observe) {
      const auto r = compute_residues(s.alpha, s.w, ds, loss);
      std::vector<double> p(ds.size());
      for (std::size_t j = 0; j < p.size(); ++j) p[j] = tree.weight(j) / tree.total();
      const std::uint32_t sel[1] = {static_cast<std::uint32_t>(i)};
      observe({s.iteration, s, r, p, step_theta, 1.0, cp, v, sel});
    }
    step_serial(s, i, pick.probability, kappa, step_theta, ds, cfg.lambda);
    tree.update(i, tree.weight(i) / cfg.shrink);
    ++since_refresh;
    run.advance(1);
    if (!run.checkpoint(theta)) return run.take();
  }
}

/// Mini-batch adaptive dual-free SDCA with fixed-marginal non-uniform
/// batches and ESO step sizes.
inline run_result run_minibatch(const solver_config& cfg, const dataset& ds,
                                const loss_model& loss, const reference_solution* ref = nullptr,
                                const iteration_observer& observe = {}) {
  detail::run_driver run(cfg, ds, loss, ref);
  const auto& cp = run.cp();
  const std::size_t b = cfg.batch;
  const double bd = static_cast<double>(b);
  const auto eso = eso_v(ds, b, cfg.eso);
  const auto& v = eso.v;
  const double floor_theta = theta_lower_bound(cp, v, b);
  constexpr double cap = 1.0 - 1e-6;
  const double nl = static_cast<double>(ds.size()) * cfg.lambda;

  counter_rng rng(cfg.seed);
  std::vector<double> delta(ds.dim(), 0.0);
  std::vector<std::uint32_t> selected, local;
  std::vector<std::uint8_t> marks;
  std::vector<double> q_local;
  double theta = 0.0;
  if (!run.checkpoint(theta)) return run.take();
  for (;;) {
    auto& s = run.state();
    const auto r = compute_residues(s.alpha, s.w, ds, loss);
    if (r.converged()) {
      run.finish(detail::zero_residue_status, theta);
      return run.take();
    }
    auto p = optimal_probabilities(r, cp, v);
    bool reshaped = false;
    selected.clear();
    if (b == 1) {
      // Same selection path as the serial method.
      const alias_table table(p);
      selected.push_back(static_cast<std::uint32_t>(table.draw(rng)));
    } else if (r.support.size() <= b) {
      for (auto i : r.support) {
        selected.push_back(i);
        p[i] = 1.0 / bd;
      }
      reshaped = true;
    } else {
      q_local.resize(r.support.size());
      for (std::size_t k = 0; k < r.support.size(); ++k) q_local[k] = bd * p[r.support[k]];
      reshaped = detail::cap_and_rescale(q_local, bd, cap);
      for (std::size_t k = 0; k < r.support.size(); ++k) p[r.support[k]] = q_local[k] / bd;
      const sampling_plan plan(q_local, b);
      plan.draw(rng, local, marks);
      for (auto k : local) selected.push_back(r.support[k]);
    }
    std::sort(selected.begin(), selected.end());

    if (cfg.theta_override) {
      theta = *cfg.theta_override;
    } else if (cfg.theta == theta_policy::fixed) {
      theta = reshaped ? std::min(floor_theta, bd * theta_of(r, p, cp, v)) : floor_theta;
    } else {
      theta = std::min(1.0, bd * theta_of(r, p, cp, v));
    }
    s.theta = theta;
    if (observe) observe({s.iteration, s, r, p, theta, bd, cp, v, selected});

    if (selected.size() == 1) {
      const auto i = selected.front();
      step_serial(s, i, bd * p[i], r.kappa[i], theta, ds, cfg.lambda);
    } else {
      for (auto i : selected) {
        const double bp = bd * p[i];
        s.alpha[i] -= theta / bp * r.kappa[i];
        ds.row(i).axpy(theta / (nl * bp) * r.kappa[i], delta);
      }
      for (auto i : selected)
        for (auto j : ds.row(i).index) {
          s.w[j] -= delta[j];
          delta[j] = 0.0;
        }
    }
    run.advance(b);
    if (!run.checkpoint(theta)) return run.take();
  }
}

inline run_result run_solver(const solver_config& cfg, const dataset& ds,
                             const loss_model& loss, const reference_solution* ref = nullptr,
                             const iteration_observer& observe = {}) {
  switch (cfg.algo) {
    case variant::dfsdca: return run_dfsdca_uniform(cfg, ds, loss, ref, observe);
    case variant::adfsdca: return run_adfsdca(cfg, ds, loss, ref, observe);
    case variant::adfsdca_plus: return run_adfsdca_plus(cfg, ds, loss, ref, observe);
    case variant::minibatch: return run_minibatch(cfg, ds, loss, ref, observe);
  }
  throw std::logic_error("unhandled variant");
}

struct reference_options {
  double residue_tolerance = 1e-12;
  std::size_t max_epochs = 5000;
  double gradient_tolerance = 1e-8;
  std::uint64_t seed = 0x5eed;
};

/// High-accuracy minimizer: adaptive dual-free SDCA until max |kappa| falls
/// below the tolerance; alpha* is then -l'(X w*).
inline reference_solution run_reference(const dataset& ds, const loss_model& loss,
                                        double lambda, const reference_options& opt = {}) {
  if (!(lambda > 0.0)) throw std::invalid_argument("lambda must be > 0");
  const auto cp = make_case_params(convexity_case::all_convex, loss, lambda);
  const auto& v = ds.norms();
  auto s = make_state(ds, lambda);
  counter_rng rng(opt.seed);
  reference_solution out;
  const std::uint64_t cap = static_cast<std::uint64_t>(opt.max_epochs) * ds.size();
  bool done = false;
  for (std::uint64_t t = 0; t < cap; ++t) {
    if (t % ds.size() == 0 && t > 0) s.w = primal_from_dual(ds, lambda, s.alpha);
    const auto r = compute_residues(s.alpha, s.w, ds, loss);
    double kmax = 0.0;
    for (auto i : r.support) kmax = std::max(kmax, std::abs(r.kappa[i]));
    if (kmax < opt.residue_tolerance) {
      done = true;
      break;
    }
    const auto p = optimal_probabilities(r, cp, v);
    const alias_table table(p);
    const std::size_t i = table.draw(rng);
    step_serial(s, i, p[i], r.kappa[i], std::min(1.0, theta_of(r, p, cp, v)), ds, lambda);
    ++out.iterations;
  }
  out.approximate = !done;
  out.w = std::move(s.w);
  out.alpha.resize(ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i)
    out.alpha[i] = -loss.derivative(ds.row(i).dot(out.w), ds.label(i));
  out.primal = primal_objective(ds, loss, lambda, out.w);
  const auto g = primal_gradient(ds, loss, lambda, out.w);
  for (double x : g) out.grad_norm_inf = std::max(out.grad_norm_inf, std::abs(x));
  if (out.grad_norm_inf > opt.gradient_tolerance) out.approximate = true;
  return out;
}

}  // namespace adfsdca

#endif
