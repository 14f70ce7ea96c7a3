#ifndef ADFSDCA_SAMPLER_HPP
#define ADFSDCA_SAMPLER_HPP

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "adfsdca/rng.hpp"

namespace adfsdca {

/// Work counters for cost accounting; samplers bump these when given one.
struct op_counter {
  std::uint64_t calls = 0;
  /// Table entries or tree nodes read/written.
  std::uint64_t touches = 0;
  /// Random numbers consumed.
  std::uint64_t randoms = 0;
};

namespace detail {

inline double checked_total(std::span<const double> p, double tolerance) {
  if (p.empty()) throw std::invalid_argument("empty probability vector");
  double total = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (!(p[i] >= 0.0) || !std::isfinite(p[i]))
      throw std::invalid_argument("negative or non-finite weight at index " + std::to_string(i));
    total += p[i];
  }
  if (!(total > 0.0)) throw std::invalid_argument("weights sum to zero");
  if (tolerance > 0.0 && std::abs(total - 1.0) > tolerance)
    throw std::invalid_argument("probabilities do not sum to 1");
  return total;
}

}  // namespace detail

/// Walker/Vose alias table: O(n) build, O(1) draw.
class alias_table {
 public:
  alias_table() = default;

  /// `p` must be nonnegative and sum to 1 within 1e-9.
  explicit alias_table(std::span<const double> p) : alias_table(p, 1e-9) {}

  /// Unnormalized weights (any positive total) when `tolerance` is 0.
  alias_table(std::span<const double> p, double tolerance) : source_(p.begin(), p.end()) {
    const double total = detail::checked_total(p, tolerance);
    const std::size_t n = p.size();
    threshold_.assign(n, 1.0);
    alias_.resize(n);
    std::iota(alias_.begin(), alias_.end(), std::uint32_t{0});

    std::vector<double> scaled(n);
    std::vector<std::uint32_t> small, large;
    small.reserve(n);
    large.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
      scaled[i] = p[i] / total * static_cast<double>(n);
      (scaled[i] < 1.0 ? small : large).push_back(static_cast<std::uint32_t>(i));
    }
    std::uint32_t last_large = large.empty() ? 0 : large.back();
    while (!small.empty() && !large.empty()) {
      const auto s = small.back();
      small.pop_back();
      const auto l = large.back();
      threshold_[s] = scaled[s];
      alias_[s] = l;
      scaled[l] = (scaled[l] + scaled[s]) - 1.0;
      last_large = l;
      if (scaled[l] < 1.0) {
        large.pop_back();
        small.push_back(l);
      }
    }
    for (auto l : large) threshold_[l] = 1.0;
    // Leftover small entries carry rounding mass only; a zero-weight entry
    // must never be returned, so route it to a positive one.
    for (auto s : small) {
      if (p[s] > 0.0) {
        threshold_[s] = 1.0;
      } else {
        threshold_[s] = 0.0;
        alias_[s] = last_large;
      }
    }
  }

  std::size_t size() const { return threshold_.size(); }

  std::size_t draw(counter_rng& rng, op_counter* ops = nullptr) const {
    const auto column = static_cast<std::size_t>(rng.below(threshold_.size()));
    const double coin = rng.uniform();
    if (ops) {
      ++ops->calls;
      ops->randoms += 2;
      ops->touches += 2;
    }
    return coin < threshold_[column] ? column : alias_[column];
  }

  /// Probability mass each index receives from the bucket structure.
  std::vector<double> reconstructed() const {
    const double inv_n = 1.0 / static_cast<double>(size());
    std::vector<double> q(size(), 0.0);
    for (std::size_t i = 0; i < size(); ++i) {
      q[i] += threshold_[i] * inv_n;
      q[alias_[i]] += (1.0 - threshold_[i]) * inv_n;
    }
    return q;
  }

  const std::vector<double>& source() const { return source_; }
  const std::vector<double>& thresholds() const { return threshold_; }
  const std::vector<std::uint32_t>& aliases() const { return alias_; }

 private:
  std::vector<double> source_;
  std::vector<double> threshold_;
  std::vector<std::uint32_t> alias_;
};

/// Reference sampler: inverse CDF by binary search.
class cdf_sampler {
 public:
  explicit cdf_sampler(std::span<const double> w) : cdf_(w.size()) {
    detail::checked_total(w, 0.0);
    std::partial_sum(w.begin(), w.end(), cdf_.begin());
  }

  std::size_t draw(counter_rng& rng) const {
    const double target = rng.uniform() * cdf_.back();
    auto it = std::upper_bound(cdf_.begin(), cdf_.end(), target);
    if (it == cdf_.end()) --it;
    return static_cast<std::size_t>(it - cdf_.begin());
  }

 private:
  std::vector<double> cdf_;
};

/// Fenwick (binary indexed) tree over nonnegative weights: O(log n) update
/// and draw, draw probabilities w_i / sum(w).
class tree_sampler {
 public:
  struct sample {
    std::size_t index;
    double probability;
  };

  tree_sampler() = default;

  explicit tree_sampler(std::span<const double> w) { rebuild(w); }

  void rebuild(std::span<const double> w) {
    if (w.empty()) throw std::invalid_argument("empty weight vector");
    weights_.assign(w.begin(), w.end());
    for (std::size_t i = 0; i < w.size(); ++i)
      if (!(w[i] >= 0.0) || !std::isfinite(w[i]))
        throw std::invalid_argument("negative or non-finite weight at index " + std::to_string(i));
    rebuild_nodes();
  }

  std::size_t size() const { return weights_.size(); }
  double total() const { return total_; }
  double weight(std::size_t i) const { return weights_[i]; }
  const std::vector<double>& weights() const { return weights_; }

  /// Sets w_i; returns the number of tree nodes written.
  std::size_t update(std::size_t i, double new_weight, op_counter* ops = nullptr) {
    if (i >= size()) throw std::out_of_range("tree_sampler index out of range");
    if (!(new_weight >= 0.0) || !std::isfinite(new_weight))
      throw std::invalid_argument("negative or non-finite weight");
    const double delta = new_weight - weights_[i];
    weights_[i] = new_weight;
    std::size_t touched = 0;
    for (std::size_t k = i + 1; k <= size(); k += k & (~k + 1)) {
      nodes_[k] += delta;
      ++touched;
    }
    total_ = std::max(0.0, total_ + delta);
    if (ops) {
      ++ops->calls;
      ops->touches += touched;
    }
    return touched;
  }

  /// Throws std::domain_error when every weight is zero.
  sample draw(counter_rng& rng, op_counter* ops = nullptr) {
    for (int attempt = 0;; ++attempt) {
      if (!(total_ > 0.0) || attempt == 64) {
        // Rebuild from stored weights to shed accumulated rounding error.
        rebuild_nodes();
        if (!(total_ > 0.0)) throw std::domain_error("all sampler weights are zero");
      }
      double target = rng.uniform() * total_;
      std::size_t pos = 0;
      std::size_t touched = 0;
      for (std::size_t step = std::bit_floor(size()); step > 0; step >>= 1) {
        if (pos + step <= size()) {
          ++touched;
          if (nodes_[pos + step] <= target) {
            target -= nodes_[pos + step];
            pos += step;
          }
        }
      }
      if (ops) {
        ++ops->calls;
        ++ops->randoms;
        ops->touches += touched;
      }
      if (pos < size() && weights_[pos] > 0.0) return {pos, weights_[pos] / total_};
    }
  }

  /// Sum of stored weights from scratch, for auditing the cached total.
  double exact_total() const {
    double s = 0.0;
    for (double x : weights_) s += x;
    return s;
  }

 private:
  void rebuild_nodes() {
    const std::size_t n = weights_.size();
    nodes_.assign(n + 1, 0.0);
    for (std::size_t k = 1; k <= n; ++k) {
      nodes_[k] += weights_[k - 1];
      const std::size_t parent = k + (k & (~k + 1));
      if (parent <= n) nodes_[parent] += nodes_[k];
    }
    total_ = exact_total();
  }

  std::vector<double> weights_;
  std::vector<double> nodes_;
  double total_ = 0.0;
};

/// One mixture component of a fixed-marginal mini-batch sampling: with
/// probability `mass`, take sorted positions [0, first) and `b - first`
/// uniform picks from [first, last]. Positions refer to the descending
/// order of the marginals.
struct plan_level {
  double mass;
  std::size_t first;
  std::size_t last;
};

/// A size-b sampling whose inclusion probabilities equal prescribed
/// marginals q (sum q = b, 0 < q_i < 1), built by peeling mixture levels.
class sampling_plan {
 public:
  sampling_plan() = default;

  sampling_plan(std::span<const double> q, std::size_t b) : batch_(b) {
    const std::size_t n = q.size();
    if (b < 1 || b >= n)
      throw std::invalid_argument("batch size must satisfy 1 <= b < n (b=" +
                                  std::to_string(b) + ", n=" + std::to_string(n) + ")");
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (!(q[i] > 0.0 && q[i] < 1.0))
        throw std::invalid_argument("marginal q[" + std::to_string(i) + "] = " +
                                    std::to_string(q[i]) + " outside (0, 1)");
      sum += q[i];
    }
    if (std::abs(sum - static_cast<double>(b)) > 1e-9)
      throw std::invalid_argument("marginals sum to " + std::to_string(sum) + ", expected " +
                                  std::to_string(b));

    order_.resize(n);
    std::iota(order_.begin(), order_.end(), std::uint32_t{0});
    std::stable_sort(order_.begin(), order_.end(),
                     [&](std::uint32_t a, std::uint32_t c) { return q[a] > q[c]; });
    std::vector<double> rest(n + 1, 0.0);
    for (std::size_t k = 0; k < n; ++k) rest[k] = q[order_[k]];

    constexpr double tie = 1e-12;
    const std::size_t pivot = b - 1;
    for (std::size_t iter = 0; iter < n; ++iter) {
      const double qb = rest[pivot];
      std::size_t first = pivot, last = pivot;
      while (first > 0 && std::abs(rest[first - 1] - qb) <= tie) --first;
      while (last + 1 < n && std::abs(rest[last + 1] - qb) <= tie) ++last;
      const double width = static_cast<double>(last - first + 1);
      const double picks = static_cast<double>(b - first);

      // Largest mass that keeps the sorted order: the block may not fall
      // below the next entry, nor the deterministic head below the block.
      double mass = width / picks * (qb - rest[last + 1]);
      if (first > 0 && last + 1 > b)
        mass = std::min(mass, width / static_cast<double>(last + 1 - b) * (rest[first - 1] - qb));

      const bool final_level = first == 0 && last + 1 == n;
      // A block ending at b is deterministic: record it as "all of [0, b)".
      if (last == pivot)
        levels_.push_back({mass, 0, pivot});
      else
        levels_.push_back({mass, first, last});
      if (final_level) break;
      for (std::size_t k = 0; k < first; ++k) rest[k] -= mass;
      for (std::size_t k = first; k <= last; ++k) rest[k] -= picks / width * mass;
      // Snap entries that met a neighbour so the next block sees an exact tie.
      for (std::size_t k = first; k > 0 && std::abs(rest[k - 1] - rest[first]) <= tie; --k)
        rest[k - 1] = rest[first];
      if (std::abs(rest[last] - rest[last + 1]) <= tie)
        for (std::size_t k = first; k <= last; ++k) rest[k] = rest[last + 1];
    }
    if (levels_.empty() || levels_.back().first != 0 || levels_.back().last + 1 != n)
      throw std::logic_error("mini-batch plan did not terminate within n levels");

    // Compensated sum of the leading masses; the final level takes the rest.
    double s = 0.0, c = 0.0;
    for (std::size_t k = 0; k + 1 < levels_.size(); ++k) {
      const double y = levels_[k].mass - c;
      const double t = s + y;
      c = (t - s) - y;
      s = t;
    }
    levels_.back().mass = 1.0 - s;
    if (levels_.back().mass < -1e-10)
      throw std::logic_error("mini-batch plan masses exceed 1");
    levels_.back().mass = std::max(levels_.back().mass, 0.0);

    std::vector<double> masses(levels_.size());
    for (std::size_t k = 0; k < levels_.size(); ++k) masses[k] = levels_[k].mass;
    level_table_ = alias_table(masses, 0.0);
  }

  std::size_t size() const { return order_.size(); }
  std::size_t batch() const { return batch_; }
  const std::vector<plan_level>& levels() const { return levels_; }
  /// order()[k] is the original coordinate at sorted position k.
  const std::vector<std::uint32_t>& order() const { return order_; }

  /// Exact inclusion probability of every coordinate (original order).
  std::vector<double> marginals() const {
    std::vector<double> sorted(size(), 0.0);
    for (const auto& lv : levels_) {
      const double share = static_cast<double>(batch_ - lv.first) /
                           static_cast<double>(lv.last - lv.first + 1);
      for (std::size_t k = 0; k < lv.first; ++k) sorted[k] += lv.mass;
      for (std::size_t k = lv.first; k <= lv.last; ++k) sorted[k] += lv.mass * share;
    }
    std::vector<double> q(size());
    for (std::size_t k = 0; k < size(); ++k) q[order_[k]] = sorted[k];
    return q;
  }

  /// Exact P(i and j both drawn), row-major n x n in original order; the
  /// diagonal holds the marginals.
  std::vector<double> pair_inclusions() const {
    const std::size_t n = size();
    std::vector<double> sorted(n * n, 0.0);
    for (const auto& lv : levels_) {
      const double m = static_cast<double>(batch_ - lv.first);
      const double w = static_cast<double>(lv.last - lv.first + 1);
      const double one = m / w;
      const double two = w > 1 ? m * (m - 1) / (w * (w - 1)) : 0.0;
      auto in = [&](std::size_t k) { return k < lv.first ? 1.0 : k <= lv.last ? one : 0.0; };
      for (std::size_t a = 0; a <= lv.last; ++a)
        for (std::size_t c = 0; c <= lv.last; ++c) {
          double pr;
          if (a == c) pr = in(a);
          else if (a < lv.first || c < lv.first) pr = in(a) * in(c);
          else pr = two;
          sorted[a * n + c] += lv.mass * pr;
        }
    }
    std::vector<double> out(n * n);
    for (std::size_t a = 0; a < n; ++a)
      for (std::size_t c = 0; c < n; ++c) out[order_[a] * n + order_[c]] = sorted[a * n + c];
    return out;
  }

  /// Draws b distinct coordinates (original order, unsorted) into `out`.
  /// `marks` is caller-owned scratch; it is resized and left cleared.
  void draw(counter_rng& rng, std::vector<std::uint32_t>& out,
            std::vector<std::uint8_t>& marks) const {
    const auto& lv = levels_[level_table_.draw(rng)];
    out.resize(batch_ + 1);  // the branch-free copy below may store one slot past b
    std::uint32_t* dst = out.data();
    std::copy(order_.begin(), order_.begin() + static_cast<std::ptrdiff_t>(lv.first), dst);
    dst += lv.first;

    // Floyd's algorithm: uniform (b - first)-subset of [first, last]. When
    // more than half the block is picked, the excluded positions are drawn
    // instead. Branch-free on the marks: these flips are unpredictable.
    const std::size_t width = lv.last - lv.first + 1;
    const std::size_t picks = batch_ - lv.first;
    if (marks.size() < width) marks.assign(width, 0);
    std::uint8_t* m = marks.data();
    const std::uint32_t* block = order_.data() + lv.first;
    if (2 * picks <= width) {
      std::uint32_t* pos = dst;
      for (std::size_t j = width - picks; j < width; ++j) {
        auto t = static_cast<std::uint32_t>(rng.below(j + 1));
        t = m[t] ? static_cast<std::uint32_t>(j) : t;
        m[t] = 1;
        *pos++ = t;
      }
      for (; dst != pos; ++dst) {
        m[*dst] = 0;
        *dst = block[*dst];
      }
    } else {
      for (std::size_t j = picks; j < width; ++j) {
        auto t = static_cast<std::size_t>(rng.below(j + 1));
        t = m[t] ? j : t;
        m[t] = 1;
      }
      for (std::size_t k = 0; k < width; ++k) {
        *dst = block[k];
        dst += !m[k];
        m[k] = 0;
      }
    }
    out.resize(batch_);
  }

  std::vector<std::uint32_t> draw(counter_rng& rng) const {
    std::vector<std::uint32_t> out;
    std::vector<std::uint8_t> marks;
    draw(rng, out, marks);
    return out;
  }

 private:
  std::size_t batch_ = 1;
  std::vector<std::uint32_t> order_;
  std::vector<plan_level> levels_;
  alias_table level_table_;
};

inline sampling_plan plan_build(std::span<const double> q, std::size_t b) {
  return sampling_plan(q, b);
}

}  // namespace adfsdca

#endif
