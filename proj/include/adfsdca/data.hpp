#ifndef ADFSDCA_DATA_HPP
#define ADFSDCA_DATA_HPP

#include <zlib.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <optional>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "adfsdca/rng.hpp"

namespace adfsdca {

class parse_error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Read-only view of one sparse example.
struct sparse_row {
  std::span<const std::uint32_t> index;
  std::span<const double> value;

  std::size_t nnz() const { return index.size(); }

  double dot(std::span<const double> w) const {
    double s = 0.0;
    for (std::size_t k = 0; k < index.size(); ++k) s += value[k] * w[index[k]];
    return s;
  }

  /// w += a * x
  void axpy(double a, std::span<double> w) const {
    for (std::size_t k = 0; k < index.size(); ++k) w[index[k]] += a * value[k];
  }
};

/// Immutable row-compressed example matrix with labels and the per-example
/// statistics the solvers consume. Indices are 0-based.
class dataset {
 public:
  dataset() = default;

  /// Takes ownership of CSR arrays; validates structure and computes stats.
  dataset(std::size_t dim, std::vector<std::size_t> row_ptr,
          std::vector<std::uint32_t> col, std::vector<double> val,
          std::vector<double> labels, bool binary_labels)
      : d_(dim),
        row_ptr_(std::move(row_ptr)),
        col_(std::move(col)),
        val_(std::move(val)),
        labels_(std::move(labels)),
        binary_(binary_labels) {
    if (row_ptr_.size() < 2) throw std::invalid_argument("empty dataset");
    if (d_ == 0) throw std::invalid_argument("dataset dimension must be >= 1");
    if (labels_.size() != size())
      throw std::invalid_argument("label count does not match row count");
    if (row_ptr_.front() != 0 || row_ptr_.back() != col_.size() ||
        col_.size() != val_.size())
      throw std::invalid_argument("inconsistent CSR arrays");
    for (std::size_t i = 0; i < size(); ++i) {
      for (std::size_t k = row_ptr_[i]; k < row_ptr_[i + 1]; ++k) {
        if (col_[k] >= d_) throw std::invalid_argument("feature index out of range");
        if (k > row_ptr_[i] && col_[k] <= col_[k - 1])
          throw std::invalid_argument("row indices not strictly increasing");
        if (val_[k] == 0.0) throw std::invalid_argument("explicit zero stored");
      }
    }
    compute_stats();
  }

  std::size_t size() const { return row_ptr_.size() - 1; }
  std::size_t dim() const { return d_; }
  std::size_t nnz() const { return col_.size(); }

  sparse_row row(std::size_t i) const {
    const std::size_t b = row_ptr_[i], e = row_ptr_[i + 1];
    return {std::span<const std::uint32_t>(col_.data() + b, e - b),
            std::span<const double>(val_.data() + b, e - b)};
  }

  const std::vector<double>& labels() const { return labels_; }
  double label(std::size_t i) const { return labels_[i]; }
  /// Squared row norms v_i = ||x_i||^2.
  const std::vector<double>& norms() const { return norms_; }
  std::size_t max_example_nnz() const { return max_example_nnz_; }
  std::size_t max_feature_degree() const { return max_feature_degree_; }
  /// True when every label is in {-1, +1} after mapping.
  bool binary_labels() const { return binary_; }

  const std::vector<std::size_t>& row_ptr() const { return row_ptr_; }
  const std::vector<std::uint32_t>& columns() const { return col_; }
  const std::vector<double>& values() const { return val_; }

  /// Xw, one margin per example.
  std::vector<double> margins(std::span<const double> w) const {
    std::vector<double> m(size());
    for (std::size_t i = 0; i < size(); ++i) m[i] = row(i).dot(w);
    return m;
  }

  friend bool operator==(const dataset&, const dataset&) = default;

 private:
  void compute_stats() {
    norms_.assign(size(), 0.0);
    max_example_nnz_ = 0;
    std::vector<std::size_t> degree(d_, 0);
    for (std::size_t i = 0; i < size(); ++i) {
      double s = 0.0;
      for (std::size_t k = row_ptr_[i]; k < row_ptr_[i + 1]; ++k) {
        s += val_[k] * val_[k];
        ++degree[col_[k]];
      }
      norms_[i] = s;
      max_example_nnz_ = std::max(max_example_nnz_, row_ptr_[i + 1] - row_ptr_[i]);
    }
    max_feature_degree_ = *std::max_element(degree.begin(), degree.end());
  }

  std::size_t d_ = 0;
  std::vector<std::size_t> row_ptr_{0};
  std::vector<std::uint32_t> col_;
  std::vector<double> val_;
  std::vector<double> labels_;
  std::vector<double> norms_;
  std::size_t max_example_nnz_ = 0;
  std::size_t max_feature_degree_ = 0;
  bool binary_ = false;
};

namespace detail {

inline std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

inline bool parse_double(std::string_view tok, double& out) {
  if (!tok.empty() && tok.front() == '+') tok.remove_prefix(1);
  const auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), out);
  return ec == std::errc() && ptr == tok.data() + tok.size() && std::isfinite(out);
}

[[noreturn]] inline void fail_at(std::size_t line, const std::string& what) {
  throw parse_error(what + " at line " + std::to_string(line));
}

/// Maps {0,1} and {1,2} label sets onto {-1,+1}; returns whether the result
/// is binary.
inline bool normalize_labels(std::vector<double>& y) {
  auto subset_of = [&](double a, double b) {
    return std::all_of(y.begin(), y.end(), [&](double v) { return v == a || v == b; });
  };
  if (subset_of(-1.0, 1.0)) return true;
  if (subset_of(0.0, 1.0)) {
    for (double& v : y) v = v == 0.0 ? -1.0 : 1.0;
    return true;
  }
  if (subset_of(1.0, 2.0)) {
    for (double& v : y) v = v == 1.0 ? -1.0 : 1.0;
    return true;
  }
  return false;
}

}  // namespace detail

/// Parses LIBSVM text: `<label> <idx>:<val> ...`, 1-based strictly
/// increasing indices. Zero values are accepted but not stored. `dim`
/// overrides the dimension (must cover every index seen).
inline dataset parse_libsvm(std::string_view text,
                            std::optional<std::size_t> dim = std::nullopt) {
  std::vector<std::size_t> row_ptr{0};
  std::vector<std::uint32_t> col;
  std::vector<double> val;
  std::vector<double> labels;
  std::size_t max_index = 0;

  std::size_t line_no = 0;
  while (!text.empty()) {
    ++line_no;
    const auto nl = text.find('\n');
    std::string_view line = detail::trim(text.substr(0, nl));
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    if (line.empty()) continue;

    std::size_t pos = 0;
    auto next_token = [&]() -> std::string_view {
      while (pos < line.size() && (line[pos] == ' ' || line[pos] == '\t')) ++pos;
      const std::size_t start = pos;
      while (pos < line.size() && line[pos] != ' ' && line[pos] != '\t') ++pos;
      return line.substr(start, pos - start);
    };

    double y = 0.0;
    const auto label_tok = next_token();
    if (!detail::parse_double(label_tok, y))
      detail::fail_at(line_no, "malformed label '" + std::string(label_tok) + "'");
    labels.push_back(y);

    std::size_t prev = 0;
    for (auto tok = next_token(); !tok.empty(); tok = next_token()) {
      const auto colon = tok.find(':');
      if (colon == std::string_view::npos || colon == 0)
        detail::fail_at(line_no, "malformed token '" + std::string(tok) + "'");
      std::uint64_t idx = 0;
      const auto idx_tok = tok.substr(0, colon);
      const auto [ptr, ec] =
          std::from_chars(idx_tok.data(), idx_tok.data() + idx_tok.size(), idx);
      if (ec != std::errc() || ptr != idx_tok.data() + idx_tok.size())
        detail::fail_at(line_no, "malformed index '" + std::string(idx_tok) + "'");
      if (idx < 1) detail::fail_at(line_no, "index < 1");
      if (idx > std::numeric_limits<std::uint32_t>::max())
        detail::fail_at(line_no, "index too large");
      if (idx == prev) detail::fail_at(line_no, "duplicate index");
      if (idx < prev) detail::fail_at(line_no, "indices not increasing");
      prev = idx;
      double v = 0.0;
      if (!detail::parse_double(tok.substr(colon + 1), v))
        detail::fail_at(line_no, "malformed value '" + std::string(tok) + "'");
      max_index = std::max<std::size_t>(max_index, idx);
      if (v == 0.0) continue;
      col.push_back(static_cast<std::uint32_t>(idx - 1));
      val.push_back(v);
    }
    row_ptr.push_back(col.size());
  }

  if (labels.empty()) throw parse_error("empty dataset");
  std::size_t d = std::max<std::size_t>(max_index, 1);
  if (dim) {
    if (*dim < max_index)
      throw parse_error("dimension override " + std::to_string(*dim) +
                        " smaller than largest index " + std::to_string(max_index));
    d = *dim;
  }
  const bool binary = detail::normalize_labels(labels);
  return dataset(d, std::move(row_ptr), std::move(col), std::move(val),
                 std::move(labels), binary);
}

/// Reads a LIBSVM file; gzip-compressed when the name ends in ".gz".
inline dataset read_libsvm_file(const std::string& path,
                                std::optional<std::size_t> dim = std::nullopt) {
  std::string text;
  if (path.size() >= 3 && path.compare(path.size() - 3, 3, ".gz") == 0) {
    gzFile f = gzopen(path.c_str(), "rb");
    if (!f) throw std::runtime_error("cannot open " + path);
    char buf[1 << 16];
    int got = 0;
    while ((got = gzread(f, buf, sizeof(buf))) > 0) text.append(buf, got);
    const bool bad = got < 0;
    gzclose(f);
    if (bad) throw std::runtime_error("gzip read error in " + path);
  } else {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    text = ss.str();
  }
  return parse_libsvm(text, dim);
}

/// LIBSVM text with round-trip precision.
inline std::string to_libsvm(const dataset& ds) {
  std::string out;
  char buf[64];
  for (std::size_t i = 0; i < ds.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "%.17g", ds.label(i));
    out += buf;
    const auto r = ds.row(i);
    for (std::size_t k = 0; k < r.nnz(); ++k) {
      std::snprintf(buf, sizeof(buf), " %u:%.17g", r.index[k] + 1, r.value[k]);
      out += buf;
    }
    out += '\n';
  }
  return out;
}

enum class scaling { none, unit_norm };

inline dataset scale_features(const dataset& ds, scaling mode) {
  if (mode == scaling::none) return ds;
  std::vector<double> val = ds.values();
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const double norm = std::sqrt(ds.norms()[i]);
    if (norm == 0.0) continue;
    for (std::size_t k = ds.row_ptr()[i]; k < ds.row_ptr()[i + 1]; ++k) val[k] /= norm;
  }
  return dataset(ds.dim(), ds.row_ptr(), ds.columns(), std::move(val), ds.labels(),
                 ds.binary_labels());
}

struct synthetic_spec {
  std::size_t n = 500;
  std::size_t d = 50;
  double density = 0.2;
  std::uint64_t seed = 1;
};

/// Sparse rows with the given density (at least one entry per row), standard
/// normal values, labels sign(<w_true, x>) for a random hyperplane w_true.
inline dataset make_synthetic(const synthetic_spec& spec) {
  if (spec.n == 0 || spec.d == 0) throw std::invalid_argument("synthetic n, d must be >= 1");
  if (!(spec.density > 0.0 && spec.density <= 1.0))
    throw std::invalid_argument("synthetic density must be in (0, 1]");
  counter_rng rng(spec.seed);
  auto normal = [&] {
    // Box-Muller; independent of the standard library's distribution code.
    const double u1 = 1.0 - rng.uniform();
    const double u2 = rng.uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  };
  std::vector<double> truth(spec.d);
  for (double& t : truth) t = normal();

  std::vector<std::size_t> row_ptr{0};
  std::vector<std::uint32_t> col;
  std::vector<double> val;
  std::vector<double> labels;
  for (std::size_t i = 0; i < spec.n; ++i) {
    const std::size_t start = col.size();
    for (std::size_t j = 0; j < spec.d; ++j) {
      if (rng.uniform() < spec.density) {
        col.push_back(static_cast<std::uint32_t>(j));
        val.push_back(normal());
      }
    }
    if (col.size() == start) {
      col.push_back(static_cast<std::uint32_t>(rng.below(spec.d)));
      val.push_back(normal());
    }
    double margin = 0.0;
    for (std::size_t k = start; k < col.size(); ++k) margin += val[k] * truth[col[k]];
    labels.push_back(margin >= 0.0 ? 1.0 : -1.0);
    row_ptr.push_back(col.size());
  }
  return dataset(spec.d, std::move(row_ptr), std::move(col), std::move(val),
                 std::move(labels), true);
}

}  // namespace adfsdca

#endif
