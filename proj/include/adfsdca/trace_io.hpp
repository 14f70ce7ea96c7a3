#ifndef ADFSDCA_TRACE_IO_HPP
#define ADFSDCA_TRACE_IO_HPP

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <optional>
#include <string>
#include <vector>

#include "adfsdca/solver.hpp"

namespace adfsdca {

namespace detail {

inline std::string fmt_double(double x) {
  if (std::isnan(x)) return "nan";
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

}  // namespace detail

inline constexpr const char* trace_header =
    "epoch,iter,seconds,primal,subopt,gap_G,residue_norm,residue_p90,theta";

/// Trace CSV. Wall time is machine-dependent, so unless `with_seconds` the
/// column is written as nan and the file is reproducible byte for byte.
inline std::string trace_csv(const std::vector<trace_row>& rows, bool with_seconds = false) {
  using detail::fmt_double;
  std::string out = std::string(trace_header) + "\n";
  for (const auto& r : rows) {
    out += fmt_double(r.epoch) + "," + std::to_string(r.iter) + "," +
           (with_seconds ? fmt_double(r.seconds) : std::string("nan")) + "," +
           fmt_double(r.primal) + "," + fmt_double(r.subopt) + "," + fmt_double(r.gap) + "," +
           fmt_double(r.residue_norm) + "," + fmt_double(r.residue_p90) + "," +
           fmt_double(r.theta) + "\n";
  }
  return out;
}

/// Sidecar timing file: epoch,iter,seconds.
inline std::string timing_csv(const std::vector<trace_row>& rows) {
  using detail::fmt_double;
  std::string out = "epoch,iter,seconds\n";
  for (const auto& r : rows)
    out += fmt_double(r.epoch) + "," + std::to_string(r.iter) + "," + fmt_double(r.seconds) + "\n";
  return out;
}

struct histogram_bin {
  double lo;
  double hi;
  std::size_t count;
};

/// Equal-width bins over [0, upper]; values above `upper` land in the last bin.
inline std::vector<histogram_bin> histogram(const std::vector<double>& values, std::size_t bins,
                                            double upper) {
  if (bins == 0) return {};
  if (!(upper > 0.0)) upper = 1.0;
  std::vector<histogram_bin> h(bins);
  const double width = upper / static_cast<double>(bins);
  for (std::size_t k = 0; k < bins; ++k)
    h[k] = {width * static_cast<double>(k), width * static_cast<double>(k + 1), 0};
  for (double x : values) {
    auto k = static_cast<std::size_t>(x / width);
    h[std::min(k, bins - 1)].count++;
  }
  return h;
}

inline std::string histogram_csv(const std::vector<histogram_bin>& h) {
  std::string out = "bin_lo,bin_hi,count\n";
  for (const auto& b : h)
    out += detail::fmt_double(b.lo) + "," + detail::fmt_double(b.hi) + "," +
           std::to_string(b.count) + "\n";
  return out;
}

/// First epoch at which the trace's suboptimality is <= target.
inline std::optional<double> epochs_to_target(const std::vector<trace_row>& rows, double target) {
  for (const auto& r : rows)
    if (!std::isnan(r.subopt) && r.subopt <= target) return r.epoch;
  return std::nullopt;
}

inline std::optional<std::uint64_t> iterations_to_target(const std::vector<trace_row>& rows,
                                                         double target) {
  for (const auto& r : rows)
    if (!std::isnan(r.subopt) && r.subopt <= target) return r.iter;
  return std::nullopt;
}

}  // namespace adfsdca

#endif
