// adfsdca: train and compare dual-free SDCA variants, dump residue
// histograms, and exercise the samplers.
#include <CLI11.hpp>
#include <Eigen/Eigenvalues>
#include <boost/math/distributions/chi_squared.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "adfsdca/adfsdca.hpp"

namespace fs = std::filesystem;
using namespace adfsdca;

namespace {

struct usage_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct options {
  std::string data;
  std::string synthetic;
  std::optional<std::size_t> dim;
  std::string scale = "none";
  std::string loss = "quadratic";
  std::optional<double> lambda;
  std::vector<std::string> variants;
  double shrink = 10.0;
  std::size_t batch = 1;
  std::string eso = "paper";
  std::string theta = "adaptive";
  std::string convexity = "all_convex";
  std::size_t epochs = 10;
  std::size_t evals_per_epoch = 1;
  std::vector<std::uint64_t> seeds{1};
  std::string out = ".";
  // residue-density
  std::vector<std::size_t> residue_epochs;
  std::size_t bins = 50;
  // sample-test
  std::vector<double> q;
  std::string dist;
  std::size_t n = 0;
  std::size_t draws = 1000000;
};

/// One entry of --variant: a name plus optional ":key=value" overrides,
/// e.g. "adfsdca+:s=20" or "minibatch:b=4".
struct variant_spec {
  std::string tag;
  solver_config cfg;
};

std::string fmt(double x) { return detail::fmt_double(x); }

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << text;
  if (!f) throw std::runtime_error("write failed for " + path.string());
}

// Written next to the target and renamed over it, so readers never see a
// partial file.
void write_file_atomic(const fs::path& path, const std::string& text) {
  const fs::path tmp = path.string() + ".tmp";
  write_file(tmp, text);
  fs::rename(tmp, path);
}

dataset load_dataset(const options& o) {
  if (!o.data.empty() && !o.synthetic.empty())
    throw usage_error("--data and --synthetic are mutually exclusive");
  dataset ds;
  if (!o.synthetic.empty()) {
    synthetic_spec spec;
    char extra = 0;
    unsigned long long n = 0, d = 0, seed = 0;
    double density = 0;
    if (std::sscanf(o.synthetic.c_str(), "%llu,%llu,%lf,%llu%c", &n, &d, &density, &seed, &extra) != 4)
      throw usage_error("--synthetic expects n,d,density,seed");
    spec.n = n;
    spec.d = d;
    spec.density = density;
    spec.seed = seed;
    ds = make_synthetic(spec);
  } else if (!o.data.empty()) {
    ds = read_libsvm_file(o.data, o.dim);
  } else {
    throw usage_error("a dataset is required (--data or --synthetic)");
  }
  if (o.scale == "unit_norm") return scale_features(ds, scaling::unit_norm);
  if (o.scale != "none") throw usage_error("unknown scaling '" + o.scale + "'");
  return ds;
}

std::string variant_tag(const solver_config& c) {
  switch (c.algo) {
    case variant::adfsdca_plus: {
      std::ostringstream s;
      s << "adfsdca_plus_s" << c.shrink;
      return s.str();
    }
    case variant::minibatch: return "minibatch_b" + std::to_string(c.batch);
    default: return std::string(to_string(c.algo));
  }
}

std::vector<variant_spec> parse_variants(const options& o, double lambda, std::size_t n) {
  if (o.variants.empty()) throw usage_error("at least one --variant is required");
  if (o.epochs < 1) throw usage_error("epochs must be >= 1");
  std::vector<variant_spec> out;
  for (const auto& text : o.variants) {
    const auto colon = text.find(':');
    solver_config c;
    try {
      c.algo = parse_variant(text.substr(0, colon));
    } catch (const std::invalid_argument& e) {
      throw usage_error(e.what());
    }
    c.lambda = lambda;
    c.shrink = o.shrink;
    c.batch = o.batch;
    c.eso = parse_eso_mode(o.eso);
    c.theta = parse_theta_policy(o.theta);
    c.convexity = parse_convexity_case(o.convexity);
    c.epochs = o.epochs;
    c.evals_per_epoch = o.evals_per_epoch;
    if (colon != std::string::npos) {
      std::stringstream rest(text.substr(colon + 1));
      for (std::string kv; std::getline(rest, kv, ':');) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw usage_error("bad variant option '" + kv + "'");
        const std::string key = kv.substr(0, eq), value = kv.substr(eq + 1);
        try {
          if (key == "s" || key == "shrink") c.shrink = std::stod(value);
          else if (key == "b" || key == "batch") c.batch = std::stoul(value);
          else if (key == "eso") c.eso = parse_eso_mode(value);
          else if (key == "theta") c.theta = parse_theta_policy(value);
          else throw usage_error("unknown variant option '" + key + "'");
        } catch (const std::logic_error&) {
          throw usage_error("bad value in variant option '" + kv + "'");
        }
      }
    }
    c.validate(n);
    out.push_back({variant_tag(c), std::move(c)});
  }
  return out;
}

double default_lambda(const options& o, std::size_t n) {
  return o.lambda ? *o.lambda : 1.0 / std::sqrt(static_cast<double>(n));
}

std::string reference_csv(const reference_solution& ref, double lambda) {
  std::string s = "key,value\n";
  s += "lambda," + fmt(lambda) + "\n";
  s += "primal," + fmt(ref.primal) + "\n";
  s += "grad_norm_inf," + fmt(ref.grad_norm_inf) + "\n";
  s += "iterations," + std::to_string(ref.iterations) + "\n";
  s += std::string("approximate,") + (ref.approximate ? "true" : "false") + "\n";
  return s;
}

int cmd_reference(const options& o) {
  const auto ds = load_dataset(o);
  const loss_model loss(parse_loss_kind(o.loss), ds);
  const double lambda = default_lambda(o, ds.size());
  if (!(lambda > 0)) throw usage_error("lambda must be > 0");
  fs::create_directories(o.out);
  const auto ref = run_reference(ds, loss, lambda);
  write_file(fs::path(o.out) / "reference.csv", reference_csv(ref, lambda));
  std::string w = "index,value\n";
  for (std::size_t j = 0; j < ref.w.size(); ++j) w += std::to_string(j) + "," + fmt(ref.w[j]) + "\n";
  write_file(fs::path(o.out) / "w_star.csv", w);
  std::cout << "P* = " << fmt(ref.primal) << (ref.approximate ? " (approximate)" : "") << "\n";
  return 0;
}

int cmd_train(const options& o) {
  const auto ds = load_dataset(o);
  const loss_model loss(parse_loss_kind(o.loss), ds);
  const double lambda = default_lambda(o, ds.size());
  if (o.seeds.empty()) throw usage_error("at least one seed is required");
  // Every configuration is validated before the first run starts.
  const auto specs = parse_variants(o, lambda, ds.size());
  fs::create_directories(o.out);
  const fs::path out(o.out);

  const auto ref = run_reference(ds, loss, lambda);
  write_file(out / "reference.csv", reference_csv(ref, lambda));

  std::string summary = "variant,seed,epochs_to_1e-4,epochs_to_1e-6,wall_seconds\n";
  for (const auto& spec : specs) {
    for (auto seed : o.seeds) {
      auto cfg = spec.cfg;
      cfg.seed = seed;
      const auto t0 = std::chrono::steady_clock::now();
      const auto res = run_solver(cfg, ds, loss, &ref);
      const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      const std::string stem = spec.tag + "_seed" + std::to_string(seed);
      write_file(out / (stem + ".csv"), trace_csv(res.trace));
      write_file(out / (stem + ".timing.csv"), timing_csv(res.trace));
      const auto e4 = epochs_to_target(res.trace, 1e-4);
      const auto e6 = epochs_to_target(res.trace, 1e-6);
      summary += spec.tag + "," + std::to_string(seed) + "," + (e4 ? fmt(*e4) : "inf") + "," +
                 (e6 ? fmt(*e6) : "inf") + "," + fmt(wall) + "\n";
      std::cout << stem << ": " << res.status << ", final subopt "
                << fmt(res.trace.empty() ? NAN : res.trace.back().subopt) << "\n";
    }
  }
  write_file_atomic(out / "summary.csv", summary);
  return 0;
}

int cmd_residue_density(const options& o) {
  if (o.residue_epochs.empty()) return 0;
  const auto ds = load_dataset(o);
  const loss_model loss(parse_loss_kind(o.loss), ds);
  const double lambda = default_lambda(o, ds.size());
  if (o.bins < 1) throw usage_error("bins must be >= 1");
  const std::size_t last = *std::max_element(o.residue_epochs.begin(), o.residue_epochs.end());
  const std::uint64_t seed = o.seeds.empty() ? 1 : o.seeds.front();

  std::map<std::string, std::map<std::size_t, std::vector<double>>> snaps;
  for (auto algo : {variant::dfsdca, variant::adfsdca}) {
    solver_config cfg;
    cfg.algo = algo;
    cfg.lambda = lambda;
    cfg.convexity = parse_convexity_case(o.convexity);
    cfg.epochs = std::max<std::size_t>(last, 1);
    cfg.seed = seed;
    cfg.snapshot_epochs = o.residue_epochs;
    cfg.validate(ds.size());
    snaps[std::string(to_string(algo))] = run_solver(cfg, ds, loss).residue_snapshots;
  }
  fs::create_directories(o.out);
  std::string table = "epoch,variant,residue_p90,residue_max\n";
  for (auto e : o.residue_epochs) {
    double upper = 0.0;
    for (auto& [_, by_epoch] : snaps)
      for (double x : by_epoch[e]) upper = std::max(upper, x);
    for (auto& [name, by_epoch] : snaps) {
      const auto& values = by_epoch[e];
      write_file(fs::path(o.out) / ("residue_" + name + "_epoch" + std::to_string(e) + ".csv"),
                 histogram_csv(histogram(values, o.bins, upper)));
      residue_vector r;
      r.kappa = values;
      double mx = 0.0;
      for (double x : values) mx = std::max(mx, x);
      table += std::to_string(e) + "," + name + "," + fmt(residue_p90(r)) + "," + fmt(mx) + "\n";
    }
  }
  write_file(fs::path(o.out) / "residue_summary.csv", table);
  return 0;
}

std::vector<double> marginal_spec(const options& o) {
  if (!o.q.empty()) {
    if (!o.dist.empty()) throw usage_error("--q and --dist are mutually exclusive");
    return o.q;
  }
  if (o.n < 2) throw usage_error("--n must be >= 2 with --dist");
  const double b = static_cast<double>(o.batch);
  std::vector<double> w(o.n);
  if (o.dist == "uniform") {
    std::fill(w.begin(), w.end(), 1.0);
  } else if (o.dist == "linear") {
    for (std::size_t i = 0; i < o.n; ++i) w[i] = static_cast<double>(o.n - i);
  } else {
    throw usage_error("--dist must be uniform or linear (or pass --q)");
  }
  const double s = std::accumulate(w.begin(), w.end(), 0.0);
  for (auto& x : w) x *= b / s;
  return w;
}

struct chisq {
  double stat;
  double dof;
  double pvalue;
};

chisq goodness_of_fit(const std::vector<std::size_t>& counts, const std::vector<double>& p,
                      double draws) {
  double stat = 0.0;
  std::size_t cells = 0;
  for (std::size_t i = 0; i < counts.size(); ++i) {
    if (p[i] <= 0.0) continue;
    const double e = draws * p[i];
    stat += (static_cast<double>(counts[i]) - e) * (static_cast<double>(counts[i]) - e) / e;
    ++cells;
  }
  const double dof = cells > 1 ? static_cast<double>(cells - 1) : 1.0;
  const boost::math::chi_squared dist(dof);
  return {stat, dof, boost::math::cdf(boost::math::complement(dist, stat))};
}

// Inclusion counts of a fixed-size sampling are correlated (they always sum
// to b), so the marginal test whitens with the exact inclusion covariance:
// stat = D d' pinv(Sigma) d ~ chi2(rank Sigma).
chisq inclusion_fit(const sampling_plan& plan, const std::vector<double>& hits, double draws) {
  const auto n = static_cast<Eigen::Index>(plan.size());
  const auto pairs = plan.pair_inclusions();
  const auto q = plan.marginals();
  Eigen::MatrixXd cov(n, n);
  Eigen::VectorXd d(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    d(i) = hits[static_cast<std::size_t>(i)] / draws - q[static_cast<std::size_t>(i)];
    for (Eigen::Index j = 0; j < n; ++j)
      cov(i, j) = pairs[static_cast<std::size_t>(i * n + j)] -
                  q[static_cast<std::size_t>(i)] * q[static_cast<std::size_t>(j)];
  }
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  const double cutoff = 1e-10 * std::max(eig.eigenvalues().maxCoeff(), 0.0);
  const Eigen::VectorXd proj = eig.eigenvectors().transpose() * d;
  chisq out{0.0, 0.0, 1.0};
  for (Eigen::Index k = 0; k < n; ++k) {
    if (eig.eigenvalues()(k) <= cutoff) continue;
    out.stat += draws * proj(k) * proj(k) / eig.eigenvalues()(k);
    out.dof += 1;
  }
  out.pvalue = out.dof > 0 ? boost::math::cdf(boost::math::complement(
                                 boost::math::chi_squared(out.dof), out.stat))
                           : 1.0;
  return out;
}

int cmd_sample_test(const options& o) {
  const auto q = marginal_spec(o);
  const std::size_t b = o.q.empty() ? o.batch
                                    : static_cast<std::size_t>(std::llround(
                                          std::accumulate(q.begin(), q.end(), 0.0)));
  if (o.draws < 1) throw usage_error("draws must be >= 1");
  const sampling_plan plan(q, b);
  const auto n = q.size();
  fs::create_directories(o.out);
  const fs::path out(o.out);

  // Level table with 1-based sorted positions: coordinates 1..i-1 always,
  // b-i+1 uniform picks from i..j.
  std::string levels = "k,t,i,j\n";
  for (std::size_t k = 0; k < plan.levels().size(); ++k) {
    const auto& lv = plan.levels()[k];
    levels += std::to_string(k + 1) + "," + fmt(lv.mass) + "," + std::to_string(lv.first + 1) +
              "," + std::to_string(lv.last + 1) + "\n";
  }
  write_file(out / "levels.csv", levels);

  counter_rng rng(o.seeds.empty() ? 1 : o.seeds.front());
  const double draws = static_cast<double>(o.draws);
  std::vector<double> hits(n, 0.0);
  std::vector<std::uint32_t> picked;
  std::vector<std::uint8_t> marks;
  for (std::size_t t = 0; t < o.draws; ++t) {
    plan.draw(rng, picked, marks);
    for (auto i : picked) hits[i] += 1.0;
  }
  const auto exact = plan.marginals();
  std::string marg = "coord,q_target,q_exact,q_empirical,z\n";
  for (std::size_t i = 0; i < n; ++i) {
    const double emp = hits[i] / draws;
    const double sd = std::sqrt(exact[i] * (1.0 - exact[i]) / draws);
    const double z = sd > 0 ? (emp - exact[i]) / sd : 0.0;
    marg += std::to_string(i) + "," + fmt(q[i]) + "," + fmt(exact[i]) + "," + fmt(emp) + "," +
            fmt(z) + "\n";
  }
  write_file(out / "marginals.csv", marg);

  // Single-coordinate samplers on p = q / b.
  std::vector<double> p(n);
  for (std::size_t i = 0; i < n; ++i) p[i] = q[i] / static_cast<double>(b);
  const alias_table alias(p);
  const cdf_sampler cdf(p);
  tree_sampler tree(p);
  std::vector<std::size_t> ca(n, 0), cc(n, 0), ct(n, 0);
  for (std::size_t t = 0; t < o.draws; ++t) {
    ca[alias.draw(rng)]++;
    cc[cdf.draw(rng)]++;
    ct[tree.draw(rng).index]++;
  }
  std::string report = "sampler,statistic,dof,pvalue\n";
  const auto plan_fit = inclusion_fit(plan, hits, draws);
  report += "plan_marginals," + fmt(plan_fit.stat) + "," + fmt(plan_fit.dof) + "," +
            fmt(plan_fit.pvalue) + "\n";
  for (auto [name, counts] : {std::pair<const char*, std::vector<std::size_t>*>{"alias", &ca},
                              {"cdf", &cc},
                              {"tree", &ct}}) {
    const auto g = goodness_of_fit(*counts, p, draws);
    report += std::string(name) + "," + fmt(g.stat) + "," + fmt(g.dof) + "," + fmt(g.pvalue) + "\n";
  }
  write_file(out / "chisq.csv", report);
  std::cout << plan.levels().size() << " level(s)\n";
  return 0;
}

void add_common(CLI::App& app, options& o) {
  app.add_option("--data", o.data, "LIBSVM dataset (.gz accepted)");
  app.add_option("--synthetic", o.synthetic, "generate n,d,density,seed instead of --data")
      ->join(',');
  app.add_option("--dim", o.dim, "feature dimension override");
  app.add_option("--scale", o.scale, "feature scaling: none | unit_norm");
  app.add_option("--loss", o.loss, "quadratic | logistic");
  app.add_option("--lambda", o.lambda, "regularization (default 1/sqrt(n))");
  app.add_option("--variant", o.variants,
                 "dfsdca | adfsdca | adfsdca+[:s=S] | minibatch[:b=B] (repeatable)")
      ->delimiter(',');
  app.add_option("--shrink", o.shrink, "adfsdca+ probability shrink factor");
  app.add_option("--batch", o.batch, "mini-batch size");
  app.add_option("--eso-mode", o.eso, "paper | feature_degree");
  app.add_option("--theta", o.theta, "adaptive | fixed");
  app.add_option("--case", o.convexity, "all_convex | average_convex");
  app.add_option("--epochs", o.epochs, "passes over the data");
  app.add_option("--evals-per-epoch", o.evals_per_epoch, "trace rows per epoch");
  app.add_option("--seed", o.seeds, "random seed(s)")->delimiter(',');
  app.add_option("--out", o.out, "output directory");
  app.add_option("--residue-epochs", o.residue_epochs, "epochs to histogram (residue-density)")
      ->delimiter(',');
  app.add_option("--bins", o.bins, "histogram bins");
  app.add_option("--q", o.q, "explicit marginals (sample-test)")->delimiter(',');
  app.add_option("--dist", o.dist, "uniform | linear marginals over --n (sample-test)");
  app.add_option("--n", o.n, "coordinates for --dist");
  app.add_option("--draws", o.draws, "draws per sampler (sample-test)");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Adaptive dual-free SDCA solvers and samplers"};
  app.fallthrough();
  app.require_subcommand(1);
  app.set_config("--config", "", "key=value configuration file (flags take precedence)");
  options o;
  add_common(app, o);
  auto* train = app.add_subcommand("train", "run variants and write traces + summary.csv");
  auto* density = app.add_subcommand("residue-density", "|kappa| histograms for dfsdca vs adfsdca");
  auto* sample = app.add_subcommand("sample-test", "mini-batch plan and sampler checks");
  auto* reference = app.add_subcommand("reference", "high-accuracy reference solution");
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }
  try {
    if (*train) return cmd_train(o);
    if (*density) return cmd_residue_density(o);
    if (*sample) return cmd_sample_test(o);
    if (*reference) return cmd_reference(o);
  } catch (const usage_error& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
