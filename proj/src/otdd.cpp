#include "xmodal/otdd.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "xmodal/kernels.hpp"
#include "xmodal/rng.hpp"

namespace xmodal {

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kFlowEps = 1e-14;
} // namespace

void FeatureCloud::validate() const {
  if (n < 1) throw std::invalid_argument("FeatureCloud: need at least 1 sample");
  if (static_cast<int64_t>(features.size()) != n * d)
    throw std::invalid_argument("FeatureCloud: feature buffer size mismatch");
  if (static_cast<int64_t>(labels.size()) != n)
    throw std::invalid_argument("FeatureCloud: label count mismatch");
  for (int64_t y : labels) {
    if (y < 0 || y >= num_classes)
      throw std::invalid_argument("FeatureCloud: label " + std::to_string(y) +
                                  " outside [0, " + std::to_string(num_classes) +
                                  ")");
  }
}

FeatureCloud FeatureCloud::subset(const std::vector<int64_t>& idx,
                                  int64_t new_num_classes,
                                  bool relabel_zero) const {
  FeatureCloud out;
  out.n = static_cast<int64_t>(idx.size());
  out.d = d;
  out.num_classes = new_num_classes < 0 ? num_classes : new_num_classes;
  out.features.resize(static_cast<size_t>(out.n * d));
  out.labels.resize(static_cast<size_t>(out.n));
  for (int64_t i = 0; i < out.n; ++i) {
    std::copy_n(features.begin() + idx[i] * d, d, out.features.begin() + i * d);
    out.labels[i] = relabel_zero ? 0 : labels[idx[i]];
  }
  return out;
}

ClassPartition partition_by_class(const FeatureCloud& c) {
  ClassPartition part;
  part.indices.resize(static_cast<size_t>(c.num_classes));
  for (int64_t i = 0; i < c.n; ++i) part.indices[c.labels[i]].push_back(i);
  part.weights.resize(static_cast<size_t>(c.num_classes));
  for (int64_t k = 0; k < c.num_classes; ++k) {
    if (part.indices[k].empty())
      throw std::invalid_argument("class " + std::to_string(k) +
                                  " has no samples");
    part.weights[k] = static_cast<double>(part.indices[k].size()) /
                      static_cast<double>(c.n);
  }
  return part;
}

GaussianMoments class_moments(const FeatureCloud& c, double var_floor) {
  auto part = partition_by_class(c);
  GaussianMoments m;
  m.K = c.num_classes;
  m.d = c.d;
  m.mu.assign(static_cast<size_t>(m.K * m.d), 0.0);
  m.sigma.assign(static_cast<size_t>(m.K * m.d), 0.0);
  for (int64_t k = 0; k < m.K; ++k) {
    const auto& idx = part.indices[k];
    double inv = 1.0 / static_cast<double>(idx.size());
    for (int64_t i : idx)
      for (int64_t j = 0; j < c.d; ++j)
        m.mu[k * c.d + j] += c.features[i * c.d + j] * inv;
    for (int64_t j = 0; j < c.d; ++j) {
      double var = 0.0;
      for (int64_t i : idx) {
        double diff = c.features[i * c.d + j] - m.mu[k * c.d + j];
        var += diff * diff;
      }
      var *= inv; // population variance
      m.sigma[k * c.d + j] = std::sqrt(std::max(var, var_floor));
    }
  }
  return m;
}

std::vector<double> label_distance_matrix(const FeatureCloud& a,
                                          const FeatureCloud& b,
                                          double var_floor) {
  if (a.d != b.d)
    throw std::invalid_argument("label_distance_matrix: feature dims differ");
  auto ma = class_moments(a, var_floor);
  auto mb = class_moments(b, var_floor);
  std::vector<double> out(static_cast<size_t>(ma.K * mb.K));
  for (int64_t i = 0; i < ma.K; ++i) {
    for (int64_t j = 0; j < mb.K; ++j) {
      double acc = 0.0;
      for (int64_t k = 0; k < a.d; ++k) {
        double dm = ma.mu[i * a.d + k] - mb.mu[j * a.d + k];
        double ds = ma.sigma[i * a.d + k] - mb.sigma[j * a.d + k];
        acc += dm * dm + ds * ds;
      }
      out[i * mb.K + j] = acc;
    }
  }
  return out;
}

std::vector<double> ground_cost(const FeatureCloud& a, const FeatureCloud& b,
                                const std::vector<double>& labelM) {
  if (a.d != b.d)
    throw std::invalid_argument("ground_cost: feature dims differ");
  std::vector<double> C(static_cast<size_t>(a.n * b.n));
  kernels::pairwise_sqdist(a.features.data(), b.features.data(), C.data(), a.n,
                           b.n, a.d);
  for (int64_t p = 0; p < a.n; ++p)
    for (int64_t q = 0; q < b.n; ++q)
      C[p * b.n + q] += labelM[a.labels[p] * b.num_classes + b.labels[q]];
  return C;
}

std::string solver_name(OtSolver s) {
  return s == OtSolver::exact ? "exact" : "entropic";
}

OtSolver solver_from_name(const std::string& s) {
  if (s == "exact") return OtSolver::exact;
  if (s == "entropic") return OtSolver::entropic;
  throw std::invalid_argument("unknown solver '" + s + "'");
}

namespace {

void check_marginals(const std::vector<double>& w, const char* which) {
  double sum = 0.0;
  for (double v : w) {
    if (v < 0.0)
      throw std::invalid_argument(std::string(which) + " weights must be >= 0");
    sum += v;
  }
  if (std::abs(sum - 1.0) > 1e-12)
    throw std::invalid_argument(std::string(which) + " weights must sum to 1");
}

} // namespace

OtResult ot_exact(const std::vector<double>& cost, const std::vector<double>& mu,
                  const std::vector<double>& nu, int64_t n, int64_t m,
                  int64_t cap) {
  if (n * m > cap)
    throw std::invalid_argument(
        "ot_exact: instance " + std::to_string(n) + "x" + std::to_string(m) +
        " exceeds exact-solver cap " + std::to_string(cap) +
        "; use the entropic solver");
  check_marginals(mu, "row");
  check_marginals(nu, "column");

  std::vector<double> supply = mu;
  std::vector<double> demand = nu;
  std::vector<double> flow(static_cast<size_t>(n * m), 0.0);
  // Node potentials keep all residual reduced costs nonnegative.
  std::vector<double> pot_src(static_cast<size_t>(n), 0.0);
  std::vector<double> pot_snk(static_cast<size_t>(m), 0.0);

  double remaining = 1.0;
  while (true) {
    remaining = 0.0;
    for (double s : supply) remaining += s;
    if (remaining <= kFlowEps) break;

    // Dense multi-source Dijkstra over the n+m node residual graph.
    int64_t V = n + m;
    std::vector<double> dist(static_cast<size_t>(V), kInf);
    std::vector<int64_t> prev(static_cast<size_t>(V), -1);
    std::vector<bool> done(static_cast<size_t>(V), false);
    for (int64_t i = 0; i < n; ++i)
      if (supply[i] > kFlowEps) dist[i] = 0.0;

    int64_t reached_sink = -1;
    while (true) {
      int64_t u = -1;
      double best = kInf;
      for (int64_t v = 0; v < V; ++v)
        if (!done[v] && dist[v] < best) {
          best = dist[v];
          u = v;
        }
      if (u < 0) break;
      done[u] = true;
      if (u >= n && demand[u - n] > kFlowEps) {
        reached_sink = u - n;
        break;
      }
      if (u < n) {
        // forward arcs i -> j
        int64_t i = u;
        for (int64_t j = 0; j < m; ++j) {
          double rc = cost[i * m + j] + pot_src[i] - pot_snk[j];
          if (rc < 0.0) rc = 0.0; // guard tiny negatives from roundoff
          double nd = dist[u] + rc;
          if (nd < dist[n + j]) {
            dist[n + j] = nd;
            prev[n + j] = u;
          }
        }
      } else {
        // backward arcs j -> i, available where flow is positive
        int64_t j = u - n;
        for (int64_t i = 0; i < n; ++i) {
          if (flow[i * m + j] <= kFlowEps) continue;
          double rc = -cost[i * m + j] + pot_snk[j] - pot_src[i];
          if (rc < 0.0) rc = 0.0;
          double nd = dist[u] + rc;
          if (nd < dist[i]) {
            dist[i] = nd;
            prev[i] = u;
          }
        }
      }
    }
    if (reached_sink < 0)
      throw std::runtime_error("ot_exact: no augmenting path (marginal mass "
                               "mismatch beyond tolerance)");

    // Update potentials: unreached nodes advance by dt as well, otherwise
    // reduced costs on arcs out of them can go negative.
    double dt = dist[n + reached_sink];
    for (int64_t i = 0; i < n; ++i) pot_src[i] += std::min(dist[i], dt);
    for (int64_t j = 0; j < m; ++j) pot_snk[j] += std::min(dist[n + j], dt);

    // Trace the path and find the bottleneck.
    std::vector<int64_t> path; // node ids, sink back to source
    int64_t v = n + reached_sink;
    while (v >= 0) {
      path.push_back(v);
      v = prev[v];
    }
    double delta = demand[reached_sink];
    delta = std::min(delta, supply[path.back()]);
    for (size_t t = 0; t + 1 < path.size(); ++t) {
      int64_t to = path[t], from = path[t + 1];
      if (from >= n) {
        // backward arc (sink from -> source to): bounded by existing flow
        delta = std::min(delta, flow[to * m + (from - n)]);
      }
    }
    for (size_t t = 0; t + 1 < path.size(); ++t) {
      int64_t to = path[t], from = path[t + 1];
      if (from < n)
        flow[from * m + (to - n)] += delta;
      else
        flow[to * m + (from - n)] -= delta;
    }
    supply[path.back()] -= delta;
    demand[reached_sink] -= delta;
  }

  OtResult res;
  res.plan = std::move(flow);
  res.cost = 0.0;
  for (int64_t i = 0; i < n * m; ++i) res.cost += res.plan[i] * cost[i];
  return res;
}

namespace {

double logsumexp_row(const double* vals, int64_t len) {
  double mx = -kInf;
  for (int64_t i = 0; i < len; ++i) mx = std::max(mx, vals[i]);
  if (!std::isfinite(mx)) return mx;
  double z = 0.0;
  for (int64_t i = 0; i < len; ++i) z += std::exp(vals[i] - mx);
  return mx + std::log(z);
}

} // namespace

OtResult ot_entropic(const std::vector<double>& cost,
                     const std::vector<double>& mu,
                     const std::vector<double>& nu, int64_t n, int64_t m,
                     double eps, int64_t max_iter, double tol) {
  if (eps <= 0.0) throw std::invalid_argument("ot_entropic: eps must be > 0");
  check_marginals(mu, "row");
  check_marginals(nu, "column");

  std::vector<double> f(static_cast<size_t>(n), 0.0);
  std::vector<double> g(static_cast<size_t>(m), 0.0);
  std::vector<double> log_mu(static_cast<size_t>(n));
  std::vector<double> log_nu(static_cast<size_t>(m));
  for (int64_t i = 0; i < n; ++i)
    log_mu[i] = mu[i] > 0 ? std::log(mu[i]) : -kInf;
  for (int64_t j = 0; j < m; ++j)
    log_nu[j] = nu[j] > 0 ? std::log(nu[j]) : -kInf;

  std::vector<double> buf_row(static_cast<size_t>(std::max(n, m)));
  bool converged = false;
  for (int64_t it = 0; it < max_iter; ++it) {
    // f update: rows become exact.
#pragma omp parallel for schedule(static) if (n > 8)
    for (int64_t i = 0; i < n; ++i) {
      std::vector<double> row(static_cast<size_t>(m));
      for (int64_t j = 0; j < m; ++j)
        row[j] = (g[j] - cost[i * m + j]) / eps;
      f[i] = eps * (log_mu[i] - logsumexp_row(row.data(), m));
    }
    // g update: columns become exact.
#pragma omp parallel for schedule(static) if (m > 8)
    for (int64_t j = 0; j < m; ++j) {
      std::vector<double> col(static_cast<size_t>(n));
      for (int64_t i = 0; i < n; ++i)
        col[i] = (f[i] - cost[i * m + j]) / eps;
      g[j] = eps * (log_nu[j] - logsumexp_row(col.data(), n));
    }
    // Row-marginal violation decides convergence.
    double viol = 0.0;
    for (int64_t i = 0; i < n; ++i) {
      double s = 0.0;
      for (int64_t j = 0; j < m; ++j)
        s += std::exp((f[i] + g[j] - cost[i * m + j]) / eps);
      viol = std::max(viol, std::abs(s - mu[i]));
    }
    if (viol < tol) {
      converged = true;
      break;
    }
  }
  // Final f update so row marginals are exact; columns hold to tol.
  for (int64_t i = 0; i < n; ++i) {
    std::vector<double> row(static_cast<size_t>(m));
    for (int64_t j = 0; j < m; ++j) row[j] = (g[j] - cost[i * m + j]) / eps;
    f[i] = eps * (log_mu[i] - logsumexp_row(row.data(), m));
  }

  OtResult res;
  res.converged = converged;
  res.plan.resize(static_cast<size_t>(n * m));
  res.cost = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    for (int64_t j = 0; j < m; ++j) {
      double p = std::exp((f[i] + g[j] - cost[i * m + j]) / eps);
      res.plan[i * m + j] = p;
      res.cost += p * cost[i * m + j];
    }
  }
  return res;
}

double median_of(std::vector<double> values) {
  if (values.empty()) throw std::invalid_argument("median of empty set");
  size_t mid = values.size() / 2;
  std::nth_element(values.begin(), values.begin() + mid, values.end());
  double hi = values[mid];
  if (values.size() % 2 == 1) return hi;
  double lo = *std::max_element(values.begin(), values.begin() + mid);
  return 0.5 * (lo + hi);
}

namespace {

OtResult solve(const std::vector<double>& C, int64_t n, int64_t m,
               const OtddOptions& opts) {
  std::vector<double> mu(static_cast<size_t>(n), 1.0 / n);
  std::vector<double> nu(static_cast<size_t>(m), 1.0 / m);
  if (opts.solver == OtSolver::exact)
    return ot_exact(C, mu, nu, n, m, opts.exact_cap);
  double eps = std::max(opts.eps_rel * median_of(C), 1e-12);
  return ot_entropic(C, mu, nu, n, m, eps, opts.max_iter, opts.tol);
}

} // namespace

OtddReport otdd(const FeatureCloud& a, const FeatureCloud& b,
                const OtddOptions& opts) {
  a.validate();
  b.validate();
  auto labelM = label_distance_matrix(a, b, opts.var_floor);
  auto C = ground_cost(a, b, labelM);
  auto res = solve(C, a.n, b.n, opts);
  OtddReport rep;
  rep.total = res.cost;
  rep.solver = solver_name(opts.solver);
  rep.converged = res.converged;
  return rep;
}

OtddReport otdd_classwise_approx(const FeatureCloud& target,
                                 const FeatureCloud& source,
                                 const ApproxConfig& cfg,
                                 const OtddOptions& opts) {
  if (cfg.subsample_size < 1 || cfg.rounds < 1)
    throw std::invalid_argument("ApproxConfig: b and R must be >= 1");
  target.validate();
  source.validate();

  Rng rng(cfg.seed);
  FeatureCloud src = source;
  if (source.n > cfg.source_sample_size) {
    auto idx = rng.sample_without_replacement(source.n, cfg.source_sample_size);
    std::sort(idx.begin(), idx.end());
    src = source.subset(idx);
  }

  auto part = partition_by_class(target);
  int64_t K = target.num_classes;
  // All subsample draws happen up front so the solves can run in any order.
  std::vector<std::vector<int64_t>> draws(static_cast<size_t>(K * cfg.rounds));
  for (int64_t i = 0; i < K; ++i) {
    int64_t sz = static_cast<int64_t>(part.indices[i].size());
    int64_t b = std::min(cfg.subsample_size, sz);
    for (int64_t r = 0; r < cfg.rounds; ++r) {
      auto local = rng.sample_without_replacement(sz, b);
      auto& slot = draws[i * cfg.rounds + r];
      slot.reserve(static_cast<size_t>(b));
      for (int64_t t : local) slot.push_back(part.indices[i][t]);
    }
  }

  OtddReport rep;
  rep.approximated = true;
  rep.solver = solver_name(opts.solver);
  rep.config = cfg;
  rep.weights = part.weights;
  rep.round_d.assign(static_cast<size_t>(K),
                     std::vector<double>(static_cast<size_t>(cfg.rounds), 0.0));
  bool all_converged = true;

  // The K*R solves are independent; results land in fixed slots.
#pragma omp parallel for collapse(2) schedule(dynamic) if (K * cfg.rounds > 1)
  for (int64_t i = 0; i < K; ++i) {
    for (int64_t r = 0; r < cfg.rounds; ++r) {
      auto sub = target.subset(draws[i * cfg.rounds + r], 1, true);
      auto local = otdd(sub, src, opts);
      rep.round_d[i][r] = local.total;
      if (!local.converged) {
#pragma omp critical
        all_converged = false;
      }
    }
  }

  rep.converged = all_converged;
  rep.class_d.resize(static_cast<size_t>(K));
  rep.total = 0.0;
  for (int64_t i = 0; i < K; ++i) {
    double acc = 0.0;
    for (int64_t r = 0; r < cfg.rounds; ++r) acc += rep.round_d[i][r];
    rep.class_d[i] = acc / cfg.rounds;
    rep.total += rep.weights[i] * rep.class_d[i];
  }
  return rep;
}

nlohmann::json OtddReport::to_json() const {
  nlohmann::json j;
  j["total"] = total;
  j["solver"] = solver;
  j["approximated"] = approximated;
  j["converged"] = converged;
  if (approximated) {
    j["class_d"] = class_d;
    j["round_d"] = round_d;
    j["weights"] = weights;
    j["config"] = {{"subsample_size", config.subsample_size},
                   {"rounds", config.rounds},
                   {"source_sample_size", config.source_sample_size},
                   {"seed", config.seed}};
  }
  return j;
}

} // namespace xmodal
