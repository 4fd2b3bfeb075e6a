#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

namespace xmodal {

// Per-sample feature vectors with class labels, features averaged over the
// sequence axis before they get here.
struct FeatureCloud {
  std::vector<double> features; // row-major n x d
  std::vector<int64_t> labels;  // in [0, num_classes)
  int64_t n = 0;
  int64_t d = 0;
  int64_t num_classes = 0;

  void validate() const;
  FeatureCloud subset(const std::vector<int64_t>& idx,
                      int64_t new_num_classes = -1,
                      bool relabel_zero = false) const;
};

struct ClassPartition {
  std::vector<std::vector<int64_t>> indices; // per class
  std::vector<double> weights;               // |D_i| / n
};

// Errors if any class in [0, K) is empty (the error names the class).
ClassPartition partition_by_class(const FeatureCloud& c);

// Diagonal-covariance gaussian fit per class: mu, sigma are K x d.
struct GaussianMoments {
  std::vector<double> mu;
  std::vector<double> sigma;
  int64_t K = 0;
  int64_t d = 0;
};
GaussianMoments class_moments(const FeatureCloud& c, double var_floor);

// Entry (i,j) = closed-form squared 2-Wasserstein between diagonal gaussian
// fits: ||mu_i - mu_j||^2 + sum_k (sigma_ik - sigma_jk)^2. Shape Ka x Kb.
std::vector<double> label_distance_matrix(const FeatureCloud& a,
                                          const FeatureCloud& b,
                                          double var_floor = 1e-6);

// C[p,q] = ||x_p - x_q||^2 + labelM[y_p, y_q]. Shape na x nb.
std::vector<double> ground_cost(const FeatureCloud& a, const FeatureCloud& b,
                                const std::vector<double>& labelM);

enum class OtSolver { exact, entropic };
std::string solver_name(OtSolver s);
OtSolver solver_from_name(const std::string& s);

struct OtResult {
  double cost = 0.0;
  std::vector<double> plan; // n x m
  bool converged = true;
};

// Exact optimal transport via successive shortest augmenting paths with node
// potentials on the dense bipartite network. Errors when n*m exceeds cap.
OtResult ot_exact(const std::vector<double>& cost, const std::vector<double>& mu,
                  const std::vector<double>& nu, int64_t n, int64_t m,
                  int64_t cap = 4096);

// Log-domain Sinkhorn. Returns the sharp cost <plan, C>, not the entropic
// objective. Non-convergence sets converged=false instead of throwing.
OtResult ot_entropic(const std::vector<double>& cost,
                     const std::vector<double>& mu,
                     const std::vector<double>& nu, int64_t n, int64_t m,
                     double eps, int64_t max_iter = 2000, double tol = 1e-9);

struct ApproxConfig {
  int64_t subsample_size = 20; // b
  int64_t rounds = 4;         // R
  int64_t source_sample_size = 200;
  uint64_t seed = 0;
};

struct OtddOptions {
  OtSolver solver = OtSolver::exact;
  // Entropic regularization as a fraction of median ground cost.
  double eps_rel = 1e-3;
  int64_t max_iter = 2000;
  double tol = 1e-9;
  int64_t exact_cap = 4096;
  double var_floor = 1e-6;
};

struct OtddReport {
  double total = 0.0;
  std::vector<double> class_d;               // d_i
  std::vector<std::vector<double>> round_d;  // d_ir
  std::vector<double> weights;               // w_i
  std::string solver;
  bool approximated = false;
  bool converged = true;
  ApproxConfig config;

  nlohmann::json to_json() const;
};

// Plain OTDD between two clouds with uniform marginals.
OtddReport otdd(const FeatureCloud& a, const FeatureCloud& b,
                const OtddOptions& opts = {});

// Class-wise subsampling approximation: per target class i, R rounds of
// uniform subsamples of size min(b, |D_i|); d_i = mean_r d_ir;
// d = sum_i w_i d_i. The source is subsampled to source_sample_size first
// when larger. Deterministic given cfg.seed.
OtddReport otdd_classwise_approx(const FeatureCloud& target,
                                 const FeatureCloud& source,
                                 const ApproxConfig& cfg,
                                 const OtddOptions& opts = {});

double median_of(std::vector<double> values);

} // namespace xmodal
