#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "grformer/attention.hpp"
#include "grformer/imaging.hpp"
#include "grformer/network.hpp"
#include "grformer/rng.hpp"
#include "grformer/training.hpp"

namespace grf {

struct OracleReport {
  std::string name;
  double max_abs_error = 0;
  double tolerance = 0;
  bool pass = false;  // max_abs_error <= tolerance
  std::string details;
};

OracleReport make_report(std::string name, double error, double tolerance, std::string details = "");

// X is n x c; the four projection blocks are (c/2) x (c/2), all row-major.
struct QkInstance {
  std::size_t n = 0;
  std::size_t c = 0;
  std::vector<double> x;
  std::vector<double> mq1, mq2, mk1, mk2;
};

// Throws ContractError for odd or zero n, c.
QkInstance random_qk_instance(std::size_t n, std::size_t c, Rng rng);

// QK^T computed through the grouped projection layer and a dense product,
// against the 2x2 block expansion
//   O_ij = X_i1 M_Q1 M_K1^T X_j1^T + X_i2 M_Q2 M_K2^T X_j2^T
// evaluated with plain loops.
OracleReport check_grouped_qk_equivalence(const QkInstance& inst, double tolerance = 1e-10);
OracleReport check_grouped_qk_equivalence(std::size_t n, std::size_t c, Rng rng,
                                          double tolerance = 1e-10);

// Central differences on every element of every input against the tape
// gradient. Error metric: max |g_a - g_n| / max(1, |g_a|, |g_n|).
// fn must return a single element; inputs are leaves that fn reads.
OracleReport finite_diff_gradcheck(const std::string& name,
                                   const std::function<Tensor<double>()>& fn,
                                   const std::vector<Tensor<double>>& inputs, double step = 1e-5,
                                   double tolerance = 1e-4);

// sum(x * w) with w drawn from rng; turns any tensor into a scalar whose
// gradient exercises every element differently.
Tensor<double> weighted_sum(const Tensor<double>& x, Rng rng);

// One bias curve per head: the (2w - 1) entries of the offset table at
// vertical-offset row `row` (row h - 1 is dY = 0).
struct RpbCurves {
  std::size_t row = 0;
  int dy = 0;
  std::vector<int> dx;
  std::vector<std::vector<double>> heads;
};

template <typename T>
RpbCurves rpb_curve_export(const PositionBiasParams<T>& bias, const WindowSpec& win, std::size_t row);
template <typename T>
RpbCurves rpb_curve_export(const EsRpbParams<T>& bias, const WindowSpec& win, std::size_t row);

// Header row of dX values, then one row of values per head.
std::string format_curves_csv(const RpbCurves& curves);

double total_variation(const std::vector<double>& curve);

struct SmoothnessComparison {
  double es_rpb_tv = 0;  // mean over heads and blocks, centre row
  double table_tv = 0;
};

// Trains the same toy model twice, once per bias kind, and compares the
// total variation of the learned centre-row curves.
SmoothnessComparison compare_bias_smoothness(ModelConfig cfg, const TrainConfig& tcfg,
                                             const ImageU8& hr);

struct VerifyOptions {
  std::uint64_t seed = 0;
  // Mutation hook for exercising the harness: GRLs built by the gradcheck
  // suite lose their residual path.
  bool corrupt_grl_residual = false;
};

inline const std::vector<std::string> kVerifySuites = {"qk-equivalence", "gradcheck",
                                                        "rpb-properties"};

std::vector<OracleReport> run_qk_suite(const VerifyOptions& opts);
std::vector<OracleReport> run_gradcheck_suite(const VerifyOptions& opts);
std::vector<OracleReport> run_rpb_suite(const VerifyOptions& opts);
// "qk-equivalence", "gradcheck", "rpb-properties" or "all".
std::vector<OracleReport> run_verify_suite(const std::string& suite, const VerifyOptions& opts);

std::string format_report(const OracleReport& r);

}  // namespace grf
