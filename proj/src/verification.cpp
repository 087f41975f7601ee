#include "grformer/verification.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <sstream>

#include "grformer/errors.hpp"
#include "grformer/ops.hpp"

namespace grf {

OracleReport make_report(std::string name, double error, double tolerance, std::string details) {
  OracleReport r;
  r.name = std::move(name);
  r.max_abs_error = error;
  r.tolerance = tolerance;
  r.pass = error <= tolerance;
  r.details = std::move(details);
  return r;
}

QkInstance random_qk_instance(std::size_t n, std::size_t c, Rng rng) {
  if (n == 0 || c == 0 || n % 2 != 0 || c % 2 != 0) {
    throw ContractError("qk equivalence needs even, positive n and c (got n=" + std::to_string(n) +
                        ", c=" + std::to_string(c) + ")");
  }
  QkInstance inst;
  inst.n = n;
  inst.c = c;
  const std::size_t h = c / 2;
  auto fill = [](std::vector<double>& v, std::size_t count, Rng r) {
    v.resize(count);
    for (double& x : v) x = r.normal();
  };
  fill(inst.x, n * c, rng.split("x"));
  fill(inst.mq1, h * h, rng.split("mq1"));
  fill(inst.mq2, h * h, rng.split("mq2"));
  fill(inst.mk1, h * h, rng.split("mk1"));
  fill(inst.mk2, h * h, rng.split("mk2"));
  return inst;
}

namespace {

// Minimal row-major dense matrix for the loop-based side of the oracle.
struct Mat {
  std::size_t rows = 0, cols = 0;
  std::vector<double> v;
  Mat(std::size_t r, std::size_t c) : rows(r), cols(c), v(r * c, 0.0) {}
  double& operator()(std::size_t i, std::size_t j) { return v[i * cols + j]; }
  double operator()(std::size_t i, std::size_t j) const { return v[i * cols + j]; }
};

Mat block(const std::vector<double>& src, std::size_t ld, std::size_t r0, std::size_t c0,
          std::size_t rows, std::size_t cols) {
  Mat m(rows, cols);
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < cols; ++j) m(i, j) = src[(r0 + i) * ld + c0 + j];
  }
  return m;
}

Mat mm(const Mat& a, const Mat& b) {
  Mat out(a.rows, b.cols);
  for (std::size_t i = 0; i < a.rows; ++i) {
    for (std::size_t k = 0; k < a.cols; ++k) {
      for (std::size_t j = 0; j < b.cols; ++j) out(i, j) += a(i, k) * b(k, j);
    }
  }
  return out;
}

Mat tr(const Mat& a) {
  Mat out(a.cols, a.rows);
  for (std::size_t i = 0; i < a.rows; ++i) {
    for (std::size_t j = 0; j < a.cols; ++j) out(j, i) = a(i, j);
  }
  return out;
}

Mat plus(const Mat& a, const Mat& b) {
  Mat out = a;
  for (std::size_t i = 0; i < out.v.size(); ++i) out.v[i] += b.v[i];
  return out;
}

}  // namespace

OracleReport check_grouped_qk_equivalence(const QkInstance& inst, double tolerance) {
  const std::size_t n = inst.n, c = inst.c;
  if (n == 0 || c == 0 || n % 2 != 0 || c % 2 != 0) {
    throw ContractError("qk equivalence needs even, positive n and c (got n=" + std::to_string(n) +
                        ", c=" + std::to_string(c) + ")");
  }
  const std::size_t hn = n / 2, hc = c / 2;
  if (inst.x.size() != n * c || inst.mq1.size() != hc * hc || inst.mq2.size() != hc * hc ||
      inst.mk1.size() != hc * hc || inst.mk2.size() != hc * hc) {
    throw DimensionError("qk equivalence: instance buffers do not match n and c");
  }

  // (i) grouped projection layer, then a dense product.
  NoGradGuard no_grad;
  auto grl = [hc](const std::vector<double>& m1, const std::vector<double>& m2) {
    GrlParams<double> p;
    p.residual = false;
    p.weights = {Tensor<double>::from({hc, hc}, m1), Tensor<double>::from({hc, hc}, m2)};
    p.biases = {Tensor<double>::zeros({hc}), Tensor<double>::zeros({hc})};
    return p;
  };
  const Tensor<double> x = Tensor<double>::from({n, c}, inst.x);
  const Tensor<double> q = grl_forward(x, grl(inst.mq1, inst.mq2));
  const Tensor<double> k = grl_forward(x, grl(inst.mk1, inst.mk2));
  const Tensor<double> qk = matmul(q, transpose(k));
  const auto dense = qk.data();

  // (ii) block formulas.
  const Mat mq1 = block(inst.mq1, hc, 0, 0, hc, hc), mq2 = block(inst.mq2, hc, 0, 0, hc, hc);
  const Mat mk1 = block(inst.mk1, hc, 0, 0, hc, hc), mk2 = block(inst.mk2, hc, 0, 0, hc, hc);
  const Mat a1 = mm(mq1, tr(mk1)), a2 = mm(mq2, tr(mk2));
  const Mat xb[2][2] = {{block(inst.x, c, 0, 0, hn, hc), block(inst.x, c, 0, hc, hn, hc)},
                        {block(inst.x, c, hn, 0, hn, hc), block(inst.x, c, hn, hc, hn, hc)}};
  double err = 0.0;
  for (std::size_t bi = 0; bi < 2; ++bi) {
    for (std::size_t bj = 0; bj < 2; ++bj) {
      const Mat o = plus(mm(mm(xb[bi][0], a1), tr(xb[bj][0])), mm(mm(xb[bi][1], a2), tr(xb[bj][1])));
      for (std::size_t i = 0; i < hn; ++i) {
        for (std::size_t j = 0; j < hn; ++j) {
          err = std::max(err, std::abs(o(i, j) - dense[(bi * hn + i) * n + bj * hn + j]));
        }
      }
    }
  }
  return make_report("qk-equivalence n=" + std::to_string(n) + " c=" + std::to_string(c), err,
                     tolerance);
}

OracleReport check_grouped_qk_equivalence(std::size_t n, std::size_t c, Rng rng, double tolerance) {
  return check_grouped_qk_equivalence(random_qk_instance(n, c, rng), tolerance);
}

Tensor<double> weighted_sum(const Tensor<double>& x, Rng rng) {
  std::vector<double> w(x.numel());
  for (double& v : w) v = rng.uniform(-1.0, 1.0);
  return sum(mul(x, Tensor<double>::from(x.shape(), std::move(w))));
}

OracleReport finite_diff_gradcheck(const std::string& name,
                                   const std::function<Tensor<double>()>& fn,
                                   const std::vector<Tensor<double>>& inputs, double step,
                                   double tolerance) {
  for (Tensor<double> t : inputs) {
    if (!t.requires_grad()) throw ContractError(name + ": gradcheck inputs must require grad");
    t.zero_grad();
  }
  const Tensor<double> out = fn();
  if (out.numel() != 1) {
    throw ContractError(name + ": gradcheck needs a scalar output, got " + shape_str(out.shape()));
  }
  backward(out);
  std::vector<std::vector<double>> analytic;
  for (const auto& t : inputs) {
    const auto g = t.grad();
    analytic.emplace_back(g.begin(), g.end());
    if (analytic.back().empty()) analytic.back().assign(t.numel(), 0.0);
  }

  NoGradGuard no_grad;
  double worst = 0.0;
  std::string where = "no inputs";
  std::size_t checked = 0;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    Tensor<double> t = inputs[i];
    auto d = t.mutable_data();
    for (std::size_t j = 0; j < d.size(); ++j) {
      const double orig = d[j];
      d[j] = orig + step;
      const double fp = fn().item();
      d[j] = orig - step;
      const double fm = fn().item();
      d[j] = orig;
      const double numeric = (fp - fm) / (2.0 * step);
      const double ga = analytic[i][j];
      const double rel = std::abs(ga - numeric) / std::max({1.0, std::abs(ga), std::abs(numeric)});
      ++checked;
      if (rel > worst || where == "no inputs") {
        worst = std::max(worst, rel);
        std::ostringstream os;
        os << "worst at input " << i << " element " << j << ": analytic " << ga << ", numeric "
           << numeric;
        where = os.str();
      }
    }
  }
  for (Tensor<double> t : inputs) t.zero_grad();
  return make_report(name, worst, tolerance, std::to_string(checked) + " elements; " + where);
}

template <typename T>
RpbCurves rpb_curve_export(const PositionBiasParams<T>& bias, const WindowSpec& win, std::size_t row) {
  if (row >= 2 * win.h - 1) {
    throw ContractError("rpb curve row " + std::to_string(row) + " out of range for window height " +
                        std::to_string(win.h) + " (max " + std::to_string(2 * win.h - 2) + ")");
  }
  NoGradGuard no_grad;
  Tensor<T> table;
  if (const auto* es = std::get_if<EsRpbParams<T>>(&bias)) {
    table = es_rpb_table(win, *es);
  } else {
    table = std::get<RpbTableParams<T>>(bias).table;
    if (table.rank() != 2 || table.dim(0) != win.offset_count()) {
      throw DimensionError("rpb table " + shape_str(table.shape()) + " does not match window");
    }
  }
  const OffsetTable offsets = relative_offset_table(win);
  const std::size_t cols = 2 * win.w - 1, heads = table.dim(1);
  RpbCurves out;
  out.row = row;
  out.dy = offsets.dy[row * cols];
  out.heads.assign(heads, std::vector<double>(cols));
  const auto d = table.data();
  for (std::size_t k = 0; k < cols; ++k) {
    out.dx.push_back(offsets.dx[row * cols + k]);
    for (std::size_t h = 0; h < heads; ++h) out.heads[h][k] = d[(row * cols + k) * heads + h];
  }
  return out;
}

template <typename T>
RpbCurves rpb_curve_export(const EsRpbParams<T>& bias, const WindowSpec& win, std::size_t row) {
  return rpb_curve_export(PositionBiasParams<T>(bias), win, row);
}

template RpbCurves rpb_curve_export(const PositionBiasParams<float>&, const WindowSpec&, std::size_t);
template RpbCurves rpb_curve_export(const PositionBiasParams<double>&, const WindowSpec&, std::size_t);
template RpbCurves rpb_curve_export(const EsRpbParams<float>&, const WindowSpec&, std::size_t);
template RpbCurves rpb_curve_export(const EsRpbParams<double>&, const WindowSpec&, std::size_t);

std::string format_curves_csv(const RpbCurves& curves) {
  std::ostringstream os;
  os.precision(9);
  for (std::size_t k = 0; k < curves.dx.size(); ++k) os << (k ? "," : "") << curves.dx[k];
  os << '\n';
  for (const auto& head : curves.heads) {
    for (std::size_t k = 0; k < head.size(); ++k) os << (k ? "," : "") << head[k];
    os << '\n';
  }
  return os.str();
}

double total_variation(const std::vector<double>& curve) {
  double tv = 0.0;
  for (std::size_t i = 1; i < curve.size(); ++i) tv += std::abs(curve[i] - curve[i - 1]);
  return tv;
}

SmoothnessComparison compare_bias_smoothness(ModelConfig cfg, const TrainConfig& tcfg,
                                             const ImageU8& hr) {
  auto mean_tv = [&](bool es_rpb) {
    cfg.variant.es_rpb = es_rpb;
    const auto result = train_toy<float>(cfg, tcfg, hr);
    double tv = 0.0;
    std::size_t count = 0;
    for (const auto& group : result.params.groups) {
      for (const auto& b : group.blocks) {
        for (const auto& curve : rpb_curve_export(b.grsa.bias, cfg.window, cfg.window.h - 1).heads) {
          tv += total_variation(curve);
          ++count;
        }
      }
    }
    return count ? tv / static_cast<double>(count) : 0.0;
  };
  SmoothnessComparison out;
  out.es_rpb_tv = mean_tv(true);
  out.table_tv = mean_tv(false);
  return out;
}

namespace {

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

// Shifts every parameter off its initial value so that no check runs at a
// degenerate point (zero biases, identical norms, unit alpha).
void perturb(const NamedTensors<double>& params, Rng rng, double sd) {
  for (const auto& [name, t] : params) {
    Rng r = rng.split(name);
    for (double& v : Tensor<double>(t).mutable_data()) v += sd * r.normal();
  }
}

Tensor<double> random_input(Shape shape, Rng rng, bool requires_grad = true) {
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = rng.uniform(-1.0, 1.0);
  return Tensor<double>::from(std::move(shape), std::move(v), requires_grad);
}

std::vector<Tensor<double>> tensors_of(const NamedTensors<double>& named) {
  std::vector<Tensor<double>> out;
  for (const auto& entry : named) out.push_back(entry.second);
  return out;
}

}  // namespace

std::vector<OracleReport> run_qk_suite(const VerifyOptions& opts) {
  const std::size_t sizes[] = {2, 4, 8, 16};
  const Rng rng = Rng(opts.seed).split("qk-equivalence");
  const auto start = std::chrono::steady_clock::now();
  double worst = 0.0;
  std::string worst_case = "none";
  std::size_t failures = 0;
  constexpr std::size_t kInstances = 100;
  for (std::size_t i = 0; i < kInstances; ++i) {
    Rng r = rng.split(i);
    const std::size_t n = sizes[r.below(4)], c = sizes[r.below(4)];
    const OracleReport rep = check_grouped_qk_equivalence(n, c, r.split("instance"));
    if (!rep.pass) ++failures;
    if (rep.max_abs_error >= worst) {
      worst = rep.max_abs_error;
      worst_case = rep.name;
    }
  }
  std::ostringstream os;
  os << kInstances << " instances, " << failures << " failed, worst " << worst_case << ", "
     << seconds_since(start) << " s";
  return {make_report("qk-equivalence", worst, 1e-10, os.str())};
}

std::vector<OracleReport> run_gradcheck_suite(const VerifyOptions& opts) {
  const Rng rng = Rng(opts.seed).split("gradcheck");
  const bool residual = !opts.corrupt_grl_residual;
  std::vector<OracleReport> out;

  {
    GrlParams<double> p = make_grouped_linear<double>(8, 2, residual, rng.split("grl"));
    NamedTensors<double> named;
    for (std::size_t g = 0; g < 2; ++g) {
      named.push_back({"w" + std::to_string(g), p.weights[g]});
      named.push_back({"b" + std::to_string(g), p.biases[g]});
    }
    perturb(named, rng.split("grl.perturb"), 0.5);
    const Tensor<double> x = random_input({6, 8}, rng.split("grl.x"));
    auto inputs = tensors_of(named);
    inputs.push_back(x);
    out.push_back(finite_diff_gradcheck(
        "gradcheck grl", [&] { return weighted_sum(grl_forward(x, p), rng.split("grl.w")); }, inputs));
  }
  {
    // Zero weights and biases: the residual path alone must reproduce x.
    GrlParams<double> p = make_grouped_linear<double>(8, 2, residual, rng.split("grl.id"));
    for (auto& w : p.weights) std::fill(w.mutable_data().begin(), w.mutable_data().end(), 0.0);
    NoGradGuard no_grad;
    const Tensor<double> x = random_input({6, 8}, rng.split("grl.id.x"), false);
    const Tensor<double> yt = grl_forward(x, p);
    const auto y = yt.data();
    double err = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) err = std::max(err, std::abs(y[i] - x.data()[i]));
    out.push_back(make_report("grl zero-weight identity", err, 0.0));
  }

  const WindowSpec win{4, 4};
  GrsaShape shape{8, 2, 16, win, AttentionVariant{true, residual, true}};
  {
    GrsaParams<double> p = init_grsa<double>(shape, rng.split("es-rpb"));
    auto& es = std::get<EsRpbParams<double>>(p.bias);
    const NamedTensors<double> named = {
        {"alpha", es.alpha}, {"beta", es.beta}, {"w1", es.mlp_w1}, {"w2", es.mlp_w2}};
    perturb(named, rng.split("es-rpb.perturb"), 0.3);
    out.push_back(finite_diff_gradcheck(
        "gradcheck es-rpb",
        [&] { return weighted_sum(es_rpb_bias(win, es), rng.split("es-rpb.w")); },
        tensors_of(named)));
  }
  {
    GrsaParams<double> p = init_grsa<double>(shape, rng.split("grsa"));
    const NamedTensors<double> named = named_parameters(p);
    perturb(named, rng.split("grsa.perturb"), 0.3);
    const Tensor<double> x = random_input({2, 16, 8}, rng.split("grsa.x"));
    auto inputs = tensors_of(named);
    inputs.push_back(x);
    out.push_back(finite_diff_gradcheck(
        "gradcheck grsa",
        [&] {
          return weighted_sum(grsa_forward(x, p, position_bias(win, p.bias)), rng.split("grsa.w"));
        },
        inputs));
  }

  ModelConfig cfg;
  cfg.num_groups = 1;
  cfg.blocks_per_group = 1;
  cfg.channels = 8;
  cfg.heads = 2;
  cfg.window = win;
  cfg.scale = 2;
  cfg.ffn_ratio = 2.0;
  cfg.c_hidden_rpb = 16;
  cfg.variant.residual = residual;
  {
    GrformerParams<double> net = init_parameters<double>(cfg, rng.split("grsab"));
    GrsabParams<double>& block = net.groups[0].blocks[0];
    const NamedTensors<double> named = named_parameters(block);
    perturb(named, rng.split("grsab.perturb"), 0.2);
    const Tensor<double> x = random_input({8, 8, 8}, rng.split("grsab.x"));
    auto inputs = tensors_of(named);
    inputs.push_back(x);
    // Block 1 runs with the half-window shift.
    out.push_back(finite_diff_gradcheck(
        "gradcheck grsab",
        [&] { return weighted_sum(grsab_forward(x, block, cfg, 1), rng.split("grsab.w")); },
        inputs));
  }
  {
    GrformerParams<double> net = init_parameters<double>(cfg, rng.split("network"));
    const NamedTensors<double> named = named_parameters(net);
    perturb(named, rng.split("network.perturb"), 0.1);
    // 5 x 6 input exercises the reflect padding to 8 x 8 and the final crop.
    const Tensor<double> img = random_input({3, 5, 6}, rng.split("network.x"));
    auto inputs = tensors_of(named);
    inputs.push_back(img);
    out.push_back(finite_diff_gradcheck(
        "gradcheck network",
        [&] { return weighted_sum(grformer_forward(img, net, cfg), rng.split("network.w")); },
        inputs));
  }
  return out;
}

std::vector<OracleReport> run_rpb_suite(const VerifyOptions& opts) {
  std::vector<OracleReport> out;
  const double rates[] = {0.25, 1.0, 3.0};

  double zero_err = 0.0, odd_err = 0.0;
  for (const double a : rates) {
    zero_err = std::max(zero_err, std::abs(exp_space_offset(a, 0.0)));
    for (int d = 1; d <= 31; ++d) {
      odd_err = std::max(odd_err, std::abs(exp_space_offset(a, -d) + exp_space_offset(a, d)));
    }
  }
  out.push_back(make_report("es-rpb zero offset maps to zero", zero_err, 0.0));
  out.push_back(make_report("es-rpb odd symmetry", odd_err, 0.0));

  // Count violations of strict growth and strictly shrinking increments.
  std::size_t violations = 0;
  for (int d = 1; d <= 31; ++d) {
    const double prev = std::abs(exp_space_offset(1.0, d - 1));
    const double cur = std::abs(exp_space_offset(1.0, d));
    if (!(cur > prev)) ++violations;
    if (d >= 2) {
      const double before = prev - std::abs(exp_space_offset(1.0, d - 2));
      if (!(cur - prev < before)) ++violations;
    }
  }
  out.push_back(make_report("es-rpb monotone with shrinking increments", static_cast<double>(violations),
                            0.0, "alpha = 1, |dX| in [0, 31]"));

  const WindowSpec win{8, 32};
  const std::size_t heads = 3;
  const GrsaShape shape{60, heads, 128, win, AttentionVariant{}};
  GrsaParams<double> p = init_grsa<double>(shape, Rng(opts.seed).split("rpb-properties"));
  auto& es = std::get<EsRpbParams<double>>(p.bias);
  {
    NoGradGuard no_grad;
    const auto features = es_rpb_features(win, es);
    const OffsetTable offsets = relative_offset_table(win);
    double err = 0.0;
    for (std::size_t i = 0; i < offsets.dx.size(); ++i) {
      err = std::max(err, std::abs(features.data()[2 * i] - exp_space_offset(1.0, offsets.dx[i])));
      err = std::max(err, std::abs(features.data()[2 * i + 1] - exp_space_offset(1.0, offsets.dy[i])));
    }
    out.push_back(make_report("es-rpb features match closed form", err, 1e-15));

    const auto table = es_rpb_table(win, es);
    const auto bias = es_rpb_bias(win, es);
    const bool shapes_ok = offsets.dx.size() == 15 * 63 && table.shape() == Shape{15 * 63, heads} &&
                           bias.shape() == Shape{heads, 256, 256};
    out.push_back(make_report("bias table shape for 8x32 window", shapes_ok ? 0.0 : 1.0, 0.0,
                              "offsets " + std::to_string(offsets.dx.size()) + ", table " +
                                  shape_str(table.shape()) + ", bias " + shape_str(bias.shape())));

    // Centre-row curve against the gathered bias at token pairs with dY = 0.
    const RpbCurves curves = rpb_curve_export(es, win, win.h - 1);
    double gather_err = curves.dy == 0 && curves.heads.size() == heads ? 0.0 : 1.0;
    for (std::size_t k = 0; k < curves.dx.size(); ++k) {
      const int dx = curves.dx[k];
      // Token i at (0, xi), token j at (0, xj) with xi - xj = dx.
      const std::size_t xi = dx >= 0 ? static_cast<std::size_t>(dx) : 0;
      const std::size_t xj = dx >= 0 ? 0 : static_cast<std::size_t>(-dx);
      for (std::size_t h = 0; h < heads; ++h) {
        gather_err = std::max(gather_err, std::abs(curves.heads[h][k] - bias.at({h, xi, xj})));
      }
    }
    out.push_back(make_report("centre-row curve matches bias matrix", gather_err, 0.0,
                              "curve length " + std::to_string(curves.dx.size())));
    out.push_back(make_report("curve length 2w - 1",
                              std::abs(static_cast<double>(curves.dx.size()) - 63.0), 0.0));

    Tensor<double>(es.alpha).mutable_data()[0] = 0.0;
    const RpbCurves flat = rpb_curve_export(es, win, win.h - 1);
    double spread = 0.0;
    for (const auto& head : flat.heads) {
      const auto [lo, hi] = std::minmax_element(head.begin(), head.end());
      spread = std::max(spread, *hi - *lo);
    }
    out.push_back(make_report("alpha = 0 gives a constant curve", spread, 0.0));
  }
  return out;
}

std::vector<OracleReport> run_verify_suite(const std::string& suite, const VerifyOptions& opts) {
  if (suite == "qk-equivalence") return run_qk_suite(opts);
  if (suite == "gradcheck") return run_gradcheck_suite(opts);
  if (suite == "rpb-properties") return run_rpb_suite(opts);
  if (suite == "all") {
    std::vector<OracleReport> out;
    for (const auto& name : kVerifySuites) {
      auto part = run_verify_suite(name, opts);
      out.insert(out.end(), part.begin(), part.end());
    }
    return out;
  }
  throw ContractError("unknown verification suite '" + suite + "'");
}

std::string format_report(const OracleReport& r) {
  std::ostringstream os;
  os << (r.pass ? "PASS " : "FAIL ") << r.name << "  max_err=" << r.max_abs_error
     << " tol=" << r.tolerance;
  if (!r.details.empty()) os << "  (" << r.details << ")";
  return os.str();
}

}  // namespace grf
