// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
// exits nonzero if any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "grformer/attention.hpp"
#include "grformer/complexity.hpp"
#include "grformer/imaging.hpp"
#include "grformer/network.hpp"
#include "grformer/training.hpp"
#include "grformer/verification.hpp"

using namespace grf;

namespace {

struct Outcome {
  bool pass = true;
  std::ostringstream notes;

  void check(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      notes << " [failed: " << what << "]";
    }
  }
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

void all_reports_pass(Outcome& o, const std::vector<OracleReport>& reports) {
  o.check(!reports.empty(), "no oracle reports");
  for (const auto& r : reports) o.check(r.pass, format_report(r));
}

bool within_rel(double value, double target, double rel) {
  return std::abs(value - target) <= rel * target;
}

Outcome grouping_equivalence() {
  Outcome o;
  const auto t0 = std::chrono::steady_clock::now();
  const auto reports = run_qk_suite(VerifyOptions{});
  const double secs = seconds_since(t0);
  all_reports_pass(o, reports);
  for (const auto& r : reports) o.check(r.max_abs_error <= 1e-10, "max error above 1e-10");
  o.check(secs < 5.0, "runtime over 5 s");
  o.notes << " max_err=" << (reports.empty() ? 0.0 : reports.front().max_abs_error) << " time=" << secs
          << "s";
  return o;
}

Outcome parameter_accounting() {
  Outcome o;
  const double targets[] = {781e3, 789e3, 800e3};
  for (std::size_t scale = 2; scale <= 4; ++scale) {
    ModelConfig cfg;
    cfg.scale = scale;
    const double total = static_cast<double>(count_params(cfg).total_params);
    o.check(within_rel(total, targets[scale - 2], 0.03), "x" + std::to_string(scale) + " params");
    o.notes << " x" << scale << "=" << total;
  }
  const auto mlp = es_rpb_mlp_params(128, 1);
  const auto table = rpb_table_params(WindowSpec{16, 16});
  o.check(mlp == 384, "es-rpb mlp count");
  o.check(table == 961, "rpb table count");
  o.notes << " es_rpb_mlp=" << mlp << " rpb_table_16x16=" << table;
  return o;
}

Outcome mac_accounting() {
  Outcome o;
  const double targets[] = {198.4e9, 93.5e9, 50.8e9};
  for (std::size_t scale = 2; scale <= 4; ++scale) {
    ModelConfig cfg;
    cfg.scale = scale;
    const double macs = static_cast<double>(count_macs(cfg, Resolution{1280, 720}).total_macs);
    o.check(within_rel(macs, targets[scale - 2], 0.05), "x" + std::to_string(scale) + " MACs");
    o.notes << " x" << scale << "=" << macs / 1e9 << "G";
  }
  const ReductionSummary s = reduction_summary(ModelConfig{}, Resolution{1280, 720});
  o.check(std::abs(100.0 * s.param_reduction - 60.0) <= 3.0, "SA-param reduction");
  o.check(std::abs(100.0 * s.mac_reduction - 49.0) <= 3.0, "SA-MAC reduction");
  o.notes << " sa_param_red=" << 100.0 * s.param_reduction << "% sa_mac_red=" << 100.0 * s.mac_reduction
          << "%";
  return o;
}

Outcome gradient_correctness() {
  Outcome o;
  const auto t0 = std::chrono::steady_clock::now();
  const auto reports = run_gradcheck_suite(VerifyOptions{});
  const double secs = seconds_since(t0);
  all_reports_pass(o, reports);
  const std::vector<std::string> required = {"gradcheck grl", "gradcheck es-rpb", "gradcheck grsa",
                                             "gradcheck grsab", "gradcheck network"};
  for (const auto& name : required) {
    const bool found = std::any_of(reports.begin(), reports.end(),
                                   [&](const OracleReport& r) { return r.name == name; });
    o.check(found, "missing " + name);
  }
  double worst = 0;
  for (const auto& r : reports) {
    if (r.name.rfind("gradcheck", 0) == 0) {
      worst = std::max(worst, r.max_abs_error);
      o.check(r.tolerance <= 1e-4, r.name + " tolerance looser than 1e-4");
    }
  }
  o.check(secs < 60.0, "runtime over 60 s");
  o.notes << " worst_rel_err=" << worst << " time=" << secs << "s";
  return o;
}

Outcome structural_identities() {
  Outcome o;
  Rng rng(5);
  {
    GrlParams<double> p = make_grouped_linear<double>(60, 2, true, rng.split("grl"));
    for (auto& w : p.weights) std::fill(w.mutable_data().begin(), w.mutable_data().end(), 0.0);
    for (auto& b : p.biases) std::fill(b.mutable_data().begin(), b.mutable_data().end(), 0.0);
    std::vector<double> v(7 * 60);
    Rng r = rng.split("grl.x");
    for (auto& e : v) e = r.normal();
    const auto x = Tensor<double>::from({7, 60}, v);
    const auto y = grl_forward(x, p);
    o.check(std::equal(y.data().begin(), y.data().end(), x.data().begin()), "zero-weight GRL identity");
  }
  {
    std::vector<float> v(3 * 19 * 37);
    Rng r = rng.split("windows");
    for (auto& e : v) e = static_cast<float>(r.normal());
    const auto x = Tensor<float>::from({3, 19, 37}, v);
    const WindowSpec win{8, 32};
    for (WindowShift shift : {WindowShift{0, 0}, WindowShift{4, 16}}) {
      const auto back = window_reverse(window_partition(x, win, shift), win, 19, 37, shift);
      o.check(back.shape() == x.shape() && std::equal(back.data().begin(), back.data().end(), x.data().begin()),
              "window round trip");
    }
  }
  {
    const std::size_t r = 4, c = 3, h = 5, w = 6;
    std::vector<double> v(c * r * r * h * w);
    std::iota(v.begin(), v.end(), 0.0);
    const auto y = pixel_shuffle(Tensor<double>::from({c * r * r, h, w}, v), r);
    std::vector<double> out(y.data().begin(), y.data().end());
    std::sort(out.begin(), out.end());
    o.check(y.shape() == (Shape{c, r * h, r * w}) && out == v, "pixel_shuffle permutation");
  }
  for (int arm = 1; arm <= 6; ++arm) {
    for (std::size_t scale = 2; scale <= 4; ++scale) {
      ModelConfig cfg;
      cfg.scale = scale;
      cfg.variant = ablation_arm(arm);
      const auto named = named_parameters(init_parameters<float>(cfg, Rng(0)));
      o.check(parameter_count(named) == count_params(cfg).total_params,
              "count_params vs instantiated, arm " + std::to_string(arm));
    }
  }
  o.notes << " grl, windows, pixel_shuffle, 18 param counts";
  return o;
}

Outcome es_rpb_properties() {
  Outcome o;
  const auto reports = run_rpb_suite(VerifyOptions{});
  all_reports_pass(o, reports);
  const OffsetTable offsets = relative_offset_table(WindowSpec{8, 32});
  o.check(offsets.dx.size() == 15 * 63, "8x32 offset table size");
  o.notes << " " << reports.size() << " oracles, offsets=" << offsets.dx.size();
  return o;
}

Outcome desk_training() {
  Outcome o;
  const ImageU8 hr = synthetic_image(48, 48, 0);
  const auto t0 = std::chrono::steady_clock::now();
  const ToyResult<float> res = train_toy<float>(toy_config(), toy_train_config(), hr);
  const double secs = seconds_since(t0);
  const double ratio = res.final_loss / res.initial_loss;
  o.check(res.losses.size() == 500, "500 iterations");
  o.check(ratio < 0.2, "final L1 not below 0.2x initial");
  o.check(res.sr_psnr > res.bicubic_psnr, "SR does not beat bicubic");
  o.check(secs < 600.0, "runtime over 10 min");
  o.notes << " L1 " << res.initial_loss << " -> " << res.final_loss << " (ratio " << ratio << "), SR "
          << res.sr_psnr << " dB vs bicubic " << res.bicubic_psnr << " dB, time=" << secs << "s";
  return o;
}

Outcome metric_oracles() {
  Outcome o;
  const PlaneF a(32, 32, 0.4f);
  const PlaneF b(32, 32, 0.4f + 16.0f / 255.0f);
  const double p = psnr(a, b);
  o.check(std::abs(p - 24.048) <= 0.01, "offset PSNR");
  Rng rng(8);
  PlaneF r(32, 32);
  for (auto& v : r.values) v = static_cast<float>(rng.uniform());
  const double s = ssim(r, r);
  o.check(s == 1.0, "SSIM(a, a) == 1");
  const double inf = psnr(r, r);
  o.check(std::isinf(inf) && inf > 0, "identical PSNR is +inf");
  o.notes << " psnr_offset=" << p << " ssim_self=" << s << " psnr_self=" << inf;
  return o;
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"grouping equivalence", grouping_equivalence},
      {"parameter accounting", parameter_accounting},
      {"MAC accounting", mac_accounting},
      {"gradient correctness", gradient_correctness},
      {"structural identities", structural_identities},
      {"ES-RPB properties", es_rpb_properties},
      {"desk-scale training", desk_training},
      {"metric oracles", metric_oracles},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o.pass = false;
      o.notes << " [exception: " << e.what() << "]";
    }
    if (!o.pass) ++failed;
    std::printf("%s %zu %s:%s\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first.c_str(),
                o.notes.str().c_str());
    std::fflush(stdout);
  }
  std::printf("%d of %zu criteria failed\n", failed, criteria.size());
  return failed == 0 ? 0 : 1;
}
