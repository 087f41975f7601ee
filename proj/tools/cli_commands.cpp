#include "cli_commands.hpp"

#include <CLI11.hpp>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <iomanip>
#include <json.hpp>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include "grformer/complexity.hpp"
#include "grformer/errors.hpp"
#include "grformer/imaging.hpp"
#include "grformer/network.hpp"
#include "grformer/training.hpp"
#include "grformer/verification.hpp"
#include "grformer/weights_io.hpp"

namespace grf::cli {

namespace {

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string resolve_precision(const std::string& flag) {
  std::string p = flag;
  if (p.empty()) {
    const char* env = std::getenv("GRF_PRECISION");
    p = env && *env ? env : "f32";
  }
  if (p != "f32" && p != "f64") throw UsageError("precision must be f32 or f64, got '" + p + "'");
  return p;
}

// Calls fn(float{}) or fn(double{}) for the chosen precision.
template <typename Fn>
int with_precision(const std::string& precision, Fn&& fn) {
  return precision == "f64" ? fn(double{}) : fn(float{});
}

ModelConfig config_or_default(const std::string& path, const ModelConfig& fallback) {
  return path.empty() ? fallback : load_config(path);
}

Resolution parse_resolution(const std::string& text) {
  const auto x = text.find('x');
  std::size_t w = 0, h = 0;
  try {
    if (x == std::string::npos) throw std::invalid_argument(text);
    std::size_t pw = 0, ph = 0;
    w = std::stoul(text.substr(0, x), &pw);
    h = std::stoul(text.substr(x + 1), &ph);
    if (pw != x || ph != text.size() - x - 1 || w == 0 || h == 0) throw std::invalid_argument(text);
  } catch (const std::exception&) {
    throw UsageError("resolution must look like 1280x720, got '" + text + "'");
  }
  return {w, h};
}

std::string human(double v) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(1);
  if (v >= 1e9) os << v / 1e9 << "G";
  else if (v >= 1e6) os << v / 1e6 << "M";
  else if (v >= 1e3) os << v / 1e3 << "K";
  else os << v;
  return os.str();
}

void write_manifest(const std::string& path, const RunManifest& m) {
  write_file(path, manifest_json(m));
}

std::string format_db(double v) {
  if (std::isinf(v)) return "inf";
  std::ostringstream os;
  os << std::fixed << std::setprecision(4) << v;
  return os.str();
}

struct CountOpts {
  std::string config;
  std::size_t scale = 0;
  std::string resolution = "1280x720";
  std::string variant;
  bool csv = false;
};

int cmd_count(const CountOpts& o, std::ostream& out) {
  ModelConfig cfg = config_or_default(o.config, ModelConfig{});
  if (o.scale != 0) cfg.scale = o.scale;
  cfg.validate();
  if (!o.variant.empty()) {
    try {
      cfg.variant = parse_variant(o.variant);
    } catch (const ContractError& e) {
      throw UsageError(e.what());
    }
  }
  const Resolution res = parse_resolution(o.resolution);
  const ComplexityReport report = count_macs(cfg, res);
  if (o.csv) {
    out << format_csv(report);
    return kOk;
  }
  out << "variant " << variant_name(cfg.variant) << ", x" << cfg.scale << ", output " << res.width
      << "x" << res.height << "\n\n";
  out << format_table(report) << "\n";
  out << "total params  " << report.total_params << " (" << human(report.total_params) << ")\n";
  out << "total MACs    " << report.total_macs << " (" << human(report.total_macs) << ")\n";
  const ReductionSummary s = reduction_summary(cfg, res);
  out << std::fixed << std::setprecision(1);
  out << "vs ungrouped attention with table bias, per attention unit:\n"
      << "  params " << s.candidate_params << " vs " << s.baseline_params << "  reduction "
      << 100.0 * s.param_reduction << "%\n"
      << "  MACs   " << s.candidate_macs << " vs " << s.baseline_macs << "  reduction "
      << 100.0 * s.mac_reduction << "%\n";
  return kOk;
}

struct VerifyOpts {
  std::vector<std::string> suites;
  std::string mutate;
  unsigned long long seed = 0;
};

int cmd_verify(const VerifyOpts& o, std::ostream& out) {
  if (o.suites.empty()) throw UsageError("select at least one suite with --suite");
  VerifyOptions opts;
  opts.seed = o.seed;
  opts.corrupt_grl_residual = o.mutate == "grl-residual";
  bool ok = true;
  for (const auto& suite : o.suites) {
    for (const auto& r : run_verify_suite(suite, opts)) {
      out << format_report(r) << "\n";
      ok = ok && r.pass;
    }
  }
  out << (ok ? "all oracles passed" : "oracle failures") << "\n";
  return ok ? kOk : kValidationFailure;
}

struct SrOpts {
  std::string input;
  std::string weights;
  std::string output;
  std::string config;
  std::size_t scale = 0;
  std::string precision;
};

int cmd_sr(const SrOpts& o, std::ostream& out) {
  const std::string precision = resolve_precision(o.precision);
  return with_precision(precision, [&](auto tag) {
    using T = decltype(tag);
    auto [cfg, params] = load_weights<T>(o.weights);
    if (o.scale != 0 && o.scale != cfg.scale) {
      throw DimensionError("weights in '" + o.weights + "' are for x" + std::to_string(cfg.scale) +
                           ", but --scale " + std::to_string(o.scale) + " was requested");
    }
    if (!o.config.empty() && !(load_config(o.config) == cfg)) {
      throw ContractError("config '" + o.config + "' does not match the config stored in '" +
                          o.weights + "'");
    }
    const ImageU8 lr = read_png(o.input);
    const ImageU8 sr = super_resolve(lr, params, cfg);
    write_png(o.output, sr);
    RunManifest m{"sr", o.config, 0, precision, {o.output}};
    write_manifest(o.output + ".manifest.json", m);
    out << o.input << " (" << lr.width << "x" << lr.height << ") -> " << o.output << " ("
        << sr.width << "x" << sr.height << ")\n";
    return kOk;
  });
}

struct TrainOpts {
  std::string config;
  std::string image;
  std::string out_dir;
  std::size_t iters = 500;
  std::size_t size = 48;
  std::size_t batch = 1;
  double lr = 0;
  unsigned long long seed = 0;
  std::string precision;
};

int cmd_train_toy(const TrainOpts& o, std::ostream& out) {
  const std::string precision = resolve_precision(o.precision);
  const ModelConfig cfg = config_or_default(o.config, toy_config());
  TrainConfig tcfg = toy_train_config();
  tcfg.iters = o.iters;
  tcfg.seed = o.seed;
  tcfg.batch = o.batch;
  if (o.lr > 0) tcfg.lr = o.lr;
  const ImageU8 hr = o.image.empty() ? synthetic_image(o.size, o.size, o.seed) : read_png(o.image);
  tcfg.patch = std::max(hr.width, hr.height);

  std::error_code ec;
  std::filesystem::create_directories(o.out_dir, ec);
  if (ec) throw IoError("cannot create output directory '" + o.out_dir + "': " + ec.message());
  const auto path = [&](const char* name) { return (std::filesystem::path(o.out_dir) / name).string(); };

  return with_precision(precision, [&](auto tag) {
    using T = decltype(tag);
    const ToyResult<T> result = train_toy<T>(cfg, tcfg, hr);
    const std::string weights = path("weights.grfw"), losses = path("loss.csv");
    const std::string hr_png = path("hr.png"), lr_png = path("lr.png"), sr_png = path("sr.png");
    save_weights(weights, cfg, result.params);
    write_file(losses, format_loss_csv(result.losses));
    const ImageU8 lr = from_planes(degrade(hr, cfg.scale));
    write_png(hr_png, hr);
    write_png(lr_png, lr);
    write_png(sr_png, super_resolve(lr, result.params, cfg));
    RunManifest m{"train-toy", o.config, o.seed, precision, {weights, losses, hr_png, lr_png, sr_png}};
    write_manifest(path("manifest.json"), m);
    out << std::setprecision(6) << "iterations     " << tcfg.iters << "\n"
        << "initial L1     " << result.initial_loss << "\n"
        << "final L1       " << result.final_loss << "\n"
        << "SR Y-PSNR      " << format_db(result.sr_psnr) << " dB\n"
        << "bicubic Y-PSNR " << format_db(result.bicubic_psnr) << " dB\n";
    return kOk;
  });
}

struct EvalOpts {
  std::string a, b;
  std::size_t crop = 0;
};

int cmd_eval(const EvalOpts& o, std::ostream& out) {
  const ImageU8 a = read_png(o.a), b = read_png(o.b);
  const PlaneF ya = rgb_to_y(a), yb = rgb_to_y(b);
  out << "psnr " << format_db(psnr(ya, yb, o.crop)) << "\n";
  out << "ssim " << std::fixed << std::setprecision(6) << ssim(ya, yb, o.crop) << "\n";
  return kOk;
}

struct CurveOpts {
  std::string weights;
  std::string config;
  std::string out;
  std::size_t block = 0;
  long row = -1;
  unsigned long long seed = 0;
  std::string precision;
};

int cmd_rpb_curve(const CurveOpts& o, std::ostream& out) {
  const std::string precision = resolve_precision(o.precision);
  return with_precision(precision, [&](auto tag) {
    using T = decltype(tag);
    ModelConfig cfg;
    GrformerParams<T> params;
    if (!o.weights.empty()) {
      std::tie(cfg, params) = load_weights<T>(o.weights);
    } else {
      cfg = config_or_default(o.config, ModelConfig{});
      params = init_parameters<T>(cfg, Rng(o.seed));
    }
    if (o.block >= cfg.block_count()) {
      throw UsageError("--block " + std::to_string(o.block) + " out of range (model has " +
                       std::to_string(cfg.block_count()) + " blocks)");
    }
    const auto& block =
        params.groups[o.block / cfg.blocks_per_group].blocks[o.block % cfg.blocks_per_group];
    const std::size_t row = o.row < 0 ? cfg.window.h - 1 : static_cast<std::size_t>(o.row);
    const std::string csv = format_curves_csv(rpb_curve_export(block.grsa.bias, cfg.window, row));
    if (o.out.empty()) {
      out << csv;
    } else {
      write_file(o.out, csv);
      RunManifest m{"rpb-curve", o.config, o.seed, precision, {o.out}};
      write_manifest(o.out + ".manifest.json", m);
    }
    return kOk;
  });
}

}  // namespace

std::string manifest_json(const RunManifest& m) {
  nlohmann::ordered_json j;
  j["command"] = m.command;
  j["config_path"] = m.config_path;
  j["seed"] = m.seed;
  j["precision"] = m.precision;
  j["outputs"] = m.outputs;
  j["version"] = m.version;
  return j.dump(2) + "\n";
}

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Lightweight super-resolution transformer toolkit"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kToolVersion);

  CountOpts count;
  auto* c = app.add_subcommand("count", "Parameter and MAC accounting");
  c->add_option("--config", count.config, "Model config file");
  c->add_option("--scale", count.scale, "Override the upscaling factor");
  c->add_option("--resolution", count.resolution, "Output resolution WxH")->capture_default_str();
  c->add_option("--variant", count.variant,
                "grsa, sa-ungrouped, sa-grouped-no-residual, sa-with-rpb or arm1..arm6");
  c->add_flag("--csv", count.csv, "Machine-readable rows");

  VerifyOpts verify;
  auto* v = app.add_subcommand("verify", "Run the built-in oracles");
  std::vector<std::string> suite_names = kVerifySuites;
  suite_names.push_back("all");
  v->add_option("--suite", verify.suites, "Suite(s) to run")->check(CLI::IsMember(suite_names));
  v->add_option("--mutate", verify.mutate, "Inject a known defect")
      ->check(CLI::IsMember({"grl-residual"}));
  v->add_option("--seed", verify.seed);

  SrOpts sr;
  auto* s = app.add_subcommand("sr", "Upscale a PNG with trained weights");
  s->add_option("input", sr.input, "Low-resolution PNG")->required();
  s->add_option("weights", sr.weights, "Weight container")->required();
  s->add_option("-o,--output", sr.output, "Output PNG")->required();
  s->add_option("--config", sr.config, "Expected model config");
  s->add_option("--scale", sr.scale, "Expected upscaling factor");
  s->add_option("--precision", sr.precision, "f32 or f64");

  TrainOpts train;
  auto* t = app.add_subcommand("train-toy", "Overfit a tiny model on one image");
  t->add_option("--config", train.config, "Model config (default: toy model)");
  t->add_option("--image", train.image, "HR PNG (default: synthetic image)");
  t->add_option("--out", train.out_dir, "Output directory")->required();
  t->add_option("--iters", train.iters)->capture_default_str();
  t->add_option("--size", train.size, "Synthetic image side")->capture_default_str();
  t->add_option("--batch", train.batch)->capture_default_str()->check(CLI::PositiveNumber);
  t->add_option("--lr", train.lr, "Initial learning rate");
  t->add_option("--seed", train.seed);
  t->add_option("--precision", train.precision, "f32 or f64");

  EvalOpts ev;
  auto* e = app.add_subcommand("eval", "Y-channel PSNR and SSIM between two PNGs");
  e->add_option("a", ev.a)->required();
  e->add_option("b", ev.b)->required();
  e->add_option("--crop", ev.crop, "Border pixels to ignore")->capture_default_str();

  CurveOpts curve;
  auto* r = app.add_subcommand("rpb-curve", "Export position-bias curves as CSV");
  r->add_option("--weights", curve.weights, "Weight container (default: fresh init)");
  r->add_option("--config", curve.config, "Model config when no weights are given");
  r->add_option("--block", curve.block, "Global block index")->capture_default_str();
  r->add_option("--row", curve.row, "Offset-table row (default: dY = 0)");
  r->add_option("--out", curve.out, "CSV file (default: stdout)");
  r->add_option("--seed", curve.seed);
  r->add_option("--precision", curve.precision, "f32 or f64");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& ex) {
    return app.exit(ex, out, err) == 0 ? kOk : kUsageError;
  }

  try {
    if (c->parsed()) return cmd_count(count, out);
    if (v->parsed()) return cmd_verify(verify, out);
    if (s->parsed()) return cmd_sr(sr, out);
    if (t->parsed()) return cmd_train_toy(train, out);
    if (e->parsed()) return cmd_eval(ev, out);
    if (r->parsed()) return cmd_rpb_curve(curve, out);
  } catch (const UsageError& ex) {
    err << "error: " << ex.what() << "\n";
    return kUsageError;
  } catch (const ConfigError& ex) {
    err << "error: " << ex.what() << "\n";
    return kUsageError;
  } catch (const IoError& ex) {
    err << "error: " << ex.what() << "\n";
    return kIoError;
  } catch (const FormatError& ex) {
    err << "error: " << ex.what() << "\n";
    return kIoError;
  } catch (const std::exception& ex) {
    err << "error: " << ex.what() << "\n";
    return kValidationFailure;
  }
  return kUsageError;
}

}  // namespace grf::cli
