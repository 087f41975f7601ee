#include "grformer/complexity.hpp"

#include <iomanip>
#include <sstream>

#include "grformer/errors.hpp"

namespace grf {

using u64 = std::uint64_t;

double ComplexityReport::sa_params_per_module() const {
  return sa_modules ? static_cast<double>(sa_params) / static_cast<double>(sa_modules) : 0.0;
}

double ComplexityReport::sa_macs_per_module() const {
  return sa_modules ? static_cast<double>(sa_macs) / static_cast<double>(sa_modules) : 0.0;
}

AttentionVariant ablation_arm(int arm) {
  switch (arm) {
    case 1: return {true, true, true};
    case 2: return {true, true, false};
    case 3: return {false, false, true};
    case 4: return {false, true, true};
    case 5: return {true, false, true};
    case 6: return {false, false, false};
    default: throw ContractError("ablation arm must be 1..6, got " + std::to_string(arm));
  }
}

AttentionVariant parse_variant(const std::string& name) {
  if (name == "grsa") return ablation_arm(1);
  if (name == "sa-ungrouped") return ablation_arm(6);
  if (name == "sa-grouped-no-residual") return ablation_arm(5);
  if (name == "sa-with-rpb") return ablation_arm(2);
  if (name.size() == 4 && name.starts_with("arm") && name[3] >= '1' && name[3] <= '6') {
    return ablation_arm(name[3] - '0');
  }
  throw ContractError("unknown variant '" + name + "'");
}

std::string variant_name(const AttentionVariant& v) {
  std::string s = v.grouped ? "grouped" : "dense";
  s += v.residual ? "+residual" : "";
  s += v.es_rpb ? "+es-rpb" : "+rpb-table";
  return s;
}

u64 rpb_table_params(const WindowSpec& win, std::size_t heads) {
  return static_cast<u64>(win.offset_count()) * heads;
}

u64 es_rpb_mlp_params(std::size_t hidden, std::size_t heads) {
  return static_cast<u64>(2 * hidden + hidden * heads);
}

namespace {

ComplexityReport build(const ModelConfig& cfg, std::optional<Resolution> output) {
  cfg.validate();
  const u64 c = cfg.channels;
  const u64 heads = cfg.heads;
  const u64 blocks = cfg.block_count();
  const u64 hidden = cfg.ffn_hidden();
  const u64 r2 = static_cast<u64>(cfg.scale) * cfg.scale;
  const u64 n = cfg.window.tokens();
  const u64 offsets = cfg.window.offset_count();
  u64 tokens = 0;
  if (output) tokens = static_cast<u64>(output->width / cfg.scale) * (output->height / cfg.scale);

  const bool grouped = cfg.variant.grouped;
  // One projection C -> C: weights, biases, and MACs per token.
  const u64 proj_params = grouped ? 2 * (c / 2) * (c / 2) + c : c * c + c;
  const u64 proj_macs = grouped ? 2 * (c / 2) * (c / 2) : c * c;
  const u64 conv_cc = 9 * c * c;

  u64 bias_params = 0, bias_macs = 0;
  if (cfg.variant.es_rpb) {
    bias_params = es_rpb_mlp_params(cfg.c_hidden_rpb, heads) + 2;
    // Evaluated once per window shape, not per token pair.
    bias_macs = offsets * es_rpb_mlp_params(cfg.c_hidden_rpb, heads);
  } else {
    bias_params = rpb_table_params(cfg.window, heads);
  }

  ComplexityReport rep;
  rep.output = output;
  rep.sa_modules = blocks;
  auto row = [&](std::string name, u64 params, u64 macs, bool attention) {
    rep.rows.push_back({std::move(name), params, macs, attention});
  };
  row("conv_shallow", 9 * cfg.c_in * c + c, tokens * 9 * cfg.c_in * c, false);
  row("grsa.qkv", blocks * 3 * proj_params, blocks * 3 * tokens * proj_macs, true);
  row("grsa.proj", blocks * proj_params, blocks * tokens * proj_macs, true);
  row("grsa.position_bias", blocks * bias_params, output ? blocks * bias_macs : 0, true);
  row("grsa.lambda", blocks * heads, 0, true);
  // Q K^T and A V: windows * heads * N^2 * head_dim each, windows = tokens / N.
  row("grsa.attention", 0, blocks * 2 * tokens * n * c, true);
  row("norm", blocks * 4 * c, 0, false);
  row("ffn", blocks * (2 * c * hidden + hidden + c), blocks * tokens * 2 * c * hidden, false);
  row("group_conv", cfg.num_groups * (conv_cc + c), cfg.num_groups * tokens * conv_cc, false);
  row("conv_body", conv_cc + c, tokens * conv_cc, false);
  row("conv_pre_up", 9 * c * cfg.c_out * r2 + cfg.c_out * r2, tokens * 9 * c * cfg.c_out * r2, false);
  row("pixel_shuffle", 0, 0, false);

  for (const auto& r : rep.rows) {
    rep.total_params += r.params;
    rep.total_macs += r.macs;
    if (r.attention) {
      rep.sa_params += r.params;
      rep.sa_macs += r.macs;
    }
  }
  return rep;
}

}  // namespace

ComplexityReport count_params(const ModelConfig& cfg) { return build(cfg, std::nullopt); }

ComplexityReport count_params(ModelConfig cfg, const AttentionVariant& variant) {
  cfg.variant = variant;
  return build(cfg, std::nullopt);
}

ComplexityReport count_macs(const ModelConfig& cfg, Resolution output) { return build(cfg, output); }

ComplexityReport count_macs(ModelConfig cfg, Resolution output, const AttentionVariant& variant) {
  cfg.variant = variant;
  return build(cfg, output);
}

ReductionSummary reduction_summary(const ModelConfig& cfg, const AttentionVariant& candidate,
                                   const AttentionVariant& baseline, Resolution output) {
  const ComplexityReport a = count_macs(cfg, output, candidate);
  const ComplexityReport b = count_macs(cfg, output, baseline);
  ReductionSummary s;
  s.candidate_params = a.sa_params_per_module();
  s.baseline_params = b.sa_params_per_module();
  s.candidate_macs = a.sa_macs_per_module();
  s.baseline_macs = b.sa_macs_per_module();
  s.param_reduction = 1.0 - s.candidate_params / s.baseline_params;
  s.mac_reduction = 1.0 - s.candidate_macs / s.baseline_macs;
  return s;
}

ReductionSummary reduction_summary(const ModelConfig& cfg, Resolution output) {
  return reduction_summary(cfg, cfg.variant, ablation_arm(6), output);
}

std::string format_table(const ComplexityReport& report) {
  std::ostringstream os;
  os << std::left << std::setw(22) << "module" << std::right << std::setw(14) << "params"
     << std::setw(20) << "MACs" << "\n";
  for (const auto& r : report.rows) {
    os << std::left << std::setw(22) << r.name << std::right << std::setw(14) << r.params
       << std::setw(20) << r.macs << "\n";
  }
  os << std::left << std::setw(22) << "total" << std::right << std::setw(14) << report.total_params
     << std::setw(20) << report.total_macs << "\n";
  os << std::fixed << std::setprecision(1);
  os << std::left << std::setw(22) << "sa per module" << std::right << std::setw(14)
     << report.sa_params_per_module() << std::setw(20) << report.sa_macs_per_module() << "\n";
  return os.str();
}

std::string format_csv(const ComplexityReport& report) {
  std::ostringstream os;
  os << "module,params,macs,attention\n";
  for (const auto& r : report.rows) {
    os << r.name << ',' << r.params << ',' << r.macs << ',' << (r.attention ? 1 : 0) << '\n';
  }
  os << "total," << report.total_params << ',' << report.total_macs << ",0\n";
  return os.str();
}

}  // namespace grf
