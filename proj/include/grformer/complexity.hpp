#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "grformer/network.hpp"

namespace grf {

struct Resolution {
  std::size_t width = 1280;
  std::size_t height = 720;
};

struct ComplexityRow {
  std::string name;
  std::uint64_t params = 0;
  std::uint64_t macs = 0;
  bool attention = false;  // part of the self-attention unit
};

// Whole-model accounting aggregated by sub-module kind. MACs are counted on
// the nominal low-resolution grid (output / scale per axis); bias adds,
// normalization, softmax and other elementwise work are not MACs.
struct ComplexityReport {
  std::vector<ComplexityRow> rows;
  std::uint64_t total_params = 0;
  std::uint64_t total_macs = 0;
  std::uint64_t sa_params = 0;  // summed over all attention units
  std::uint64_t sa_macs = 0;
  std::size_t sa_modules = 0;
  std::optional<Resolution> output;  // set when MACs were counted

  double sa_params_per_module() const;
  double sa_macs_per_module() const;
};

// The six ablation arms: grouping, QKV residual, ES-RPB on/off.
AttentionVariant ablation_arm(int arm);

// Accepts "grsa", "sa-ungrouped", "sa-grouped-no-residual", "sa-with-rpb" and
// "arm1".."arm6". Throws ContractError otherwise.
AttentionVariant parse_variant(const std::string& name);
std::string variant_name(const AttentionVariant& v);

ComplexityReport count_params(const ModelConfig& cfg);
ComplexityReport count_params(ModelConfig cfg, const AttentionVariant& variant);
ComplexityReport count_macs(const ModelConfig& cfg, Resolution output = {});
ComplexityReport count_macs(ModelConfig cfg, Resolution output, const AttentionVariant& variant);

// Closed-form size of a free relative-position table, heads = 1.
std::uint64_t rpb_table_params(const WindowSpec& win, std::size_t heads = 1);
// MLP weights of the exponential-space bias, excluding alpha and beta.
std::uint64_t es_rpb_mlp_params(std::size_t hidden, std::size_t heads = 1);

struct ReductionSummary {
  double param_reduction = 0;  // 1 - candidate / baseline, per attention unit
  double mac_reduction = 0;
  double candidate_params = 0;
  double baseline_params = 0;
  double candidate_macs = 0;
  double baseline_macs = 0;
};

// Compares cfg.variant against the ungrouped, residual-free, table-bias arm.
ReductionSummary reduction_summary(const ModelConfig& cfg, Resolution output = {});
ReductionSummary reduction_summary(const ModelConfig& cfg, const AttentionVariant& candidate,
                                   const AttentionVariant& baseline, Resolution output = {});

std::string format_table(const ComplexityReport& report);
std::string format_csv(const ComplexityReport& report);

}  // namespace grf
