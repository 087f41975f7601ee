#include <gtest/gtest.h>

#include <cmath>

#include "grformer/complexity.hpp"
#include "grformer/errors.hpp"

using namespace grf;

namespace {

const ComplexityRow& row(const ComplexityReport& r, const std::string& name) {
  for (const auto& x : r.rows) {
    if (x.name == name) return x;
  }
  throw std::runtime_error("no row " + name);
}

}  // namespace

TEST(Complexity, PositionBiasClosedForms) {
  EXPECT_EQ(es_rpb_mlp_params(128, 1), 384u);
  EXPECT_EQ(rpb_table_params(WindowSpec{16, 16}), 961u);
  EXPECT_EQ(rpb_table_params(WindowSpec{8, 32}, 3), 945u * 3);
}

TEST(Complexity, GrsaModuleParameterBreakdown) {
  const ModelConfig cfg;
  const ComplexityReport r = count_params(cfg);
  // 3 * (2 * 30^2 + 60) + (2 * 30^2 + 60) + (2 * 128 + 128 * 3 + 2) + 3
  const double expected = 3 * 1860 + 1860 + 642 + 3;
  EXPECT_EQ(r.sa_params_per_module(), expected);
  EXPECT_EQ(r.sa_modules, 24u);
  EXPECT_NEAR(r.sa_params_per_module(), 8200.0, 0.05 * 8200.0);
}

TEST(Complexity, TotalsAreSumsOfRows) {
  for (int arm = 1; arm <= 6; ++arm) {
    ModelConfig cfg;
    const ComplexityReport r = count_macs(cfg, {}, ablation_arm(arm));
    std::uint64_t p = 0, m = 0, sp = 0, sm = 0;
    for (const auto& x : r.rows) {
      p += x.params;
      m += x.macs;
      if (x.attention) {
        sp += x.params;
        sm += x.macs;
      }
    }
    EXPECT_EQ(r.total_params, p);
    EXPECT_EQ(r.total_macs, m);
    EXPECT_EQ(r.sa_params, sp);
    EXPECT_EQ(r.sa_macs, sm);
    EXPECT_LE(r.sa_params, r.total_params);
  }
}

TEST(Complexity, ShallowConvMacsOnSixtyFourGrid) {
  ModelConfig cfg;
  // x4 output of 256 x 256 means a 64 x 64 input grid.
  const ComplexityReport r = count_macs(cfg, Resolution{256, 256});
  EXPECT_EQ(row(r, "conv_shallow").macs, 64u * 64 * 3 * 60 * 9);
  EXPECT_EQ(row(r, "conv_shallow").macs, 6635520u);
}

TEST(Complexity, GroupingHalvesLinearMacsExactly) {
  const ModelConfig cfg;
  const ComplexityReport grouped = count_macs(cfg, {}, ablation_arm(1));
  const ComplexityReport dense = count_macs(cfg, {}, ablation_arm(4));
  const auto linear = [](const ComplexityReport& r) {
    return static_cast<double>(row(r, "grsa.qkv").macs + row(r, "grsa.proj").macs);
  };
  EXPECT_EQ(linear(grouped) / linear(dense), 0.5);
}

TEST(Complexity, ResolutionDependentRowsScaleLinearly) {
  const ModelConfig cfg;
  const ComplexityReport a = count_macs(cfg, Resolution{1280, 720});
  const ComplexityReport b = count_macs(cfg, Resolution{2560, 1440});
  ASSERT_EQ(a.rows.size(), b.rows.size());
  for (std::size_t i = 0; i < a.rows.size(); ++i) {
    if (a.rows[i].name == "grsa.position_bias") {
      // The bias MLP runs once per window shape, independent of image size.
      EXPECT_EQ(b.rows[i].macs, a.rows[i].macs);
    } else {
      EXPECT_EQ(b.rows[i].macs, 4 * a.rows[i].macs) << a.rows[i].name;
    }
  }
  EXPECT_NEAR(static_cast<double>(b.total_macs) / static_cast<double>(a.total_macs), 4.0, 1e-3);
}

TEST(Complexity, WindowGrowthAffectsOnlyTableBias) {
  ModelConfig small, large;
  small.window = {8, 8};
  large.window = {16, 16};
  const auto table = [](ModelConfig c) {
    c.variant.es_rpb = false;
    return row(count_params(c), "grsa.position_bias").params;
  };
  const auto es = [](const ModelConfig& c) { return row(count_params(c), "grsa.position_bias").params; };
  EXPECT_EQ(table(small), 24u * 225 * 3);
  EXPECT_EQ(table(large), 24u * 961 * 3);
  EXPECT_NEAR(static_cast<double>(table(large)) / static_cast<double>(table(small)), 4.0, 0.3);
  EXPECT_EQ(es(small), es(large));
}

TEST(Complexity, AblationArmCounts) {
  const ModelConfig cfg;
  EXPECT_EQ(count_params(cfg, ablation_arm(1)).sa_params_per_module(), 8085.0);
  EXPECT_EQ(count_params(cfg, ablation_arm(2)).sa_params_per_module(), 10278.0);
  EXPECT_EQ(count_params(cfg, ablation_arm(3)).sa_params_per_module(), 15285.0);
  EXPECT_EQ(count_params(cfg, ablation_arm(6)).sa_params_per_module(), 17478.0);
  // Residual paths add no parameters.
  EXPECT_EQ(count_params(cfg, ablation_arm(4)).total_params, count_params(cfg, ablation_arm(3)).total_params);
  EXPECT_EQ(count_params(cfg, ablation_arm(5)).total_params, count_params(cfg, ablation_arm(1)).total_params);
  EXPECT_THROW(ablation_arm(7), ContractError);
}

TEST(Complexity, VariantNames) {
  EXPECT_EQ(parse_variant("grsa"), ablation_arm(1));
  EXPECT_EQ(parse_variant("sa-ungrouped"), ablation_arm(6));
  EXPECT_EQ(parse_variant("sa-grouped-no-residual"), ablation_arm(5));
  EXPECT_EQ(parse_variant("sa-with-rpb"), ablation_arm(2));
  EXPECT_EQ(parse_variant("arm3"), ablation_arm(3));
  EXPECT_THROW(parse_variant("arm9"), ContractError);
  EXPECT_THROW(parse_variant("swin"), ContractError);
}

TEST(Complexity, ReductionOfIdenticalVariantsIsZero) {
  const ModelConfig cfg;
  const ReductionSummary s = reduction_summary(cfg, ablation_arm(1), ablation_arm(1));
  EXPECT_EQ(s.param_reduction, 0.0);
  EXPECT_EQ(s.mac_reduction, 0.0);
  const ReductionSummary d = reduction_summary(cfg);
  EXPECT_NEAR(d.param_reduction, 1.0 - 8085.0 / 17478.0, 1e-12);
  EXPECT_GT(d.mac_reduction, 0.0);
}

TEST(Complexity, TotalParamsNearReportedSizes) {
  const double reported[] = {781e3, 789e3, 800e3};
  for (std::size_t scale = 2; scale <= 4; ++scale) {
    ModelConfig cfg;
    cfg.scale = scale;
    const double total = static_cast<double>(count_params(cfg).total_params);
    EXPECT_NEAR(total, reported[scale - 2], 0.03 * reported[scale - 2]) << "x" << scale;
  }
}

TEST(Complexity, Formatting) {
  const ComplexityReport r = count_macs(ModelConfig{});
  const std::string table = format_table(r);
  EXPECT_NE(table.find("grsa.qkv"), std::string::npos);
  EXPECT_NE(table.find("total"), std::string::npos);
  const std::string csv = format_csv(r);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "module,params,macs,attention");
  EXPECT_NE(csv.find("total," + std::to_string(r.total_params)), std::string::npos);
}
