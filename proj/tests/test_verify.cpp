#include <gtest/gtest.h>

#include <set>

#include "pyrafuse/verify.hpp"

using namespace pyrafuse;

TEST(GradSuite, CoversEveryDifferentiableOp) {
  std::set<std::string> ops;
  for (const auto& c : grad_cases()) ops.insert(c.op);
  for (const auto& op : differentiable_ops()) EXPECT_TRUE(ops.count(op)) << op;
  EXPECT_TRUE(ops.count("rpp"));
  EXPECT_TRUE(ops.count("spfm"));
  EXPECT_TRUE(ops.count("esam"));
  EXPECT_TRUE(ops.count("spfnet"));
}

TEST(GradSuite, OpsPassOverSeveralSeeds) {
  std::vector<GradCase> ops;
  for (const auto& c : grad_cases())
    if (c.category == "op") ops.push_back(c);
  const SuiteReport r = run_grad_suite(ops, 3, 5);
  EXPECT_TRUE(r.passed()) << r.format();
}

TEST(GradSuite, FaultyBackwardIsCaught) {
  const SuiteReport r = run_grad_suite({faulty_grad_case()}, 1, 3, false);
  EXPECT_FALSE(r.passed());
  ASSERT_EQ(r.lines.size(), 1u);
  EXPECT_NE(r.lines[0].detail.find("max_rel="), std::string::npos);
  EXPECT_NE(r.format().find("FAIL"), std::string::npos);
}

TEST(GradSuite, CoverageLineFlagsMissingOps) {
  std::vector<GradCase> partial;
  for (const auto& c : grad_cases())
    if (c.op == "add") partial.push_back(c);
  const SuiteReport r = run_grad_suite(partial, 1, 1);
  EXPECT_FALSE(r.passed());
  EXPECT_NE(r.lines.back().detail.find("missing:"), std::string::npos);
}

TEST(Suites, DeterministicReports) {
  EXPECT_EQ(run_oracle_suite(7).format(), run_oracle_suite(7).format());
  EXPECT_EQ(run_shape_suite(7).format(), run_shape_suite(7).format());
  std::vector<GradCase> some;
  for (const auto& c : grad_cases())
    if (c.category != "model") some.push_back(c);
  EXPECT_EQ(run_grad_suite(some, 7, 2, false).format(), run_grad_suite(some, 7, 2, false).format());
}

TEST(Suites, OracleAndShapePass) {
  const SuiteReport o = run_oracle_suite(11);
  EXPECT_TRUE(o.passed()) << o.format();
  const SuiteReport s = run_shape_suite(11);
  EXPECT_TRUE(s.passed()) << s.format();
  EXPECT_NE(o.format().find("summary:"), std::string::npos);
}

TEST(ConvOracle, AllGeometryCombinations) {
  const SuiteLine l = conv_oracle_check(5, 40);
  EXPECT_TRUE(l.passed) << l.detail;
}

TEST(Helpers, SpacedTensorHasDistinctValuesAwayFromZero) {
  Rng rng(2);
  const auto t = spaced_tensor({1, 2, 3, 4}, rng);
  std::set<double> vals;
  for (double v : t.data()) {
    vals.insert(v);
    EXPECT_GE(std::abs(v), 0.05 - 1e-15);
  }
  EXPECT_EQ(vals.size(), t.numel());
}
