#include <gtest/gtest.h>

#include "pram/gradcheck_suite.hpp"

using namespace pram;

TEST(GradcheckSuite, ParseScope) {
  EXPECT_EQ(parse_gradcheck_scope("ops"), GradcheckScope::Ops);
  EXPECT_EQ(parse_gradcheck_scope("pram"), GradcheckScope::Pram);
  EXPECT_EQ(parse_gradcheck_scope("losses"), GradcheckScope::Losses);
  EXPECT_EQ(parse_gradcheck_scope("full"), GradcheckScope::Full);
  EXPECT_THROW(parse_gradcheck_scope("all"), std::invalid_argument);
  EXPECT_EQ(default_tolerance(GradcheckScope::Ops), 1e-6);
  EXPECT_EQ(default_tolerance(GradcheckScope::Full), 1e-4);
}

TEST(GradcheckSuite, CheapScopesPassAtDefaults) {
  for (auto scope : {GradcheckScope::Ops, GradcheckScope::Pram, GradcheckScope::Losses}) {
    const auto r = run_gradcheck_suite(scope, default_tolerance(scope));
    EXPECT_TRUE(r.passed()) << static_cast<int>(scope) << " max " << r.max_error();
    EXPECT_FALSE(r.cases.empty());
    for (const auto& c : r.cases) EXPECT_FALSE(c.report.params.empty()) << c.label;
  }
}

TEST(GradcheckSuite, FullScopeCoversEveryParameter) {
  const auto r = run_gradcheck_suite(GradcheckScope::Full, 1e-4);
  ASSERT_EQ(r.cases.size(), 1u);
  EXPECT_TRUE(r.passed()) << r.max_error();
  std::vector<std::string> names;
  for (const auto& p : r.cases[0].report.params) names.push_back(p.name);
  for (const char* expected : {"trunk.0.weight", "trunk.1.bias", "head.0.weight", "pram.l2.weight",
                               "classifier.weight"})
    EXPECT_NE(std::find(names.begin(), names.end(), expected), names.end()) << expected;
}

TEST(GradcheckSuite, ImpossibleToleranceFails) {
  const auto r = run_gradcheck_suite(GradcheckScope::Losses, 1e-12);
  EXPECT_FALSE(r.passed());
  EXPECT_GT(r.max_error(), 1e-12);
}

TEST(GradcheckSuite, EpsilonRangeEnforced) {
  EXPECT_THROW(run_gradcheck_suite(GradcheckScope::Ops, 1e-6, 1e-8), std::invalid_argument);
  EXPECT_THROW(run_gradcheck_suite(GradcheckScope::Ops, 1e-6, 1e-2), std::invalid_argument);
}
