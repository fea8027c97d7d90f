#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <numeric>
#include <set>

#include "lbi/lbi.hpp"
#include "support.hpp"

namespace lbi {
namespace {

namespace fs = std::filesystem;

fs::path temp_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("lbi_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::vector<double> class_mean(const std::vector<Example>& xs, std::size_t label, std::size_t D) {
  std::vector<double> m(D, 0.0);
  std::size_t n = 0;
  for (const Example& e : xs) {
    if (e.label != label) continue;
    ++n;
    for (std::size_t d = 0; d < D; ++d) m[d] += e.features[d];
  }
  for (double& x : m) x /= static_cast<double>(n);
  return m;
}

TEST(Generate, ShapesDomainsAndCorruptionCount) {
  SynthSpec s = test::small_spec();
  s.M = 37;
  s.corrupt_frac = 0.3;
  const DatasetBundle b = generate(s);
  EXPECT_EQ(b.M(), 37u);
  EXPECT_EQ(b.N(), s.N);
  EXPECT_EQ(b.O(), s.O);
  EXPECT_EQ(b.test.size(), s.test);
  EXPECT_EQ(b.corrupted_count(), static_cast<std::size_t>(std::llround(0.3 * 37)));
  EXPECT_EQ(b.corrupted_count(), corrupted_target_count(s));
  b.validate();
  for (const Example& e : b.pretrain) EXPECT_EQ(e.domain, Domain::source);
  for (Split sp : {Split::train, Split::val, Split::test})
    for (const Example& e : b.split(sp)) {
      EXPECT_EQ(e.domain, Domain::target);
      EXPECT_FALSE(e.corrupted);
    }
}

TEST(Generate, DeterministicPerSeed) {
  const SynthSpec s = test::small_spec(4);
  EXPECT_EQ(generate(s), generate(s));
  SynthSpec t = s;
  t.seed = 5;
  EXPECT_NE(generate(s), generate(t));
}

TEST(Generate, ZeroShiftMeansCoincide) {
  SynthSpec s;
  s.shift = 0.0;
  s.corrupt_frac = 0.0;
  s.seed = 7;
  const ClassMeans m = resolve_means(s);
  EXPECT_EQ(m.source, m.target);

  // Empirical class means of the two domains converge to each other.
  s.M = 20000;
  s.N = 20000;
  const DatasetBundle b = generate(s);
  for (std::size_t c = 0; c < s.C; ++c) {
    const auto ms = class_mean(b.pretrain, c, s.D), mt = class_mean(b.train, c, s.D);
    for (std::size_t d = 0; d < s.D; ++d) {
      EXPECT_NEAR(ms[d], m.target[c][d], 0.05);
      EXPECT_NEAR(ms[d], mt[d], 0.06);
    }
  }
}

TEST(Generate, ShiftDisplacesSourceCentroidsByShift) {
  SynthSpec s;
  s.shift = 1.5;
  const ClassMeans m = resolve_means(s);
  for (std::size_t c = 0; c < s.C; ++c) {
    double d2 = 0.0;
    for (std::size_t d = 0; d < s.D; ++d) d2 += std::pow(m.source[c][d] - m.target[c][d], 2);
    EXPECT_NEAR(std::sqrt(d2), 1.5, 1e-12);
  }
}

TEST(Generate, TargetCentroidsArePairwiseClassSepApart) {
  SynthSpec s;
  s.C = 4;
  s.D = 6;
  s.class_sep = 2.5;
  const ClassMeans m = resolve_means(s);
  std::vector<double> centre(s.D, 0.0);
  for (std::size_t c = 0; c < s.C; ++c)
    for (std::size_t d = 0; d < s.D; ++d) centre[d] += m.target[c][d];
  for (double x : centre) EXPECT_NEAR(x, 0.0, 1e-12);
  for (std::size_t i = 0; i < s.C; ++i)
    for (std::size_t j = i + 1; j < s.C; ++j)
      EXPECT_NEAR(std::sqrt(squared_distance(m.target[i], m.target[j])), 2.5, 1e-12);
}

TEST(Generate, FullLabelFlip) {
  SynthSpec s = test::small_spec();
  s.M = 50;
  s.corrupt_frac = 1.0;
  s.corrupt_kind = CorruptKind::label_flip;
  SynthSpec clean = s;
  clean.corrupt_frac = 0.0;
  const DatasetBundle b = generate(s), c = generate(clean);
  ASSERT_EQ(b.corrupted_count(), 50u);
  for (std::size_t i = 0; i < 50; ++i) {
    EXPECT_TRUE(b.pretrain[i].corrupted);
    EXPECT_NE(b.pretrain[i].label, c.pretrain[i].label);
    EXPECT_EQ(b.pretrain[i].features, c.pretrain[i].features);
  }
  EXPECT_EQ(b.train, c.train);
}

TEST(Generate, FeatureShiftMovesAlongOneDirection) {
  SynthSpec s = test::small_spec();
  s.M = 40;
  s.corrupt_frac = 0.25;
  s.corrupt_kind = CorruptKind::feature_shift;
  s.noise_sigma = 0.5;
  SynthSpec clean = s;
  clean.corrupt_frac = 0.0;
  const DatasetBundle b = generate(s), c = generate(clean);
  std::optional<std::vector<double>> dir;
  for (std::size_t i = 0; i < s.M; ++i) {
    EXPECT_EQ(b.pretrain[i].label, c.pretrain[i].label);
    std::vector<double> delta(s.D);
    for (std::size_t d = 0; d < s.D; ++d) delta[d] = b.pretrain[i].features[d] - c.pretrain[i].features[d];
    const double norm = std::sqrt(std::inner_product(delta.begin(), delta.end(), delta.begin(), 0.0));
    if (!b.pretrain[i].corrupted) {
      EXPECT_EQ(norm, 0.0);
      continue;
    }
    EXPECT_NEAR(norm, s.corrupt_shift * s.noise_sigma, 1e-9);
    if (!dir) dir = delta;
    for (std::size_t d = 0; d < s.D; ++d) EXPECT_NEAR(delta[d], (*dir)[d], 1e-9);
  }
}

TEST(Generate, InvalidSpecsAreConfigErrors) {
  SynthSpec s;
  s.M = 0;
  EXPECT_THROW(generate(s), ConfigError);
  s = {};
  s.corrupt_frac = 1.5;
  EXPECT_THROW(generate(s), ConfigError);
  s = {};
  s.noise_sigma = 0.0;
  EXPECT_THROW(generate(s), ConfigError);
  s = {};
  s.target_means = {{0.0, 1.0}};
  EXPECT_THROW(generate(s), ConfigError);
}

TEST(Generate, ExplicitMeansAreUsed) {
  SynthSpec s;
  s.D = 2;
  s.C = 2;
  s.target_means = {{-5.0, 0.0}, {5.0, 0.0}};
  s.source_means = {{-5.0, 1.0}, {5.0, 1.0}};
  const ClassMeans m = resolve_means(s);
  EXPECT_EQ(m.target, s.target_means);
  EXPECT_EQ(m.source, s.source_means);
}

// Bayes accuracy of the target task from the known class densities: equal
// priors and a shared isotropic covariance make the Bayes rule "nearest
// centroid". A 10^6-sample Monte-Carlo estimate must agree with the closed
// form Phi(sep / 2 sigma), and no learned classifier may beat it beyond
// sampling error.
TEST(Generate, MonteCarloBayesAccuracyBoundsTestAccuracy) {
  SynthSpec s;
  s.D = 2;
  s.C = 2;
  s.shift = 1.5;
  s.noise_sigma = 1.0;
  s.class_sep = 1.0;
  s.seed = 3;
  s.test = 20000;
  const ClassMeans m = resolve_means(s);

  Rng rng(12345);
  const int n = 1000000;
  int hits = 0;
  for (int i = 0; i < n; ++i) {
    const std::size_t y = rng.below(2);
    const double x0 = m.target[y][0] + rng.normal(), x1 = m.target[y][1] + rng.normal();
    auto logdens = [&](std::size_t c) {
      return -0.5 * (std::pow(x0 - m.target[c][0], 2) + std::pow(x1 - m.target[c][1], 2));
    };
    hits += (logdens(y) >= logdens(1 - y)) ? 1 : 0;
  }
  const double bayes = static_cast<double>(hits) / n;
  const double exact = 0.5 * std::erfc(-0.5 / std::sqrt(2.0));  // Phi(0.5)
  EXPECT_NEAR(bayes, exact, 4.0 * std::sqrt(exact * (1 - exact) / n));

  LbiConfig cfg;
  cfg.iterations = 200;
  const RunOutput out = run(generate(s), cfg);
  ASSERT_TRUE(out.ok());
  const double acc = accuracy(out.state.fine, generate(s).test);
  EXPECT_LE(acc, bayes + 3.0 * std::sqrt(bayes * (1 - bayes) / static_cast<double>(s.test)));
  EXPECT_GT(acc, 0.55);
}

// ---------------------------------------------------------------------------
// CSV

TEST(Csv, MinimalFileOneRowPerSplit) {
  const DatasetBundle b = parse_csv("pretrain,0,1.0,2.0\ntrain,1,0.5,0.5\nval,0,0,0\ntest,1,-1,3e-2\n");
  EXPECT_EQ(b.M(), 1u);
  EXPECT_EQ(b.N(), 1u);
  EXPECT_EQ(b.O(), 1u);
  EXPECT_EQ(b.test.size(), 1u);
  EXPECT_EQ(b.D, 2u);
  EXPECT_EQ(b.C, 2u);
  EXPECT_EQ(b.test[0].features[1], 3e-2);
  EXPECT_EQ(b.pretrain[0].domain, Domain::source);
}

TEST(Csv, ShortRowNamesItsLine) {
  try {
    parse_csv("pretrain,0,1,2,3\n# comment\n\ntrain,1,1,2\n");
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 4u);
  }
  try {
    parse_csv("train,0,1,2\n", CsvSchema{3, std::nullopt});
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 1u);
  }
}

TEST(Csv, MalformedRowsAreRejectedWithLineNumbers) {
  auto line_of = [](const std::string& text) -> std::size_t {
    try {
      parse_csv(text);
    } catch (const ParseError& e) {
      return e.line();
    }
    return 0;
  };
  EXPECT_EQ(line_of("train,0,1\nholdout,0,1\n"), 2u);
  EXPECT_EQ(line_of("train,0,1\ntrain,x,1\n"), 2u);
  EXPECT_EQ(line_of("train,0,1\ntrain,-1,1\n"), 2u);
  EXPECT_EQ(line_of("train,0,1\ntrain,0,abc\n"), 2u);
  EXPECT_EQ(line_of("train,0,1\ntrain,0,nan\n"), 2u);
  EXPECT_EQ(line_of("train,0\n"), 1u);
  EXPECT_THROW(parse_csv(""), ParseError);
  EXPECT_THROW(parse_csv("train,5,1\n", CsvSchema{std::nullopt, 3}), ParseError);
}

TEST(Csv, RoundTripOfGeneratedFixture) {
  SynthSpec s = test::small_spec(21);
  s.M = 24;
  s.N = 12;
  s.O = 12;
  s.test = 12;  // 60 rows
  const DatasetBundle b = generate(s);
  const fs::path dir = temp_dir("csv_roundtrip");
  save_csv(dir / "fixture.csv", b, &s);
  const DatasetBundle back = load_csv(dir / "fixture.csv");
  EXPECT_EQ(back, b);
  EXPECT_EQ(back.corrupted_count(), b.corrupted_count());
  EXPECT_EQ(nlohmann::json::parse(io::read_file(sidecar_path(dir / "fixture.csv")))["synth_spec"]["seed"], 21);
  fs::remove_all(dir);
}

TEST(Csv, RowOrderPreservedWithinSplits) {
  const DatasetBundle b = parse_csv("train,0,1\nval,0,9\ntrain,1,2\ntrain,0,3\n");
  ASSERT_EQ(b.N(), 3u);
  EXPECT_EQ(b.train[0].features[0], 1.0);
  EXPECT_EQ(b.train[1].features[0], 2.0);
  EXPECT_EQ(b.train[2].features[0], 3.0);
}

TEST(Csv, MissingFileIsAConfigError) {
  EXPECT_THROW(load_csv("/nonexistent/lbi.csv"), ConfigError);
}

// ---------------------------------------------------------------------------
// split_ratio

std::vector<Example> pool_of(std::size_t n) {
  std::vector<Example> pool(n);
  for (std::size_t i = 0; i < n; ++i) pool[i].features = {static_cast<double>(i)};
  return pool;
}

TEST(SplitRatio, SixTwoTwo) {
  const DatasetBundle b = split_ratio(pool_of(10), {0.6, 0.2, 0.2}, 1);
  EXPECT_EQ(b.N(), 6u);
  EXPECT_EQ(b.O(), 2u);
  EXPECT_EQ(b.test.size(), 2u);
}

TEST(SplitRatio, FiveThreeTwoIsDisjointAndExhaustive) {
  const DatasetBundle b = split_ratio(pool_of(100), {0.5, 0.3, 0.2}, 2);
  EXPECT_EQ(b.N(), 50u);
  EXPECT_EQ(b.O(), 30u);
  std::set<double> seen;
  for (Split s : {Split::train, Split::val, Split::test})
    for (const Example& e : b.split(s)) EXPECT_TRUE(seen.insert(e.features[0]).second);
  EXPECT_EQ(seen.size(), 100u);
}

TEST(SplitRatio, EmptySplitIsAConfigError) {
  EXPECT_THROW(split_ratio(pool_of(10), {1.0, 0.0, 0.0}, 0), ConfigError);
  EXPECT_THROW(split_ratio(pool_of(10), {0.5, 0.3, 0.3}, 0), ConfigError);
  EXPECT_THROW(split_ratio({}, {0.6, 0.2, 0.2}, 0), ConfigError);
}

TEST(SplitRatio, DeterministicPerSeed) {
  EXPECT_EQ(split_ratio(pool_of(30), {0.6, 0.2, 0.2}, 9), split_ratio(pool_of(30), {0.6, 0.2, 0.2}, 9));
  EXPECT_NE(split_ratio(pool_of(30), {0.6, 0.2, 0.2}, 9), split_ratio(pool_of(30), {0.6, 0.2, 0.2}, 10));
}

}  // namespace
}  // namespace lbi
