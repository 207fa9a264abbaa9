#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "confopt/analytics.hpp"

using namespace confopt;

namespace {

// Published reference rankings: ranks[benchmark][method] with methods in the
// order {darts, drnas, fairdarts, gdas, oles, pcdarts, smoothdarts} and
// benchmarks in lexicographic id order.
const std::vector<std::string> kMethods = {"darts", "drnas",   "fairdarts", "gdas",
                                           "oles",  "pcdarts", "smoothdarts"};
const std::vector<std::string> kBenchmarks = {
    "deep_all_skip",        "deep_no_skip",        "deep_regular",
    "single_cell_all_skip", "single_cell_no_skip", "single_cell_regular",
    "wide_all_skip",        "wide_no_skip",        "wide_regular"};
const std::vector<std::vector<double>> kGoldenRanks = {
    {1, 4, 5, 3, 6, 2, 7}, {3, 1, 4, 5, 2, 7, 6}, {4, 2, 5, 3, 1, 7, 6},
    {6, 2, 5, 3, 4, 1, 7}, {7, 1, 4, 3, 6, 2, 5}, {7, 3, 2, 4, 5, 1, 6},
    {7, 6, 5, 2, 3, 1, 4}, {6, 3, 7, 1, 5, 2, 4}, {4, 2, 6, 1, 3, 5, 7}};

// A score table whose per-benchmark rankings reproduce kGoldenRanks
// (score = 100 - rank keeps higher-is-better semantics).
RankTable golden_table() {
  RankTable t;
  t.methods = kMethods;
  t.benchmarks = kBenchmarks;
  t.scores.assign(kMethods.size(), std::vector<double>(kBenchmarks.size(), 0.0));
  for (size_t b = 0; b < kBenchmarks.size(); ++b) {
    for (size_t m = 0; m < kMethods.size(); ++m) {
      t.scores[m][b] = 100.0 - kGoldenRanks[b][m];
    }
  }
  return t;
}

double pearson_oracle(const std::vector<double>& a, const std::vector<double>& b) {
  double n = static_cast<double>(a.size());
  double sa = 0, sb = 0, saa = 0, sbb = 0, sab = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    sa += a[i];
    sb += b[i];
    saa += a[i] * a[i];
    sbb += b[i] * b[i];
    sab += a[i] * b[i];
  }
  return (n * sab - sa * sb) / std::sqrt((n * saa - sa * sa) * (n * sbb - sb * sb));
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("rank_scores ranks descending with average ties") {
  CHECK(rank_scores({90.0, 85.0, 80.0}) == std::vector<double>{1.0, 2.0, 3.0});
  CHECK(rank_scores({80.0, 85.0, 90.0}) == std::vector<double>{3.0, 2.0, 1.0});
  CHECK(rank_scores({90.0, 90.0, 80.0}) == std::vector<double>{1.5, 1.5, 3.0});
  CHECK(rank_scores({1.0, 1.0, 1.0}) == std::vector<double>{2.0, 2.0, 2.0});
  CHECK(rank_scores({5.0, 7.0, 7.0, 7.0, 2.0}) ==
        std::vector<double>{4.0, 2.0, 2.0, 2.0, 5.0});
  CHECK(rank_scores({}).empty());
}

TEST_CASE("rank_methods reproduces the published reference table") {
  Ranking r = rank_methods(golden_table());
  REQUIRE(r.benchmarks == kBenchmarks);
  REQUIRE(r.ranks.size() == 9);
  for (size_t b = 0; b < 9; ++b) CHECK(r.ranks[b] == kGoldenRanks[b]);

  SUBCASE("deep_no_skip best accuracies rank the methods 1..7") {
    // best test accuracies per method on the deep no-skip benchmark
    RankTable t;
    t.methods = kMethods;
    t.benchmarks = {"deep_no_skip"};
    t.scores = {{87.35}, {89.49}, {88.15}, {86.54}, {88.85}, {86.02}, {87.06}};
    Ranking one = rank_methods(t);
    CHECK(one.ranks[0] == std::vector<double>{4, 1, 3, 6, 2, 7, 5});
  }
  SUBCASE("holes are rejected") {
    RankTable t = golden_table();
    t.scores[2][4] = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(rank_methods(t), std::invalid_argument);
  }
  SUBCASE("shape mismatches are rejected") {
    RankTable t = golden_table();
    t.scores.pop_back();
    CHECK_THROWS_AS(rank_methods(t), std::invalid_argument);
  }
}

TEST_CASE("spearman correlation of rank vectors") {
  std::vector<double> a = {1, 2, 3, 4, 5, 6, 7};
  std::vector<double> rev = {7, 6, 5, 4, 3, 2, 1};
  CHECK(spearman(a, a).value == doctest::Approx(1.0));
  CHECK(spearman(a, rev).value == doctest::Approx(-1.0));

  std::vector<double> b = {2, 1, 4, 3, 6, 7, 5};
  Correlation c = spearman(a, b);
  CHECK_FALSE(c.constant_input);
  CHECK(c.value == doctest::Approx(pearson_oracle(a, b)));

  SUBCASE("constant input is flagged and pinned to 0") {
    std::vector<double> flat = {4, 4, 4, 4, 4, 4, 4};
    Correlation k = spearman(a, flat);
    CHECK(k.constant_input);
    CHECK(k.value == 0.0);
  }
  SUBCASE("wide_all_skip and deep_no_skip disagree") {
    Ranking r = rank_methods(golden_table());
    size_t wide = 6, deep = 1;  // lexicographic positions
    REQUIRE(r.benchmarks[wide] == "wide_all_skip");
    REQUIRE(r.benchmarks[deep] == "deep_no_skip");
    Correlation k = spearman(r.ranks[wide], r.ranks[deep]);
    CHECK(k.value < 0.0);
    CHECK(k.value == doctest::Approx(pearson_oracle(r.ranks[wide], r.ranks[deep])));
  }
  CHECK_THROWS_AS(spearman({1, 2}, {1, 2, 3}), std::invalid_argument);
  CHECK_THROWS_AS(spearman({1}, {1}), std::invalid_argument);
}

TEST_CASE("kendall tau-b") {
  std::vector<double> a = {1, 2, 3, 4, 5};
  std::vector<double> rev = {5, 4, 3, 2, 1};
  CHECK(kendall_tau(a, a).value == doctest::Approx(1.0));
  CHECK(kendall_tau(a, rev).value == doctest::Approx(-1.0));

  // one swap among n=5: tau = 1 - 2*1/C(5,2) = 0.8
  std::vector<double> swapped = {2, 1, 3, 4, 5};
  CHECK(kendall_tau(a, swapped).value == doctest::Approx(0.8));

  // tie correction: a has a tie, b does not
  std::vector<double> tied = {1.5, 1.5, 3, 4, 5};
  double v = kendall_tau(tied, a).value;
  CHECK(v == doctest::Approx(9.0 / std::sqrt(9.0 * 10.0)));

  Correlation flat = kendall_tau({2, 2, 2}, {1, 2, 3});
  CHECK(flat.constant_input);
  CHECK(flat.value == 0.0);
  CHECK_THROWS_AS(kendall_tau({1}, {1}), std::invalid_argument);
}

TEST_CASE("win-rate matrix over the reference rankings") {
  Ranking r = rank_methods(golden_table());
  auto w = win_rate_matrix(r);
  REQUIRE(w.size() == 7);

  size_t darts = 0, drnas = 1;
  // the reference result: drnas outranks darts on 8 of 9 benchmarks
  CHECK(w[drnas][darts] == doctest::Approx(8.0 / 9.0));
  CHECK(w[darts][drnas] == doctest::Approx(1.0 / 9.0));

  for (size_t i = 0; i < w.size(); ++i) {
    CHECK(w[i][i] == 0.5);
    for (size_t j = 0; j < w.size(); ++j) {
      CHECK(w[i][j] >= 0.0);
      CHECK(w[i][j] <= 1.0);
      CHECK(w[i][j] + w[j][i] == doctest::Approx(1.0));
    }
  }

  // brute-force oracle for a handful of pairs
  for (size_t i : {size_t{0}, size_t{3}}) {
    for (size_t j : {size_t{2}, size_t{5}}) {
      double wins = 0;
      for (const auto& row : r.ranks) {
        if (row[i] < row[j]) wins += 1;
        if (row[i] == row[j]) wins += 0.5;
      }
      CHECK(w[i][j] == doctest::Approx(wins / 9.0));
    }
  }

  SUBCASE("tied ranks split the win") {
    Ranking tied;
    tied.methods = {"a", "b"};
    tied.benchmarks = {"x", "y"};
    tied.ranks = {{1.5, 1.5}, {1.0, 2.0}};
    auto wt = win_rate_matrix(tied);
    CHECK(wt[0][1] == doctest::Approx(0.75));
    CHECK(wt[1][0] == doctest::Approx(0.25));
  }
  Ranking single;
  single.methods = {"a", "b"};
  single.benchmarks = {"x"};
  single.ranks = {{1.0, 2.0}};
  CHECK_THROWS_AS(win_rate_matrix(single), std::invalid_argument);
}

TEST_CASE("Nemenyi critical difference") {
  Ranking r = rank_methods(golden_table());
  MeanRankCd cd = mean_rank_cd(r, 0.05);
  REQUIRE(cd.mean_rank.size() == 7);

  // oracle: CD = q * sqrt(M(M+1)/(6N)) for M=7, N=9, q_0.05 = 2.949
  CHECK(cd.critical_difference == doctest::Approx(2.949 * std::sqrt(7.0 * 8.0 / 54.0)));
  CHECK(cd.critical_difference == doctest::Approx(3.003).epsilon(1e-3));

  for (size_t m = 0; m < 7; ++m) {
    double sum = 0;
    for (const auto& row : r.ranks) sum += row[m];
    CHECK(cd.mean_rank[m] == doctest::Approx(sum / 9.0));
  }
  // every benchmark ranks 1..7, so the mean ranks average to 4 overall
  double total = 0;
  for (double v : cd.mean_rank) total += v;
  CHECK(total / 7.0 == doctest::Approx(4.0));

  SUBCASE("all-equal scores give everyone the mean rank") {
    RankTable flat;
    flat.methods = {"a", "b", "c", "d"};
    flat.benchmarks = {"x", "y"};
    flat.scores.assign(4, std::vector<double>(2, 50.0));
    MeanRankCd fc = mean_rank_cd(rank_methods(flat), 0.1);
    for (double v : fc.mean_rank) CHECK(v == doctest::Approx(2.5));
    CHECK(fc.critical_difference == doctest::Approx(2.291 * std::sqrt(4.0 * 5.0 / 12.0)));
  }
  SUBCASE("unsupported sizes and alphas rejected") {
    Ranking one;
    one.methods = {"a"};
    one.benchmarks = {"x", "y"};
    one.ranks = {{1.0}, {1.0}};
    CHECK_THROWS_AS(mean_rank_cd(one, 0.05), std::invalid_argument);
    CHECK_THROWS_AS(mean_rank_cd(r, 0.01), std::invalid_argument);
    Ranking single;
    single.methods = r.methods;
    single.benchmarks = {"x"};
    single.ranks = {r.ranks[0]};
    CHECK_THROWS_AS(mean_rank_cd(single, 0.05), std::invalid_argument);
  }
}

TEST_CASE("aggregate_rankings groups by opset and variant") {
  RankTable t = golden_table();

  Ranking none = aggregate_rankings(t, "none");
  CHECK(none.benchmarks.size() == 9);
  CHECK(none.ranks == rank_methods(t).ranks);

  Ranking by_opset = aggregate_rankings(t, "opset");
  REQUIRE(by_opset.benchmarks.size() == 3);
  CHECK(by_opset.benchmarks == std::vector<std::string>{"all_skip", "no_skip", "regular"});

  Ranking by_variant = aggregate_rankings(t, "variant");
  REQUIRE(by_variant.benchmarks.size() == 3);
  CHECK(by_variant.benchmarks == std::vector<std::string>{"deep", "single_cell", "wide"});

  // oracle: rank mean scores over each group's columns
  std::map<std::string, std::vector<size_t>> groups = {
      {"deep", {0, 1, 2}}, {"single_cell", {3, 4, 5}}, {"wide", {6, 7, 8}}};
  for (size_t g = 0; g < by_variant.benchmarks.size(); ++g) {
    const auto& cols = groups.at(by_variant.benchmarks[g]);
    std::vector<double> mean(7, 0.0);
    for (size_t m = 0; m < 7; ++m) {
      for (size_t b : cols) mean[m] += t.scores[m][b];
      mean[m] /= 3.0;
    }
    CHECK(by_variant.ranks[g] == rank_scores(mean));
  }

  CHECK_THROWS_AS(aggregate_rankings(t, "seed"), std::invalid_argument);
  RankTable bad = t;
  bad.benchmarks[0] = "narrow-regular";
  CHECK_THROWS_AS(aggregate_rankings(bad, "opset"), std::invalid_argument);
}

TEST_CASE("write_report emits the tsv + svg bundle") {
  namespace fs = std::filesystem;
  fs::path dir = fs::temp_directory_path() / "confopt_report_test";
  fs::remove_all(dir);
  fs::create_directories(dir);

  RankTable t = golden_table();
  t.mode = "best";
  write_report(dir.string(), t, 0.05);

  for (const char* name : {"rankings.tsv", "correlation_best.tsv", "winrate_best.tsv",
                           "cd_best.tsv", "correlation_best.svg", "winrate_best.svg",
                           "cd_best.svg"}) {
    CHECK(fs::exists(dir / name));
  }

  // rankings.tsv round-trips the reference table
  std::istringstream in(slurp((dir / "rankings.tsv").string()));
  std::string header;
  std::getline(in, header);
  CHECK(header == "benchmark\tdarts\tdrnas\tfairdarts\tgdas\toles\tpcdarts\tsmoothdarts");
  std::string line;
  size_t row = 0;
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::string bench;
    std::getline(ls, bench, '\t');
    CHECK(bench == kBenchmarks[row]);
    for (size_t m = 0; m < 7; ++m) {
      std::string cell;
      std::getline(ls, cell, '\t');
      CHECK(std::stod(cell) == doctest::Approx(kGoldenRanks[row][m]));
    }
    ++row;
  }
  CHECK(row == 9);

  std::string cd_tsv = slurp((dir / "cd_best.tsv").string());
  CHECK(cd_tsv.find("critical_difference") != std::string::npos);
  CHECK(cd_tsv.find("3.003") != std::string::npos);

  std::string svg = slurp((dir / "winrate_best.svg").string());
  CHECK(svg.rfind("<svg", 0) == 0);
  CHECK(svg.find("</svg>") != std::string::npos);
  CHECK(svg.find("drnas") != std::string::npos);
  std::string cd_svg = slurp((dir / "cd_best.svg").string());
  CHECK(cd_svg.find("CD = ") != std::string::npos);

  fs::remove_all(dir);
}
