#pragma once

// Rank statistics over method x benchmark results: per-benchmark rankings,
// rank correlations between benchmarks, pairwise win rates, Nemenyi
// critical-difference data, grouped rankings, and the report bundle.

#include <string>
#include <vector>

namespace confopt {

struct RankTable {
  std::vector<std::string> methods;
  std::vector<std::string> benchmarks;
  // scores[method][benchmark]; NaN marks a hole
  std::vector<std::vector<double>> scores;
  std::string mode = "best";  // best | mean | fixed_hp(HPk)
};

struct Ranking {
  std::vector<std::string> methods;
  std::vector<std::string> benchmarks;
  // ranks[benchmark][method], 1 = best, ties get the average rank
  std::vector<std::vector<double>> ranks;
};

// Descending-score ranks with average-rank tie handling.
std::vector<double> rank_scores(const std::vector<double>& scores);

// Per-benchmark ranking of the table; holes are rejected.
Ranking rank_methods(const RankTable& table);

struct Correlation {
  double value = 0.0;
  bool constant_input = false;  // a constant vector forces the value to 0
};

// Pearson correlation of two (rank) vectors — Spearman when fed ranks.
Correlation spearman(const std::vector<double>& rank_a, const std::vector<double>& rank_b);

// Kendall tau-b (tie-corrected) of two rank vectors.
Correlation kendall_tau(const std::vector<double>& rank_a, const std::vector<double>& rank_b);

// w[i][j] = (wins of method i over j + 0.5 * ties) / benchmarks.
std::vector<std::vector<double>> win_rate_matrix(const Ranking& ranking);

struct MeanRankCd {
  std::vector<double> mean_rank;  // per method
  double critical_difference = 0.0;
};

// Nemenyi critical difference: CD = q_alpha(M) * sqrt(M(M+1) / (6N)).
// q tables cover M in [2, 10], alpha in {0.05, 0.1}.
MeanRankCd mean_rank_cd(const Ranking& ranking, double alpha);

// Re-ranks by mean score across benchmark groups. groupby: none (the
// per-benchmark ranking), opset, or variant (3 rows each).
Ranking aggregate_rankings(const RankTable& table, const std::string& groupby);

// SVG renderings.
std::string render_heatmap_svg(const std::vector<std::string>& row_labels,
                               const std::vector<std::string>& col_labels,
                               const std::vector<std::vector<double>>& values,
                               const std::string& title, double lo, double hi);
std::string render_cd_svg(const std::vector<std::string>& methods,
                          const std::vector<double>& mean_rank, double cd,
                          const std::string& title);

// Writes rankings.tsv, correlation_<mode>.tsv, winrate_<mode>.tsv,
// cd_<mode>.tsv and matching .svg files into `dir`.
void write_report(const std::string& dir, const RankTable& table, double alpha = 0.05);

}  // namespace confopt
