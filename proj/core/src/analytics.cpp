#include "confopt/analytics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "confopt/experiment.hpp"

namespace confopt {

namespace {

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

void check_table(const RankTable& t) {
  if (t.methods.empty() || t.benchmarks.empty()) {
    throw std::invalid_argument("rank table: empty methods or benchmarks");
  }
  if (t.scores.size() != t.methods.size()) {
    throw std::invalid_argument("rank table: score rows != methods");
  }
  for (size_t m = 0; m < t.scores.size(); ++m) {
    if (t.scores[m].size() != t.benchmarks.size()) {
      throw std::invalid_argument("rank table: score columns != benchmarks");
    }
    for (double v : t.scores[m]) {
      if (std::isnan(v)) {
        throw std::invalid_argument("rank table: hole (NaN) for method '" + t.methods[m] + "'");
      }
    }
  }
}

}  // namespace

std::vector<double> rank_scores(const std::vector<double>& scores) {
  size_t n = scores.size();
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&scores](size_t a, size_t b) { return scores[a] > scores[b]; });
  std::vector<double> ranks(n, 0.0);
  size_t i = 0;
  while (i < n) {
    size_t j = i;
    while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
    double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (size_t k = i; k <= j; ++k) ranks[order[k]] = avg;
    i = j + 1;
  }
  return ranks;
}

Ranking rank_methods(const RankTable& table) {
  check_table(table);
  Ranking r;
  r.methods = table.methods;
  r.benchmarks = table.benchmarks;
  for (size_t b = 0; b < table.benchmarks.size(); ++b) {
    std::vector<double> col(table.methods.size());
    for (size_t m = 0; m < table.methods.size(); ++m) col[m] = table.scores[m][b];
    r.ranks.push_back(rank_scores(col));
  }
  return r;
}

Correlation spearman(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size() || a.size() < 2) {
    throw std::invalid_argument("spearman: need two equal-length vectors of size >= 2");
  }
  double ma = std::accumulate(a.begin(), a.end(), 0.0) / a.size();
  double mb = std::accumulate(b.begin(), b.end(), 0.0) / b.size();
  double sab = 0, saa = 0, sbb = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  Correlation c;
  if (saa == 0.0 || sbb == 0.0) {
    c.constant_input = true;
    c.value = 0.0;
    return c;
  }
  c.value = sab / std::sqrt(saa * sbb);
  c.value = std::max(-1.0, std::min(1.0, c.value));
  return c;
}

Correlation kendall_tau(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size() || a.size() < 2) {
    throw std::invalid_argument("kendall: need two equal-length vectors of size >= 2");
  }
  long long concordant = 0, discordant = 0, ties_a = 0, ties_b = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    for (size_t j = i + 1; j < a.size(); ++j) {
      double da = a[i] - a[j], db = b[i] - b[j];
      if (da == 0 && db == 0) continue;
      if (da == 0) {
        ++ties_a;
      } else if (db == 0) {
        ++ties_b;
      } else if (da * db > 0) {
        ++concordant;
      } else {
        ++discordant;
      }
    }
  }
  double n0 = static_cast<double>(concordant + discordant);
  double denom = std::sqrt((n0 + ties_a) * (n0 + ties_b));
  Correlation c;
  if (denom == 0.0) {
    c.constant_input = true;
    c.value = 0.0;
    return c;
  }
  c.value = (static_cast<double>(concordant) - static_cast<double>(discordant)) / denom;
  return c;
}

std::vector<std::vector<double>> win_rate_matrix(const Ranking& ranking) {
  size_t M = ranking.methods.size();
  size_t N = ranking.ranks.size();
  if (N < 2) throw std::invalid_argument("win rate: at least 2 benchmarks required");
  std::vector<std::vector<double>> w(M, std::vector<double>(M, 0.0));
  for (size_t i = 0; i < M; ++i) {
    for (size_t j = 0; j < M; ++j) {
      if (i == j) {
        w[i][j] = 0.5;
        continue;
      }
      double wins = 0;
      for (const auto& row : ranking.ranks) {
        if (row[i] < row[j]) {
          wins += 1.0;
        } else if (row[i] == row[j]) {
          wins += 0.5;
        }
      }
      w[i][j] = wins / static_cast<double>(N);
    }
  }
  return w;
}

MeanRankCd mean_rank_cd(const Ranking& ranking, double alpha) {
  size_t M = ranking.methods.size();
  size_t N = ranking.ranks.size();
  if (M < 2 || M > 10) {
    throw std::invalid_argument("critical difference: q table covers 2..10 methods, got " +
                                std::to_string(M));
  }
  if (N < 2) throw std::invalid_argument("critical difference: at least 2 benchmarks required");
  // Nemenyi q values (studentized range / sqrt 2) for M = 2..10
  static const double q05[] = {1.960, 2.343, 2.569, 2.728, 2.850, 2.949, 3.031, 3.102, 3.164};
  static const double q10[] = {1.645, 2.052, 2.291, 2.459, 2.589, 2.693, 2.780, 2.855, 2.920};
  const double* q = nullptr;
  if (alpha == 0.05) {
    q = q05;
  } else if (alpha == 0.1) {
    q = q10;
  } else {
    throw std::invalid_argument("critical difference: alpha must be 0.05 or 0.1");
  }
  MeanRankCd out;
  out.mean_rank.assign(M, 0.0);
  for (const auto& row : ranking.ranks) {
    for (size_t m = 0; m < M; ++m) out.mean_rank[m] += row[m];
  }
  for (auto& v : out.mean_rank) v /= static_cast<double>(N);
  double Md = static_cast<double>(M), Nd = static_cast<double>(N);
  out.critical_difference = q[M - 2] * std::sqrt(Md * (Md + 1.0) / (6.0 * Nd));
  return out;
}

namespace {

// "deep_no_skip" -> ("deep", "no_skip"); the variant may itself contain an
// underscore (single_cell), so match against the known variant prefixes.
std::pair<std::string, std::string> split_benchmark_id(const std::string& id) {
  for (const char* variant : {"single_cell", "deep", "wide", "darts"}) {
    std::string prefix = std::string(variant) + "_";
    if (id.rfind(prefix, 0) == 0 && id.size() > prefix.size()) {
      return {variant, id.substr(prefix.size())};
    }
  }
  throw std::invalid_argument("benchmark id '" + id + "' does not parse into variant_opset");
}

}  // namespace

Ranking aggregate_rankings(const RankTable& table, const std::string& groupby) {
  check_table(table);
  if (groupby == "none") return rank_methods(table);
  if (groupby != "opset" && groupby != "variant") {
    throw std::invalid_argument("aggregate_rankings: groupby must be none, opset or variant");
  }
  std::map<std::string, std::vector<size_t>> groups;
  for (size_t b = 0; b < table.benchmarks.size(); ++b) {
    auto [variant, opset] = split_benchmark_id(table.benchmarks[b]);
    groups[groupby == "opset" ? opset : variant].push_back(b);
  }
  Ranking r;
  r.methods = table.methods;
  for (const auto& [name, cols] : groups) {
    std::vector<double> mean(table.methods.size(), 0.0);
    for (size_t m = 0; m < table.methods.size(); ++m) {
      for (size_t b : cols) mean[m] += table.scores[m][b];
      mean[m] /= static_cast<double>(cols.size());
    }
    r.benchmarks.push_back(name);
    r.ranks.push_back(rank_scores(mean));
  }
  return r;
}

// ---------------------------------------------------------------------------
// Rendering

namespace {

std::string esc(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace

std::string render_heatmap_svg(const std::vector<std::string>& row_labels,
                               const std::vector<std::string>& col_labels,
                               const std::vector<std::vector<double>>& values,
                               const std::string& title, double lo, double hi) {
  if (values.size() != row_labels.size()) {
    throw std::invalid_argument("heatmap: row count mismatch");
  }
  const int cell = 36, left = 150, top = 60, bottom = 110;
  int width = left + cell * static_cast<int>(col_labels.size()) + 20;
  int height = top + cell * static_cast<int>(row_labels.size()) + bottom;
  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
    << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  s << "<text x=\"" << width / 2 << "\" y=\"24\" text-anchor=\"middle\" font-size=\"14\">"
    << esc(title) << "</text>\n";
  for (size_t r = 0; r < values.size(); ++r) {
    if (values[r].size() != col_labels.size()) {
      throw std::invalid_argument("heatmap: column count mismatch");
    }
    int y = top + static_cast<int>(r) * cell;
    s << "<text x=\"" << left - 6 << "\" y=\"" << y + cell / 2 + 4
      << "\" text-anchor=\"end\">" << esc(row_labels[r]) << "</text>\n";
    for (size_t c = 0; c < values[r].size(); ++c) {
      double t = hi > lo ? (values[r][c] - lo) / (hi - lo) : 0.5;
      t = std::max(0.0, std::min(1.0, t));
      // blue (low) -> white -> red (high)
      int red = static_cast<int>(t <= 0.5 ? 255 * (2 * t) : 255);
      int blue = static_cast<int>(t >= 0.5 ? 255 * (2 * (1 - t)) : 255);
      int green = std::min(red, blue);
      int x = left + static_cast<int>(c) * cell;
      s << "<rect x=\"" << x << "\" y=\"" << y << "\" width=\"" << cell << "\" height=\"" << cell
        << "\" fill=\"rgb(" << red << "," << green << "," << blue
        << ")\" stroke=\"#888\"/>\n";
      s << "<text x=\"" << x + cell / 2 << "\" y=\"" << y + cell / 2 + 4
        << "\" text-anchor=\"middle\">" << fmt(values[r][c]) << "</text>\n";
    }
  }
  for (size_t c = 0; c < col_labels.size(); ++c) {
    int x = left + static_cast<int>(c) * cell + cell / 2;
    int y = top + cell * static_cast<int>(row_labels.size()) + 14;
    s << "<text x=\"" << x << "\" y=\"" << y << "\" text-anchor=\"end\" transform=\"rotate(-45 "
      << x << " " << y << ")\">" << esc(col_labels[c]) << "</text>\n";
  }
  s << "</svg>\n";
  return s.str();
}

std::string render_cd_svg(const std::vector<std::string>& methods,
                          const std::vector<double>& mean_rank, double cd,
                          const std::string& title) {
  if (methods.size() != mean_rank.size()) {
    throw std::invalid_argument("cd plot: method/rank size mismatch");
  }
  size_t M = methods.size();
  const int left = 60, right = 60, top = 70;
  const int width = 640;
  const double axis_w = width - left - right;
  int height = top + 60 + static_cast<int>(M) * 22;
  double rmin = 1.0, rmax = static_cast<double>(M);
  auto xpos = [&](double rank) {
    return left + axis_w * (rank - rmin) / std::max(rmax - rmin, 1e-9);
  };
  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
    << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  s << "<text x=\"" << width / 2 << "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">"
    << esc(title) << "</text>\n";
  // CD ruler
  s << "<line x1=\"" << left << "\" y1=\"38\" x2=\"" << xpos(rmin + cd) << "\" y2=\"38\" "
    << "stroke=\"black\" stroke-width=\"3\"/>\n";
  s << "<text x=\"" << left << "\" y=\"32\">CD = " << fmt(cd) << "</text>\n";
  // axis
  s << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left + axis_w << "\" y2=\""
    << top << "\" stroke=\"black\"/>\n";
  for (int r = 1; r <= static_cast<int>(M); ++r) {
    s << "<line x1=\"" << xpos(r) << "\" y1=\"" << top - 5 << "\" x2=\"" << xpos(r) << "\" y2=\""
      << top << "\" stroke=\"black\"/>\n";
    s << "<text x=\"" << xpos(r) << "\" y=\"" << top - 10 << "\" text-anchor=\"middle\">" << r
      << "</text>\n";
  }
  // methods ordered by mean rank
  std::vector<size_t> order(M);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&mean_rank](size_t a, size_t b) { return mean_rank[a] < mean_rank[b]; });
  for (size_t k = 0; k < M; ++k) {
    size_t m = order[k];
    int y = top + 22 + static_cast<int>(k) * 22;
    s << "<line x1=\"" << xpos(mean_rank[m]) << "\" y1=\"" << top << "\" x2=\""
      << xpos(mean_rank[m]) << "\" y2=\"" << y << "\" stroke=\"#555\"/>\n";
    s << "<circle cx=\"" << xpos(mean_rank[m]) << "\" cy=\"" << y << "\" r=\"3\"/>\n";
    s << "<text x=\"" << xpos(mean_rank[m]) + 8 << "\" y=\"" << y + 4 << "\">" << esc(methods[m])
      << " (" << fmt(mean_rank[m]) << ")</text>\n";
  }
  s << "</svg>\n";
  return s.str();
}

void write_report(const std::string& dir, const RankTable& table, double alpha) {
  Ranking ranking = rank_methods(table);
  const std::string& mode = table.mode;
  // validate everything up front so a failure never leaves a partial bundle
  auto wr = win_rate_matrix(ranking);
  MeanRankCd cd = mean_rank_cd(ranking, alpha);

  {
    std::ostringstream out;
    out << "benchmark";
    for (const auto& m : table.methods) out << '\t' << m;
    out << '\n';
    for (size_t b = 0; b < ranking.benchmarks.size(); ++b) {
      out << ranking.benchmarks[b];
      for (double r : ranking.ranks[b]) out << '\t' << fmt(r);
      out << '\n';
    }
    atomic_write(dir + "/rankings.tsv", out.str());
  }

  // benchmark x benchmark rank correlation
  size_t B = ranking.benchmarks.size();
  std::vector<std::vector<double>> corr(B, std::vector<double>(B, 1.0));
  for (size_t i = 0; i < B; ++i) {
    for (size_t j = 0; j < B; ++j) {
      corr[i][j] = i == j ? 1.0 : spearman(ranking.ranks[i], ranking.ranks[j]).value;
    }
  }
  {
    std::ostringstream out;
    out << "benchmark";
    for (const auto& b : ranking.benchmarks) out << '\t' << b;
    out << '\n';
    for (size_t i = 0; i < B; ++i) {
      out << ranking.benchmarks[i];
      for (double v : corr[i]) out << '\t' << fmt(v);
      out << '\n';
    }
    atomic_write(dir + "/correlation_" + mode + ".tsv", out.str());
    atomic_write(dir + "/correlation_" + mode + ".svg",
                 render_heatmap_svg(ranking.benchmarks, ranking.benchmarks, corr,
                                    "Rank correlation between benchmarks (" + mode + ")", -1.0,
                                    1.0));
  }

  {
    std::ostringstream out;
    out << "method";
    for (const auto& m : table.methods) out << '\t' << m;
    out << '\n';
    for (size_t i = 0; i < wr.size(); ++i) {
      out << table.methods[i];
      for (double v : wr[i]) out << '\t' << fmt(v);
      out << '\n';
    }
    atomic_write(dir + "/winrate_" + mode + ".tsv", out.str());
    atomic_write(dir + "/winrate_" + mode + ".svg",
                 render_heatmap_svg(table.methods, table.methods, wr,
                                    "Win rates (" + mode + ")", 0.0, 1.0));
  }

  {
    std::ostringstream out;
    out << "method\tmean_rank\tcritical_difference\talpha\n";
    for (size_t m = 0; m < table.methods.size(); ++m) {
      out << table.methods[m] << '\t' << fmt(cd.mean_rank[m]) << '\t'
          << fmt(cd.critical_difference) << '\t' << fmt(alpha) << '\n';
    }
    atomic_write(dir + "/cd_" + mode + ".tsv", out.str());
    atomic_write(dir + "/cd_" + mode + ".svg",
                 render_cd_svg(table.methods, cd.mean_rank, cd.critical_difference,
                               "Mean ranks and Nemenyi CD (" + mode + ")"));
  }
}

}  // namespace confopt
