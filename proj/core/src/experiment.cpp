#include "confopt/experiment.hpp"

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace fs = std::filesystem;

namespace confopt {

namespace {

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

[[noreturn]] void fail(const std::string& path, int line, const std::string& what) {
  throw std::runtime_error(path + ": line " + std::to_string(line) + ": " + what);
}

}  // namespace

void atomic_write(const std::string& path, const std::string& content) {
  fs::path target(path);
  if (target.has_parent_path()) fs::create_directories(target.parent_path());
  fs::path tmp = target;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("atomic_write: cannot open '" + tmp.string() + "'");
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    out.flush();
    if (!out) throw std::runtime_error("atomic_write: short write to '" + tmp.string() + "'");
  }
  fs::rename(tmp, target);
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string TrialPaths::genotype_epoch(int epoch) const {
  return dir + "/genotype_epoch" + std::to_string(epoch) + ".txt";
}

std::string TrialPaths::alpha_epoch(int epoch) const {
  return dir + "/alpha_epoch" + std::to_string(epoch) + ".txt";
}

std::string TrialPaths::checkpoint_epoch(int epoch) const {
  return dir + "/checkpoint_epoch" + std::to_string(epoch) + ".bin";
}

ExperimentDir::ExperimentDir(std::string root) : root_(std::move(root)) {
  if (root_.empty()) throw std::invalid_argument("experiment dir: empty root");
}

TrialPaths ExperimentDir::trial(const std::string& benchmark, const std::string& method,
                                int seed) const {
  if (benchmark.empty() || method.empty() || seed < 0) {
    throw std::invalid_argument("experiment dir: benchmark/method/seed malformed");
  }
  TrialPaths p;
  p.dir = root_ + "/" + benchmark + "/" + method + "/seed" + std::to_string(seed);
  fs::create_directories(p.dir);
  p.profile = p.dir + "/profile.txt";
  p.metrics = p.dir + "/metrics.log";
  p.genotype = p.dir + "/genotype.txt";
  p.failure = p.dir + "/FAILED";
  return p;
}

double MetricsRow::at(const std::string& key) const {
  for (const auto& [k, v] : values) {
    if (k == key) return v;
  }
  throw std::invalid_argument("metrics: missing key '" + key + "' at epoch " +
                              std::to_string(epoch));
}

bool MetricsRow::has(const std::string& key) const {
  for (const auto& [k, v] : values) {
    if (k == key) return true;
  }
  return false;
}

void append_metrics(const std::string& path, const MetricsRow& row) {
  std::ofstream out(path, std::ios::app);
  if (!out) throw std::runtime_error("metrics: cannot open '" + path + "'");
  out << "epoch=" << row.epoch;
  for (const auto& [k, v] : row.values) out << " " << k << "=" << fmt_double(v);
  out << "\n";
}

std::vector<MetricsRow> read_metrics(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("metrics: cannot open '" + path + "'");
  std::vector<MetricsRow> rows;
  std::string line;
  int ln = 0;
  while (std::getline(in, line)) {
    ++ln;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string tok;
    MetricsRow row;
    bool first = true;
    while (ss >> tok) {
      size_t eq = tok.find('=');
      if (eq == std::string::npos) fail(path, ln, "expected key=value, got '" + tok + "'");
      std::string key = tok.substr(0, eq);
      std::string val = tok.substr(eq + 1);
      if (first) {
        if (key != "epoch") fail(path, ln, "line must start with epoch=, got '" + key + "'");
        try {
          row.epoch = std::stoi(val);
        } catch (const std::exception&) {
          fail(path, ln, "bad epoch '" + val + "'");
        }
        first = false;
        continue;
      }
      try {
        size_t pos = 0;
        double d = std::stod(val, &pos);
        if (pos != val.size()) throw std::invalid_argument(val);
        row.values.emplace_back(key, d);
      } catch (const std::exception&) {
        fail(path, ln, "bad value for '" + key + "': '" + val + "'");
      }
    }
    if (first) fail(path, ln, "empty record");
    rows.push_back(std::move(row));
  }
  return rows;
}

void write_alpha(const std::string& path, const Tensor<float>& normal,
                 const Tensor<float>* reduce) {
  std::ostringstream out;
  auto emit = [&out](const Tensor<float>& a) {
    if (a.rank() != 2) throw std::invalid_argument("alpha sidecar: [edges, ops] tensor expected");
    for (int e = 0; e < a.shape[0]; ++e) {
      for (int o = 0; o < a.shape[1]; ++o) {
        if (o) out << ' ';
        out << fmt_double(a.data[static_cast<size_t>(e) * a.shape[1] + o]);
      }
      out << '\n';
    }
  };
  emit(normal);
  if (reduce) emit(*reduce);
  atomic_write(path, out.str());
}

std::vector<std::vector<double>> read_alpha(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("alpha sidecar: cannot open '" + path + "'");
  std::vector<std::vector<double>> rows;
  std::string line;
  int ln = 0;
  while (std::getline(in, line)) {
    ++ln;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::vector<double> row;
    std::string tok;
    while (ss >> tok) {
      try {
        row.push_back(std::stod(tok));
      } catch (const std::exception&) {
        fail(path, ln, "bad weight '" + tok + "'");
      }
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

namespace {
const char* kLedgerHeader =
    "benchmark\tmethod\thp_id\tseed\ttest_accuracy\tepochs\twall_seconds\tgenotype_path";
}

void append_ledger(const std::string& path, const LedgerRow& row) {
  bool fresh = !fs::exists(path);
  fs::path target(path);
  if (target.has_parent_path()) fs::create_directories(target.parent_path());
  std::ofstream out(path, std::ios::app);
  if (!out) throw std::runtime_error("ledger: cannot open '" + path + "'");
  if (fresh) out << kLedgerHeader << "\n";
  out << row.benchmark << '\t' << row.method << '\t' << (row.hp_id.empty() ? "-" : row.hp_id)
      << '\t' << row.seed << '\t' << fmt_double(row.test_accuracy) << '\t' << row.epochs << '\t'
      << fmt_double(row.wall_seconds) << '\t' << row.genotype_path << "\n";
}

std::vector<LedgerRow> read_ledger(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("ledger: cannot open '" + path + "'");
  std::vector<LedgerRow> rows;
  std::string line;
  int ln = 0;
  while (std::getline(in, line)) {
    ++ln;
    if (line.empty()) continue;
    if (ln == 1) {
      if (line != kLedgerHeader) fail(path, 1, "unexpected header");
      continue;
    }
    std::vector<std::string> cols;
    std::stringstream ss(line);
    std::string tok;
    while (std::getline(ss, tok, '\t')) cols.push_back(tok);
    if (cols.size() != 8) fail(path, ln, "expected 8 columns, got " + std::to_string(cols.size()));
    LedgerRow r;
    r.benchmark = cols[0];
    r.method = cols[1];
    r.hp_id = cols[2];
    try {
      r.seed = std::stoi(cols[3]);
      r.test_accuracy = std::stod(cols[4]);
      r.epochs = std::stoi(cols[5]);
      r.wall_seconds = std::stod(cols[6]);
    } catch (const std::exception&) {
      fail(path, ln, "malformed numeric column");
    }
    r.genotype_path = cols[7];
    rows.push_back(std::move(r));
  }
  return rows;
}

std::string env_data_dir() {
  const char* v = std::getenv("CONFOPT_DATA_DIR");
  return v && *v ? std::string(v) : std::string("data");
}

int env_threads() {
  const char* v = std::getenv("CONFOPT_THREADS");
  if (!v || !*v) return 1;
  std::string s(v);
  size_t pos = 0;
  int n = 0;
  try {
    n = std::stoi(s, &pos);
  } catch (const std::exception&) {
    pos = std::string::npos;
  }
  if (pos != s.size() || n < 1) {
    throw std::runtime_error("CONFOPT_THREADS: positive integer expected, got '" + s + "'");
  }
  return n;
}

}  // namespace confopt
