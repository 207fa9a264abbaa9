#include "confopt/profile.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace confopt {

namespace {

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

std::string fmt_int_list(const std::vector<int>& v) {
  std::string s;
  for (size_t i = 0; i < v.size(); ++i) {
    if (i) s += ',';
    s += std::to_string(v[i]);
  }
  return s;
}

std::string fmt_double_list(const std::vector<double>& v) {
  std::string s;
  for (size_t i = 0; i < v.size(); ++i) {
    if (i) s += ',';
    s += fmt_double(v[i]);
  }
  return s;
}

[[noreturn]] void fail(int line, const std::string& what) {
  throw std::invalid_argument("profile: line " + std::to_string(line) + ": " + what);
}

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

int to_int(const std::string& v, int line) {
  size_t pos = 0;
  int out = 0;
  try {
    out = std::stoi(v, &pos);
  } catch (const std::exception&) {
    fail(line, "expected integer, got '" + v + "'");
  }
  if (pos != v.size()) fail(line, "expected integer, got '" + v + "'");
  return out;
}

double to_double(const std::string& v, int line) {
  size_t pos = 0;
  double out = 0;
  try {
    out = std::stod(v, &pos);
  } catch (const std::exception&) {
    fail(line, "expected number, got '" + v + "'");
  }
  if (pos != v.size()) fail(line, "expected number, got '" + v + "'");
  return out;
}

bool to_bool(const std::string& v, int line) {
  if (v == "true") return true;
  if (v == "false") return false;
  fail(line, "expected true/false, got '" + v + "'");
}

// 0-encoded as "auto" for derive-at-runtime integers.
int to_auto_int(const std::string& v, int line) {
  if (v == "auto") return 0;
  int n = to_int(v, line);
  if (n <= 0) fail(line, "expected positive integer or 'auto', got '" + v + "'");
  return n;
}

std::vector<int> to_int_list(const std::string& v, int line) {
  std::vector<int> out;
  std::stringstream ss(v);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    tok = trim(tok);
    if (!tok.empty()) out.push_back(to_int(tok, line));
  }
  return out;
}

std::vector<double> to_double_list(const std::string& v, int line) {
  std::vector<double> out;
  std::stringstream ss(v);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    tok = trim(tok);
    if (!tok.empty()) out.push_back(to_double(tok, line));
  }
  return out;
}

PerturbMode parse_perturb(const std::string& v, int line) {
  if (v == "none") return PerturbMode::kNone;
  if (v == "random") return PerturbMode::kRandom;
  if (v == "adversarial") return PerturbMode::kAdversarial;
  fail(line, "unknown perturbation '" + v + "'");
}

std::string perturb_name(PerturbMode m) {
  switch (m) {
    case PerturbMode::kNone: return "none";
    case PerturbMode::kRandom: return "random";
    case PerturbMode::kAdversarial: return "adversarial";
  }
  return "none";
}

}  // namespace

const std::vector<std::string>& method_names() {
  static const std::vector<std::string> names = {
      "darts", "drnas", "fairdarts", "gdas", "oles", "pcdarts", "smoothdarts"};
  return names;
}

Profile make_preset(const std::string& method) {
  Profile p;
  p.method = method;
  p.weight_opt.kind = OptimizerKind::kSgd;
  p.weight_opt.lr = 0.025;
  p.weight_opt.momentum = 0.9;
  p.weight_opt.weight_decay = 3e-4;
  p.arch_opt.kind = OptimizerKind::kAdam;
  p.arch_opt.lr = 3e-3;
  p.arch_opt.beta1 = 0.5;
  p.arch_opt.beta2 = 0.999;
  p.arch_opt.weight_decay = 1e-3;

  if (method == "darts") {
    // defaults
  } else if (method == "pcdarts") {
    p.mutation.partial_connection = true;
    p.mutation.K = 4;
    p.edge_normalization = true;
    p.warm_epochs = 15;
  } else if (method == "fairdarts") {
    p.sampler.kind = SamplerKind::kFairdarts;
  } else if (method == "smoothdarts") {
    p.mutation.perturbation = PerturbMode::kRandom;
    p.mutation.epsilon = 0.1;
  } else if (method == "oles") {
    p.oles_enabled = true;
  } else if (method == "drnas") {
    p.sampler.kind = SamplerKind::kDrnas;
    p.arch_opt.lr = 6e-3;
    p.mutation.partial_connection = true;
    p.mutation.K = 4;
    p.warm_epochs = 15;
  } else if (method == "gdas") {
    p.sampler.kind = SamplerKind::kGdas;
    p.epochs = 300;
  } else {
    throw std::invalid_argument("profile: unknown method '" + method + "'");
  }
  return p;
}

int preset_batch_size(const Profile& profile, VariantKind variant) {
  if (profile.batch_size > 0) return profile.batch_size;
  bool gdas = profile.sampler.kind == SamplerKind::kGdas;
  switch (variant) {
    case VariantKind::kWide: return gdas ? 480 : 96;
    case VariantKind::kSingleCell: return gdas ? 480 : 96;
    case VariantKind::kDeep:
    case VariantKind::kDarts: return gdas ? 320 : 64;
  }
  return gdas ? 320 : 64;
}

void Profile::validate() const {
  bool known = false;
  for (const auto& n : method_names()) known = known || n == method;
  if (!known) throw std::invalid_argument("profile: unknown method '" + method + "'");
  mutation.validate();
  penalty.validate();
  if (epochs < 1) throw std::invalid_argument("profile: epochs >= 1 required");
  if (warm_epochs < 0 || warm_epochs >= epochs) {
    throw std::invalid_argument("profile: warm_epochs must lie in [0, epochs)");
  }
  if (batch_size < 0 || steps_per_epoch < 0) {
    throw std::invalid_argument("profile: batch_size/steps_per_epoch must be >= 0");
  }
  if (weight_opt.lr <= 0 || arch_opt.lr <= 0) {
    throw std::invalid_argument("profile: learning rates must be positive");
  }
  if (sampler.tau_start <= 0 || sampler.tau_end <= 0) {
    throw std::invalid_argument("profile: gumbel temperatures must be positive");
  }
  if (oles_window < 1) throw std::invalid_argument("profile: oles_window >= 1 required");
  if (early_stop != "none" && early_stop != "skip_count") {
    throw std::invalid_argument("profile: unknown early_stop '" + early_stop + "'");
  }
  if (seeds.empty()) throw std::invalid_argument("profile: at least one seed required");
  if (checkpoint_freq < 1) throw std::invalid_argument("profile: checkpoint_freq >= 1 required");
  if (channel_override < 0) throw std::invalid_argument("profile: channel_override >= 0 required");
  if (discretize_policy != "darts_top2" && discretize_policy != "all_edges") {
    throw std::invalid_argument("profile: unknown discretize_policy '" + discretize_policy + "'");
  }
  if (val_criterion != "final_val_loss" && val_criterion != "best_val_loss") {
    throw std::invalid_argument("profile: unknown val_criterion '" + val_criterion + "'");
  }
}

std::string Profile::serialize() const {
  std::ostringstream out;
  out << "[method]\n";
  out << "name=" << method << "\n";
  out << "\n[sampler]\n";
  out << "kind=" << sampler_kind_name(sampler.kind) << "\n";
  out << "tau_start=" << fmt_double(sampler.tau_start) << "\n";
  out << "tau_end=" << fmt_double(sampler.tau_end) << "\n";
  out << "\n[mutation]\n";
  out << "partial_connection=" << (mutation.partial_connection ? "true" : "false") << "\n";
  out << "k=" << mutation.K << "\n";
  out << "edge_normalization=" << (edge_normalization ? "true" : "false") << "\n";
  out << "perturbation=" << perturb_name(mutation.perturbation) << "\n";
  out << "epsilon=" << fmt_double(mutation.epsilon) << "\n";
  out << "prune_epochs=" << fmt_int_list(mutation.prune_epochs) << "\n";
  out << "prune_fractions=" << fmt_double_list(mutation.prune_fractions) << "\n";
  out << "\n[penalty]\n";
  out << "fairdarts_lambda=" << fmt_double(penalty.fairdarts_lambda) << "\n";
  out << "drnas_lambda=" << fmt_double(penalty.drnas_lambda) << "\n";
  out << "\n[trainer]\n";
  out << "epochs=" << epochs << "\n";
  out << "warm_epochs=" << warm_epochs << "\n";
  out << "batch_size=" << (batch_size == 0 ? std::string("auto") : std::to_string(batch_size))
      << "\n";
  out << "steps_per_epoch="
      << (steps_per_epoch == 0 ? std::string("auto") : std::to_string(steps_per_epoch)) << "\n";
  out << "weight_lr=" << fmt_double(weight_opt.lr) << "\n";
  out << "weight_momentum=" << fmt_double(weight_opt.momentum) << "\n";
  out << "weight_decay=" << fmt_double(weight_opt.weight_decay) << "\n";
  out << "arch_lr=" << fmt_double(arch_opt.lr) << "\n";
  out << "arch_beta1=" << fmt_double(arch_opt.beta1) << "\n";
  out << "arch_beta2=" << fmt_double(arch_opt.beta2) << "\n";
  out << "arch_weight_decay=" << fmt_double(arch_opt.weight_decay) << "\n";
  out << "oles=" << (oles_enabled ? "true" : "false") << "\n";
  out << "oles_window=" << oles_window << "\n";
  out << "oles_threshold=" << fmt_double(oles_threshold) << "\n";
  out << "early_stop=" << early_stop << "\n";
  out << "skip_threshold=" << skip_threshold << "\n";
  out << "seeds=" << fmt_int_list(seeds) << "\n";
  out << "checkpoint_freq=" << checkpoint_freq << "\n";
  out << "\n[extra]\n";
  out << "channel_override=" << channel_override << "\n";
  out << "discretize_policy=" << discretize_policy << "\n";
  out << "val_criterion=" << val_criterion << "\n";
  return out.str();
}

Profile Profile::parse(const std::string& text) {
  struct Entry {
    std::string section, key, value;
    int line;
  };
  std::vector<Entry> entries;
  std::string method;
  {
    std::stringstream ss(text);
    std::string raw;
    std::string section;
    int line = 0;
    while (std::getline(ss, raw)) {
      ++line;
      std::string s = trim(raw);
      if (s.empty() || s[0] == '#') continue;
      if (s.front() == '[') {
        if (s.back() != ']') fail(line, "malformed section header '" + s + "'");
        section = s.substr(1, s.size() - 2);
        if (section != "method" && section != "sampler" && section != "mutation" &&
            section != "penalty" && section != "trainer" && section != "extra") {
          fail(line, "unknown section [" + section + "]");
        }
        continue;
      }
      size_t eq = s.find('=');
      if (eq == std::string::npos) fail(line, "expected key=value, got '" + s + "'");
      if (section.empty()) fail(line, "key before any section header");
      Entry e{section, trim(s.substr(0, eq)), trim(s.substr(eq + 1)), line};
      if (e.section == "method" && e.key == "name") method = e.value;
      entries.push_back(std::move(e));
    }
  }
  if (method.empty()) throw std::invalid_argument("profile: missing [method] name");

  Profile p = make_preset(method);
  for (const auto& e : entries) {
    const std::string& k = e.key;
    const std::string& v = e.value;
    int ln = e.line;
    if (e.section == "method") {
      if (k == "name") continue;
      fail(ln, "unknown key '" + k + "' in [method]");
    } else if (e.section == "sampler") {
      if (k == "kind") {
        try {
          p.sampler.kind = parse_sampler_kind(v);
        } catch (const std::exception&) {
          fail(ln, "unknown sampler kind '" + v + "'");
        }
      } else if (k == "tau_start") {
        p.sampler.tau_start = to_double(v, ln);
      } else if (k == "tau_end") {
        p.sampler.tau_end = to_double(v, ln);
      } else {
        fail(ln, "unknown key '" + k + "' in [sampler]");
      }
    } else if (e.section == "mutation") {
      if (k == "partial_connection") {
        p.mutation.partial_connection = to_bool(v, ln);
      } else if (k == "k") {
        p.mutation.K = to_int(v, ln);
      } else if (k == "edge_normalization") {
        p.edge_normalization = to_bool(v, ln);
      } else if (k == "perturbation") {
        p.mutation.perturbation = parse_perturb(v, ln);
      } else if (k == "epsilon") {
        p.mutation.epsilon = to_double(v, ln);
      } else if (k == "prune_epochs") {
        p.mutation.prune_epochs = to_int_list(v, ln);
      } else if (k == "prune_fractions") {
        p.mutation.prune_fractions = to_double_list(v, ln);
      } else {
        fail(ln, "unknown key '" + k + "' in [mutation]");
      }
    } else if (e.section == "penalty") {
      if (k == "fairdarts_lambda") {
        p.penalty.fairdarts_lambda = to_double(v, ln);
      } else if (k == "drnas_lambda") {
        p.penalty.drnas_lambda = to_double(v, ln);
      } else {
        fail(ln, "unknown key '" + k + "' in [penalty]");
      }
    } else if (e.section == "trainer") {
      if (k == "epochs") {
        p.epochs = to_int(v, ln);
      } else if (k == "warm_epochs") {
        p.warm_epochs = to_int(v, ln);
      } else if (k == "batch_size") {
        p.batch_size = to_auto_int(v, ln);
      } else if (k == "steps_per_epoch") {
        p.steps_per_epoch = to_auto_int(v, ln);
      } else if (k == "weight_lr") {
        p.weight_opt.lr = to_double(v, ln);
      } else if (k == "weight_momentum") {
        p.weight_opt.momentum = to_double(v, ln);
      } else if (k == "weight_decay") {
        p.weight_opt.weight_decay = to_double(v, ln);
      } else if (k == "arch_lr") {
        p.arch_opt.lr = to_double(v, ln);
      } else if (k == "arch_beta1") {
        p.arch_opt.beta1 = to_double(v, ln);
      } else if (k == "arch_beta2") {
        p.arch_opt.beta2 = to_double(v, ln);
      } else if (k == "arch_weight_decay") {
        p.arch_opt.weight_decay = to_double(v, ln);
      } else if (k == "oles") {
        p.oles_enabled = to_bool(v, ln);
      } else if (k == "oles_window") {
        p.oles_window = to_int(v, ln);
      } else if (k == "oles_threshold") {
        p.oles_threshold = to_double(v, ln);
      } else if (k == "early_stop") {
        p.early_stop = v;
      } else if (k == "skip_threshold") {
        p.skip_threshold = to_int(v, ln);
      } else if (k == "seeds") {
        p.seeds = to_int_list(v, ln);
      } else if (k == "checkpoint_freq") {
        p.checkpoint_freq = to_int(v, ln);
      } else {
        fail(ln, "unknown key '" + k + "' in [trainer]");
      }
    } else {  // extra
      if (k == "channel_override") {
        p.channel_override = to_int(v, ln);
      } else if (k == "discretize_policy") {
        p.discretize_policy = v;
      } else if (k == "val_criterion") {
        p.val_criterion = v;
      } else {
        fail(ln, "unknown key '" + k + "' in [extra]");
      }
    }
  }
  p.validate();
  return p;
}

Profile Profile::parse_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("profile: cannot open '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

}  // namespace confopt
