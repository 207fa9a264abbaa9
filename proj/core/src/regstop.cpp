#include "confopt/regstop.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>

namespace confopt {

double gm_score(const std::vector<float>& train_grad, const std::vector<float>& val_grad) {
  if (train_grad.size() != val_grad.size()) {
    throw std::invalid_argument("gm_score: gradient lengths " + std::to_string(train_grad.size()) +
                                " vs " + std::to_string(val_grad.size()));
  }
  double dot = 0, na = 0, nb = 0;
  for (size_t i = 0; i < train_grad.size(); ++i) {
    double a = train_grad[i], b = val_grad[i];
    dot += a * b;
    na += a * a;
    nb += b * b;
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  double s = dot / (std::sqrt(na) * std::sqrt(nb));
  return std::max(-1.0, std::min(1.0, s));
}

GmWindow::GmWindow(int edges_per_cell, bool has_reduce, int n_ops, int window, double threshold)
    : edges_(edges_per_cell), n_ops_(n_ops), window_(window), threshold_(threshold) {
  if (edges_per_cell < 1 || n_ops < 1 || window < 1) {
    throw std::invalid_argument("gm window: positive dimensions required");
  }
  slots_[0].resize(static_cast<size_t>(edges_) * n_ops_);
  if (has_reduce) slots_[1].resize(static_cast<size_t>(edges_) * n_ops_);
}

GmWindow::Slot& GmWindow::slot(CellType ct, int edge, int op) {
  auto& v = slots_[ct == CellType::kReduce];
  if (v.empty()) throw std::invalid_argument("gm window: no reduce cells");
  if (edge < 0 || edge >= edges_ || op < 0 || op >= n_ops_) {
    throw std::invalid_argument("gm window: slot out of range");
  }
  return v[static_cast<size_t>(edge) * n_ops_ + op];
}

const GmWindow::Slot& GmWindow::slot(CellType ct, int edge, int op) const {
  return const_cast<GmWindow*>(this)->slot(ct, edge, op);
}

void GmWindow::record(CellType ct, int edge, int op, double score) {
  Slot& s = slot(ct, edge, op);
  if (s.frozen) return;
  s.scores.push_back(score);
}

bool GmWindow::frozen(CellType ct, int edge, int op) const { return slot(ct, edge, op).frozen; }

int GmWindow::buffered(CellType ct, int edge, int op) const {
  return static_cast<int>(slot(ct, edge, op).scores.size());
}

int GmWindow::frozen_count() const {
  int n = 0;
  for (const auto& v : slots_) {
    for (const auto& s : v) n += s.frozen ? 1 : 0;
  }
  return n;
}

std::vector<GmWindow::SlotState> GmWindow::export_state() const {
  std::vector<SlotState> out;
  for (const auto& v : slots_) {
    for (const auto& s : v) out.push_back({s.frozen, s.scores});
  }
  return out;
}

void GmWindow::import_state(const std::vector<SlotState>& slots) {
  size_t expected = slots_[0].size() + slots_[1].size();
  if (slots.size() != expected) {
    throw std::invalid_argument("gm window: state has " + std::to_string(slots.size()) +
                                " slots, expected " + std::to_string(expected));
  }
  size_t i = 0;
  for (auto& v : slots_) {
    for (auto& s : v) {
      s.frozen = slots[i].frozen;
      s.scores = slots[i].scores;
      ++i;
    }
  }
}

bool oles_gate(GmWindow& window, CellType ct, int edge, int op) {
  GmWindow::Slot& s = window.slot(ct, edge, op);
  if (s.frozen) return true;
  if (static_cast<int>(s.scores.size()) < window.window_length()) return false;
  double mean = std::accumulate(s.scores.begin(), s.scores.end(), 0.0) /
                static_cast<double>(s.scores.size());
  s.scores.clear();
  if (mean < window.threshold()) s.frozen = true;
  return s.frozen;
}

bool skip_count_stop(const Genotype& genotype, int threshold) {
  int count = 0;
  for (const auto& e : genotype.edges) {
    if (e.cell == CellType::kNormal && e.op == "skip_connect") ++count;
  }
  return count > threshold;
}

}  // namespace confopt
