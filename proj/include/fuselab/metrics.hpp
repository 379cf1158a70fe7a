#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <set>
#include <stdexcept>
#include <vector>

namespace fuselab {

struct BleuReport {
  std::array<double, 4> bleu{};     // BLEU-1..4 on the 0-100 scale
  std::vector<double> precisions;  // clipped n-gram precisions, order 1..max_order
  std::vector<std::size_t> matches;
  std::vector<std::size_t> totals;
  double brevity_penalty = 0.0;
  std::size_t candidate_length = 0;
  std::size_t reference_length = 0;
};

namespace detail {

template <class Tok>
std::map<std::vector<Tok>, std::size_t> ngram_counts(const std::vector<Tok>& seq, std::size_t n) {
  std::map<std::vector<Tok>, std::size_t> counts;
  if (seq.size() < n) return counts;
  for (std::size_t i = 0; i + n <= seq.size(); ++i) ++counts[std::vector<Tok>(seq.begin() + i, seq.begin() + i + n)];
  return counts;
}

}  // namespace detail

/// Single-reference corpus BLEU with clipped counts pooled over the corpus
/// and no smoothing.
template <class Tok>
BleuReport corpus_bleu(const std::vector<std::vector<Tok>>& candidates, const std::vector<std::vector<Tok>>& references,
                       std::size_t max_order = 4) {
  if (candidates.size() != references.size())
    throw std::invalid_argument("corpus_bleu: " + std::to_string(candidates.size()) + " candidates vs " +
                                std::to_string(references.size()) + " references");
  if (candidates.empty()) throw std::invalid_argument("corpus_bleu: empty corpus");
  if (max_order == 0 || max_order > 4) throw std::invalid_argument("corpus_bleu: max_order must be in [1, 4]");

  BleuReport rep;
  rep.matches.assign(max_order, 0);
  rep.totals.assign(max_order, 0);
  for (std::size_t s = 0; s < candidates.size(); ++s) {
    rep.candidate_length += candidates[s].size();
    rep.reference_length += references[s].size();
    for (std::size_t n = 1; n <= max_order; ++n) {
      const auto cand = detail::ngram_counts(candidates[s], n);
      const auto ref = detail::ngram_counts(references[s], n);
      for (const auto& [gram, count] : cand) {
        auto it = ref.find(gram);
        rep.matches[n - 1] += it == ref.end() ? 0 : std::min(count, it->second);
        rep.totals[n - 1] += count;
      }
    }
  }
  const double c = static_cast<double>(rep.candidate_length);
  const double r = static_cast<double>(rep.reference_length);
  rep.brevity_penalty = c == 0.0 ? 0.0 : (c < r ? std::exp(1.0 - r / c) : 1.0);

  double log_sum = 0.0;
  bool zero = false;
  for (std::size_t n = 1; n <= max_order; ++n) {
    const double p = rep.totals[n - 1] == 0 ? 0.0
                                            : static_cast<double>(rep.matches[n - 1]) /
                                                  static_cast<double>(rep.totals[n - 1]);
    rep.precisions.push_back(p);
    if (p == 0.0) zero = true;
    else log_sum += std::log(p);
    rep.bleu[n - 1] = zero ? 0.0 : 100.0 * rep.brevity_penalty * std::exp(log_sum / static_cast<double>(n));
  }
  return rep;
}

struct ClassificationReport {
  double precision = 0.0;  // macro
  double recall = 0.0;     // macro
  double f1 = 0.0;         // macro
  double accuracy = 0.0;
  std::vector<std::vector<std::size_t>> confusion;  // [label][prediction]
};

/// Macro P/R/F1 averaged over the classes that occur in either labels or
/// predictions; a class with a zero denominator scores 0 on that metric.
inline ClassificationReport classification_report(const std::vector<int>& predictions, const std::vector<int>& labels,
                                                  std::size_t classes) {
  if (predictions.empty()) throw std::invalid_argument("classification_report: empty input");
  if (predictions.size() != labels.size()) throw std::invalid_argument("classification_report: length mismatch");
  ClassificationReport rep;
  rep.confusion.assign(classes, std::vector<std::size_t>(classes, 0));
  std::size_t correct = 0;
  std::set<int> seen;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int y = labels[i], p = predictions[i];
    if (y < 0 || static_cast<std::size_t>(y) >= classes || p < 0 || static_cast<std::size_t>(p) >= classes)
      throw std::out_of_range("classification_report: class id outside [0, " + std::to_string(classes) + ")");
    ++rep.confusion[y][p];
    correct += y == p;
    seen.insert(y);
    seen.insert(p);
  }
  rep.accuracy = static_cast<double>(correct) / static_cast<double>(labels.size());
  for (int k : seen) {
    std::size_t tp = rep.confusion[k][k], predicted = 0, actual = 0;
    for (std::size_t j = 0; j < classes; ++j) {
      predicted += rep.confusion[j][k];
      actual += rep.confusion[k][j];
    }
    const double p = predicted ? static_cast<double>(tp) / static_cast<double>(predicted) : 0.0;
    const double r = actual ? static_cast<double>(tp) / static_cast<double>(actual) : 0.0;
    rep.precision += p;
    rep.recall += r;
    rep.f1 += p + r > 0.0 ? 2.0 * p * r / (p + r) : 0.0;
  }
  const auto k = static_cast<double>(seen.size());
  rep.precision /= k;
  rep.recall /= k;
  rep.f1 /= k;
  return rep;
}

/// Mean silhouette over `points` (row-major [n x dim]) with Euclidean distance.
/// Members of singleton groups score 0, as do points with a = b = 0.
inline double silhouette(const std::vector<double>& points, std::size_t dim, const std::vector<int>& groups) {
  const std::size_t n = groups.size();
  if (dim == 0 || points.size() != n * dim) throw std::invalid_argument("silhouette: points do not match group count");
  std::map<int, std::size_t> sizes;
  for (int g : groups) ++sizes[g];
  if (sizes.size() < 2) throw std::invalid_argument("silhouette: needs at least two groups");

  std::vector<double> dist(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t d = 0; d < dim; ++d) {
        const double diff = points[i * dim + d] - points[j * dim + d];
        acc += diff * diff;
      }
      dist[i * n + j] = dist[j * n + i] = std::sqrt(acc);
    }

  double total = 0.0;
  std::map<int, double> sums;
  for (std::size_t i = 0; i < n; ++i) {
    if (sizes[groups[i]] == 1) continue;
    for (auto& [g, s] : sums) s = 0.0;
    for (std::size_t j = 0; j < n; ++j)
      if (j != i) sums[groups[j]] += dist[i * n + j];
    const double a = sums[groups[i]] / static_cast<double>(sizes[groups[i]] - 1);
    double b = INFINITY;
    for (const auto& [g, count] : sizes)
      if (g != groups[i]) b = std::min(b, sums[g] / static_cast<double>(count));
    const double m = std::max(a, b);
    total += m > 0.0 ? (b - a) / m : 0.0;
  }
  return total / static_cast<double>(n);
}

}  // namespace fuselab
