// Maximal information coefficient.
//
// For every grid size (x bins, y bins) with x * y <= B(n), one axis is
// equipartitioned into y rows and the other axis is partitioned into at
// most x columns by dynamic programming so that the mutual information of
// the resulting grid is maximal. Each entry is normalized by
// log(min(x, y)) and the MIC is the largest normalized value over both
// orientations.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

#include "rhythmvec/error.hpp"
#include "rhythmvec/metrics.hpp"

namespace rhythmvec {
namespace {

std::vector<std::size_t> argsort(std::span<const double> values) {
  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  return order;
}

// Row index per point. Tied values always share a row, so fewer than
// `bins` rows may be produced.
std::vector<int> equipartition(std::span<const double> values, int bins) {
  const std::size_t n = values.size();
  const auto order = argsort(values);
  std::vector<int> rows(n, 0);
  double desired = static_cast<double>(n) / bins;
  int row = 0;
  std::size_t row_size = 0;
  std::size_t i = 0;
  while (i < n) {
    std::size_t ties = 1;
    while (i + ties < n && values[order[i + ties]] == values[order[i]]) ++ties;
    const double with = std::abs(static_cast<double>(row_size + ties) - desired);
    const double without = std::abs(static_cast<double>(row_size) - desired);
    if (row_size != 0 && with >= without) {
      ++row;
      row_size = 0;
      desired = static_cast<double>(n - i) / (bins - row);
    }
    for (std::size_t k = 0; k < ties; ++k) rows[order[i + k]] = row;
    row_size += ties;
    i += ties;
  }
  return rows;
}

// Best mutual information (nats) achievable by cutting the sorted `values`
// axis into at most l columns, for l = 0..max_cols, given fixed rows.
std::vector<double> optimize_axis(std::span<const double> values, const std::vector<int>& rows,
                                  int max_cols, double clump_factor) {
  const std::size_t n = values.size();
  const int n_rows = *std::max_element(rows.begin(), rows.end()) + 1;
  const auto order = argsort(values);

  // Units that can never be split: groups of tied values, then runs of
  // consecutive single-row groups in the same row (splitting such a run
  // never increases the information).
  std::vector<std::vector<int>> units;
  std::vector<int> unit_row;  // -1 for mixed units
  std::size_t i = 0;
  while (i < n) {
    std::size_t ties = 1;
    while (i + ties < n && values[order[i + ties]] == values[order[i]]) ++ties;
    std::vector<int> counts(static_cast<std::size_t>(n_rows), 0);
    int row = rows[order[i]];
    for (std::size_t k = 0; k < ties; ++k) {
      const int r = rows[order[i + k]];
      ++counts[static_cast<std::size_t>(r)];
      if (r != row) row = -1;
    }
    if (!units.empty() && row >= 0 && unit_row.back() == row) {
      units.back()[static_cast<std::size_t>(row)] += static_cast<int>(ties);
    } else {
      units.push_back(std::move(counts));
      unit_row.push_back(row);
    }
    i += ties;
  }

  // Superclumps: bound the DP size by merging units into roughly equal
  // point-count chunks. Small inputs are always solved exactly.
  constexpr double kExactUnits = 64.0;
  const auto max_units =
      static_cast<std::size_t>(std::max(kExactUnits, clump_factor * max_cols));
  if (units.size() > max_units) {
    std::vector<std::vector<int>> merged;
    std::size_t remaining_points = n;
    std::size_t u = 0;
    while (u < units.size()) {
      const std::size_t chunks_left = max_units - merged.size();
      const double desired = static_cast<double>(remaining_points) / static_cast<double>(chunks_left);
      std::vector<int> acc(static_cast<std::size_t>(n_rows), 0);
      std::size_t size = 0;
      while (u < units.size()) {
        const std::size_t s = static_cast<std::size_t>(
            std::accumulate(units[u].begin(), units[u].end(), 0));
        const bool last_chunk = chunks_left == 1;
        if (size != 0 && !last_chunk &&
            std::abs(static_cast<double>(size + s) - desired) >=
                std::abs(static_cast<double>(size) - desired)) {
          break;
        }
        for (int r = 0; r < n_rows; ++r) acc[static_cast<std::size_t>(r)] += units[u][static_cast<std::size_t>(r)];
        size += s;
        ++u;
      }
      remaining_points -= size;
      merged.push_back(std::move(acc));
    }
    units = std::move(merged);
  }

  const std::size_t m = units.size();
  const auto nr = static_cast<std::size_t>(n_rows);
  std::vector<long> prefix((m + 1) * nr, 0);
  for (std::size_t u = 0; u < m; ++u) {
    for (std::size_t r = 0; r < nr; ++r) {
      prefix[(u + 1) * nr + r] = prefix[u * nr + r] + units[u][r];
    }
  }
  // score(a, b) = sum_r c_r log(c_r / n_ab) for the column spanning units (a, b].
  auto score = [&](std::size_t a, std::size_t b) {
    long total = 0;
    double acc = 0.0;
    for (std::size_t r = 0; r < nr; ++r) total += prefix[b * nr + r] - prefix[a * nr + r];
    const double log_total = std::log(static_cast<double>(total));
    for (std::size_t r = 0; r < nr; ++r) {
      const long c = prefix[b * nr + r] - prefix[a * nr + r];
      if (c > 0) acc += static_cast<double>(c) * (std::log(static_cast<double>(c)) - log_total);
    }
    return acc;
  };
  std::vector<double> table((m + 1) * (m + 1), 0.0);
  for (std::size_t a = 0; a < m; ++a) {
    for (std::size_t b = a + 1; b <= m; ++b) table[a * (m + 1) + b] = score(a, b);
  }

  double row_entropy = 0.0;
  for (std::size_t r = 0; r < nr; ++r) {
    const double p = static_cast<double>(prefix[m * nr + r]) / static_cast<double>(n);
    if (p > 0.0) row_entropy -= p * std::log(p);
  }

  constexpr double kNeg = -std::numeric_limits<double>::infinity();
  std::vector<double> best(static_cast<std::size_t>(max_cols) + 1, 0.0);
  std::vector<double> prev(m + 1, kNeg), cur(m + 1, kNeg);
  for (std::size_t b = 1; b <= m; ++b) prev[b] = table[b];
  best[1] = row_entropy + prev[m] / static_cast<double>(n);
  for (int cols = 2; cols <= max_cols; ++cols) {
    std::fill(cur.begin(), cur.end(), kNeg);
    for (std::size_t b = static_cast<std::size_t>(cols); b <= m; ++b) {
      double v = kNeg;
      for (std::size_t a = static_cast<std::size_t>(cols) - 1; a < b; ++a) {
        v = std::max(v, prev[a] + table[a * (m + 1) + b]);
      }
      cur[b] = v;
    }
    std::swap(prev, cur);
    const double info = prev[m] == kNeg ? best[static_cast<std::size_t>(cols) - 1]
                                        : row_entropy + prev[m] / static_cast<double>(n);
    best[static_cast<std::size_t>(cols)] = std::max(best[static_cast<std::size_t>(cols) - 1], info);
  }
  return best;
}

double oriented_max(std::span<const double> free_axis, std::span<const double> fixed_axis,
                    double grid_bound, double clump_factor) {
  double best = 0.0;
  for (int y = 2; 2.0 * y <= grid_bound; ++y) {
    const int max_x = static_cast<int>(std::floor(grid_bound / y));
    if (max_x < 2) break;
    const auto rows = equipartition(fixed_axis, y);
    const auto info = optimize_axis(free_axis, rows, max_x, clump_factor);
    for (int x = 2; x <= max_x; ++x) {
      const double normalized = info[static_cast<std::size_t>(x)] / std::log(std::min(x, y));
      best = std::max(best, normalized);
    }
  }
  return best;
}

bool is_constant(std::span<const double> values) {
  return std::all_of(values.begin(), values.end(), [&](double v) { return v == values.front(); });
}

}  // namespace

double mic(std::span<const double> xs, std::span<const double> ys, const MicOptions& options) {
  if (xs.size() != ys.size()) throw ShapeError("mic: length mismatch");
  if (xs.size() < 10) throw ValidationError("mic: need at least 10 points");
  if (is_constant(xs) || is_constant(ys)) return 0.0;
  const double grid_bound = std::max(4.0, std::pow(static_cast<double>(xs.size()), options.alpha));
  const double a = oriented_max(xs, ys, grid_bound, options.clump_factor);
  const double b = oriented_max(ys, xs, grid_bound, options.clump_factor);
  return std::clamp(std::max(a, b), 0.0, 1.0);
}

}  // namespace rhythmvec
