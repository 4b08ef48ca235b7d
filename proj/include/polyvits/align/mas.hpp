#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "polyvits/error.hpp"
#include "polyvits/tensor/matrix.hpp"

namespace polyvits {

/// Monotonic, surjective phoneme-to-frame assignment.
struct AlignmentPath {
  std::vector<int> assignment;  // phoneme index per frame
  std::vector<int> durations;   // frames per phoneme

  friend bool operator==(const AlignmentPath&, const AlignmentPath&) = default;
};

inline std::vector<int> durations_from_assignment(const std::vector<int>& assignment, int phonemes) {
  std::vector<int> durations(static_cast<std::size_t>(phonemes), 0);
  for (int p : assignment) ++durations[static_cast<std::size_t>(p)];
  return durations;
}

/// Throws unless the path starts at phoneme 0, ends at P-1, advances by 0 or
/// 1 per frame and gives every phoneme at least one frame.
inline void check_path(const AlignmentPath& path, int phonemes, int frames) {
  const auto& a = path.assignment;
  if (static_cast<int>(a.size()) != frames) fail(ErrorKind::kSchema, "assignment length differs from frame count");
  if (frames == 0) fail(ErrorKind::kSchema, "empty alignment");
  if (a.front() != 0 || a.back() != phonemes - 1) fail(ErrorKind::kSchema, "alignment endpoints are wrong");
  for (std::size_t t = 1; t < a.size(); ++t) {
    const int step = a[t] - a[t - 1];
    if (step != 0 && step != 1) fail(ErrorKind::kSchema, "alignment is not monotonic at frame " + std::to_string(t));
  }
  if (static_cast<int>(path.durations.size()) != phonemes) fail(ErrorKind::kSchema, "duration count differs");
  long total = 0;
  for (int d : path.durations) {
    if (d < 1) fail(ErrorKind::kSchema, "phoneme with zero duration");
    total += d;
  }
  if (total != frames) fail(ErrorKind::kSchema, "durations do not sum to the frame count");
}

/// Sum of the chosen cells, accumulated left to right over frames.
inline double path_score(const Matrix& loglik, const std::vector<int>& assignment) {
  double total = 0.0;
  for (std::size_t t = 0; t < assignment.size(); ++t) total += loglik(assignment[t], static_cast<Eigen::Index>(t));
  return total;
}

namespace detail {

inline void check_mas_input(const Matrix& loglik, int valid_p, int valid_f) {
  if (valid_p < 1) fail(ErrorKind::kInfeasible, "alignment needs at least one phoneme");
  if (valid_p > loglik.rows() || valid_f > loglik.cols()) {
    fail(ErrorKind::kLayout, "valid region " + std::to_string(valid_p) + "x" + std::to_string(valid_f) +
                                 " exceeds matrix " + std::to_string(loglik.rows()) + "x" +
                                 std::to_string(loglik.cols()));
  }
  if (valid_f < valid_p) {
    fail(ErrorKind::kInfeasible, "cannot align " + std::to_string(valid_p) + " phonemes to " +
                                     std::to_string(valid_f) + " frames");
  }
  if (!loglik.topLeftCorner(valid_p, valid_f).allFinite()) {
    fail(ErrorKind::kNonFinite, "log-likelihood has non-finite entries in the valid region");
  }
}

}  // namespace detail

/// Monotonic alignment search over the top-left valid_p x valid_f region.
/// On equal scores the path stays on the current phoneme.
inline AlignmentPath mas(const Matrix& loglik, int valid_p, int valid_f) {
  detail::check_mas_input(loglik, valid_p, valid_f);
  const int P = valid_p;
  const int F = valid_f;
  constexpr double kNegInf = -std::numeric_limits<double>::infinity();
  std::vector<double> best(static_cast<std::size_t>(P) * F, kNegInf);
  auto at = [&](int p, int t) -> double& { return best[static_cast<std::size_t>(p) * F + t]; };

  at(0, 0) = loglik(0, 0);
  for (int t = 1; t < F; ++t) {
    // Cells outside [P-F+t, t] can neither be reached nor reach the end.
    const int lo = std::max(0, P - F + t);
    const int hi = std::min(P - 1, t);
    for (int p = lo; p <= hi; ++p) {
      const double stay = p <= t - 1 ? at(p, t - 1) : kNegInf;
      const double move = p > 0 ? at(p - 1, t - 1) : kNegInf;
      at(p, t) = std::max(stay, move) + loglik(p, t);
    }
  }

  AlignmentPath path;
  path.assignment.assign(static_cast<std::size_t>(F), 0);
  int p = P - 1;
  for (int t = F - 1; t >= 0; --t) {
    path.assignment[static_cast<std::size_t>(t)] = p;
    if (t > 0 && p > 0 && (p == t || at(p, t - 1) < at(p - 1, t - 1))) --p;
  }
  path.durations = durations_from_assignment(path.assignment, P);
  return path;
}

inline AlignmentPath mas(const Matrix& loglik) {
  return mas(loglik, static_cast<int>(loglik.rows()), static_cast<int>(loglik.cols()));
}

inline constexpr int kBruteForceMaxPhonemes = 8;
inline constexpr int kBruteForceMaxFrames = 12;

/// Exhaustive oracle for `mas`: enumerates all C(F-1, P-1) monotonic paths.
/// Among paths with equal totals it prefers the larger phoneme index at the
/// latest differing frame, which is the path the stay-on-tie backtrace picks.
inline AlignmentPath brute_force_align(const Matrix& loglik, long* paths_enumerated = nullptr) {
  const int P = static_cast<int>(loglik.rows());
  const int F = static_cast<int>(loglik.cols());
  if (P > kBruteForceMaxPhonemes || F > kBruteForceMaxFrames) {
    fail(ErrorKind::kSizeLimit, "brute-force alignment limited to " + std::to_string(kBruteForceMaxPhonemes) + "x" +
                                    std::to_string(kBruteForceMaxFrames));
  }
  detail::check_mas_input(loglik, P, F);
  // Frames 1..F-1 at which the phoneme index advances; exactly P-1 of them.
  std::vector<char> advance(static_cast<std::size_t>(F - 1), 0);
  std::fill(advance.end() - (P - 1), advance.end(), 1);

  std::vector<int> best_assignment;
  double best_total = -std::numeric_limits<double>::infinity();
  long count = 0;
  std::vector<int> assignment(static_cast<std::size_t>(F));
  do {
    ++count;
    assignment[0] = 0;
    for (int t = 1; t < F; ++t) assignment[t] = assignment[t - 1] + (advance[t - 1] ? 1 : 0);
    const double total = path_score(loglik, assignment);
    bool better = best_assignment.empty() || total > best_total;
    if (!better && total == best_total) {
      for (int t = F - 1; t >= 0; --t) {
        if (assignment[t] != best_assignment[t]) {
          better = assignment[t] > best_assignment[t];
          break;
        }
      }
    }
    if (better) {
      best_total = total;
      best_assignment = assignment;
    }
  } while (std::next_permutation(advance.begin(), advance.end()));

  if (paths_enumerated != nullptr) *paths_enumerated = count;
  return {best_assignment, durations_from_assignment(best_assignment, P)};
}

}  // namespace polyvits
