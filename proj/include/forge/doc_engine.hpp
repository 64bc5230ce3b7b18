#pragma once

// Overlapping, full-coverage DOC subspace clustering.
//
// For a fixed pivot subject o, every trial draws a discrimination set X of r
// other subjects, keeps the dimensions on which all of X lie within w of o,
// and collects every subject inside the 2w-wide box around o on those
// dimensions. Candidates below the density threshold are discarded; the
// survivor maximising |C| * (1/beta)^|D| wins. Running that search once per
// subject gives overlapping clusters that cover the whole data set.

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "forge/dataset.hpp"

namespace forge {

inline constexpr std::uint64_t kDefaultTrialCap = 10'000'000;

struct DocParams {
  double w = 0.3;
  double alpha = 0.1;
  double beta = 0.25;
  std::uint64_t seed = 0;
  /// Pivot subject id; required by doc_for_target, ignored by full coverage.
  std::optional<std::string> target;
  /// Upper bound on the inner trial count m.
  std::uint64_t max_trials = kDefaultTrialCap;
  /// Worker threads for the trial loop. Results do not depend on it.
  unsigned threads = 1;
};

struct SubspaceCluster {
  std::string id;
  /// Subject ids, natural order.
  std::vector<std::string> members;
  /// Dimension ids, natural order.
  std::vector<std::string> subspace;
  /// Member mean per subspace dimension.
  std::map<std::string, double> means;
  double quality = 0.0;

  bool in_subspace(const std::string& dim) const { return means.contains(dim); }
};

/// Size r of the discrimination set: floor(ln(2|d|) / ln(2/beta)), at least 1.
std::size_t discrimination_set_size(std::size_t num_dims, double beta);

/// Inner trial count m = ceil((2/alpha)^r * ln 4). Throws ParameterError when
/// m exceeds `cap`.
std::uint64_t inner_trial_count(double alpha, std::size_t r, std::uint64_t cap = kDefaultTrialCap);

/// Outer iteration count ceil(2/alpha).
std::uint64_t outer_iteration_count(double alpha);

/// |C| * (1/beta)^|D|
double quality(std::size_t cluster_size, std::size_t subspace_size, double beta);

/// Smallest accepted cluster size, ceil(alpha * |S|).
std::size_t min_cluster_size(double alpha, std::size_t num_subjects);

/// Dimensions (indices) on which the pivot and every member of `others` are
/// present and each member lies within w of the pivot.
std::vector<std::size_t> induce_subspace(const VasDataSet& data, std::size_t pivot,
                                         std::span<const std::size_t> others, double w);

/// Subjects (indices, data set order) inside the box of half-width w around
/// the pivot on `dims`. A subject missing any of `dims` is outside.
std::vector<std::size_t> cluster_membership(const VasDataSet& data, std::size_t pivot,
                                            std::span<const std::size_t> dims, double w);

/// Throws ParameterError unless 0 < alpha <= 1, 0 < beta < 1, w > 0 and the
/// derived r fits in |S| - 1. Returns non-fatal warnings (beta > 0.5).
std::vector<std::string> validate_params(const DocParams& params, std::size_t num_subjects,
                                         std::size_t num_dims);

/// Best cluster around params.target. Throws NoClusterFound when every
/// trial is discarded.
SubspaceCluster doc_for_target(const VasDataSet& data, const DocParams& params);

struct DocRun {
  DocParams params;
  std::size_t r = 0;
  std::uint64_t m = 0;
  /// Quality-descending, labelled A<tag>, B<tag>, ...
  std::vector<SubspaceCluster> clusters;
  std::vector<std::string> warnings;
  /// Subjects whose search raised NoClusterFound.
  std::vector<std::string> uncovered;
};

/// One doc_for_target per subject, identical (members, subspace) results
/// collapsed.
DocRun doc_full_coverage(const VasDataSet& data, const DocParams& params);

/// Letter code for the rank-th cluster (0 -> A, 25 -> Z, 26 -> AA) suffixed
/// with round(100 * beta).
std::string cluster_label(std::size_t rank, double beta);

struct WEstimate {
  double raw = 0.0;
  /// raw rounded to one decimal.
  double suggested = 0.0;
};

/// Mean over subjects of the nearest-neighbour mean absolute distance,
/// each pair compared on the dimensions both have present.
WEstimate estimate_w(const VasDataSet& data);

}  // namespace forge
