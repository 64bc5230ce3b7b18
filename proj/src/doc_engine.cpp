#include "forge/doc_engine.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>
#include <thread>

#include "forge/error.hpp"
#include "forge/ids.hpp"

namespace forge {

namespace {

// Counter-based stream: every (seed, target, trial) triple owns an
// independent sequence, so trials can run in any order on any thread.
class TrialRng {
 public:
  TrialRng(std::uint64_t seed, std::uint64_t target, std::uint64_t trial) {
    state_ = seed;
    const std::uint64_t a = next();
    state_ = a ^ (target * 0xD1B54A32D192ED03ULL);
    const std::uint64_t b = next();
    state_ = b ^ (trial * 0xA0761D6478BD642FULL);
  }

  std::uint64_t next() {
    std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  /// Uniform in [0, range), Lemire's multiply-and-reject.
  std::uint64_t below(std::uint64_t range) {
    unsigned __int128 product = static_cast<unsigned __int128>(next()) * range;
    auto low = static_cast<std::uint64_t>(product);
    if (low < range) {
      const std::uint64_t threshold = (0 - range) % range;
      while (low < threshold) {
        product = static_cast<unsigned __int128>(next()) * range;
        low = static_cast<std::uint64_t>(product);
      }
    }
    return static_cast<std::uint64_t>(product >> 64);
  }

 private:
  std::uint64_t state_;
};

/// Floyd's algorithm: r distinct values from [0, population), uniform over
/// subsets.
void sample_without_replacement(TrialRng& rng, std::size_t population, std::size_t r,
                                std::vector<std::size_t>& out) {
  out.clear();
  for (std::size_t j = population - r; j < population; ++j) {
    const auto t = static_cast<std::size_t>(rng.below(j + 1));
    if (std::find(out.begin(), out.end(), t) == out.end()) {
      out.push_back(t);
    } else {
      out.push_back(j);
    }
  }
}

struct Candidate {
  bool valid = false;
  double quality = 0.0;
  std::size_t size = 0;
  /// Members as natural-order ranks, ascending.
  std::vector<std::size_t> member_ranks;
  std::uint64_t trial = 0;
  std::vector<std::uint64_t> dims;  // bitmask
};

/// Strict "a is a better result than b". Quality first, then larger
/// cluster, then lexicographically smaller member set, then earlier trial.
bool better(const Candidate& a, const Candidate& b) {
  if (!b.valid) return a.valid;
  if (!a.valid) return false;
  if (a.quality != b.quality) return a.quality > b.quality;
  if (a.size != b.size) return a.size > b.size;
  if (a.member_ranks != b.member_ranks) return a.member_ranks < b.member_ranks;
  return a.trial < b.trial;
}

/// Precomputed state for one pivot: per subject, the bitmask of dimensions
/// where both it and the pivot are present and within w.
class PivotSearch {
 public:
  PivotSearch(const VasDataSet& data, std::size_t pivot, double w, double beta, std::size_t min_size)
      : n_(data.num_subjects()),
        words_((data.num_dimensions() + 63) / 64),
        pivot_(pivot),
        beta_(beta),
        min_size_(min_size),
        near_(n_ * words_, 0),
        rank_(n_) {
    const auto pivot_row = data.row(pivot);
    for (std::size_t s = 0; s < n_; ++s) {
      const auto row = data.row(s);
      for (std::size_t k = 0; k < data.num_dimensions(); ++k) {
        if (pivot_row[k] && row[k] && std::abs(*row[k] - *pivot_row[k]) <= w) {
          near_[s * words_ + k / 64] |= std::uint64_t{1} << (k % 64);
        }
      }
    }
    std::vector<std::size_t> order(n_);
    for (std::size_t i = 0; i < n_; ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return natural_less(data.subject(a).id, data.subject(b).id);
    });
    for (std::size_t r = 0; r < n_; ++r) rank_[order[r]] = r;
  }

  Candidate run(std::uint64_t seed, std::size_t r, std::uint64_t begin, std::uint64_t end) const {
    Candidate best;
    Candidate current;
    current.dims.assign(words_, 0);
    std::vector<std::size_t> sample;
    std::vector<std::size_t> members;
    members.reserve(n_);

    for (std::uint64_t trial = begin; trial < end; ++trial) {
      TrialRng rng(seed, pivot_, trial);
      sample_without_replacement(rng, n_ - 1, r, sample);

      const std::uint64_t* pivot_mask = &near_[pivot_ * words_];
      std::copy(pivot_mask, pivot_mask + words_, current.dims.begin());
      for (std::size_t x : sample) {
        const std::size_t q = x < pivot_ ? x : x + 1;
        const std::uint64_t* mask = &near_[q * words_];
        for (std::size_t w = 0; w < words_; ++w) current.dims[w] &= mask[w];
      }
      std::size_t dim_count = 0;
      for (std::uint64_t word : current.dims) dim_count += static_cast<std::size_t>(std::popcount(word));
      if (dim_count == 0) continue;

      members.clear();
      for (std::size_t s = 0; s < n_; ++s) {
        const std::uint64_t* mask = &near_[s * words_];
        bool inside = true;
        for (std::size_t w = 0; w < words_ && inside; ++w) inside = (current.dims[w] & ~mask[w]) == 0;
        if (inside) members.push_back(s);
      }
      if (members.size() < min_size_) continue;

      current.valid = true;
      current.size = members.size();
      current.quality = quality(members.size(), dim_count, beta_);
      current.trial = trial;
      if (best.valid && (current.quality < best.quality ||
                         (current.quality == best.quality && current.size < best.size))) {
        continue;
      }
      current.member_ranks.clear();
      for (std::size_t s : members) current.member_ranks.push_back(rank_[s]);
      std::sort(current.member_ranks.begin(), current.member_ranks.end());
      if (better(current, best)) best = current;
    }
    return best;
  }

  const std::vector<std::size_t>& ranks() const { return rank_; }

 private:
  std::size_t n_;
  std::size_t words_;
  std::size_t pivot_;
  double beta_;
  std::size_t min_size_;
  std::vector<std::uint64_t> near_;
  std::vector<std::size_t> rank_;
};

SubspaceCluster materialize(const VasDataSet& data, const Candidate& best, const std::vector<std::size_t>& ranks) {
  std::vector<std::size_t> by_rank(ranks.size());
  for (std::size_t s = 0; s < ranks.size(); ++s) by_rank[ranks[s]] = s;

  SubspaceCluster cluster;
  std::vector<std::size_t> members;
  for (std::size_t r : best.member_ranks) members.push_back(by_rank[r]);
  for (std::size_t s : members) cluster.members.push_back(data.subject(s).id);

  for (std::size_t k = 0; k < data.num_dimensions(); ++k) {
    if (!(best.dims[k / 64] >> (k % 64) & 1U)) continue;
    double sum = 0.0;
    for (std::size_t s : members) sum += *data.value(s, k);
    cluster.subspace.push_back(data.dimension(k).id);
    cluster.means[data.dimension(k).id] = sum / static_cast<double>(members.size());
  }
  natural_sort(cluster.subspace);
  cluster.quality = best.quality;
  return cluster;
}

SubspaceCluster search_pivot(const VasDataSet& data, const DocParams& params, std::size_t pivot,
                             std::size_t r, std::uint64_t m) {
  const std::size_t min_size = min_cluster_size(params.alpha, data.num_subjects());
  const PivotSearch search(data, pivot, params.w, params.beta, min_size);
  const std::uint64_t total = outer_iteration_count(params.alpha) * m;

  const unsigned threads = std::max(1U, std::min<unsigned>(params.threads, static_cast<unsigned>(total)));
  Candidate best;
  if (threads == 1) {
    best = search.run(params.seed, r, 0, total);
  } else {
    std::vector<Candidate> partial(threads);
    std::vector<std::thread> pool;
    const std::uint64_t chunk = (total + threads - 1) / threads;
    for (unsigned t = 0; t < threads; ++t) {
      const std::uint64_t begin = std::min(total, t * chunk);
      const std::uint64_t end = std::min(total, begin + chunk);
      pool.emplace_back([&, t, begin, end] { partial[t] = search.run(params.seed, r, begin, end); });
    }
    for (auto& th : pool) th.join();
    for (auto& c : partial) {
      if (better(c, best)) best = std::move(c);
    }
  }
  if (!best.valid) throw NoClusterFound(data.subject(pivot).id);
  return materialize(data, best, search.ranks());
}

}  // namespace

std::size_t discrimination_set_size(std::size_t num_dims, double beta) {
  const double ratio = std::log(2.0 * static_cast<double>(num_dims)) / std::log(2.0 / beta);
  // guard against ratios like 2.9999999999 that are exact integers in exact arithmetic
  const double r = std::floor(ratio + 1e-9);
  return r < 1.0 ? 1 : static_cast<std::size_t>(r);
}

std::uint64_t inner_trial_count(double alpha, std::size_t r, std::uint64_t cap) {
  const long double m = std::ceil(std::pow(2.0L / static_cast<long double>(alpha), static_cast<long double>(r)) *
                                  std::log(4.0L));
  if (!(m <= static_cast<long double>(cap))) {
    throw ParameterError("inner trial count m = (2/alpha)^r * ln 4 exceeds the cap of " + std::to_string(cap) +
                         " (alpha=" + format_number(alpha) + ", r=" + std::to_string(r) +
                         "); raise alpha, lower beta so r shrinks, or raise the cap");
  }
  return static_cast<std::uint64_t>(m);
}

std::uint64_t outer_iteration_count(double alpha) {
  return static_cast<std::uint64_t>(std::ceil(2.0 / alpha - 1e-9));
}

double quality(std::size_t cluster_size, std::size_t subspace_size, double beta) {
  return static_cast<double>(cluster_size) * std::pow(1.0 / beta, static_cast<double>(subspace_size));
}

std::size_t min_cluster_size(double alpha, std::size_t num_subjects) {
  return static_cast<std::size_t>(std::ceil(alpha * static_cast<double>(num_subjects) - 1e-9));
}

std::vector<std::size_t> induce_subspace(const VasDataSet& data, std::size_t pivot,
                                         std::span<const std::size_t> others, double w) {
  std::vector<std::size_t> dims;
  for (std::size_t k = 0; k < data.num_dimensions(); ++k) {
    const auto p = data.value(pivot, k);
    if (!p) continue;
    const bool keep = std::all_of(others.begin(), others.end(), [&](std::size_t q) {
      const auto v = data.value(q, k);
      return v && std::abs(*v - *p) <= w;
    });
    if (keep) dims.push_back(k);
  }
  return dims;
}

std::vector<std::size_t> cluster_membership(const VasDataSet& data, std::size_t pivot,
                                            std::span<const std::size_t> dims, double w) {
  std::vector<std::size_t> members;
  for (std::size_t s = 0; s < data.num_subjects(); ++s) {
    const bool inside = std::all_of(dims.begin(), dims.end(), [&](std::size_t k) {
      const auto v = data.value(s, k);
      const auto p = data.value(pivot, k);
      return v && p && std::abs(*v - *p) <= w;
    });
    if (inside) members.push_back(s);
  }
  return members;
}

std::vector<std::string> validate_params(const DocParams& params, std::size_t num_subjects, std::size_t num_dims) {
  if (!(params.alpha > 0.0 && params.alpha <= 1.0)) {
    throw ParameterError("alpha must lie in (0,1], got " + format_number(params.alpha));
  }
  if (!(params.beta > 0.0 && params.beta < 1.0)) {
    throw ParameterError("beta must lie in (0,1), got " + format_number(params.beta));
  }
  if (!(params.w > 0.0)) throw ParameterError("w must be positive, got " + format_number(params.w));
  if (num_dims == 0) throw ParameterError("data set has no dimensions");
  if (num_subjects < 2) throw ParameterError("at least 2 subjects are required");
  const std::size_t r = discrimination_set_size(num_dims, params.beta);
  if (r > num_subjects - 1) {
    throw ParameterError("discrimination set size r = " + std::to_string(r) + " needs more than the " +
                         std::to_string(num_subjects - 1) + " other subjects available; lower beta");
  }
  inner_trial_count(params.alpha, r, params.max_trials);

  std::vector<std::string> warnings;
  if (params.beta > 0.5) {
    warnings.push_back("beta = " + format_number(params.beta) +
                       " > 0.5: the 2-approximation guarantee only holds for beta <= 0.5; "
                       "rerun with other seeds to check stability");
  }
  return warnings;
}

SubspaceCluster doc_for_target(const VasDataSet& data, const DocParams& params) {
  if (!params.target) throw ParameterError("doc_for_target needs a target subject");
  const auto pivot = data.subject_index(*params.target);
  if (!pivot) throw ParameterError("unknown target subject '" + *params.target + "'");
  validate_params(params, data.num_subjects(), data.num_dimensions());
  const std::size_t r = discrimination_set_size(data.num_dimensions(), params.beta);
  const std::uint64_t m = inner_trial_count(params.alpha, r, params.max_trials);
  return search_pivot(data, params, *pivot, r, m);
}

DocRun doc_full_coverage(const VasDataSet& data, const DocParams& params) {
  DocRun run;
  run.params = params;
  run.params.target.reset();
  run.warnings = validate_params(params, data.num_subjects(), data.num_dimensions());
  run.r = discrimination_set_size(data.num_dimensions(), params.beta);
  run.m = inner_trial_count(params.alpha, run.r, params.max_trials);

  std::vector<SubspaceCluster> found;
  for (std::size_t pivot = 0; pivot < data.num_subjects(); ++pivot) {
    try {
      auto cluster = search_pivot(data, params, pivot, run.r, run.m);
      const bool duplicate = std::any_of(found.begin(), found.end(), [&](const SubspaceCluster& c) {
        return c.members == cluster.members && c.subspace == cluster.subspace;
      });
      if (!duplicate) found.push_back(std::move(cluster));
    } catch (const NoClusterFound& e) {
      run.uncovered.push_back(e.subject_id());
      run.warnings.push_back(e.what());
    }
  }

  auto id_list_less = [](const std::vector<std::string>& a, const std::vector<std::string>& b) {
    return std::lexicographical_compare(a.begin(), a.end(), b.begin(), b.end(),
                                        [](const std::string& x, const std::string& y) { return natural_less(x, y); });
  };
  std::stable_sort(found.begin(), found.end(), [&](const SubspaceCluster& a, const SubspaceCluster& b) {
    if (a.quality != b.quality) return a.quality > b.quality;
    if (a.members.size() != b.members.size()) return a.members.size() > b.members.size();
    if (a.members != b.members) return id_list_less(a.members, b.members);
    return id_list_less(a.subspace, b.subspace);
  });
  for (std::size_t i = 0; i < found.size(); ++i) found[i].id = cluster_label(i, params.beta);
  run.clusters = std::move(found);
  return run;
}

std::string cluster_label(std::size_t rank, double beta) {
  std::string letters;
  std::size_t n = rank + 1;
  while (n > 0) {
    --n;
    letters.insert(letters.begin(), static_cast<char>('A' + n % 26));
    n /= 26;
  }
  return letters + std::to_string(static_cast<long>(std::lround(beta * 100.0)));
}

WEstimate estimate_w(const VasDataSet& data) {
  const std::size_t n = data.num_subjects();
  if (n < 2) throw ParameterError("estimate_w needs at least 2 subjects");
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double nearest = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      double sum = 0.0;
      std::size_t shared = 0;
      for (std::size_t k = 0; k < data.num_dimensions(); ++k) {
        const auto a = data.value(i, k);
        const auto b = data.value(j, k);
        if (a && b) {
          sum += std::abs(*a - *b);
          ++shared;
        }
      }
      if (shared > 0) nearest = std::min(nearest, sum / static_cast<double>(shared));
    }
    if (!std::isfinite(nearest)) throw NoSharedDims(data.subject(i).id);
    total += nearest;
  }
  WEstimate estimate;
  estimate.raw = total / static_cast<double>(n);
  estimate.suggested = std::round(estimate.raw * 10.0) / 10.0;
  return estimate;
}

}  // namespace forge
