#include "forge/persona.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>
#include <stdexcept>
#include <thread>

#include "forge/csv.hpp"
#include "forge/error.hpp"
#include "forge/ids.hpp"

namespace forge {

std::vector<std::string> shared_dims(const SubspaceCluster& a, const SubspaceCluster& b) {
  std::vector<std::string> shared;
  for (const auto& [dim, mean] : a.means) {
    if (b.means.contains(dim)) shared.push_back(dim);
  }
  natural_sort(shared);
  return shared;
}

std::vector<double> cluster_mean_vector(const SubspaceCluster& c, std::span<const std::string> dims) {
  std::vector<double> out;
  out.reserve(dims.size());
  for (const auto& dim : dims) {
    auto it = c.means.find(dim);
    if (it == c.means.end()) {
      throw std::invalid_argument("dimension '" + dim + "' is not in the subspace of cluster '" + c.id + "'");
    }
    out.push_back(it->second);
  }
  return out;
}

double similarity(const SubspaceCluster& a, const SubspaceCluster& b) {
  const auto shared = shared_dims(a, b);
  if (shared.empty()) return 0.0;
  const auto ma = cluster_mean_vector(a, shared);
  const auto mb = cluster_mean_vector(b, shared);
  double squared = 0.0;
  for (std::size_t i = 0; i < shared.size(); ++i) squared += (mb[i] - ma[i]) * (mb[i] - ma[i]);
  const double f = static_cast<double>(shared.size());
  const double dice = 2.0 * f / static_cast<double>(a.means.size() + b.means.size());
  return std::clamp(dice * (1.0 - squared / f), 0.0, 1.0);
}

SimilarityMatrix similarity_matrix(std::span<const SubspaceCluster> clusters, unsigned threads) {
  SimilarityMatrix sims;
  const std::size_t n = clusters.size();
  for (const auto& c : clusters) sims.ids.push_back(c.id);
  sims.values.assign(n * n, 0.0);

  auto fill_rows = [&](std::size_t first, std::size_t step) {
    for (std::size_t i = first; i < n; i += step) {
      sims.values[i * n + i] = 1.0;
      for (std::size_t j = i + 1; j < n; ++j) {
        const double s = similarity(clusters[i], clusters[j]);
        sims.values[i * n + j] = s;
        sims.values[j * n + i] = s;
      }
    }
  };
  threads = std::max(1U, std::min<unsigned>(threads, static_cast<unsigned>(std::max<std::size_t>(n, 1))));
  if (threads == 1) {
    fill_rows(0, 1);
  } else {
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < threads; ++t) pool.emplace_back(fill_rows, t, threads);
    for (auto& th : pool) th.join();
  }
  return sims;
}

std::string export_csv(const SimilarityMatrix& sims) {
  std::string out;
  csv::Row header{"cluster"};
  header.insert(header.end(), sims.ids.begin(), sims.ids.end());
  out += csv::format_row(header);
  for (std::size_t i = 0; i < sims.size(); ++i) {
    csv::Row row{sims.ids[i]};
    for (std::size_t j = 0; j < sims.size(); ++j) row.push_back(format_number(sims.at(i, j)));
    out += csv::format_row(row);
  }
  return out;
}

std::vector<SubspaceCluster> drop_similar(std::span<const SubspaceCluster> clusters, double threshold) {
  std::vector<SubspaceCluster> kept;
  for (const auto& c : clusters) {
    const bool redundant =
        std::any_of(kept.begin(), kept.end(), [&](const SubspaceCluster& k) { return similarity(k, c) > threshold; });
    if (!redundant) kept.push_back(c);
  }
  return kept;
}

// --- dendrogram ----------------------------------------------------------

Linkage parse_linkage(std::string_view text) {
  if (text == "average") return Linkage::kAverage;
  if (text == "single") return Linkage::kSingle;
  if (text == "complete") return Linkage::kComplete;
  throw ValidationError("linkage must be average, single or complete, got '" + std::string(text) + "'");
}

std::string to_string(Linkage linkage) {
  switch (linkage) {
    case Linkage::kAverage:
      return "average";
    case Linkage::kSingle:
      return "single";
    case Linkage::kComplete:
      return "complete";
  }
  return "average";
}

Dendrogram build_dendrogram(const SimilarityMatrix& sims, Linkage linkage) {
  const std::size_t n = sims.size();
  if (n < 2) throw ValidationError("a dendrogram needs at least 2 clusters");

  Dendrogram dendrogram;
  dendrogram.leaves = sims.ids;

  std::vector<double> dist(n * n);
  for (std::size_t i = 0; i < n * n; ++i) dist[i] = 1.0 - sims.values[i];

  struct Slot {
    bool active = true;
    std::size_t node = 0;
    std::size_t size = 1;
    std::size_t first_leaf = 0;
    double height = 0.0;
  };
  std::vector<Slot> slots(n);
  for (std::size_t i = 0; i < n; ++i) {
    slots[i].node = i;
    slots[i].first_leaf = i;
  }

  for (std::size_t step = 0; step + 1 < n; ++step) {
    std::size_t best_i = n;
    std::size_t best_j = n;
    double best = std::numeric_limits<double>::infinity();
    auto key = [&](std::size_t i, std::size_t j) {
      const auto a = slots[i].first_leaf;
      const auto b = slots[j].first_leaf;
      return std::pair(std::min(a, b), std::max(a, b));
    };
    for (std::size_t i = 0; i < n; ++i) {
      if (!slots[i].active) continue;
      for (std::size_t j = i + 1; j < n; ++j) {
        if (!slots[j].active) continue;
        const double d = dist[i * n + j];
        if (d < best || (d == best && key(i, j) < key(best_i, best_j))) {
          best = d;
          best_i = i;
          best_j = j;
        }
      }
    }

    auto& a = slots[best_i];
    auto& b = slots[best_j];
    const double height = std::max({best, a.height, b.height});
    const bool a_first = a.first_leaf < b.first_leaf;
    dendrogram.merges.push_back({a_first ? a.node : b.node, a_first ? b.node : a.node, height});

    for (std::size_t k = 0; k < n; ++k) {
      if (!slots[k].active || k == best_i || k == best_j) continue;
      const double da = dist[best_i * n + k];
      const double db = dist[best_j * n + k];
      double merged = 0.0;
      switch (linkage) {
        case Linkage::kAverage:
          merged = (static_cast<double>(a.size) * da + static_cast<double>(b.size) * db) /
                   static_cast<double>(a.size + b.size);
          break;
        case Linkage::kSingle:
          merged = std::min(da, db);
          break;
        case Linkage::kComplete:
          merged = std::max(da, db);
          break;
      }
      dist[best_i * n + k] = merged;
      dist[k * n + best_i] = merged;
    }
    a.node = n + step;
    a.size += b.size;
    a.first_leaf = std::min(a.first_leaf, b.first_leaf);
    a.height = height;
    b.active = false;
  }
  return dendrogram;
}

std::vector<std::vector<std::string>> cut_dendrogram(const Dendrogram& dendrogram, double height) {
  const std::size_t n = dendrogram.leaves.size();
  std::vector<std::size_t> parent(n);
  std::iota(parent.begin(), parent.end(), 0);
  auto find = [&](std::size_t x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  };
  // representative leaf of every node
  std::vector<std::size_t> rep(n + dendrogram.merges.size());
  std::iota(rep.begin(), rep.begin() + static_cast<std::ptrdiff_t>(n), 0);
  for (std::size_t k = 0; k < dendrogram.merges.size(); ++k) {
    const auto& m = dendrogram.merges[k];
    rep[n + k] = rep[m.left];
    if (m.height <= height) {
      const auto ra = find(rep[m.left]);
      const auto rb = find(rep[m.right]);
      if (ra != rb) parent[std::max(ra, rb)] = std::min(ra, rb);
    }
  }
  std::vector<std::vector<std::string>> sets;
  std::vector<std::size_t> set_of_root(n, n);
  for (std::size_t leaf = 0; leaf < n; ++leaf) {
    const auto root = find(leaf);
    if (set_of_root[root] == n) {
      set_of_root[root] = sets.size();
      sets.emplace_back();
    }
    sets[set_of_root[root]].push_back(dendrogram.leaves[leaf]);
  }
  return sets;
}

nlohmann::json to_json(const Dendrogram& dendrogram) {
  nlohmann::json merges = nlohmann::json::array();
  for (const auto& m : dendrogram.merges) {
    merges.push_back({{"left", m.left}, {"right", m.right}, {"height", m.height}});
  }
  return {{"leaves", dendrogram.leaves}, {"merges", std::move(merges)}};
}

Dendrogram dendrogram_from_json(const nlohmann::json& doc) {
  try {
    Dendrogram d;
    d.leaves = doc.at("leaves").get<std::vector<std::string>>();
    for (const auto& m : doc.at("merges")) {
      d.merges.push_back({m.at("left").get<std::size_t>(), m.at("right").get<std::size_t>(),
                          m.at("height").get<double>()});
    }
    if (!d.leaves.empty() && d.merges.size() + 1 != d.leaves.size()) {
      throw ValidationError("dendrogram must have exactly leaves - 1 merges");
    }
    return d;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed dendrogram JSON: ") + e.what());
  }
}

// --- merging -------------------------------------------------------------

ProtoPersona merge_clusters(std::span<const SubspaceCluster> clusters, const MergeOptions& options) {
  if (clusters.empty()) throw ValidationError("cannot merge an empty set of clusters");

  ProtoPersona persona;
  std::set<std::string> union_dims;
  for (const auto& c : clusters) {
    persona.source_ids.push_back(c.id);
    persona.members.insert(persona.members.end(), c.members.begin(), c.members.end());
    for (const auto& [dim, mean] : c.means) union_dims.insert(dim);
  }
  natural_sort(persona.members);
  persona.members.erase(std::unique(persona.members.begin(), persona.members.end()), persona.members.end());
  for (const auto& veto : options.vetoed_dims) {
    if (!union_dims.contains(veto)) {
      throw ValidationError("vetoed dimension '" + veto + "' is not in any source cluster's subspace");
    }
  }

  const std::size_t n = clusters.size();
  for (const auto& dim : union_dims) {
    if (std::find(options.vetoed_dims.begin(), options.vetoed_dims.end(), dim) != options.vetoed_dims.end()) {
      continue;
    }
    std::vector<double> values;
    for (const auto& c : clusters) {
      if (auto it = c.means.find(dim); it != c.means.end()) values.push_back(it->second);
    }
    if (2 * values.size() < n) continue;

    PersonaDimension pd;
    pd.id = dim;
    pd.support = values.size();
    const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
    pd.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
    if (*lo == *hi) {
      pd.mean = *lo;
    } else {
      double ss = 0.0;
      for (double v : values) ss += (v - pd.mean) * (v - pd.mean);
      pd.std_dev = std::sqrt(ss / static_cast<double>(values.size() - 1));
    }
    pd.conflicting = pd.std_dev > options.conflict_threshold;
    persona.dims.push_back(pd);
  }
  std::sort(persona.dims.begin(), persona.dims.end(), [](const PersonaDimension& a, const PersonaDimension& b) {
    if (a.support != b.support) return a.support > b.support;
    return natural_less(a.id, b.id);
  });
  persona.id = join(persona.source_ids, "+");
  persona.name = persona.id;
  return persona;
}

// --- reporting -----------------------------------------------------------

namespace {

const Dimension& find_label(std::span<const Dimension> labels, const std::string& id) {
  auto it = std::find_if(labels.begin(), labels.end(), [&](const Dimension& d) { return d.id == id; });
  if (it == labels.end()) throw ValidationError("no label for dimension '" + id + "'");
  return *it;
}

std::string lower_first(std::string text) {
  if (!text.empty() && text[0] >= 'A' && text[0] <= 'Z') text[0] = static_cast<char>(text[0] - 'A' + 'a');
  return text;
}

std::string clause_for(const Dimension& dim, double mean) {
  const bool has_extremes = !dim.left_extreme.empty() && !dim.right_extreme.empty();
  if (mean <= 0.33) return has_extremes ? dim.left_extreme : "low " + lower_first(dim.label);
  if (mean >= 0.67) return has_extremes ? dim.right_extreme : "high " + lower_first(dim.label);
  if (has_extremes) return "somewhere between " + dim.left_extreme + " and " + dim.right_extreme;
  return "moderate " + lower_first(dim.label);
}

}  // namespace

std::string describe(const ProtoPersona& persona, std::span<const Dimension> labels) {
  const std::string name = persona.name.empty() ? persona.id : persona.name;
  if (persona.dims.empty()) return name + ": no stable traits are shared across the source clusters.";
  std::vector<std::string> clauses;
  for (const auto& pd : persona.dims) {
    clauses.push_back(clause_for(find_label(labels, pd.id), pd.mean) + " (" + pd.id + ")");
  }
  std::string text = name + ": ";
  for (std::size_t i = 0; i < clauses.size(); ++i) {
    if (i > 0) text += i + 1 == clauses.size() ? " and " : ", ";
    text += clauses[i];
  }
  return text + ".";
}

Profile profile_of(const SubspaceCluster& cluster) { return {cluster.id, cluster.means}; }

Profile profile_of(const ProtoPersona& persona) {
  Profile p{persona.name.empty() ? persona.id : persona.name, {}};
  for (const auto& d : persona.dims) p.values[d.id] = d.mean;
  return p;
}

nlohmann::json radar_data(const Profile& a, const Profile& b, std::span<const Dimension> labels) {
  std::vector<std::string> axes;
  for (const auto& [dim, v] : a.values) axes.push_back(dim);
  for (const auto& [dim, v] : b.values) {
    if (!a.values.contains(dim)) axes.push_back(dim);
  }
  natural_sort(axes);

  nlohmann::json axis_docs = nlohmann::json::array();
  for (const auto& dim : axes) {
    auto it = std::find_if(labels.begin(), labels.end(), [&](const Dimension& d) { return d.id == dim; });
    nlohmann::json axis{{"dimension", dim}};
    if (it != labels.end()) {
      axis["label"] = it->label;
      axis["rim"] = it->right_extreme.empty() ? it->label : it->right_extreme;
      axis["centre"] = it->left_extreme;
    } else {
      axis["label"] = dim;
      axis["rim"] = dim;
      axis["centre"] = "";
    }
    axis_docs.push_back(std::move(axis));
  }

  auto series = [&](const Profile& p) {
    nlohmann::json values = nlohmann::json::array();
    nlohmann::json greyed = nlohmann::json::array();
    for (const auto& dim : axes) {
      auto it = p.values.find(dim);
      if (it == p.values.end()) {
        values.push_back(nullptr);
        greyed.push_back(true);
      } else {
        values.push_back(it->second);
        greyed.push_back(false);
      }
    }
    return nlohmann::json{{"id", p.id}, {"values", std::move(values)}, {"greyed", std::move(greyed)}};
  };
  return {{"axes", std::move(axis_docs)}, {"series", nlohmann::json::array({series(a), series(b)})}};
}

nlohmann::json to_json(const ProtoPersona& persona) {
  nlohmann::json dims = nlohmann::json::array();
  for (const auto& d : persona.dims) {
    dims.push_back({{"id", d.id},
                    {"mean", d.mean},
                    {"std_dev", d.std_dev},
                    {"support", d.support},
                    {"conflicting", d.conflicting}});
  }
  return {{"id", persona.id},
          {"name", persona.name},
          {"source_ids", persona.source_ids},
          {"members", persona.members},
          {"dims", std::move(dims)},
          {"description", persona.description}};
}

std::string persona_report_markdown(std::span<const ProtoPersona> personas, std::span<const Dimension> labels) {
  std::string out = "# Proto-personas\n";
  for (const auto& p : personas) {
    out += "\n## " + (p.name.empty() ? p.id : p.name) + "\n\n";
    out += "Source clusters: " + join(p.source_ids, ", ") + "  \n";
    out += "Members: " + join(p.members, ", ") + "\n\n";
    out += (p.description.empty() ? describe(p, labels) : p.description) + "\n\n";
    if (!p.dims.empty()) {
      out += "| Dimension | Mean | Std. dev. | Support | Flag |\n";
      out += "|---|---:|---:|---:|---|\n";
      for (const auto& d : p.dims) {
        auto it = std::find_if(labels.begin(), labels.end(), [&](const Dimension& l) { return l.id == d.id; });
        const std::string label = it == labels.end() ? d.id : d.id + ". " + it->label;
        out += "| " + label + " | " + format_fixed(d.mean, 3) + " | " + format_fixed(d.std_dev, 3) + " | " +
               std::to_string(d.support) + "/" + std::to_string(p.source_ids.size()) + " | " +
               (d.conflicting ? "CONFLICT" : "") + " |\n";
      }
      out += "\n";
    }
    out += "Goals: _to be written by the persona designer._\n";
  }
  return out;
}

}  // namespace forge
