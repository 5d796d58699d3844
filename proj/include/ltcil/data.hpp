#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <istream>
#include <map>
#include <numeric>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "ltcil/error.hpp"
#include "ltcil/matrix.hpp"

namespace ltcil {

/// Per-class training counts of a long-tailed profile, indexed by class rank
/// (rank 0 is the largest class).
struct LongTailProfile {
  std::vector<std::size_t> counts;
  std::size_t n_max = 0;
  double rho = 1.0;

  double realized_ratio() const {
    const auto [lo, hi] = std::minmax_element(counts.begin(), counts.end());
    return static_cast<double>(*hi) / static_cast<double>(*lo);
  }

  bool operator==(const LongTailProfile&) const = default;
};

/// n_k = round(n_max * rho^(-k/(K-1))) for k = 0..K-1.
inline LongTailProfile build_profile(std::size_t num_classes, std::size_t n_max, double rho) {
  if (num_classes < 2) throw ConfigError("build_profile: num_classes must be >= 2");
  if (n_max < num_classes) throw ConfigError("build_profile: n_max must be >= num_classes");
  if (!(rho >= 1.0) || !std::isfinite(rho)) throw ConfigError("build_profile: rho must be a finite value >= 1");
  LongTailProfile p{std::vector<std::size_t>(num_classes), n_max, rho};
  const double denom = static_cast<double>(num_classes - 1);
  for (std::size_t k = 0; k < num_classes; ++k) {
    const double n = std::round(static_cast<double>(n_max) * std::pow(rho, -static_cast<double>(k) / denom));
    if (n < 1.0) {
      throw ConfigError("build_profile: class rank " + std::to_string(k) + " would have zero samples");
    }
    p.counts[k] = static_cast<std::size_t>(n);
  }
  return p;
}

inline nlohmann::json profile_to_json(std::span<const std::size_t> class_counts) {
  nlohmann::json j = nlohmann::json::object();
  for (std::size_t c = 0; c < class_counts.size(); ++c) j[std::to_string(c)] = class_counts[c];
  return j;
}

/// Inverse of profile_to_json; class ids must be 0..K-1.
inline std::vector<std::size_t> profile_counts_from_json(const nlohmann::json& j) {
  std::map<std::size_t, std::size_t> by_id;
  for (const auto& [key, value] : j.items()) by_id[std::stoull(key)] = value.get<std::size_t>();
  std::vector<std::size_t> out;
  for (const auto& [id, count] : by_id) {
    if (id != out.size()) throw IoError("profile JSON: class ids are not contiguous from 0");
    out.push_back(count);
  }
  return out;
}

struct SyntheticSpec {
  std::size_t num_classes = 20;
  std::size_t input_dim = 32;
  double cluster_std = 0.25;
  std::size_t test_per_class = 50;
  std::uint64_t seed = 0;
  /// When set, the rank -> class assignment is a seeded permutation instead of
  /// class id == rank.
  bool shuffle_class_ranks = false;
};

struct LabeledSet {
  DenseMatrix inputs;
  std::vector<std::size_t> labels;

  std::size_t size() const noexcept { return labels.size(); }

  LabeledSet subset(std::span<const std::size_t> rows) const {
    LabeledSet out{inputs.gather_rows(rows), {}};
    out.labels.reserve(rows.size());
    for (std::size_t r : rows) out.labels.push_back(labels[r]);
    return out;
  }

  /// Samples whose label is in `classes`, in original order.
  LabeledSet restrict_to(std::span<const std::size_t> classes) const {
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (std::find(classes.begin(), classes.end(), labels[i]) != classes.end()) rows.push_back(i);
    }
    return subset(rows);
  }

  bool operator==(const LabeledSet&) const = default;
};

struct Dataset {
  std::size_t num_classes = 0;
  LabeledSet train;
  LabeledSet test;

  std::vector<std::size_t> train_counts() const {
    std::vector<std::size_t> counts(num_classes, 0);
    for (std::size_t y : train.labels) ++counts[y];
    return counts;
  }

  bool operator==(const Dataset&) const = default;
};

/// Gaussian clusters around seeded random unit-norm class means. Training
/// counts follow the profile; the test split holds test_per_class fresh draws
/// for every class.
inline Dataset generate_dataset(const SyntheticSpec& spec, const LongTailProfile& profile) {
  if (spec.num_classes < 2) throw ConfigError("generate_dataset: num_classes must be >= 2");
  if (spec.input_dim == 0) throw ConfigError("generate_dataset: input_dim must be positive");
  if (!(spec.cluster_std > 0.0)) throw ConfigError("generate_dataset: cluster_std must be positive");
  if (spec.test_per_class == 0) throw ConfigError("generate_dataset: test_per_class must be positive");
  if (profile.counts.size() != spec.num_classes) {
    throw ConfigError("generate_dataset: profile has " + std::to_string(profile.counts.size()) +
                      " entries for " + std::to_string(spec.num_classes) + " classes");
  }
  const std::size_t K = spec.num_classes;
  const std::size_t d = spec.input_dim;
  Rng rng(spec.seed);
  std::normal_distribution<double> normal(0.0, 1.0);

  std::vector<std::size_t> rank_of_class(K);
  std::iota(rank_of_class.begin(), rank_of_class.end(), 0);
  if (spec.shuffle_class_ranks) {
    Rng perm_rng(derive_seed(spec.seed, 7));
    std::shuffle(rank_of_class.begin(), rank_of_class.end(), perm_rng);
  }

  DenseMatrix means(K, d);
  for (std::size_t c = 0; c < K; ++c) {
    auto m = means.row(c);
    for (double& v : m) v = normal(rng);
    const double n = l2_norm(m);
    for (double& v : m) v /= n;
  }

  auto fill = [&](const std::vector<std::size_t>& per_class) {
    const std::size_t total = std::accumulate(per_class.begin(), per_class.end(), std::size_t{0});
    LabeledSet set{DenseMatrix(total, d), {}};
    set.labels.reserve(total);
    std::size_t r = 0;
    for (std::size_t c = 0; c < K; ++c) {
      for (std::size_t s = 0; s < per_class[c]; ++s, ++r) {
        auto x = set.inputs.row(r);
        auto m = means.row(c);
        for (std::size_t j = 0; j < d; ++j) x[j] = m[j] + spec.cluster_std * normal(rng);
        set.labels.push_back(c);
      }
    }
    return set;
  };

  std::vector<std::size_t> train_counts(K);
  for (std::size_t c = 0; c < K; ++c) train_counts[c] = profile.counts[rank_of_class[c]];
  Dataset ds;
  ds.num_classes = K;
  ds.train = fill(train_counts);
  ds.test = fill(std::vector<std::size_t>(K, spec.test_per_class));
  return ds;
}

enum class Protocol { Shuffled, InOrdered };
enum class Scenario { FromScratch, FromHalf };

inline std::string_view to_string(Protocol p) { return p == Protocol::Shuffled ? "shuffled" : "in_ordered"; }
inline std::string_view to_string(Scenario s) { return s == Scenario::FromScratch ? "from_scratch" : "from_half"; }

inline Protocol parse_protocol(std::string_view s) {
  if (s == "shuffled") return Protocol::Shuffled;
  if (s == "in_ordered") return Protocol::InOrdered;
  throw ConfigError("unknown protocol '" + std::string(s) + "' (expected shuffled|in_ordered)");
}

inline Scenario parse_scenario(std::string_view s) {
  if (s == "from_scratch") return Scenario::FromScratch;
  if (s == "from_half") return Scenario::FromHalf;
  throw ConfigError("unknown scenario '" + std::string(s) + "' (expected from_scratch|from_half)");
}

struct Task {
  std::vector<std::size_t> classes;
  LabeledSet train;
};

/// Tasks in presentation order plus everything needed to evaluate the run.
struct TaskStream {
  std::vector<Task> tasks;
  Protocol protocol = Protocol::Shuffled;
  Scenario scenario = Scenario::FromScratch;
  std::size_t num_tasks = 0;  // N as requested; FromHalf streams hold N + 1 tasks
  std::size_t num_classes = 0;
  std::vector<std::size_t> class_train_counts;
  LabeledSet test;

  /// Class ids in order of first appearance.
  std::vector<std::size_t> class_order() const {
    std::vector<std::size_t> order;
    for (const auto& t : tasks) order.insert(order.end(), t.classes.begin(), t.classes.end());
    return order;
  }
};

namespace detail {

inline std::vector<std::vector<std::size_t>> chunk_evenly(std::span<const std::size_t> ids, std::size_t n) {
  std::vector<std::vector<std::size_t>> chunks(n);
  const std::size_t base = ids.size() / n;
  const std::size_t extra = ids.size() % n;
  std::size_t pos = 0;
  for (std::size_t t = 0; t < n; ++t) {
    const std::size_t len = base + (t < extra ? 1 : 0);
    chunks[t].assign(ids.begin() + pos, ids.begin() + pos + len);
    pos += len;
  }
  return chunks;
}

}  // namespace detail

/// Splits the dataset into tasks. InOrdered sorts classes by descending
/// training count (ties by id); Shuffled applies a seeded permutation.
/// FromHalf puts ceil(K/2) classes in the first task and splits the rest into
/// N tasks; FromScratch splits all K into N tasks whose sizes differ by <= 1.
inline TaskStream split_tasks(const Dataset& ds, std::size_t num_tasks, Protocol protocol,
                              Scenario scenario, std::uint64_t seed) {
  const std::size_t K = ds.num_classes;
  if (num_tasks == 0) throw ConfigError("split_tasks: num_tasks must be positive");
  const std::size_t first = (K + 1) / 2;
  const std::size_t incremental = scenario == Scenario::FromHalf ? K - first : K;
  if (num_tasks > incremental) {
    throw ConfigError("split_tasks: " + std::to_string(num_tasks) + " tasks but only " +
                      std::to_string(incremental) + " classes to distribute");
  }

  const auto counts = ds.train_counts();
  std::vector<std::size_t> order(K);
  std::iota(order.begin(), order.end(), 0);
  if (protocol == Protocol::InOrdered) {
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return counts[a] > counts[b]; });
  } else {
    Rng rng(seed);
    std::shuffle(order.begin(), order.end(), rng);
  }

  std::vector<std::vector<std::size_t>> groups;
  std::span<const std::size_t> rest(order);
  if (scenario == Scenario::FromHalf) {
    groups.emplace_back(order.begin(), order.begin() + first);
    rest = rest.subspan(first);
  }
  for (auto& g : detail::chunk_evenly(rest, num_tasks)) groups.push_back(std::move(g));

  TaskStream stream;
  stream.protocol = protocol;
  stream.scenario = scenario;
  stream.num_tasks = num_tasks;
  stream.num_classes = K;
  stream.class_train_counts = counts;
  stream.test = ds.test;
  for (auto& g : groups) {
    Task t;
    t.train = ds.train.restrict_to(g);
    t.classes = std::move(g);
    stream.tasks.push_back(std::move(t));
  }
  return stream;
}

// CSV layout: sample_id,class_id,split,x0..x{d-1}. Reals are written in
// shortest round-trip form.
namespace detail {

inline void append_double(std::string& out, double v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  out.append(buf, res.ptr);
}

inline double parse_double(std::string_view s) {
  double v = 0.0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw IoError("cannot parse number '" + std::string(s) + "'");
  }
  return v;
}

inline std::size_t parse_count(std::string_view s) {
  std::size_t v = 0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw IoError("cannot parse integer '" + std::string(s) + "'");
  }
  return v;
}

inline std::vector<std::string_view> split_fields(std::string_view line, char sep = ',') {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find(sep, start);
    out.push_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

}  // namespace detail

inline void write_dataset_csv(std::ostream& os, const Dataset& ds) {
  const std::size_t d = ds.train.inputs.cols();
  std::string line = "sample_id,class_id,split";
  for (std::size_t j = 0; j < d; ++j) line += ",x" + std::to_string(j);
  os << line << '\n';
  std::size_t id = 0;
  auto emit = [&](const LabeledSet& set, std::string_view split) {
    for (std::size_t i = 0; i < set.size(); ++i) {
      line = std::to_string(id++) + ',' + std::to_string(set.labels[i]) + ',' + std::string(split);
      for (double v : set.inputs.row(i)) {
        line += ',';
        detail::append_double(line, v);
      }
      os << line << '\n';
    }
  };
  emit(ds.train, "train");
  emit(ds.test, "test");
  if (!os) throw IoError("dataset CSV: write failed");
}

inline Dataset read_dataset_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw IoError("dataset CSV: empty input");
  const auto header = detail::split_fields(line);
  if (header.size() < 4 || header[0] != "sample_id" || header[1] != "class_id" || header[2] != "split") {
    throw IoError("dataset CSV: unexpected header");
  }
  const std::size_t d = header.size() - 3;
  std::vector<double> train_x, test_x;
  Dataset ds;
  std::size_t max_class = 0;
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto f = detail::split_fields(line);
    if (f.size() != d + 3) throw IoError("dataset CSV: wrong field count on line " + std::to_string(lineno));
    const std::size_t cls = detail::parse_count(f[1]);
    max_class = std::max(max_class, cls);
    const bool is_train = f[2] == "train";
    if (!is_train && f[2] != "test") throw IoError("dataset CSV: bad split on line " + std::to_string(lineno));
    auto& xs = is_train ? train_x : test_x;
    (is_train ? ds.train : ds.test).labels.push_back(cls);
    for (std::size_t j = 0; j < d; ++j) xs.push_back(detail::parse_double(f[3 + j]));
  }
  ds.num_classes = max_class + 1;
  ds.train.inputs = DenseMatrix(ds.train.labels.size(), d, std::move(train_x));
  ds.test.inputs = DenseMatrix(ds.test.labels.size(), d, std::move(test_x));
  return ds;
}

}  // namespace ltcil
