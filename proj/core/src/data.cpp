#include "lossada/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <random>
#include <set>
#include <sstream>

namespace lossada {

namespace {

// Independent generator streams derived from one user seed.
std::mt19937_64 stream(std::uint64_t seed, std::uint64_t salt) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(salt)};
  return std::mt19937_64(seq);
}

struct Point {
  double x = 0.0;
  double y = 0.0;
  std::size_t label = 0;
};

std::vector<Point> draw_moons(std::size_t n, double noise_sd, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> angle(0.0, std::numbers::pi);
  std::normal_distribution<double> noise(0.0, 1.0);
  std::vector<Point> pts;
  pts.reserve(n);
  const std::size_t n_outer = n - n / 2;
  for (std::size_t i = 0; i < n; ++i) {
    const double t = angle(rng);
    Point p;
    if (i < n_outer) {
      p = {std::cos(t), std::sin(t), 0};
    } else {
      p = {1.0 - std::cos(t), 0.5 - std::sin(t), 1};
    }
    p.x += noise_sd * noise(rng);
    p.y += noise_sd * noise(rng);
    pts.push_back(p);
  }
  return pts;
}

Dataset to_dataset(const std::vector<Point>& pts, Domain domain, std::int64_t first_id) {
  Dataset out;
  out.reserve(pts.size());
  std::int64_t id = first_id;
  for (const Point& p : pts) {
    out.push_back(Sample{id++, {p.x, p.y}, p.label, domain});
  }
  return out;
}

bool parse_double(std::string_view token, double& out) {
  if (token.empty()) return false;
  const char* first = token.data();
  const char* last = token.data() + token.size();
  if (*first == '+') ++first;
  const auto [ptr, ec] = std::from_chars(first, last, out);
  return ec == std::errc() && ptr == last;
}

std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
}

}  // namespace

DomainPair gen_two_moons_shift(const TwoMoonsParams& p) {
  if (p.n_per_domain < 2) throw ConfigError("n_per_domain", "must be at least 2");
  if (!(p.noise_sd >= 0.0)) throw ConfigError("noise_sd", "must be non-negative");
  if (!std::isfinite(p.rotation_deg)) throw ConfigError("rotation_deg", "must be finite");
  if (!std::isfinite(p.translation_x) || !std::isfinite(p.translation_y)) {
    throw ConfigError("translation", "must be finite");
  }

  std::mt19937_64 src_rng = stream(p.seed, 1);
  std::mt19937_64 tgt_rng = stream(p.seed, 2);
  std::vector<Point> src = draw_moons(p.n_per_domain, p.noise_sd, src_rng);
  std::vector<Point> tgt = draw_moons(p.n_per_domain, p.noise_sd, tgt_rng);

  constexpr double cx = 0.5;
  constexpr double cy = 0.25;
  const double theta = p.rotation_deg * std::numbers::pi / 180.0;
  const double c = std::cos(theta);
  const double s = std::sin(theta);
  for (Point& q : tgt) {
    const double dx = q.x - cx;
    const double dy = q.y - cy;
    q.x = cx + c * dx - s * dy + p.translation_x;
    q.y = cy + s * dx + c * dy + p.translation_y;
  }

  DomainPair out;
  out.num_classes = 2;
  out.num_features = 2;
  out.source = to_dataset(src, Domain::kSource, 0);
  out.target = to_dataset(tgt, Domain::kTargetUnlabeled, static_cast<std::int64_t>(src.size()));
  return out;
}

std::vector<std::size_t> apportion(std::span<const double> weights, std::size_t total) {
  if (weights.empty()) throw ConfigError("target_weights", "must not be empty");
  double wsum = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0) || !std::isfinite(w)) throw ConfigError("target_weights", "must be non-negative");
    wsum += w;
  }
  if (!(wsum > 0.0)) throw ConfigError("target_weights", "must not all be zero");

  std::vector<std::size_t> counts(weights.size());
  std::vector<std::pair<double, std::size_t>> remainders;
  std::size_t assigned = 0;
  for (std::size_t k = 0; k < weights.size(); ++k) {
    const double exact = weights[k] / wsum * static_cast<double>(total);
    counts[k] = static_cast<std::size_t>(std::floor(exact));
    assigned += counts[k];
    remainders.emplace_back(exact - std::floor(exact), k);
  }
  std::stable_sort(remainders.begin(), remainders.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t i = 0; assigned < total; ++i, ++assigned) ++counts[remainders[i].second];
  return counts;
}

DomainPair gen_blobs_shift(const BlobsParams& p) {
  if (p.num_classes < 2) throw ConfigError("num_classes", "must be at least 2");
  if (p.n_per_class < 1) throw ConfigError("n_per_class", "must be positive");
  if (!(p.class_spacing > 0.0)) throw ConfigError("class_spacing", "must be positive");
  if (!(p.cluster_sd >= 0.0)) throw ConfigError("cluster_sd", "must be non-negative");
  if (!p.target_weights.empty() && p.target_weights.size() != p.num_classes) {
    throw ConfigError("target_weights", "needs one weight per class");
  }

  const std::size_t k = p.num_classes;
  std::vector<std::size_t> tgt_counts(k, p.n_per_class);
  if (!p.target_weights.empty()) tgt_counts = apportion(p.target_weights, k * p.n_per_class);

  auto draw = [&](std::mt19937_64& rng, const std::vector<std::size_t>& counts, double sx,
                  double sy) {
    std::normal_distribution<double> noise(0.0, 1.0);
    std::vector<Point> pts;
    for (std::size_t c = 0; c < k; ++c) {
      const double a = 2.0 * std::numbers::pi * static_cast<double>(c) / static_cast<double>(k);
      const double mx = p.class_spacing * std::cos(a) + sx;
      const double my = p.class_spacing * std::sin(a) + sy;
      for (std::size_t i = 0; i < counts[c]; ++i) {
        const double x = mx + p.cluster_sd * noise(rng);
        const double y = my + p.cluster_sd * noise(rng);
        pts.push_back({x, y, c});
      }
    }
    return pts;
  };

  std::mt19937_64 src_rng = stream(p.seed, 3);
  std::mt19937_64 tgt_rng = stream(p.seed, 4);
  const std::vector<Point> src = draw(src_rng, std::vector<std::size_t>(k, p.n_per_class), 0.0, 0.0);
  const std::vector<Point> tgt = draw(tgt_rng, tgt_counts, p.shift_x, p.shift_y);

  DomainPair out;
  out.num_classes = k;
  out.num_features = 2;
  out.source = to_dataset(src, Domain::kSource, 0);
  out.target = to_dataset(tgt, Domain::kTargetUnlabeled, static_cast<std::int64_t>(src.size()));
  return out;
}

Dataset load_csv(const std::filesystem::path& path, const CsvSchema& schema) {
  using Kind = DataError::Kind;
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(Kind::kMissingFile, 0, "cannot open dataset " + path.string());

  Dataset out;
  std::string line;
  std::size_t line_no = 0;
  const std::size_t expected_cols = schema.num_features + 2;
  bool header_seen = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const std::vector<std::string_view> cols = split_commas(line);
    if (!header_seen) {
      header_seen = true;
      if (cols.size() != expected_cols) {
        throw DataError(Kind::kBadColumnCount, line_no,
                        "header has " + std::to_string(cols.size()) + " columns, schema expects " +
                            std::to_string(expected_cols));
      }
      for (std::size_t i = 0; i < schema.num_features; ++i) {
        if (cols[i] != "f" + std::to_string(i)) {
          throw DataError(Kind::kBadHeader, line_no, "expected column f" + std::to_string(i));
        }
      }
      if (cols[expected_cols - 2] != "label" || cols[expected_cols - 1] != "domain") {
        throw DataError(Kind::kBadHeader, line_no, "last columns must be label,domain");
      }
      continue;
    }
    if (cols.size() != expected_cols) {
      throw DataError(Kind::kBadColumnCount, line_no,
                      "row has " + std::to_string(cols.size()) + " columns, expected " +
                          std::to_string(expected_cols));
    }
    Sample s;
    s.id = static_cast<std::int64_t>(out.size());
    s.features.resize(schema.num_features);
    for (std::size_t i = 0; i < schema.num_features; ++i) {
      if (!parse_double(cols[i], s.features[i]) || !std::isfinite(s.features[i])) {
        throw DataError(Kind::kNonNumeric, line_no,
                        "feature f" + std::to_string(i) + " is not a finite number: '" +
                            std::string(cols[i]) + "'");
      }
    }
    const std::string_view label_tok = cols[expected_cols - 2];
    std::size_t label = 0;
    const auto [ptr, ec] = std::from_chars(label_tok.data(), label_tok.data() + label_tok.size(), label);
    if (label_tok.empty() || ec != std::errc() || ptr != label_tok.data() + label_tok.size()) {
      throw DataError(Kind::kBadLabel, line_no, "label is not a class index: '" + std::string(label_tok) + "'");
    }
    s.label = label;
    const std::string_view domain = cols[expected_cols - 1];
    if (domain == "source") {
      s.domain = Domain::kSource;
    } else if (domain == "target") {
      s.domain = Domain::kTargetUnlabeled;
    } else {
      throw DataError(Kind::kUnknownDomain, line_no, "unknown domain '" + std::string(domain) + "'");
    }
    out.push_back(std::move(s));
  }
  return out;
}

void write_csv(const std::filesystem::path& path, std::span<const Sample> samples) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open for writing: " + path.string());
  const std::size_t d = samples.empty() ? 0 : samples.front().features.size();
  for (std::size_t i = 0; i < d; ++i) out << 'f' << i << ',';
  out << "label,domain\n";
  char buf[32];
  for (const Sample& s : samples) {
    if (s.features.size() != d) throw DimensionError("write_csv: ragged feature vectors");
    if (!s.label) throw ContractError("write_csv: sample " + std::to_string(s.id) + " has no label");
    for (double v : s.features) {
      std::snprintf(buf, sizeof(buf), "%.17g", v);
      out << buf << ',';
    }
    out << *s.label << ',' << (s.domain == Domain::kSource ? "source" : "target") << '\n';
  }
}

DomainPair split_domains(const Dataset& data) {
  DomainPair out;
  std::size_t max_label = 0;
  for (const Sample& s : data) {
    if (s.label) max_label = std::max(max_label, *s.label);
    (s.domain == Domain::kSource ? out.source : out.target).push_back(s);
  }
  out.num_classes = std::max<std::size_t>(2, max_label + 1);
  out.num_features = data.empty() ? 0 : data.front().features.size();
  return out;
}

PoolState::PoolState(const DomainPair& data, double budget_percent)
    : num_classes_(data.num_classes), num_features_(data.num_features) {
  if (!(budget_percent >= 0.0 && budget_percent <= 100.0)) {
    throw ConfigError("budget_percent", "must lie in [0, 100]");
  }
  std::set<std::int64_t> seen;
  for (const Sample& s : data.source) {
    if (!s.label) throw ContractError("source sample " + std::to_string(s.id) + " has no label");
    if (!seen.insert(s.id).second) throw ContractError("duplicate sample id " + std::to_string(s.id));
    Sample copy = s;
    copy.domain = Domain::kSource;
    source_.push_back(std::move(copy));
  }
  for (const Sample& s : data.target) {
    if (!s.label) throw ContractError("target sample " + std::to_string(s.id) + " has no oracle label");
    if (!seen.insert(s.id).second) throw ContractError("duplicate sample id " + std::to_string(s.id));
    oracle_.emplace(s.id, *s.label);
    Sample copy = s;
    copy.label.reset();
    copy.domain = Domain::kTargetUnlabeled;
    unlabeled_.push_back(std::move(copy));
  }
  budget_ = static_cast<std::size_t>(
      std::floor(budget_percent * static_cast<double>(unlabeled_.size()) / 100.0 + 1e-9));
}

void PoolState::annotate(std::span<const std::int64_t> ids) {
  using Kind = AnnotationError::Kind;
  std::set<std::int64_t> requested;
  for (std::int64_t id : ids) {
    if (!requested.insert(id).second) {
      throw AnnotationError(Kind::kDuplicateId, "id " + std::to_string(id) + " requested twice");
    }
  }
  std::set<std::int64_t> available;
  for (const Sample& s : unlabeled_) available.insert(s.id);
  for (std::int64_t id : ids) {
    if (!available.contains(id)) {
      throw AnnotationError(Kind::kUnknownId,
                            "id " + std::to_string(id) + " is not in the unlabeled target pool");
    }
  }
  if (spent_ + ids.size() > budget_) {
    throw AnnotationError(Kind::kBudgetExceeded,
                          "annotating " + std::to_string(ids.size()) + " samples exceeds budget (" +
                              std::to_string(spent_) + " of " + std::to_string(budget_) + " spent)");
  }
  // Labeled order follows the request order.
  std::map<std::int64_t, Sample> moved;
  Dataset keep;
  keep.reserve(unlabeled_.size() - ids.size());
  for (Sample& s : unlabeled_) {
    if (requested.contains(s.id)) {
      moved.emplace(s.id, std::move(s));
    } else {
      keep.push_back(std::move(s));
    }
  }
  for (std::int64_t id : ids) {
    Sample s = std::move(moved.at(id));
    s.label = oracle_.at(id);
    s.domain = Domain::kTargetLabeled;
    labeled_.push_back(std::move(s));
  }
  unlabeled_ = std::move(keep);
  spent_ += ids.size();
}

std::size_t PoolState::oracle_label(std::int64_t id) const {
  const auto it = oracle_.find(id);
  if (it == oracle_.end()) throw ContractError("no target sample with id " + std::to_string(id));
  return it->second;
}

std::vector<std::size_t> PoolState::unlabeled_truth() const {
  std::vector<std::size_t> out;
  out.reserve(unlabeled_.size());
  for (const Sample& s : unlabeled_) out.push_back(oracle_.at(s.id));
  return out;
}

Dataset PoolState::evaluation_set() const {
  Dataset out = labeled_;
  for (const Sample& s : unlabeled_) {
    Sample copy = s;
    copy.label = oracle_.at(s.id);
    out.push_back(std::move(copy));
  }
  return out;
}

Tensor feature_matrix(std::span<const Sample> samples) {
  const std::size_t d = samples.empty() ? 0 : samples.front().features.size();
  Tensor out({samples.size(), d});
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (samples[i].features.size() != d) throw DimensionError("feature_matrix: ragged samples");
    std::copy(samples[i].features.begin(), samples[i].features.end(),
              out.values().begin() + static_cast<std::ptrdiff_t>(i * d));
  }
  return out;
}

Tensor feature_matrix(std::span<const Sample> samples, std::span<const std::size_t> rows) {
  const std::size_t d = samples.empty() ? 0 : samples.front().features.size();
  Tensor out({rows.size(), d});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const Sample& s = samples[rows[i]];
    if (s.features.size() != d) throw DimensionError("feature_matrix: ragged samples");
    std::copy(s.features.begin(), s.features.end(),
              out.values().begin() + static_cast<std::ptrdiff_t>(i * d));
  }
  return out;
}

std::vector<std::size_t> labels_of(std::span<const Sample> samples) {
  std::vector<std::size_t> out;
  out.reserve(samples.size());
  for (const Sample& s : samples) {
    if (!s.label) throw ContractError("sample " + std::to_string(s.id) + " has no label");
    out.push_back(*s.label);
  }
  return out;
}

}  // namespace lossada
