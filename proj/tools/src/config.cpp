#include "config.hpp"

#include <charconv>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <boost/algorithm/string/trim.hpp>
#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

namespace lossada::cli {

namespace {

namespace pt = boost::property_tree;

// Typed access to one INI section; every key read is marked so leftovers can
// be reported as unknown.
class Section {
 public:
  Section(std::string name, const pt::ptree* tree) : name_(std::move(name)), tree_(tree) {}

  bool has(const std::string& key) const { return tree_ && tree_->find(key) != tree_->not_found(); }

  std::string raw(const std::string& key) {
    seen_.insert(key);
    return boost::algorithm::trim_copy(tree_->get<std::string>(key));
  }

  std::string field(const std::string& key) const { return name_ + "." + key; }

  template <class T>
  void read(const std::string& key, T& out) {
    if (!has(key)) return;
    out = parse<T>(key, raw(key));
  }

  template <class T>
  void read_list(const std::string& key, std::vector<T>& out) {
    if (!has(key)) return;
    out.clear();
    std::stringstream ss(raw(key));
    std::string item;
    while (std::getline(ss, item, ',')) {
      boost::algorithm::trim(item);
      if (item.empty()) continue;
      out.push_back(parse<T>(key, item));
    }
  }

  void reject_unknown() const {
    if (!tree_) return;
    for (const auto& [key, _] : *tree_) {
      if (!seen_.count(key)) throw ConfigError(field(key), "unknown key");
    }
  }

 private:
  template <class T>
  T parse(const std::string& key, const std::string& text) const {
    if constexpr (std::is_same_v<T, std::string>) {
      return text;
    } else if constexpr (std::is_same_v<T, bool>) {
      if (text == "true" || text == "1" || text == "yes" || text == "on") return true;
      if (text == "false" || text == "0" || text == "no" || text == "off") return false;
      throw ConfigError(field(key), "expected a boolean, got '" + text + "'");
    } else if constexpr (std::is_integral_v<T>) {
      T v{};
      const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
      if (ec != std::errc() || ptr != text.data() + text.size()) {
        throw ConfigError(field(key), "expected a non-negative integer, got '" + text + "'");
      }
      return v;
    } else {
      std::size_t used = 0;
      double v = 0;
      try {
        v = std::stod(text, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used != text.size() || text.empty()) {
        throw ConfigError(field(key), "expected a number, got '" + text + "'");
      }
      return v;
    }
  }

  std::string name_;
  const pt::ptree* tree_;
  std::set<std::string> seen_;
};

Generator generator_from_string(const std::string& s) {
  if (s == "two_moons") return Generator::kTwoMoons;
  if (s == "blobs") return Generator::kBlobs;
  if (s == "csv") return Generator::kCsv;
  throw ConfigError("dataset.generator", "unknown generator '" + s + "' (two_moons, blobs, csv)");
}

SweepAxis axis_from_string(const std::string& s) {
  static const std::map<std::string, SweepAxis> names = {
      {"batch_size", SweepAxis::kBatchSize}, {"xi", SweepAxis::kXi},
      {"predictor_dim", SweepAxis::kPredictorDim}, {"gamma", SweepAxis::kGamma},
      {"budget", SweepAxis::kBudget}, {"budget_gamma", SweepAxis::kBudgetGamma}};
  const auto it = names.find(s);
  if (it == names.end()) throw ConfigError("sweep.axis", "unknown axis '" + s + "'");
  return it->second;
}

S2Labels labels_from_string(const std::string& s) {
  if (s == "pseudo") return S2Labels::kPseudo;
  if (s == "ground_truth") return S2Labels::kGroundTruth;
  throw ConfigError("run.s2_labels", "expected pseudo or ground_truth, got '" + s + "'");
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  const std::filesystem::path path(p);
  return path.is_absolute() || base.empty() ? path : base / path;
}

}  // namespace

const char* to_string(SweepAxis a) {
  switch (a) {
    case SweepAxis::kBatchSize: return "batch_size";
    case SweepAxis::kXi: return "xi";
    case SweepAxis::kPredictorDim: return "predictor_dim";
    case SweepAxis::kGamma: return "gamma";
    case SweepAxis::kBudget: return "budget";
    case SweepAxis::kBudgetGamma: return "budget_gamma";
  }
  return "?";
}

const char* to_string(PlotKind k) {
  switch (k) {
    case PlotKind::kBudgetCurve: return "budget_curve";
    case PlotKind::kPseudoAcc: return "pseudo_acc";
    case PlotKind::kMisprediction: return "misprediction";
    case PlotKind::kAblationBars: return "ablation_bars";
  }
  return "?";
}

PlotKind plot_kind_from_string(const std::string& s) {
  for (PlotKind k : {PlotKind::kBudgetCurve, PlotKind::kPseudoAcc, PlotKind::kMisprediction,
                     PlotKind::kAblationBars}) {
    if (s == to_string(k)) return k;
  }
  throw ConfigError("plot.kind", "unknown plot kind '" + s + "'");
}

std::vector<std::uint64_t> parse_seed_list(const std::string& text) {
  std::vector<std::uint64_t> seeds;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    boost::algorithm::trim(item);
    if (item.empty()) continue;
    std::uint64_t v = 0;
    const auto [ptr, ec] = std::from_chars(item.data(), item.data() + item.size(), v);
    if (ec != std::errc() || ptr != item.data() + item.size()) {
      throw ConfigError("seeds", "expected a comma-separated list of integers, got '" + text + "'");
    }
    seeds.push_back(v);
  }
  if (seeds.empty()) throw ConfigError("seeds", "no seeds given");
  return seeds;
}

ExperimentSpec parse_spec(const std::string& text, const std::filesystem::path& base_dir) {
  pt::ptree tree;
  try {
    std::istringstream in(text);
    pt::ini_parser::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError("config", "line " + std::to_string(e.line()) + ": " + e.message());
  }
  static const std::set<std::string> known = {"experiment", "dataset", "run", "sweep", "plot"};
  for (const auto& [name, node] : tree) {
    if (!known.count(name)) throw ConfigError(name, "unknown section");
    if (node.empty() && !node.data().empty()) throw ConfigError(name, "key outside any section");
  }
  auto section = [&](const std::string& name) {
    const auto it = tree.find(name);
    return Section(name, it == tree.not_found() ? nullptr : &it->second);
  };

  ExperimentSpec spec;

  Section exp = section("experiment");
  exp.read("name", spec.name);
  if (exp.has("seeds")) {
    try {
      spec.seeds = parse_seed_list(exp.raw("seeds"));
    } catch (const ConfigError& e) {
      throw ConfigError("experiment.seeds", e.message());
    }
  }
  exp.read("threads", spec.threads);
  exp.read("checkpoints", spec.checkpoints);
  if (exp.has("out")) spec.out_dir = resolve(base_dir, exp.raw("out"));
  exp.reject_unknown();

  Section ds = section("dataset");
  DatasetSpec& d = spec.dataset;
  if (ds.has("generator")) d.generator = generator_from_string(ds.raw("generator"));
  if (ds.has("seed")) {
    ds.read("seed", d.seed);
    d.fixed_seed = true;
  }
  switch (d.generator) {
    case Generator::kTwoMoons:
      ds.read("n_per_domain", d.moons.n_per_domain);
      ds.read("rotation_deg", d.moons.rotation_deg);
      ds.read("translation_x", d.moons.translation_x);
      ds.read("translation_y", d.moons.translation_y);
      ds.read("noise_sd", d.moons.noise_sd);
      break;
    case Generator::kBlobs:
      ds.read("num_classes", d.blobs.num_classes);
      ds.read("n_per_class", d.blobs.n_per_class);
      ds.read("class_spacing", d.blobs.class_spacing);
      ds.read("cluster_sd", d.blobs.cluster_sd);
      ds.read("shift_x", d.blobs.shift_x);
      ds.read("shift_y", d.blobs.shift_y);
      ds.read_list("target_weights", d.blobs.target_weights);
      break;
    case Generator::kCsv:
      if (!ds.has("path")) throw ConfigError("dataset.path", "required for the csv generator");
      d.csv_path = resolve(base_dir, ds.raw("path"));
      ds.read("num_features", d.csv_features);
      break;
  }
  ds.reject_unknown();

  Section run = section("run");
  RunConfig& r = spec.run;
  run.read("budget_percent", r.budget_percent);
  run.read("rounds", r.rounds);
  run.read_list("per_round_quota", r.per_round_quota);
  run.read("margin", r.margin);
  run.read("xi", r.xi);
  run.read("gamma", r.gamma);
  run.read("learning_rate", r.learning_rate);
  run.read("momentum", r.momentum);
  run.read("batch_size", r.batch_size);
  run.read("pretrain_iters", r.pretrain_iters);
  run.read("s1_iters", r.s1_iters);
  run.read("s2_iters", r.s2_iters);
  if (run.has("strategy")) {
    try {
      r.strategy = strategy_from_string(run.raw("strategy"));
    } catch (const ConfigError& e) {
      throw ConfigError("run.strategy", e.message());
    }
  }
  run.read("enable_s1", r.ablation.enable_s1);
  run.read("enable_s2", r.ablation.enable_s2);
  if (run.has("s2_labels")) r.ablation.s2_labels = labels_from_string(run.raw("s2_labels"));
  run.read("enable_im", r.ablation.enable_im);
  run.read("swap_stage_order", r.ablation.swap_stage_order);
  run.read("cold_start", r.ablation.cold_start);
  run.read("hidden", r.dims.hidden);
  run.read("feature_dim", r.dims.feature_dim);
  run.read("predictor_dim", r.dims.predictor_dim);
  run.read("discriminator_hidden", r.dims.discriminator_hidden);
  run.read("misprediction_quantile", r.misprediction_quantile);
  run.reject_unknown();
  try {
    r.validate();
  } catch (const ConfigError& e) {
    throw ConfigError("run." + e.field(), e.message());
  }

  Section sw = section("sweep");
  if (sw.has("axis")) spec.sweep.axis = axis_from_string(sw.raw("axis"));
  sw.read_list("values", spec.sweep.values);
  sw.read_list("budgets", spec.sweep.budgets);
  sw.read_list("gammas", spec.sweep.gammas);
  sw.reject_unknown();

  Section pl = section("plot");
  if (pl.has("kind")) spec.plot.kind = plot_kind_from_string(pl.raw("kind"));
  if (pl.has("inputs")) {
    std::vector<std::string> inputs;
    pl.read_list("inputs", inputs);
    for (const std::string& p : inputs) spec.plot.inputs.push_back(resolve(base_dir, p));
  }
  pl.read_list("labels", spec.plot.labels);
  pl.reject_unknown();

  return spec;
}

ExperimentSpec load_spec(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config", "cannot open config file " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_spec(buf.str(), path.parent_path());
}

DomainPair make_dataset(const DatasetSpec& spec, std::uint64_t run_seed) {
  const std::uint64_t seed = spec.fixed_seed ? spec.seed : run_seed;
  switch (spec.generator) {
    case Generator::kTwoMoons: {
      TwoMoonsParams p = spec.moons;
      p.seed = seed;
      return gen_two_moons_shift(p);
    }
    case Generator::kBlobs: {
      BlobsParams p = spec.blobs;
      p.seed = seed;
      return gen_blobs_shift(p);
    }
    case Generator::kCsv:
      return split_domains(load_csv(spec.csv_path, CsvSchema{spec.csv_features}));
  }
  throw ConfigError("dataset.generator", "unhandled generator");
}

}  // namespace lossada::cli
