#include <yaml-cpp/yaml.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "ssmvis/bench.hpp"
#include "ssmvis/error.hpp"

namespace ssmvis::bench {

namespace fs = std::filesystem;

namespace {

std::string where(const YAML::Node& node) {
  const auto mark = node.Mark();
  return mark.is_null() ? std::string{} : " (line " + std::to_string(mark.line + 1) + ")";
}

// Rejects keys outside `allowed`; typos should not silently fall back to
// defaults.
void check_keys(const YAML::Node& map, std::string_view section, std::initializer_list<std::string_view> allowed) {
  if (!map.IsMap()) throw ConfigError(std::string(section) + " must be a mapping" + where(map));
  for (const auto& kv : map) {
    const auto key = kv.first.as<std::string>();
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
      std::string list;
      for (const auto a : allowed) list += (list.empty() ? "" : ", ") + std::string(a);
      throw ConfigError("unknown key '" + key + "' in " + std::string(section) + where(kv.first) +
                        "; expected one of: " + list);
    }
  }
}

template <class T>
void read(const YAML::Node& map, const char* key, T& into, std::string_view section) {
  const auto node = map[key];
  if (!node) return;
  try {
    into = node.as<T>();
  } catch (const YAML::Exception&) {
    throw ConfigError(std::string(section) + "." + key + ": cannot read '" + YAML::Dump(node) + "'" + where(node));
  }
}

// yaml-cpp happily converts "-1" into a huge unsigned value; go through a
// signed integer so negative counts are reported.
void read_count(const YAML::Node& map, const char* key, std::size_t& into, std::string_view section) {
  long long v = static_cast<long long>(into);
  read(map, key, v, section);
  if (v < 0) throw ConfigError(std::string(section) + "." + key + " must be >= 0" + where(map[key]));
  into = static_cast<std::size_t>(v);
}

void parse_dataset(const YAML::Node& node, DatasetConfig& ds, const fs::path& base_dir) {
  check_keys(node, "dataset", {"source", "image_size", "per_class", "classes", "seed", "noise", "roots"});
  std::string source = "synthetic";
  read(node, "source", source, "dataset");
  if (source == "synthetic") {
    ds.source = data::SourceKind::synthetic;
  } else if (source == "directory") {
    ds.source = data::SourceKind::directory;
  } else {
    throw ConfigError("dataset.source must be 'synthetic' or 'directory', got '" + source + "'");
  }
  read_count(node, "image_size", ds.image_size, "dataset");
  read_count(node, "per_class", ds.per_class, "dataset");
  read_count(node, "classes", ds.classes, "dataset");
  read(node, "seed", ds.seed, "dataset");
  read(node, "noise", ds.noise, "dataset");
  if (const auto roots = node["roots"]) {
    if (!roots.IsSequence()) throw ConfigError("dataset.roots must be a list" + where(roots));
    for (const auto& r : roots) {
      check_keys(r, "dataset.roots[]", {"path", "layout"});
      DatasetRoot root;
      read(r, "path", root.written, "dataset.roots[]");
      if (root.written.empty()) throw ConfigError("dataset.roots[] entry without a path" + where(r));
      std::string layout = "busi";
      read(r, "layout", layout, "dataset.roots[]");
      try {
        root.layout = data::parse_layout(layout);
      } catch (const std::exception& e) {
        throw ConfigError(std::string("dataset.roots[]: ") + e.what());
      }
      const fs::path p(root.written);
      root.path = p.is_absolute() || base_dir.empty() ? p : base_dir / p;
      ds.roots.push_back(std::move(root));
    }
  }
}

void parse_train(const YAML::Node& node, train::TrainConfig& tc, data::Fractions& fr) {
  check_keys(node, "train", {"epochs_max", "learning_rate", "batch_size", "patience", "optimizer",
                             "divergence_loss", "split"});
  read_count(node, "epochs_max", tc.epochs_max, "train");
  read(node, "learning_rate", tc.learning_rate, "train");
  read_count(node, "batch_size", tc.batch_size, "train");
  read_count(node, "patience", tc.patience, "train");
  read(node, "divergence_loss", tc.divergence_loss, "train");
  std::string opt(train::to_string(tc.optimizer));
  read(node, "optimizer", opt, "train");
  tc.optimizer = train::parse_optimizer(opt);
  if (const auto split = node["split"]) {
    if (!split.IsSequence() || split.size() != 3) throw ConfigError("train.split must be [train, val, test]");
    fr = {split[0].as<double>(), split[1].as<double>(), split[2].as<double>()};
  }
}

RosterEntry parse_encoder(const YAML::Node& node, const DatasetConfig& ds) {
  check_keys(node, "encoders[]",
             {"id", "kind", "patch_size", "embed_dim", "depth", "d_state", "expand", "num_heads", "mlp_ratio"});
  std::string kind;
  read(node, "kind", kind, "encoders[]");
  if (kind.empty()) throw ConfigError("encoder entry without a kind" + where(node));
  RosterEntry e;
  try {
    e.spec = encoders::EncoderSpec::defaults(encoders::parse_encoder_kind(kind));
  } catch (const std::exception& ex) {
    throw ConfigError(std::string(ex.what()) + where(node));
  }
  e.id = kind;
  read(node, "id", e.id, "encoders[]");
  const std::string section = "encoder '" + e.id + "'";
  read_count(node, "patch_size", e.spec.patch_size, section);
  read_count(node, "embed_dim", e.spec.embed_dim, section);
  read_count(node, "d_state", e.spec.d_state, section);
  read_count(node, "expand", e.spec.expand, section);
  read_count(node, "num_heads", e.spec.num_heads, section);
  read_count(node, "mlp_ratio", e.spec.mlp_ratio, section);
  if (const auto depth = node["depth"]) {
    e.spec.depth.clear();
    if (depth.IsSequence()) {
      for (const auto& d : depth) e.spec.depth.push_back(d.as<std::size_t>());
    } else {
      e.spec.depth.push_back(depth.as<std::size_t>());
    }
  }
  // Image size and class count come from the dataset.
  e.spec.image_size = ds.image_size;
  e.spec.num_classes = ds.classes;
  return e;
}

std::string_view layout_name(data::Layout layout) {
  switch (layout) {
    case data::Layout::busi: return "busi";
    case data::Layout::b: return "b";
    case data::Layout::manifest_file: return "manifest";
  }
  return "?";
}

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

void BenchmarkConfig::validate() const {
  if (roster.empty()) throw ConfigError("encoder roster is empty");
  if (n_seeds < 1) throw ConfigError("benchmark.n_seeds must be >= 1");
  if (workers < 1) throw ConfigError("benchmark.workers must be >= 1");
  if (dataset.image_size < 16) throw ConfigError("dataset.image_size must be >= 16");
  if (dataset.classes < 2) throw ConfigError("dataset.classes must be >= 2");
  if (dataset.source == data::SourceKind::synthetic) {
    if (dataset.per_class < 3) throw ConfigError("dataset.per_class must be >= 3");
    if (!(dataset.noise >= 0.0)) throw ConfigError("dataset.noise must be >= 0");
  } else if (dataset.roots.empty()) {
    throw ConfigError("a directory dataset needs at least one entry in dataset.roots");
  }
  const double total = fractions.train + fractions.val + fractions.test;
  if (!(fractions.train > 0 && fractions.val > 0 && fractions.test > 0) || std::abs(total - 1.0) > 1e-9) {
    throw ConfigError("train.split fractions must be positive and sum to 1");
  }
  train.validate();
  std::set<std::string> ids;
  for (const auto& e : roster) {
    if (e.id.empty() || e.id.find_first_of("/\\ \t") != std::string::npos || e.id == "." || e.id == "..") {
      throw ConfigError("encoder id '" + e.id + "' must be a plain name");
    }
    if (!ids.insert(e.id).second) throw ConfigError("duplicate encoder id '" + e.id + "'");
    try {
      e.spec.validate();
    } catch (const ConfigError& ex) {
      throw ConfigError("encoder '" + e.id + "': " + ex.what());
    }
  }
}

const RosterEntry& BenchmarkConfig::entry(std::string_view id) const {
  for (const auto& e : roster) {
    if (e.id == id) return e;
  }
  std::string list;
  for (const auto& e : roster) list += (list.empty() ? "" : ", ") + e.id;
  throw ConfigError("unknown encoder '" + std::string(id) + "'; roster: " + list);
}

BenchmarkConfig parse_config(std::string_view text, const fs::path& base_dir) try {
  YAML::Node root;
  try {
    root = YAML::Load(std::string(text));
  } catch (const YAML::Exception& e) {
    throw ConfigError(std::string("config is not valid YAML: ") + e.what());
  }
  if (!root.IsMap()) throw ConfigError("config must be a mapping with dataset/train/benchmark/encoders sections");
  check_keys(root, "config", {"dataset", "train", "benchmark", "encoders"});

  BenchmarkConfig c;
  if (const auto ds = root["dataset"]) parse_dataset(ds, c.dataset, base_dir);
  if (const auto tr = root["train"]) parse_train(tr, c.train, c.fractions);
  if (const auto bm = root["benchmark"]) {
    check_keys(bm, "benchmark", {"n_seeds", "base_seed", "output_dir", "workers"});
    read_count(bm, "n_seeds", c.n_seeds, "benchmark");
    read(bm, "base_seed", c.base_seed, "benchmark");
    read_count(bm, "workers", c.workers, "benchmark");
    std::string out;
    read(bm, "output_dir", out, "benchmark");
    if (!out.empty()) c.output_dir = fs::path(out).is_absolute() || base_dir.empty() ? fs::path(out) : base_dir / out;
  }
  const auto encs = root["encoders"];
  if (!encs || !encs.IsSequence()) throw ConfigError("config needs an 'encoders' list");
  for (const auto& e : encs) c.roster.push_back(parse_encoder(e, c.dataset));
  c.validate();
  return c;
}
catch (const YAML::Exception& e) {
  throw ConfigError(std::string("config: ") + e.what());
}

BenchmarkConfig load_config(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  return parse_config(text.str(), path.parent_path());
}

std::string canonical_text(const BenchmarkConfig& c) {
  std::ostringstream o;
  const auto& ds = c.dataset;
  o << "dataset.image_size=" << ds.image_size << '\n' << "dataset.classes=" << ds.classes << '\n';
  if (ds.source == data::SourceKind::synthetic) {
    o << "dataset.source=synthetic\n"
      << "dataset.per_class=" << ds.per_class << '\n'
      << "dataset.seed=" << ds.seed << '\n'
      << "dataset.noise=" << num(ds.noise) << '\n';
  } else {
    o << "dataset.source=directory\n";
    for (const auto& r : ds.roots) o << "dataset.root=" << r.written << '|' << layout_name(r.layout) << '\n';
  }
  const auto& t = c.train;
  o << "train.epochs_max=" << t.epochs_max << '\n'
    << "train.learning_rate=" << num(t.learning_rate) << '\n'
    << "train.batch_size=" << t.batch_size << '\n'
    << "train.patience=" << t.patience << '\n'
    << "train.optimizer=" << train::to_string(t.optimizer) << '\n'
    << "train.divergence_loss=" << num(t.divergence_loss) << '\n'
    << "train.split=" << num(c.fractions.train) << ',' << num(c.fractions.val) << ',' << num(c.fractions.test) << '\n'
    << "benchmark.n_seeds=" << c.n_seeds << '\n'
    << "benchmark.base_seed=" << c.base_seed << '\n';
  for (const auto& e : c.roster) {
    std::string echo = e.spec.echo();
    std::replace(echo.begin(), echo.end(), '\n', ';');
    o << "encoder." << e.id << '=' << echo << '\n';
  }
  return o.str();
}

std::uint64_t config_hash(const BenchmarkConfig& config) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const unsigned char ch : canonical_text(config)) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hash_hex(std::uint64_t hash) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(hash));
  return buf;
}

}  // namespace ssmvis::bench
