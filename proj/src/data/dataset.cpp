#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numbers>
#include <sstream>

#include "ssmvis/data.hpp"
#include "ssmvis/error.hpp"
#include "ssmvis/rng.hpp"

namespace ssmvis::data {

namespace fs = std::filesystem;

namespace {

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

bool is_image_file(const fs::directory_entry& entry) {
  if (!entry.is_regular_file()) return false;
  const std::string name = entry.path().filename().string();
  if (name.find("_mask") != std::string::npos) return false;
  const std::string ext = lower(entry.path().extension().string());
  return ext == ".png" || ext == ".pgm";
}

std::vector<std::string> subdirectories(const fs::path& root) {
  std::vector<std::string> names;
  for (const auto& entry : fs::directory_iterator(root)) {
    if (entry.is_directory()) names.push_back(entry.path().filename().string());
  }
  std::sort(names.begin(), names.end());
  return names;
}

std::string join(const std::vector<std::string>& items) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) out += (i ? ", " : "") + items[i];
  return out.empty() ? "(nothing)" : out;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

}  // namespace

Layout parse_layout(std::string_view name) {
  if (name == "busi") return Layout::busi;
  if (name == "b") return Layout::b;
  if (name == "manifest" || name == "manifest_file") return Layout::manifest_file;
  throw ConfigError("unknown dataset layout '" + std::string(name) + "' (expected busi, b or manifest_file)");
}

std::vector<std::size_t> DatasetManifest::class_counts() const {
  std::vector<std::size_t> counts(classes.size(), 0);
  for (const auto& s : samples) {
    if (s.label >= 0 && static_cast<std::size_t>(s.label) < counts.size()) ++counts[static_cast<std::size_t>(s.label)];
  }
  return counts;
}

void DatasetManifest::validate() const {
  if (classes.size() < 2) throw DataError("dataset '" + name + "' needs at least 2 classes");
  for (const auto& s : samples) {
    if (s.label < 0 || static_cast<std::size_t>(s.label) >= classes.size()) {
      throw DataError("dataset '" + name + "': sample " + s.path + " has label " + std::to_string(s.label) +
                      " outside [0, " + std::to_string(classes.size()) + ")");
    }
  }
  const auto counts = class_counts();
  for (std::size_t c = 0; c < counts.size(); ++c) {
    if (counts[c] == 0) throw DataError("dataset '" + name + "': class '" + classes[c] + "' has no samples");
  }
}

DatasetManifest load_dataset(const fs::path& root, Layout layout) {
  if (layout == Layout::manifest_file) return read_manifest(root);
  if (!fs::is_directory(root)) throw DataError("dataset root '" + root.string() + "' is not a directory");

  const auto found = subdirectories(root);
  std::vector<std::string> classes;
  if (layout == Layout::busi) {
    classes = {"benign", "malignant", "normal"};
    for (const auto& c : classes) {
      if (!std::binary_search(found.begin(), found.end(), c)) {
        throw DataError("busi layout under '" + root.string() + "' needs benign/, malignant/ and normal/; found: " +
                        join(found));
      }
    }
  } else {
    if (found.size() != 2) {
      throw DataError("b layout under '" + root.string() + "' needs exactly two class directories; found: " +
                      join(found));
    }
    classes = found;
  }

  DatasetManifest manifest;
  manifest.name = root.filename().string();
  manifest.classes = classes;
  manifest.source = SourceKind::directory;
  for (std::size_t c = 0; c < classes.size(); ++c) {
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(root / classes[c])) {
      if (is_image_file(entry)) files.push_back(entry.path());
    }
    if (files.empty()) throw DataError("class directory '" + (root / classes[c]).string() + "' has no images");
    std::sort(files.begin(), files.end());
    for (const auto& f : files) manifest.samples.push_back({f.string(), Tensor{}, static_cast<int>(c)});
  }
  return manifest;
}

DatasetManifest read_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read manifest '" + path.string() + "'");
  DatasetManifest manifest;
  manifest.name = path.stem().string();
  manifest.source = SourceKind::directory;
  const fs::path base = path.parent_path();
  std::string line;
  std::size_t line_no = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++line_no;
    const auto text = trim(line);
    if (text.empty() || text.front() == '#') continue;
    const auto where = path.string() + ":" + std::to_string(line_no);
    if (!have_header) {
      if (text.substr(0, 8) != "classes:") throw DataError(where + ": expected 'classes: a,b,...' header");
      std::string_view rest = text.substr(8);
      while (true) {
        const auto comma = rest.find(',');
        const auto name = trim(rest.substr(0, comma));
        if (name.empty()) throw DataError(where + ": empty class name");
        manifest.classes.emplace_back(name);
        if (comma == std::string_view::npos) break;
        rest = rest.substr(comma + 1);
      }
      have_header = true;
      continue;
    }
    const auto tab = text.rfind('\t');
    if (tab == std::string_view::npos) throw DataError(where + ": expected 'path<TAB>label_index'");
    const auto file = trim(text.substr(0, tab));
    const auto label_text = trim(text.substr(tab + 1));
    int label = -1;
    const auto [ptr, ec] = std::from_chars(label_text.data(), label_text.data() + label_text.size(), label);
    if (ec != std::errc{} || ptr != label_text.data() + label_text.size()) {
      throw DataError(where + ": bad label '" + std::string(label_text) + "'");
    }
    fs::path p(file);
    if (p.is_relative()) p = base / p;
    manifest.samples.push_back({p.string(), Tensor{}, label});
  }
  if (!have_header) throw DataError("manifest '" + path.string() + "' has no classes header");
  manifest.validate();
  return manifest;
}

std::string format_manifest(const DatasetManifest& manifest) {
  std::string out = "classes: ";
  for (std::size_t c = 0; c < manifest.classes.size(); ++c) out += (c ? "," : "") + manifest.classes[c];
  out += "\n";
  for (const auto& s : manifest.samples) out += s.path + "\t" + std::to_string(s.label) + "\n";
  return out;
}

DatasetManifest union_manifests(const DatasetManifest& a, const DatasetManifest& b) {
  DatasetManifest out;
  out.name = a.name + "+" + b.name;
  out.classes = a.classes;
  out.source = a.source == b.source ? a.source : SourceKind::directory;
  std::vector<int> remap(b.classes.size());
  for (std::size_t c = 0; c < b.classes.size(); ++c) {
    const auto it = std::find(out.classes.begin(), out.classes.end(), b.classes[c]);
    if (it == out.classes.end()) {
      remap[c] = static_cast<int>(out.classes.size());
      out.classes.push_back(b.classes[c]);
    } else {
      remap[c] = static_cast<int>(it - out.classes.begin());
    }
  }
  out.samples = a.samples;
  for (auto s : b.samples) {
    s.label = remap.at(static_cast<std::size_t>(s.label));
    out.samples.push_back(std::move(s));
  }
  return out;
}

Tensor sample_image(const DatasetManifest& manifest, std::size_t index, std::size_t target) {
  const Sample& s = manifest.samples.at(index);
  return preprocess(s.pixels.defined() ? s.pixels : load_image(s.path), target);
}

SplitAssignment stratified_split(const DatasetManifest& manifest, std::uint64_t seed, Fractions fractions) {
  const double total = fractions.train + fractions.val + fractions.test;
  if (fractions.train <= 0 || fractions.val <= 0 || fractions.test <= 0 || std::abs(total - 1.0) > 1e-9) {
    throw ConfigError("split fractions must be positive and sum to 1");
  }
  std::vector<std::vector<std::size_t>> by_class(manifest.classes.size());
  for (std::size_t i = 0; i < manifest.samples.size(); ++i) {
    by_class.at(static_cast<std::size_t>(manifest.samples[i].label)).push_back(i);
  }
  SplitAssignment split;
  split.fractions = fractions;
  split.seed = seed;
  Rng rng{seed};
  for (std::size_t c = 0; c < by_class.size(); ++c) {
    auto& idx = by_class[c];
    const std::size_t n = idx.size();
    if (n < 3) {
      throw DataError("class '" + manifest.classes[c] + "' has " + std::to_string(n) +
                      " samples; stratified splitting needs at least 3");
    }
    rng.shuffle(std::span<std::size_t>(idx));
    const auto round = [](double v) { return static_cast<std::size_t>(std::llround(v)); };
    const std::size_t n_train = std::clamp<std::size_t>(round(fractions.train * static_cast<double>(n)), 1, n - 2);
    const std::size_t n_val = std::clamp<std::size_t>(round(fractions.val * static_cast<double>(n)), 1, n - 1 - n_train);
    split.train.insert(split.train.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_train));
    split.val.insert(split.val.end(), idx.begin() + static_cast<std::ptrdiff_t>(n_train),
                     idx.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
    split.test.insert(split.test.end(), idx.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), idx.end());
  }
  std::sort(split.train.begin(), split.train.end());
  std::sort(split.val.begin(), split.val.end());
  std::sort(split.test.begin(), split.test.end());
  return split;
}

DatasetManifest synth_generate(std::size_t num_per_class, std::size_t classes, std::size_t image_size,
                               std::uint64_t seed, double noise) {
  if (classes < 2) throw ConfigError("synthetic data needs at least 2 classes");
  if (image_size < 16) throw ConfigError("synthetic image_size must be >= 16");
  if (num_per_class < 1) throw ConfigError("synthetic num_per_class must be >= 1");

  DatasetManifest manifest;
  manifest.name = "synthetic";
  manifest.source = SourceKind::synthetic;
  for (std::size_t c = 0; c < classes; ++c) manifest.classes.push_back("class_" + std::to_string(c));

  Rng rng{seed};
  const double S = static_cast<double>(image_size);
  for (std::size_t c = 0; c < classes; ++c) {
    for (std::size_t i = 0; i < num_per_class; ++i) {
      const double cx = rng.uniform(0.3, 0.7) * S;
      const double cy = rng.uniform(0.3, 0.7) * S;
      const double amplitude = rng.uniform(0.5, 0.8);
      double sigma_major, sigma_minor, angle;
      if (c == 0) {
        sigma_major = sigma_minor = rng.uniform(0.12, 0.18) * S;
        angle = 0.0;
      } else {
        sigma_major = rng.uniform(0.22, 0.30) * S;
        sigma_minor = rng.uniform(0.05, 0.08) * S;
        angle = static_cast<double>(c - 1) * std::numbers::pi / static_cast<double>(classes - 1) +
                rng.uniform(-0.15, 0.15);
      }
      const double ca = std::cos(angle), sa = std::sin(angle);
      std::vector<double> px(image_size * image_size);
      for (std::size_t y = 0; y < image_size; ++y) {
        for (std::size_t x = 0; x < image_size; ++x) {
          const double dx = static_cast<double>(x) + 0.5 - cx;
          const double dy = static_cast<double>(y) + 0.5 - cy;
          const double u = ca * dx + sa * dy;
          const double v = -sa * dx + ca * dy;
          const double blob = std::exp(-0.5 * (u * u / (sigma_major * sigma_major) + v * v / (sigma_minor * sigma_minor)));
          px[y * image_size + x] = std::clamp(0.2 + amplitude * blob + rng.normal(0.0, noise), 0.0, 1.0);
        }
      }
      char id[64];
      std::snprintf(id, sizeof id, "synthetic/class_%zu/%05zu", c, i);
      manifest.samples.push_back({id, Tensor::from({image_size, image_size, 1}, std::move(px)), static_cast<int>(c)});
    }
  }
  return manifest;
}

}  // namespace ssmvis::data
