#include <charconv>
#include <sstream>

#include "ssmvis/encoders.hpp"
#include "ssmvis/error.hpp"

namespace ssmvis::encoders {

namespace {

std::size_t parse_size(std::string_view key, std::string_view text) {
  std::size_t value = 0;
  const auto* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc{} || ptr != end) {
    throw ConfigError("encoder spec: '" + std::string(key) + "' expects a non-negative integer, got '" +
                      std::string(text) + "'");
  }
  return value;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

}  // namespace

std::string_view to_string(EncoderKind kind) {
  switch (kind) {
    case EncoderKind::vim: return "vim";
    case EncoderKind::vmamba: return "vmamba";
    case EncoderKind::toy_cnn: return "toy_cnn";
    case EncoderKind::toy_vit: return "toy_vit";
  }
  return "?";
}

EncoderKind parse_encoder_kind(std::string_view name) {
  if (name == "vim") return EncoderKind::vim;
  if (name == "vmamba") return EncoderKind::vmamba;
  if (name == "toy_cnn" || name == "toy-cnn") return EncoderKind::toy_cnn;
  if (name == "toy_vit" || name == "toy-vit") return EncoderKind::toy_vit;
  throw ConfigError("unknown encoder kind '" + std::string(name) +
                    "' (expected vim, vmamba, toy_cnn or toy_vit)");
}

std::string_view family_label(EncoderKind kind) {
  switch (kind) {
    case EncoderKind::vim: return "Vim";
    case EncoderKind::vmamba: return "VSSM";
    case EncoderKind::toy_cnn: return "CNN";
    case EncoderKind::toy_vit: return "ViT";
  }
  return "?";
}

EncoderSpec EncoderSpec::defaults(EncoderKind kind) {
  EncoderSpec spec;
  spec.kind = kind;
  if (kind == EncoderKind::vmamba) {
    spec.embed_dim = 32;
    spec.depth = {2, 2};
  }
  return spec;
}

void EncoderSpec::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError("encoder spec: " + msg); };
  if (num_classes < 2) fail("num_classes must be >= 2, got " + std::to_string(num_classes));
  if (embed_dim == 0) fail("embed_dim must be >= 1");
  if (d_state == 0) fail("d_state must be >= 1");
  if (expand == 0) fail("expand must be >= 1");
  if (image_size == 0) fail("image_size must be >= 1");
  if (depth.empty()) fail("depth must list at least one stage");
  for (const auto d : depth) {
    if (d == 0) fail("every stage needs at least one block");
  }
  if (kind == EncoderKind::toy_cnn) {
    if (embed_dim < 2 || embed_dim % 2 != 0) fail("toy_cnn embed_dim must be even");
    return;
  }
  if (patch_size == 0) fail("patch_size must be >= 1");
  if (image_size % patch_size != 0) {
    fail("image_size " + std::to_string(image_size) + " is not divisible by patch_size " +
         std::to_string(patch_size));
  }
  if (kind == EncoderKind::vmamba) {
    std::size_t grid = image_size / patch_size;
    for (std::size_t s = 1; s < depth.size(); ++s) {
      if (grid % 2 != 0) {
        fail("vmamba stage " + std::to_string(s) + " needs an even grid, got " + std::to_string(grid));
      }
      grid /= 2;
    }
  } else if (depth.size() != 1) {
    fail(std::string(to_string(kind)) + " takes a single depth value");
  }
  if (kind == EncoderKind::toy_vit) {
    if (num_heads == 0 || embed_dim % num_heads != 0) {
      fail("embed_dim " + std::to_string(embed_dim) + " is not divisible by num_heads " +
           std::to_string(num_heads));
    }
    if (mlp_ratio == 0) fail("mlp_ratio must be >= 1");
  }
}

std::string EncoderSpec::echo() const {
  std::ostringstream out;
  out << "kind=" << to_string(kind) << '\n';
  out << "patch_size=" << patch_size << '\n';
  out << "embed_dim=" << embed_dim << '\n';
  out << "depth=";
  for (std::size_t i = 0; i < depth.size(); ++i) out << (i ? "," : "") << depth[i];
  out << '\n';
  out << "d_state=" << d_state << '\n';
  out << "num_classes=" << num_classes << '\n';
  out << "image_size=" << image_size << '\n';
  out << "expand=" << expand << '\n';
  out << "num_heads=" << num_heads << '\n';
  out << "mlp_ratio=" << mlp_ratio << '\n';
  return out.str();
}

EncoderSpec EncoderSpec::parse_echo(std::string_view text) {
  EncoderSpec spec;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    const auto line = trim(text.substr(0, nl));
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) throw ConfigError("encoder spec: malformed line '" + std::string(line) + "'");
    const auto key = trim(line.substr(0, eq));
    const auto value = trim(line.substr(eq + 1));
    if (key == "kind") {
      spec.kind = parse_encoder_kind(value);
    } else if (key == "patch_size") {
      spec.patch_size = parse_size(key, value);
    } else if (key == "embed_dim") {
      spec.embed_dim = parse_size(key, value);
    } else if (key == "depth") {
      spec.depth.clear();
      std::string_view rest = value;
      while (true) {
        const auto comma = rest.find(',');
        spec.depth.push_back(parse_size(key, trim(rest.substr(0, comma))));
        if (comma == std::string_view::npos) break;
        rest = rest.substr(comma + 1);
      }
    } else if (key == "d_state") {
      spec.d_state = parse_size(key, value);
    } else if (key == "num_classes") {
      spec.num_classes = parse_size(key, value);
    } else if (key == "image_size") {
      spec.image_size = parse_size(key, value);
    } else if (key == "expand") {
      spec.expand = parse_size(key, value);
    } else if (key == "num_heads") {
      spec.num_heads = parse_size(key, value);
    } else if (key == "mlp_ratio") {
      spec.mlp_ratio = parse_size(key, value);
    } else {
      throw ConfigError("encoder spec: unknown key '" + std::string(key) + "'");
    }
  }
  return spec;
}

// ---- ParameterSet ------------------------------------------------------------

Tensor& ParameterSet::add(std::string name, Tensor value) {
  if (index_.count(name) != 0) throw ConfigError("duplicate parameter '" + name + "'");
  index_.emplace(name, items_.size());
  items_.emplace_back(std::move(name), std::move(value));
  return items_.back().second;
}

const Tensor& ParameterSet::at(std::string_view name) const {
  const auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("missing parameter '" + std::string(name) + "'");
  return items_[it->second].second;
}

Tensor& ParameterSet::at(std::string_view name) {
  return const_cast<Tensor&>(std::as_const(*this).at(name));
}

bool ParameterSet::contains(std::string_view name) const { return index_.find(name) != index_.end(); }

std::size_t ParameterSet::parameter_count() const {
  std::size_t total = 0;
  for (const auto& [name, t] : items_) total += t.numel();
  return total;
}

void ParameterSet::zero_grad() {
  for (auto& [name, t] : items_) t.zero_grad();
}

ParameterSet ParameterSet::snapshot() const {
  ParameterSet copy;
  for (const auto& [name, t] : items_) copy.add(name, t.detach());
  return copy;
}

void ParameterSet::assign_from(const ParameterSet& other) {
  if (other.size() != size()) throw ConfigError("parameter sets differ in size");
  for (auto& [name, t] : items_) {
    const Tensor& src = other.at(name);
    if (src.shape() != t.shape()) {
      throw ShapeError("parameter '" + name + "': shape " + shape_str(src.shape()) + " does not match " +
                       shape_str(t.shape()));
    }
    std::copy(src.data().begin(), src.data().end(), t.mutable_data().begin());
  }
}

}  // namespace ssmvis::encoders
