#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "ssmvis/encoders.hpp"
#include "ssmvis/error.hpp"

namespace ssmvis::encoders {

namespace {

constexpr char kMagic[8] = {'S', 'S', 'M', 'V', 'C', 'K', 'P', 'T'};

class Writer {
 public:
  void u32(std::uint32_t v) { le(v, 4); }
  void u64(std::uint64_t v) { le(v, 8); }
  void f64(double v) { le(std::bit_cast<std::uint64_t>(v), 8); }
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out_.insert(out_.end(), b, b + n);
  }
  void text(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  void le(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> in) : in_(in) {}

  std::uint32_t u32() { return static_cast<std::uint32_t>(le(4)); }
  std::uint64_t u64() { return le(8); }
  double f64() { return std::bit_cast<double>(le(8)); }
  std::string text() {
    const std::uint32_t n = u32();
    need(n);
    std::string s(reinterpret_cast<const char*>(in_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  void expect_magic() {
    need(sizeof kMagic);
    if (std::memcmp(in_.data(), kMagic, sizeof kMagic) != 0) throw DataError("checkpoint: bad magic");
    pos_ += sizeof kMagic;
  }
  bool done() const { return pos_ == in_.size(); }

 private:
  void need(std::size_t n) const {
    if (in_.size() - pos_ < n) throw DataError("checkpoint: truncated file");
  }
  std::uint64_t le(int n) {
    need(static_cast<std::size_t>(n));
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(in_[pos_ + i]) << (8 * i);
    pos_ += static_cast<std::size_t>(n);
    return v;
  }
  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
};

std::string encode_metadata(const std::map<std::string, std::string>& metadata) {
  std::string out;
  for (const auto& [k, v] : metadata) {
    if (k.find_first_of("=\n") != std::string::npos || v.find('\n') != std::string::npos) {
      throw ConfigError("checkpoint metadata entries may not contain '=' in keys or newlines");
    }
    out += k + "=" + v + "\n";
  }
  return out;
}

std::map<std::string, std::string> decode_metadata(const std::string& text) {
  std::map<std::string, std::string> out;
  std::size_t start = 0;
  while (start < text.size()) {
    auto nl = text.find('\n', start);
    if (nl == std::string::npos) nl = text.size();
    const std::string line = text.substr(start, nl - start);
    start = nl + 1;
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw DataError("checkpoint: malformed metadata line '" + line + "'");
    out[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return out;
}

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const CheckpointFile& ckpt) {
  Writer w;
  w.bytes(kMagic, sizeof kMagic);
  w.u32(kCheckpointFormatVersion);
  w.text(ckpt.spec.echo());
  w.text(encode_metadata(ckpt.metadata));
  w.u32(static_cast<std::uint32_t>(ckpt.params.size()));
  for (const auto& [name, t] : ckpt.params.entries()) {
    w.text(name);
    w.u32(static_cast<std::uint32_t>(t.rank()));
    for (const auto d : t.shape()) w.u64(d);
    for (const double v : t.data()) w.f64(v);
  }
  return w.take();
}

CheckpointFile decode_checkpoint(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  r.expect_magic();
  const std::uint32_t version = r.u32();
  if (version != kCheckpointFormatVersion) {
    throw DataError("checkpoint: unsupported format version " + std::to_string(version));
  }
  CheckpointFile ckpt;
  ckpt.spec = EncoderSpec::parse_echo(r.text());
  ckpt.spec.validate();
  ckpt.metadata = decode_metadata(r.text());

  // The spec fixes every name and shape; compare against a fresh layout.
  Rng scratch{0};
  const ParameterSet layout = init_parameters(ckpt.spec, scratch);
  const std::uint32_t count = r.u32();
  if (count != layout.size()) {
    throw ConfigError("checkpoint: " + std::to_string(count) + " tensors, spec implies " +
                      std::to_string(layout.size()));
  }
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = r.text();
    const std::uint32_t rank = r.u32();
    if (rank > 8) throw DataError("checkpoint: tensor '" + name + "' has implausible rank");
    Shape shape(rank);
    for (auto& d : shape) d = r.u64();
    const auto& [expected_name, expected] = layout.entries()[i];
    if (name != expected_name || shape != expected.shape()) {
      throw ConfigError("checkpoint: tensor " + name + " " + shape_str(shape) + " does not match spec (" +
                        expected_name + " " + shape_str(expected.shape()) + ")");
    }
    std::vector<double> values(numel(shape));
    for (auto& v : values) v = r.f64();
    ckpt.params.add(std::move(name), Tensor::from(std::move(shape), std::move(values), true));
  }
  if (!r.done()) throw DataError("checkpoint: trailing bytes");
  return ckpt;
}

void write_checkpoint(const std::filesystem::path& path, const CheckpointFile& ckpt) {
  const auto bytes = encode_checkpoint(ckpt);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open '" + path.string() + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("failed writing '" + path.string() + "'");
}

CheckpointFile read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint '" + path.string() + "'");
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

}  // namespace ssmvis::encoders
