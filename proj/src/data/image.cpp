#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>

#include "ssmvis/data.hpp"
#include "ssmvis/error.hpp"

namespace ssmvis::data {

namespace {

constexpr std::uint8_t kPngMagic[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};

bool starts_with(std::span<const std::uint8_t> bytes, std::initializer_list<std::uint8_t> prefix) {
  if (bytes.size() < prefix.size()) return false;
  return std::equal(prefix.begin(), prefix.end(), bytes.begin());
}

std::string describe_format(std::span<const std::uint8_t> bytes) {
  if (bytes.empty()) return "empty input";
  if (starts_with(bytes, {0xff, 0xd8, 0xff})) return "JPEG";
  if (starts_with(bytes, {'G', 'I', 'F', '8'})) return "GIF";
  if (starts_with(bytes, {'B', 'M'})) return "BMP";
  if (starts_with(bytes, {'I', 'I', 42, 0}) || starts_with(bytes, {'M', 'M', 0, 42})) return "TIFF";
  if (starts_with(bytes, {'D', 'I', 'C', 'M'}) || (bytes.size() > 132 && bytes[128] == 'D' && bytes[129] == 'I'))
    return "DICOM";
  if (bytes.size() >= 2 && bytes[0] == 'P' && bytes[1] >= '1' && bytes[1] <= '7') {
    return std::string("Netpbm P") + static_cast<char>(bytes[1]) + " (only binary P5 is supported)";
  }
  char buf[64];
  std::snprintf(buf, sizeof buf, "unknown format (leading bytes %02x %02x)", bytes[0],
                bytes.size() > 1 ? bytes[1] : 0);
  return buf;
}

class PgmHeader {
 public:
  explicit PgmHeader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::size_t number() {
    skip_space_and_comments();
    std::size_t value = 0;
    std::size_t digits = 0;
    while (pos_ < bytes_.size() && bytes_[pos_] >= '0' && bytes_[pos_] <= '9') {
      value = value * 10 + (bytes_[pos_] - '0');
      ++pos_;
      if (++digits > 9) throw DataError("PGM: header number too large");
    }
    if (digits == 0) throw DataError("PGM: malformed or truncated header");
    return value;
  }

  // Exactly one whitespace byte separates the header from the raster.
  std::size_t raster_offset() {
    if (pos_ >= bytes_.size()) throw DataError("PGM: truncated header");
    return pos_ + 1;
  }

  std::size_t pos_ = 2;

 private:
  void skip_space_and_comments() {
    while (pos_ < bytes_.size()) {
      const auto c = bytes_[pos_];
      if (c == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
      } else if (c == ' ' || c == '\t' || c == '\n' || c == '\r') {
        ++pos_;
      } else {
        break;
      }
    }
  }
  std::span<const std::uint8_t> bytes_;
};

Tensor decode_pgm(std::span<const std::uint8_t> bytes) {
  PgmHeader header(bytes);
  const std::size_t width = header.number();
  const std::size_t height = header.number();
  const std::size_t maxval = header.number();
  if (width == 0 || height == 0) throw DataError("PGM: zero-sized image");
  if (maxval == 0 || maxval > 255) throw DataError("PGM: only 8-bit images are supported (maxval " + std::to_string(maxval) + ")");
  const std::size_t offset = header.raster_offset();
  if (bytes.size() < offset + width * height) {
    throw DataError("PGM: truncated raster (" + std::to_string(bytes.size() - std::min(bytes.size(), offset)) +
                    " of " + std::to_string(width * height) + " bytes)");
  }
  std::vector<double> px(width * height);
  for (std::size_t i = 0; i < px.size(); ++i) px[i] = bytes[offset + i] / static_cast<double>(maxval);
  return Tensor::from({height, width, 1}, std::move(px));
}

Tensor decode_png(std::span<const std::uint8_t> bytes) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&image, bytes.data(), bytes.size())) {
    throw DataError(std::string("PNG: ") + image.message);
  }
  const bool color = (image.format & PNG_FORMAT_FLAG_COLOR) != 0;
  image.format = color ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  const std::size_t channels = color ? 3 : 1;
  std::vector<std::uint8_t> raster(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, raster.data(), 0, nullptr)) {
    const std::string msg = image.message;
    png_image_free(&image);
    throw DataError("PNG: " + msg);
  }
  const std::size_t h = image.height, w = image.width;
  std::vector<double> px(h * w);
  for (std::size_t i = 0; i < px.size(); ++i) {
    if (color) {
      const std::uint8_t* p = &raster[i * channels];
      px[i] = (0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2]) / 255.0;
    } else {
      px[i] = raster[i] / 255.0;
    }
  }
  return Tensor::from({h, w, 1}, std::move(px));
}

}  // namespace

Tensor decode_image(std::span<const std::uint8_t> bytes) {
  if (bytes.size() >= 2 && bytes[0] == 'P' && bytes[1] == '5') return decode_pgm(bytes);
  if (bytes.size() >= 8 && std::equal(std::begin(kPngMagic), std::end(kPngMagic), bytes.begin())) {
    return decode_png(bytes);
  }
  throw DataError("unsupported image format: " + describe_format(bytes));
}

Tensor load_image(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read image '" + path.string() + "'");
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return decode_image(bytes);
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

Tensor resize_bilinear(const Tensor& image, std::size_t target) {
  if (image.rank() != 3 || image.dim(2) != 1) {
    throw ShapeError("resize: expected [H, W, 1], got " + shape_str(image.shape()));
  }
  const std::size_t H = image.dim(0), W = image.dim(1);
  if (H == 0 || W == 0) throw ShapeError("resize: degenerate image " + shape_str(image.shape()));
  if (target == 0) throw ConfigError("resize: target size must be >= 1");

  const auto src = image.data();
  // Source coordinate and weights for each output index along one axis.
  struct Tap {
    std::size_t lo, hi;
    double frac;
  };
  auto taps = [target](std::size_t in) {
    std::vector<Tap> out(target);
    const double ratio = static_cast<double>(in) / static_cast<double>(target);
    for (std::size_t i = 0; i < target; ++i) {
      double s = (static_cast<double>(i) + 0.5) * ratio - 0.5;
      s = std::clamp(s, 0.0, static_cast<double>(in - 1));
      const auto lo = static_cast<std::size_t>(std::floor(s));
      const std::size_t hi = std::min(lo + 1, in - 1);
      out[i] = {lo, hi, s - static_cast<double>(lo)};
    }
    return out;
  };
  const auto ty = taps(H), tx = taps(W);

  std::vector<double> out(target * target);
  for (std::size_t y = 0; y < target; ++y) {
    for (std::size_t x = 0; x < target; ++x) {
      const auto [y0, y1, fy] = ty[y];
      const auto [x0, x1, fx] = tx[x];
      const double top = src[y0 * W + x0] + fx * (src[y0 * W + x1] - src[y0 * W + x0]);
      const double bottom = src[y1 * W + x0] + fx * (src[y1 * W + x1] - src[y1 * W + x0]);
      out[y * target + x] = top + fy * (bottom - top);
    }
  }
  return Tensor::from({target, target, 1}, std::move(out));
}

Tensor preprocess(const Tensor& image, std::size_t target) {
  if (target < 8) throw ConfigError("preprocess: target size must be >= 8, got " + std::to_string(target));
  const Tensor resized = resize_bilinear(image, target);
  std::vector<double> out(resized.data().begin(), resized.data().end());

  double mean = 0.0;
  for (const double v : out) mean += v;
  mean /= static_cast<double>(out.size());
  double var = 0.0;
  for (const double v : out) var += (v - mean) * (v - mean);
  const double sd = std::max(std::sqrt(var / static_cast<double>(out.size())), 1e-6);
  // A flat image has no contrast to standardize; the mean can round away from
  // the pixel value, so compare extremes instead of testing var == 0.
  const auto [lo, hi] = std::minmax_element(out.begin(), out.end());
  const bool flat = *lo == *hi;
  for (double& v : out) v = flat ? 0.0 : (v - mean) / sd;
  return Tensor::from({target, target, 1}, std::move(out));
}

}  // namespace ssmvis::data
