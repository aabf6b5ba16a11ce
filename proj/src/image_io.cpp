#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>

#include "idistill/core.hpp"

namespace idistill {

namespace {

struct PngImage {
  png_image image{};
  PngImage() {
    image.version = PNG_IMAGE_VERSION;
  }
  ~PngImage() { png_image_free(&image); }
  PngImage(const PngImage&) = delete;
  PngImage& operator=(const PngImage&) = delete;
};

// Area-average when shrinking, bilinear (half-pixel centers) otherwise.
float sample(const ImageTensor& src, int c, double y0, double y1, double x0, double x1) {
  const int ys = static_cast<int>(std::floor(y0));
  const int ye = static_cast<int>(std::ceil(y1));
  const int xs = static_cast<int>(std::floor(x0));
  const int xe = static_cast<int>(std::ceil(x1));
  double acc = 0.0;
  double area = 0.0;
  for (int y = ys; y < ye; ++y) {
    const double wy = std::min<double>(y + 1, y1) - std::max<double>(y, y0);
    if (wy <= 0.0) continue;
    for (int x = xs; x < xe; ++x) {
      const double wx = std::min<double>(x + 1, x1) - std::max<double>(x, x0);
      if (wx <= 0.0) continue;
      const int cy = std::clamp(y, 0, src.height() - 1);
      const int cx = std::clamp(x, 0, src.width() - 1);
      acc += wx * wy * src.at(c, cy, cx);
      area += wx * wy;
    }
  }
  return area > 0.0 ? static_cast<float>(acc / area) : 0.0f;
}

float bilinear(const ImageTensor& src, int c, double fy, double fx) {
  fy = std::clamp(fy, 0.0, static_cast<double>(src.height() - 1));
  fx = std::clamp(fx, 0.0, static_cast<double>(src.width() - 1));
  const int y0 = static_cast<int>(fy);
  const int x0 = static_cast<int>(fx);
  const int y1 = std::min(y0 + 1, src.height() - 1);
  const int x1 = std::min(x0 + 1, src.width() - 1);
  const double ty = fy - y0;
  const double tx = fx - x0;
  const double top = (1 - tx) * src.at(c, y0, x0) + tx * src.at(c, y0, x1);
  const double bottom = (1 - tx) * src.at(c, y1, x0) + tx * src.at(c, y1, x1);
  return static_cast<float>((1 - ty) * top + ty * bottom);
}

}  // namespace

ImageTensor resize_image(const ImageTensor& image, int side) {
  if (side <= 0) throw ValidationError("resize side must be positive");
  if (image.height() == side && image.width() == side) return image;
  ImageTensor out(side, side, image.channels());
  const double sy = static_cast<double>(image.height()) / side;
  const double sx = static_cast<double>(image.width()) / side;
  for (int c = 0; c < image.channels(); ++c) {
    for (int y = 0; y < side; ++y) {
      for (int x = 0; x < side; ++x) {
        float v;
        if (sy >= 1.0 && sx >= 1.0) {
          v = sample(image, c, y * sy, (y + 1) * sy, x * sx, (x + 1) * sx);
        } else {
          v = bilinear(image, c, (y + 0.5) * sy - 0.5, (x + 0.5) * sx - 0.5);
        }
        out.at(c, y, x) = std::clamp(v, 0.0f, 1.0f);
      }
    }
  }
  return out;
}

ImageTensor load_image(const std::filesystem::path& path, int side, int channels) {
  if (channels != 1 && channels != 3) throw ValidationError("channels must be 1 or 3");
  PngImage png;
  if (!png_image_begin_read_from_file(&png.image, path.string().c_str())) {
    throw IoError("cannot decode image '" + path.string() + "': " + png.image.message);
  }
  png.image.format = channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  const int w = static_cast<int>(png.image.width);
  const int h = static_cast<int>(png.image.height);
  std::vector<std::uint8_t> buffer(PNG_IMAGE_SIZE(png.image));
  if (!png_image_finish_read(&png.image, nullptr, buffer.data(), 0, nullptr)) {
    throw IoError("cannot decode image '" + path.string() + "': " + png.image.message);
  }
  ImageTensor raw(h, w, channels);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < channels; ++c) {
        raw.at(c, y, x) = buffer[(static_cast<std::size_t>(y) * w + x) * channels + c] / 255.0f;
      }
    }
  }
  return resize_image(raw, side);
}

void save_image(const std::filesystem::path& path, const ImageTensor& image) {
  PngImage png;
  png.image.width = static_cast<png_uint_32>(image.width());
  png.image.height = static_cast<png_uint_32>(image.height());
  png.image.format = image.channels() == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  const int channels = image.channels();
  std::vector<std::uint8_t> buffer(PNG_IMAGE_SIZE(png.image));
  for (int y = 0; y < image.height(); ++y) {
    for (int x = 0; x < image.width(); ++x) {
      for (int c = 0; c < channels; ++c) {
        const float v = std::clamp(image.at(c, y, x), 0.0f, 1.0f);
        buffer[(static_cast<std::size_t>(y) * image.width() + x) * channels + c] =
            static_cast<std::uint8_t>(std::lround(v * 255.0f));
      }
    }
  }
  if (!png_image_write_to_file(&png.image, path.string().c_str(), 0, buffer.data(), 0, nullptr)) {
    throw IoError("cannot write image '" + path.string() + "': " + png.image.message);
  }
}

ImageTensor quantize_8bit(const ImageTensor& image) {
  ImageTensor out = image;
  for (float& v : out.data()) {
    v = static_cast<float>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f)) / 255.0f;
  }
  return out;
}

}  // namespace idistill
