#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace idistill {

/// Raised when inputs break a documented contract (bad config, bad manifest
/// line, single-class dataset, ...). The CLI maps it to exit code 1.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised on unreadable or unwritable files. The CLI maps it to exit code 2.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr int kLatentDim = 128;
inline constexpr int kDefaultSide = 64;
inline constexpr int kDefaultChannels = 3;

/// Bonafide is the positive class: y = 1 for bonafide, y = 0 for attacks, so
/// the fused score 1 - id1*id2 reads as "probability of bonafide".
enum class Label { kBonafide, kAttack };

enum class Split { kTrain, kVal, kTest };

inline double label_value(Label label) { return label == Label::kBonafide ? 1.0 : 0.0; }

std::string_view to_string(Label label);
std::string_view to_string(Split split);
Label parse_label(std::string_view text);
Split parse_split(std::string_view text);

/// Square image with values in [0,1], stored planar (channel, row, column).
class ImageTensor {
 public:
  ImageTensor() = default;
  ImageTensor(int height, int width, int channels);
  ImageTensor(int height, int width, int channels, std::vector<float> data);

  int height() const { return height_; }
  int width() const { return width_; }
  int channels() const { return channels_; }
  std::size_t size() const { return data_.size(); }

  float& at(int c, int y, int x) { return data_[index(c, y, x)]; }
  float at(int c, int y, int x) const { return data_[index(c, y, x)]; }

  const std::vector<float>& data() const { return data_; }
  std::vector<float>& data() { return data_; }

  bool same_shape(const ImageTensor& other) const {
    return height_ == other.height_ && width_ == other.width_ && channels_ == other.channels_;
  }
  bool operator==(const ImageTensor& other) const = default;

 private:
  std::size_t index(int c, int y, int x) const {
    return (static_cast<std::size_t>(c) * height_ + y) * width_ + x;
  }

  int height_ = 0;
  int width_ = 0;
  int channels_ = 0;
  std::vector<float> data_;
};

struct SampleRecord {
  std::string image_path;
  Label label = Label::kBonafide;
  std::optional<std::string> source_a;
  std::optional<std::string> source_b;
  Split split = Split::kTrain;

  bool operator==(const SampleRecord&) const = default;
};

/// Throws ValidationError if the label/provenance invariants do not hold.
void validate_record(const SampleRecord& record);

/// Records as written in the manifest plus the directory their relative paths
/// resolve against.
struct Manifest {
  std::filesystem::path base_dir;
  std::vector<SampleRecord> records;

  std::filesystem::path resolve(const std::string& path) const;
};

/// Parses a JSON Lines manifest. Errors carry the 1-based line number.
Manifest load_manifest(const std::filesystem::path& path);

/// Serializes records verbatim (paths are written as given).
void write_manifest(const std::filesystem::path& path, const std::vector<SampleRecord>& records);

std::string record_to_json_line(const SampleRecord& record);

std::vector<SampleRecord> filter_records(const std::vector<SampleRecord>& records, Split split);
std::vector<SampleRecord> filter_records(const std::vector<SampleRecord>& records, Split split,
                                         Label label);

/// Decodes a PNG, resizes it to side x side and coerces it to 1 or 3 channels.
ImageTensor load_image(const std::filesystem::path& path, int side, int channels);

/// Writes an 8-bit PNG (values are clamped to [0,1] and rounded).
void save_image(const std::filesystem::path& path, const ImageTensor& image);

/// Rounds every value to the nearest 1/255 step, matching what save_image stores.
ImageTensor quantize_8bit(const ImageTensor& image);

ImageTensor resize_image(const ImageTensor& image, int side);

}  // namespace idistill
