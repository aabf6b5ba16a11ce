#include "idistill/core.hpp"

#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

namespace idistill {

using json = nlohmann::json;

std::string_view to_string(Label label) {
  return label == Label::kBonafide ? "bonafide" : "attack";
}

std::string_view to_string(Split split) {
  switch (split) {
    case Split::kTrain:
      return "train";
    case Split::kVal:
      return "val";
    case Split::kTest:
      return "test";
  }
  return "train";
}

Label parse_label(std::string_view text) {
  if (text == "bonafide") return Label::kBonafide;
  if (text == "attack") return Label::kAttack;
  throw ValidationError("unknown label '" + std::string(text) + "'");
}

Split parse_split(std::string_view text) {
  if (text == "train") return Split::kTrain;
  if (text == "val") return Split::kVal;
  if (text == "test") return Split::kTest;
  throw ValidationError("unknown split '" + std::string(text) + "'");
}

ImageTensor::ImageTensor(int height, int width, int channels)
    : ImageTensor(height, width, channels,
                  std::vector<float>(static_cast<std::size_t>(height) * width * channels, 0.0f)) {}

ImageTensor::ImageTensor(int height, int width, int channels, std::vector<float> data)
    : height_(height), width_(width), channels_(channels), data_(std::move(data)) {
  if (height <= 0 || width <= 0) throw ValidationError("image dimensions must be positive");
  if (channels != 1 && channels != 3) throw ValidationError("image must have 1 or 3 channels");
  if (data_.size() != static_cast<std::size_t>(height) * width * channels) {
    throw ValidationError("image data size does not match its shape");
  }
  for (float v : data_) {
    if (!(v >= 0.0f && v <= 1.0f)) throw ValidationError("image values must lie in [0,1]");
  }
}

void validate_record(const SampleRecord& record) {
  if (record.image_path.empty()) throw ValidationError("record has an empty image_path");
  if (record.label == Label::kAttack) {
    if (!record.source_a || !record.source_b) {
      throw ValidationError("attack record '" + record.image_path + "' is missing source_a/source_b");
    }
    if (*record.source_a == *record.source_b) {
      throw ValidationError("attack record '" + record.image_path + "' has identical sources");
    }
  } else if (record.source_a || record.source_b) {
    throw ValidationError("bonafide record '" + record.image_path + "' must not carry sources");
  }
}

std::filesystem::path Manifest::resolve(const std::string& path) const {
  std::filesystem::path p(path);
  return p.is_absolute() ? p : base_dir / p;
}

namespace {

SampleRecord parse_record(const std::string& line) {
  const json j = json::parse(line);
  if (!j.is_object()) throw ValidationError("expected a JSON object");
  SampleRecord r;
  r.image_path = j.at("image_path").get<std::string>();
  r.label = parse_label(j.at("label").get<std::string>());
  if (auto it = j.find("source_a"); it != j.end() && !it->is_null()) r.source_a = it->get<std::string>();
  if (auto it = j.find("source_b"); it != j.end() && !it->is_null()) r.source_b = it->get<std::string>();
  r.split = parse_split(j.at("split").get<std::string>());
  return r;
}

}  // namespace

Manifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest '" + path.string() + "'");
  Manifest manifest;
  manifest.base_dir = path.parent_path();
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      SampleRecord r = parse_record(line);
      validate_record(r);
      manifest.records.push_back(std::move(r));
    } catch (const json::exception& e) {
      throw ValidationError(path.string() + ":" + std::to_string(line_no) + ": parse error: " + e.what());
    } catch (const ValidationError& e) {
      throw ValidationError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return manifest;
}

std::string record_to_json_line(const SampleRecord& record) {
  // Key order is fixed so regenerated manifests are byte-identical.
  json j = json::object();
  j["image_path"] = record.image_path;
  j["label"] = std::string(to_string(record.label));
  if (record.source_a) j["source_a"] = *record.source_a;
  if (record.source_b) j["source_b"] = *record.source_b;
  j["split"] = std::string(to_string(record.split));
  std::ostringstream os;
  os << "{";
  bool first = true;
  for (const char* key : {"image_path", "label", "source_a", "source_b", "split"}) {
    if (!j.contains(key)) continue;
    if (!first) os << ",";
    first = false;
    os << json(key).dump() << ":" << j[key].dump();
  }
  os << "}";
  return os.str();
}

void write_manifest(const std::filesystem::path& path, const std::vector<SampleRecord>& records) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write manifest '" + path.string() + "'");
  for (const auto& r : records) {
    validate_record(r);
    out << record_to_json_line(r) << "\n";
  }
  if (!out) throw IoError("failed writing manifest '" + path.string() + "'");
}

std::vector<SampleRecord> filter_records(const std::vector<SampleRecord>& records, Split split) {
  std::vector<SampleRecord> out;
  for (const auto& r : records) {
    if (r.split == split) out.push_back(r);
  }
  return out;
}

std::vector<SampleRecord> filter_records(const std::vector<SampleRecord>& records, Split split,
                                         Label label) {
  std::vector<SampleRecord> out;
  for (const auto& r : records) {
    if (r.split == split && r.label == label) out.push_back(r);
  }
  return out;
}

}  // namespace idistill
