#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tg3d/encoders.hpp"
#include "tg3d/image.hpp"
#include "tg3d/params.hpp"
#include "tg3d/renderer.hpp"

namespace tg3d {

/// Attribute vocabulary; each name doubles as the part-level text for alignment.
const std::vector<std::string>& attribute_names();
int attribute_count();

enum class HairColor { kBlack = 0, kBlond = 1, kRed = 2 };
enum class EyeColor { kBlue = 0, kBrown = 1 };
enum class SkinTone { kPale = 0, kMedium = 1, kDark = 2 };

/// Parameters of one procedural face.
struct FaceParams {
  HairColor hair = HairColor::kBlack;
  EyeColor eyes = EyeColor::kBrown;
  SkinTone skin = SkinTone::kMedium;
  bool glasses = false;
  Vec3 head_radii{0.55, 0.7, 0.6};
  double hair_thickness = 0.08;
  double hair_line = 0.25;
  double eye_spacing = 0.2;
  double mouth_width = 0.16;
  Vec3 skin_jitter{0, 0, 0};
  Vec3 hair_jitter{0, 0, 0};

  nlohmann::json to_json() const;
  static FaceParams from_json(const nlohmann::json& j);
  std::vector<double> attributes() const;
};

FaceParams random_face(Rng& rng);
/// Template captions; every caption names exactly the face's attributes.
std::vector<std::string> face_captions(const FaceParams& face);

struct PoseDistribution {
  double yaw_range = 0.5;
  double pitch_range = 0.25;
  double radius = 2.7;
  double focal = 1.4;

  CameraParams sample(Rng& rng) const;
  /// Frontal camera at the distribution's radius.
  CameraParams canonical() const { return orbit_camera(0.0, 0.0, radius, focal); }
  /// `n` cameras evenly spaced in yaw across the range at zero pitch.
  std::vector<CameraParams> ring(int n) const;
};

struct FaceRender {
  Image image;
  LabelMap labels;
};

/// Sphere-traced render of a face with 2x2 supersampling over a white background.
FaceRender render_face(const FaceParams& face, const CameraParams& cam, int res);

struct Record {
  std::string id;
  std::string image;  // relative to root
  std::string mask;   // relative to root; empty when absent
  std::vector<std::string> captions;
  CameraParams camera;
  std::vector<double> attributes;
  std::optional<FaceParams> face;
};

struct DatasetManifest {
  std::filesystem::path root;
  std::vector<std::string> attribute_vocabulary;
  int image_res = 32;
  std::vector<Record> records;
};

struct SynthOptions {
  int image_res = 32;
  double unlabeled_fraction = 0.0;
  PoseDistribution poses;
};

/// Writes root/manifest.jsonl, root/dataset.json, root/images/*.png, root/masks/*.png.
DatasetManifest synthesize_toy_dataset(int n, uint64_t seed, const std::filesystem::path& out_dir,
                                       const SynthOptions& opts = {});
/// Validates every record; errors name the offending record index or path.
DatasetManifest load_dataset(const std::filesystem::path& root);

/// Manifest plus decoded images and masks.
struct Dataset {
  DatasetManifest manifest;
  std::vector<Image> images;
  std::vector<LabelMap> masks;  // empty LabelMap when a record has no mask

  size_t size() const { return images.size(); }
};

Dataset load_images(DatasetManifest manifest);

struct TrainSample {
  std::vector<double> z;
  TextInput text;
  CameraParams camera;
  const Image* image = nullptr;
  std::vector<double> labels;
  const LabelMap* mask = nullptr;
  size_t record = 0;
};

/// `n` samples drawn uniformly with replacement from `indices` (all records when empty),
/// with fresh standard-normal z and a uniformly chosen caption.
std::vector<TrainSample> sample_batch(const Dataset& data, int n, int z_dim, Rng& rng,
                                      const std::vector<size_t>& indices = {});

/// Deterministic split: every `period`-th record (offset period - 1) is held out.
struct Split {
  std::vector<size_t> train;
  std::vector<size_t> held_out;
};
Split split_records(size_t n, int period = 8);

}  // namespace tg3d
